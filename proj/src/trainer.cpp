#include "jm3d/align/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "jm3d/core/io.hpp"

namespace jm3d::align {

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;

std::string hex_u64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex_u64(const std::string& s) { return std::stoull(s, nullptr, 16); }
}  // namespace

TrainState::TrainState(const ModelConfig& config, std::uint64_t seed) : config_(config), rng_(seed) {
  enc::PointEncoderConfig pc;
  pc.point_widths = config.point_widths;
  pc.head_widths = config.head_widths;
  pc.dim = config.dim;
  encoder_ = std::make_unique<enc::PointEncoder>(pc, params_, derive_seed(seed, "encoder"));
  fusion_ = std::make_unique<enc::FusionTables>(config.dim, params_, "fuse.", config.depth_range);
  head_ = std::make_unique<ClassifierHead>(config.dim, config.classifier_hidden, config.parent_classes,
                                           params_, derive_seed(seed, "classifier"));
}

void TrainState::quantize_to_storage() {
  for (auto* p : params_.all()) {
    io::quantize_f32(p->value);
    io::quantize_f32(p->moment1);
    io::quantize_f32(p->moment2);
  }
}

void TrainState::save_checkpoint(const std::string& path) const {
  nlohmann::json manifest;
  manifest["model"] = {
      {"dim", config_.dim},
      {"point_widths", config_.point_widths},
      {"head_widths", config_.head_widths},
      {"classifier_hidden", config_.classifier_hidden},
      {"parent_classes", config_.parent_classes},
      {"depth_range", config_.depth_range},
  };
  manifest["step"] = step_;
  std::vector<std::string> rng_words;
  for (const auto w : rng_.state()) rng_words.push_back(hex_u64(w));
  manifest["rng"] = rng_words;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto* p : params_.all())
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  manifest["params"] = tensors;
  const std::string mtext = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  io::write_magic(os, "JMCK");
  io::write_u32(os, kCheckpointVersion);
  io::write_u32(os, static_cast<std::uint32_t>(mtext.size()));
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto* p : params_.all()) {
    io::write_f32_payload(os, p->value);
    io::write_f32_payload(os, p->moment1);
    io::write_f32_payload(os, p->moment2);
  }
}

TrainState TrainState::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  io::expect_magic(is, "JMCK", path);
  const std::uint32_t version = io::read_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t mlen = io::read_u32(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), mlen);
  if (!is) throw std::runtime_error("truncated checkpoint manifest: " + path);
  const nlohmann::json manifest = nlohmann::json::parse(mtext);

  ModelConfig mc;
  const auto& jm = manifest.at("model");
  mc.dim = jm.at("dim").get<int>();
  mc.point_widths = jm.at("point_widths").get<std::vector<int>>();
  mc.head_widths = jm.at("head_widths").get<std::vector<int>>();
  mc.classifier_hidden = jm.at("classifier_hidden").get<int>();
  mc.parent_classes = jm.at("parent_classes").get<int>();
  mc.depth_range = jm.at("depth_range").get<double>();

  TrainState state(mc, 0);
  state.step_ = manifest.at("step").get<long>();
  std::array<std::uint64_t, 4> rng_state{};
  const auto words = manifest.at("rng").get<std::vector<std::string>>();
  if (words.size() != 4) throw std::runtime_error("checkpoint rng state malformed: " + path);
  for (int i = 0; i < 4; ++i) rng_state[i] = parse_hex_u64(words[i]);
  state.rng_.set_state(rng_state);

  const auto tensors = manifest.at("params");
  if (tensors.size() != state.params_.all().size())
    throw std::runtime_error("checkpoint parameter count mismatch: " + path);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    nn::Parameter* p = state.params_.all()[i];
    if (tensors[i].at("name").get<std::string>() != p->name ||
        tensors[i].at("rows").get<int>() != p->value.rows() ||
        tensors[i].at("cols").get<int>() != p->value.cols())
      throw std::runtime_error("checkpoint manifest mismatch at " + p->name);
    io::read_f32_payload(is, p->value);
    io::read_f32_payload(is, p->moment1);
    io::read_f32_payload(is, p->moment2);
  }
  if (!is) throw std::runtime_error("truncated checkpoint payload: " + path);
  return state;
}

double TrainState::current_learning_rate(const OptimizerConfig& opt) const {
  if (!opt.cosine || opt.total_steps <= 0) return opt.learning_rate;
  const double frac =
      std::min(1.0, static_cast<double>(step_) / static_cast<double>(opt.total_steps));
  return opt.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

void TrainState::apply_adamw(const OptimizerConfig& opt) {
  if (opt.learning_rate == 0.0) return;  // full no-op, moments included
  const double lr = current_learning_rate(opt);
  const long t = step_ + 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (auto* p : params_.all()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->moment1[i] = opt.beta1 * p->moment1[i] + (1.0 - opt.beta1) * g;
      p->moment2[i] = opt.beta2 * p->moment2[i] + (1.0 - opt.beta2) * g * g;
      const double mhat = p->moment1[i] / bc1;
      const double vhat = p->moment2[i] / bc2;
      p->value[i] -= lr * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * p->value[i]);
    }
  }
  step_ = t;
}

TrainStepMetrics train_step(TrainState& state, const TrainBatch& batch, const LossWeights& weights,
                            const OptimizerConfig& opt, bool independent_alignment) {
  nn::Tape tape;
  const nn::Value points = tape.constant(batch.points);
  const nn::Value cloud = state.encoder().encode_batch(tape, points, batch.points_per_cloud);
  const nn::Value fused = state.fusion().fuse(tape, tape.constant(batch.raw_views),
                                              batch.view_angles, batch.view_depths);
  const nn::Value text = tape.constant(batch.text);
  const LossBreakdown losses = total_loss(tape, cloud, fused, text, batch.views_per_sample,
                                          state.head(), batch.parent_codes, weights,
                                          independent_alignment);

  TrainStepMetrics metrics;
  metrics.total = tape.scalar(losses.total);
  metrics.cloud_joint = tape.scalar(losses.cloud_joint);
  metrics.cloud_text = tape.scalar(losses.cloud_text);
  metrics.text_joint = tape.scalar(losses.text_joint);
  metrics.classed = tape.scalar(losses.classed);
  metrics.learning_rate = state.current_learning_rate(opt);
  if (!std::isfinite(metrics.total)) {
    std::ostringstream ss;
    ss << "train_step: non-finite loss (total=" << metrics.total
       << ", cloud_joint=" << metrics.cloud_joint << ", cloud_text=" << metrics.cloud_text
       << ", text_joint=" << metrics.text_joint << ", classed=" << metrics.classed << ")";
    throw std::runtime_error(ss.str());
  }

  if (opt.learning_rate == 0.0) return metrics;
  state.params().zero_grads();
  tape.backward(losses.total);
  state.apply_adamw(opt);
  return metrics;
}

}  // namespace jm3d::align
