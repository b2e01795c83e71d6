#include "jm3d/data/views.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "jm3d/core/rng.hpp"

namespace jm3d::data {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDepthPad = 0.05;

int to_pixel(double coord, int extent) {
  // coord in [-1, 1] -> bin index; clamped at the borders.
  const int p = static_cast<int>(std::floor((coord + 1.0) * 0.5 * extent));
  return std::clamp(p, 0, extent - 1);
}
}  // namespace

double ViewImage::mean_depth() const {
  double sum = 0.0;
  int n = 0;
  for (const double d : depth) {
    if (d > 0.0) {
      sum += d;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / n;
}

CandidateViewSet render_candidate_views(const PointCloud& cloud, int height, int width) {
  if (height < 8 || width < 8) throw std::runtime_error("render_candidate_views: H and W must be >= 8");
  if (!is_valid(cloud)) throw std::runtime_error("render_candidate_views: invalid cloud");

  CandidateViewSet set;
  set.views.reserve(kCandidateViews);
  for (int k = 0; k < kCandidateViews; ++k) {
    const double theta = kViewStepDeg * k * kPi / 180.0;
    // Depth axis points from the camera toward the origin. The image x basis
    // is attached to the projection plane, which opposite azimuths share, so
    // a back view reads as the front view mirrored horizontally.
    const double wx = -std::cos(theta), wy = -std::sin(theta);
    const double phi = theta < kPi ? theta : theta - kPi;
    const double ux = -std::sin(phi), uy = std::cos(phi);

    ViewImage view;
    view.angle_index = k;
    view.angle_deg = kViewStepDeg * k;
    view.height = height;
    view.width = width;
    view.rgb.assign(static_cast<std::size_t>(height) * width * 3, 0.0);
    view.depth.assign(static_cast<std::size_t>(height) * width, 0.0);

    std::vector<double> zbuf(static_cast<std::size_t>(height) * width,
                             std::numeric_limits<double>::infinity());
    double min_raw = std::numeric_limits<double>::infinity();
    for (const auto& p : cloud.points) min_raw = std::min(min_raw, p[0] * wx + p[1] * wy);

    for (const auto& p : cloud.points) {
      const double raw = p[0] * wx + p[1] * wy;
      const int col = to_pixel(p[0] * ux + p[1] * uy, width);
      const int row = to_pixel(-p[2], height);  // image row 0 at the top
      const std::size_t cell = static_cast<std::size_t>(row) * width + col;
      if (raw < zbuf[cell]) {
        zbuf[cell] = raw;
        view.depth[cell] = raw - min_raw + kDepthPad;
        const double h01 = std::clamp((p[2] + 1.0) * 0.5, 0.0, 1.0);
        const double d01 = std::clamp((raw + 1.0) * 0.5, 0.0, 1.0);
        view.rgb[cell * 3 + 0] = h01;
        view.rgb[cell * 3 + 1] = 1.0 - h01;
        view.rgb[cell * 3 + 2] = d01;
      }
    }
    set.views.push_back(std::move(view));
  }
  return set;
}

double circular_angle_diff(double a, double b) {
  double d = std::fabs(a - b);
  d = std::fmod(d, 360.0);
  return std::min(d, 360.0 - d);
}

int feasible_window_slots(double omega_deg) {
  if (omega_deg <= 0.0) return 1;  // a single view always satisfies the bound vacuously
  const int slots = static_cast<int>(std::floor((omega_deg - 1e-9) / kViewStepDeg)) + 1;
  return std::clamp(slots, 1, kCandidateViews);
}

std::vector<int> select_view_indices(int v, double omega_deg, std::uint64_t seed) {
  if (v < 1 || v > kCandidateViews)
    throw std::runtime_error("within_view_sample: v must be in [1, 30]");
  const int window = feasible_window_slots(omega_deg);
  if (v > window)
    throw std::runtime_error("within_view_sample: infeasible combination: v=" + std::to_string(v) +
                             " views cannot fit an open window of omega=" + std::to_string(omega_deg) +
                             " degrees (at most " + std::to_string(window) + " slots)");

  Rng rng(seed);
  const int start = static_cast<int>(rng.next_below(kCandidateViews));
  // Partial Fisher-Yates over the window offsets.
  std::vector<int> offsets(window);
  std::iota(offsets.begin(), offsets.end(), 0);
  std::vector<int> chosen;
  chosen.reserve(v);
  for (int i = 0; i < v; ++i) {
    const int j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(window - i)));
    std::swap(offsets[i], offsets[j]);
    chosen.push_back((start + offsets[i]) % kCandidateViews);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<ViewImage> within_view_sample(const CandidateViewSet& cands, int v, double omega_deg,
                                          std::uint64_t seed) {
  if (static_cast<int>(cands.views.size()) != kCandidateViews)
    throw std::runtime_error("within_view_sample: candidate set must hold exactly 30 views");
  std::vector<ViewImage> out;
  out.reserve(v);
  for (const int idx : select_view_indices(v, omega_deg, seed)) out.push_back(cands.views[idx]);
  return out;
}

void save_view_json(const std::string& path, const ViewImage& view) {
  nlohmann::json j;
  j["angle_index"] = view.angle_index;
  j["angle_deg"] = view.angle_deg;
  j["height"] = view.height;
  j["width"] = view.width;
  j["rgb"] = view.rgb;
  j["depth"] = view.depth;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write view file: " + path);
  os << j.dump() << "\n";
}

ViewImage load_view_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open view file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("unreadable view file " + path + ": " + e.what());
  }
  ViewImage view;
  view.angle_index = j.at("angle_index").get<int>();
  view.angle_deg = j.at("angle_deg").get<double>();
  view.height = j.at("height").get<int>();
  view.width = j.at("width").get<int>();
  view.rgb = j.at("rgb").get<std::vector<double>>();
  view.depth = j.at("depth").get<std::vector<double>>();
  if (view.height < 8 || view.width < 8 ||
      view.rgb.size() != static_cast<std::size_t>(view.height) * view.width * 3 ||
      view.depth.size() != static_cast<std::size_t>(view.height) * view.width)
    throw std::runtime_error("unreadable view file " + path + ": inconsistent dimensions");
  return view;
}

}  // namespace jm3d::data
