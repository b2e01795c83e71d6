#include "jm3d/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "jm3d/core/rng.hpp"

namespace jm3d::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* kParentBase[6] = {"box", "ball", "tube", "cone", "ring", "pyramid"};

// Ordered by the shape parameter t each variant index maps to.
const char* kFamilyQualifier[6][4] = {
    {"flat", "tall", "wide", "slim"},       // box: z extent grows with t
    {"solid", "hollow", "dense", "airy"},   // ball: shell thickness grows with t
    {"solid", "hollow", "wide", "thin"},    // tube: fill empties as t grows
    {"sharp", "flat", "steep", "low"},      // cone: base radius grows with t
    {"thin", "thick", "fine", "fat"},       // ring: minor radius grows with t
    {"tall", "flat", "steep", "broad"},     // pyramid: height shrinks with t
};

// The variant parameter t makes the qualifier words literal geometry: flat
// things have a small vertical spread, hollow things are shells. Qualifiers
// repeat across families (flat box / flat pyramid / flat cone, solid and
// hollow balls and tubes), so a qualifier names the same measurable trait
// wherever it appears, mirroring how real subcategory vocabularies transfer.
Vec3 sample_shape(int family, double t, Rng& rng) {
  switch (family) {
    case 0: {  // solid box: flat wide slab at low t, tall narrow pillar at high t
      const double zh = 0.05 + 1.2 * t;
      const double xs = 0.9 - 0.82 * t;
      return {xs * (2.0 * rng.next_double() - 1.0), 0.72 * xs * (2.0 * rng.next_double() - 1.0),
              zh * (2.0 * rng.next_double() - 1.0)};
    }
    case 1: {  // ball: filled at low t, thin shell at high t
      const double r0 = std::clamp(1.87 * t - 0.5, 0.0, 0.93);
      const double u = rng.next_double();
      const double r = r0 + (1.0 - r0) * std::sqrt(u);
      const double z = 2.0 * rng.next_double() - 1.0;
      const double phi = 2.0 * kPi * rng.next_double();
      const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
      return {r * s * std::cos(phi), r * s * std::sin(phi), r * z};
    }
    case 2: {  // squat cylinder with a near-constant silhouette; only the fill
               // changes with t, isolating the solid/hollow trait
      const double r = 0.60 + 0.05 * t;
      const double h = 0.8 - 0.1 * t;
      const double phi = 2.0 * kPi * rng.next_double();
      const double rho = t < 0.5 ? r * std::sqrt(rng.next_double()) : r;
      return {rho * std::cos(phi), rho * std::sin(phi), h * (rng.next_double() - 0.5)};
    }
    case 3: {  // cone surface: sharp and tall vs flat and broad
      const double h = 2.0 - 2.2 * t;
      const double rb = 0.2 + 1.0 * t;
      const double phi = 2.0 * kPi * rng.next_double();
      if (rng.next_double() < 0.25) {
        const double r = rb * std::sqrt(rng.next_double());
        return {r * std::cos(phi), r * std::sin(phi), -0.5 * h};
      }
      const double s = std::sqrt(rng.next_double());
      return {s * rb * std::cos(phi), s * rb * std::sin(phi), 0.5 * h - s * h};
    }
    case 4: {  // torus, minor radius driven by t
      const double R = 0.75;
      const double r = 0.03 + 0.5 * t;
      const double theta = 2.0 * kPi * rng.next_double();
      const double phi = 2.0 * kPi * rng.next_double();
      const double ring = R + r * std::cos(phi);
      return {ring * std::cos(theta), ring * std::sin(theta), r * std::sin(phi)};
    }
    default: {  // solid square pyramid: tall and narrow vs flat and broad
      const double b = 0.3 + 0.6 * t;
      const double h = 2.0 - 2.2 * t;
      const double s = std::cbrt(rng.next_double());  // volume-uniform along the apex axis
      return {s * b * (2.0 * rng.next_double() - 1.0), s * b * (2.0 * rng.next_double() - 1.0),
              0.5 * h - s * h};
    }
  }
}

std::string sanitize_id(std::string s) {
  for (auto& c : s)
    if (c == ' ') c = '_';
  return s;
}

}  // namespace

std::vector<CorpusEntry> generate_synthetic_corpus(const CorpusSpec& spec) {
  if (spec.parents < 1 || spec.subs_per_parent < 1 || spec.samples_per_sub < 1)
    throw std::runtime_error("corpus spec counts must all be >= 1");
  if (spec.points < 8) throw std::runtime_error("corpus spec: points must be >= 8 (degenerate geometry)");

  std::vector<CorpusEntry> corpus;
  corpus.reserve(static_cast<std::size_t>(spec.parents) * spec.subs_per_parent * spec.samples_per_sub);

  std::uint64_t sample_index = 0;
  for (int p = 0; p < spec.parents; ++p) {
    const int family = p % 6;
    std::string parent = kParentBase[family];
    if (p >= 6) parent += " " + std::to_string(p / 6 + 1);
    for (int v = 0; v < spec.subs_per_parent; ++v) {
      std::string sub = std::string(kFamilyQualifier[family][v % 4]) + " " + parent;
      if (v >= 4) sub += " " + std::to_string(v / 4 + 1);
      const double t_base = (v + 0.5) / spec.subs_per_parent;
      for (int k = 0; k < spec.samples_per_sub; ++k, ++sample_index) {
        Rng rng(derive_seed(spec.seed, "corpus-sample", sample_index));
        const double t = std::clamp(t_base + 0.10 * (2.0 * rng.next_double() - 1.0), 0.02, 0.98);
        const double yaw = 2.0 * kPi * rng.next_double();
        const double cy = std::cos(yaw), sy = std::sin(yaw);
        // Per-instance anisotropic scale: the recoverable signature that
        // separates instances of rotation-symmetric families.
        const double base_scale = 1.0 + 0.04 * (p / 6);
        const double sx = base_scale * (1.0 + 0.12 * (2.0 * rng.next_double() - 1.0));
        const double sy2 = base_scale * (1.0 + 0.12 * (2.0 * rng.next_double() - 1.0));
        const double sz = base_scale * (1.0 + 0.12 * (2.0 * rng.next_double() - 1.0));

        CorpusEntry entry;
        entry.parent = parent;
        entry.sub = sub;
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "%04d", k);
        entry.cloud.id = sanitize_id(parent + "-" + sub + "-" + idbuf);
        entry.cloud.points.reserve(static_cast<std::size_t>(spec.points));
        for (int i = 0; i < spec.points; ++i) {
          Vec3 q = sample_shape(family, t, rng);
          for (int c = 0; c < 3; ++c) q[c] += 0.01 * rng.next_gaussian();
          const Vec3 scaled{sx * q[0], sy2 * q[1], sz * q[2]};
          const Vec3 rotated{cy * scaled[0] - sy * scaled[1], sy * scaled[0] + cy * scaled[1],
                             scaled[2]};
          entry.cloud.points.push_back(rotated);
        }
        normalize_to_unit_sphere(entry.cloud);
        corpus.push_back(std::move(entry));
      }
    }
  }
  return corpus;
}

}  // namespace jm3d::data
