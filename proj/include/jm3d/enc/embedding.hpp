#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace jm3d::enc {

/// A D-dimensional feature vector.
struct Embedding {
  std::vector<double> vec;

  int dim() const { return static_cast<int>(vec.size()); }

  double norm() const {
    double s = 0.0;
    for (const double x : vec) s += x * x;
    return std::sqrt(s);
  }

  void l2_normalize(double floor = 1e-12) {
    const double n = std::max(norm(), floor);
    for (auto& x : vec) x /= n;
  }

  bool unit_norm(double tol = 1e-6) const { return std::fabs(norm() - 1.0) <= tol; }
};

inline double cosine(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) throw std::runtime_error("cosine: dimension mismatch");
  double dot = 0.0;
  for (int i = 0; i < a.dim(); ++i) dot += a.vec[i] * b.vec[i];
  const double na = a.norm(), nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return dot / (na * nb);
}

}  // namespace jm3d::enc
