#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jm3d/data/point_cloud.hpp"

namespace jm3d::data {

inline constexpr int kCandidateViews = 30;
inline constexpr double kViewStepDeg = 12.0;

/// One rendered orthographic view. rgb is H x W x 3 in [0,1], depth is H x W
/// with 0 marking background and positive values the distance along the view
/// axis, shifted so the nearest point stays above zero.
struct ViewImage {
  int angle_index = 0;
  double angle_deg = 0.0;
  int height = 0;
  int width = 0;
  std::vector<double> rgb;
  std::vector<double> depth;

  double& rgb_at(int r, int c, int ch) { return rgb[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  double rgb_at(int r, int c, int ch) const { return rgb[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  double& depth_at(int r, int c) { return depth[static_cast<std::size_t>(r) * width + c]; }
  double depth_at(int r, int c) const { return depth[static_cast<std::size_t>(r) * width + c]; }

  /// Mean over occupied depth cells, 0 when the view is empty.
  double mean_depth() const;
};

struct CandidateViewSet {
  std::vector<ViewImage> views;  // exactly 30, sorted by angle_index
};

/// Renders the 30-view candidate set at azimuths 0, 12, ..., 348 degrees.
/// Pure function of (cloud, height, width): point-splat orthographic
/// projection, z-buffered, with height coded into the red/green channels and
/// view-axis distance into blue.
CandidateViewSet render_candidate_views(const PointCloud& cloud, int height, int width);

/// Circular angle difference in degrees, min(d, 360 - d).
double circular_angle_diff(double a, double b);

/// Picks v distinct views whose pairwise circular angle differences are all
/// below omega_deg: a uniformly random window start on the 30-slot circle,
/// then a uniform choice of v distinct slots inside the open window.
/// Throws when the window cannot hold v distinct slots.
std::vector<ViewImage> within_view_sample(const CandidateViewSet& cands, int v, double omega_deg,
                                          std::uint64_t seed);

/// Index-level form of the same draw (ascending angle indices). The training
/// loop uses this against cached per-angle features; within_view_sample is a
/// gather over it.
std::vector<int> select_view_indices(int v, double omega_deg, std::uint64_t seed);

/// Number of 12-degree slots that fit an open window of omega_deg.
int feasible_window_slots(double omega_deg);

/// Single-view JSON files used by the retrieve command.
void save_view_json(const std::string& path, const ViewImage& view);
ViewImage load_view_json(const std::string& path);

}  // namespace jm3d::data
