#pragma once

// Generation-verification: weighted model estimation on pruned candidates,
// verification over the full input set, and a classical RANSAC baseline.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "clnet/geometry.hpp"

namespace clnet::estimators {

using geometry::EssentialMatrix;
using geometry::LineModel;
using geometry::ParametricModel;
using geometry::RowMatrix;

// Weighted total least squares on homogeneous points (x, y, 1) under the
// constraint a^2 + b^2 + c^2 = 1.
LineModel weighted_line_fit(const RowMatrix& points, std::span<const double> weights);

// Weighted 8-point solve: rows of the epipolar design matrix are scaled by
// sqrt(w). Inputs must already be in normalized camera coordinates.
EssentialMatrix weighted_eight_point(const RowMatrix& correspondences, std::span<const double> weights);

struct Verification {
  std::vector<bool> mask;
  std::size_t inliers = 0;
};

// Residual of every item against `model` (point-line distance or symmetric
// epipolar distance); mask_i = residual_i < threshold.
Verification full_size_verification(const ParametricModel& model, const RowMatrix& items, double threshold);
std::vector<double> model_residuals(const ParametricModel& model, const RowMatrix& items);

struct RansacOptions {
  std::size_t iterations = 1000;
  double inlier_threshold = 0.05;
  std::uint64_t seed = 0;
};

LineModel ransac_line_baseline(const RowMatrix& points, const RansacOptions& options);

// L2 distance between canonical coefficient triples.
double evaluate_line(const LineModel& est, const LineModel& gt);

}  // namespace clnet::estimators
