#pragma once

// Parametric models (2-D line, essential matrix), epipolar machinery and
// the error metrics used to score estimates against ground truth.

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace clnet::geometry {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Line a*x + b*y + c = 0, stored with unit coefficient norm and the first
// nonzero coefficient positive.
struct LineModel {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  std::array<double, 3> coeffs() const { return {a, b, c}; }
  bool operator==(const LineModel&) const = default;
};

LineModel canonicalize(const LineModel& line);
LineModel make_line(double a, double b, double c);

// 3x3 essential matrix with singular values (1, 1, 0) / sqrt(2).
struct EssentialMatrix {
  Mat3 m = Mat3::Zero();
};

// Projects onto the essential manifold and rescales to unit Frobenius norm.
EssentialMatrix enforce_essential(const Mat3& e);

struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::UnitX();
};

using ParametricModel = std::variant<LineModel, EssentialMatrix>;

Mat3 skew(const Vec3& v);
// E = [t]x R for X' = R X + t.
Mat3 essential_from_pose(const Pose& pose);

// N items with D = 2 (points) or D = 4 (correspondences x, y, x', y').
struct MatchSet {
  RowMatrix items;
  std::vector<bool> labels;  // empty, or one per item
  std::optional<ParametricModel> gt_model;

  std::size_t size() const { return static_cast<std::size_t>(items.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(items.cols()); }
  // Throws FormatError if the invariants (N >= 1, D in {2, 4}, label count) fail.
  void validate() const;
};

RowMatrix normalize_keypoints(const RowMatrix& correspondences, const Mat3& k1, const Mat3& k2);
RowMatrix denormalize_keypoints(const RowMatrix& correspondences, const Mat3& k1, const Mat3& k2);

// Symmetric epipolar distance of one correspondence. Returns +inf when the
// correspondence is degenerate for E (both epipolar-line normals vanish).
double symmetric_epipolar_distance(const Mat3& e, std::span<const double, 4> c);
inline double symmetric_epipolar_distance(const EssentialMatrix& e, std::span<const double, 4> c)
{
  return symmetric_epipolar_distance(e.m, c);
}
std::vector<double> symmetric_epipolar_distances(const Mat3& e, const RowMatrix& correspondences);

std::vector<bool> label_by_threshold(std::span<const double> distances, double threshold);

double point_line_distance(const LineModel& line, double x, double y);
std::vector<double> point_line_distances(const LineModel& line, const RowMatrix& points);

// Decomposes E into its four (R, t) candidates and keeps the one that puts
// the most triangulated correspondences in front of both cameras.
Pose pose_from_essential(const Mat3& e, const RowMatrix& correspondences);

double rotation_angle_deg(const Mat3& r_a, const Mat3& r_b);
// Angle between translation directions, invariant to the sign of t.
double translation_angle_deg(const Vec3& t_a, const Vec3& t_b);
double pose_error_deg(const Pose& est, const Pose& gt);

// Area under the empirical CDF of `errors` on [0, T], in percent, per threshold.
std::vector<double> auc_at_thresholds(std::span<const double> errors, std::span<const double> thresholds);

}  // namespace clnet::geometry
