#include "clnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "clnet/errors.hpp"

namespace clnet::geometry {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

Vec3 homogeneous(double x, double y) { return {x, y, 1.0}; }

RowMatrix map_keypoints(const RowMatrix& c, const Mat3& t1, const Mat3& t2)
{
  if (c.cols() != 4) throw ShapeError("keypoint mapping expects N x 4 correspondences");
  RowMatrix out(c.rows(), 4);
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    const Vec3 p = t1 * homogeneous(c(i, 0), c(i, 1));
    const Vec3 q = t2 * homogeneous(c(i, 2), c(i, 3));
    out.row(i) << p.x() / p.z(), p.y() / p.z(), q.x() / q.z(), q.y() / q.z();
  }
  return out;
}

Mat3 checked_inverse(const Mat3& k)
{
  const double det = k.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-15) throw DegenerateError("intrinsic matrix is singular");
  return k.inverse();
}

// Linear triangulation with P1 = [I | 0], P2 = [R | t]; returns depths in both views.
std::pair<double, double> triangulate_depths(const Mat3& r, const Vec3& t, const Vec3& x1, const Vec3& x2)
{
  Eigen::Matrix<double, 3, 4> p1 = Eigen::Matrix<double, 3, 4>::Zero();
  p1.leftCols<3>() = Mat3::Identity();
  Eigen::Matrix<double, 3, 4> p2;
  p2.leftCols<3>() = r;
  p2.col(3) = t;
  Eigen::Matrix4d a;
  a.row(0) = x1.x() * p1.row(2) - p1.row(0);
  a.row(1) = x1.y() * p1.row(2) - p1.row(1);
  a.row(2) = x2.x() * p2.row(2) - p2.row(0);
  a.row(3) = x2.y() * p2.row(2) - p2.row(1);
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  Eigen::Vector4d xh = svd.matrixV().col(3);
  if (std::abs(xh(3)) < 1e-300) return {-1.0, -1.0};
  const Vec3 x = xh.head<3>() / xh(3);
  return {x.z(), (r * x + t).z()};
}

}  // namespace

LineModel canonicalize(const LineModel& line)
{
  const double norm = std::sqrt(line.a * line.a + line.b * line.b + line.c * line.c);
  if (!(norm > 0.0)) throw DegenerateError("line with all-zero coefficients");
  // Already-unit inputs are left unscaled so canonicalization is idempotent.
  const double scale = std::abs(norm - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() ? 1.0 : norm;
  LineModel out{line.a / scale, line.b / scale, line.c / scale};
  const double lead = out.a != 0.0 ? out.a : (out.b != 0.0 ? out.b : out.c);
  if (lead < 0.0) out = {-out.a, -out.b, -out.c};
  // Avoid -0.0 so that canonical forms compare bitwise.
  out.a += 0.0;
  out.b += 0.0;
  out.c += 0.0;
  return out;
}

LineModel make_line(double a, double b, double c) { return canonicalize({a, b, c}); }

EssentialMatrix enforce_essential(const Mat3& e)
{
  Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (!(svd.singularValues()(0) > 0.0)) throw DegenerateError("essential matrix is zero");
  const Vec3 sigma(1.0, 1.0, 0.0);
  Mat3 m = svd.matrixU() * sigma.asDiagonal() * svd.matrixV().transpose();
  m /= m.norm();
  return {m};
}

Mat3 skew(const Vec3& v)
{
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 essential_from_pose(const Pose& pose) { return skew(pose.t) * pose.R; }

void MatchSet::validate() const
{
  if (items.rows() < 1) throw FormatError("match set must contain at least one item");
  if (items.cols() != 2 && items.cols() != 4)
    throw FormatError("match set items must have 2 or 4 columns, got " + std::to_string(items.cols()));
  if (!labels.empty() && labels.size() != size())
    throw FormatError("match set has " + std::to_string(labels.size()) + " labels for " + std::to_string(size()) +
                      " items");
}

RowMatrix normalize_keypoints(const RowMatrix& correspondences, const Mat3& k1, const Mat3& k2)
{
  return map_keypoints(correspondences, checked_inverse(k1), checked_inverse(k2));
}

RowMatrix denormalize_keypoints(const RowMatrix& correspondences, const Mat3& k1, const Mat3& k2)
{
  return map_keypoints(correspondences, k1, k2);
}

double symmetric_epipolar_distance(const Mat3& e, std::span<const double, 4> c)
{
  const Vec3 x = homogeneous(c[0], c[1]);
  const Vec3 xp = homogeneous(c[2], c[3]);
  const Vec3 ex = e * x;
  const Vec3 etxp = e.transpose() * xp;
  const double r = xp.dot(ex);
  const double r2 = r * r;
  const double den1 = ex.x() * ex.x() + ex.y() * ex.y();
  const double den2 = etxp.x() * etxp.x() + etxp.y() * etxp.y();
  if (den1 == 0.0 && den2 == 0.0) return std::numeric_limits<double>::infinity();
  if (r2 == 0.0) return 0.0;
  const double inf = std::numeric_limits<double>::infinity();
  return (den1 > 0.0 ? r2 / den1 : inf) + (den2 > 0.0 ? r2 / den2 : inf);
}

std::vector<double> symmetric_epipolar_distances(const Mat3& e, const RowMatrix& correspondences)
{
  if (correspondences.cols() != 4) throw ShapeError("epipolar distances expect N x 4 correspondences");
  std::vector<double> out(static_cast<std::size_t>(correspondences.rows()));
  for (Eigen::Index i = 0; i < correspondences.rows(); ++i) {
    const std::array<double, 4> c{correspondences(i, 0), correspondences(i, 1), correspondences(i, 2),
                                  correspondences(i, 3)};
    out[static_cast<std::size_t>(i)] = symmetric_epipolar_distance(e, c);
  }
  return out;
}

std::vector<bool> label_by_threshold(std::span<const double> distances, double threshold)
{
  if (!(threshold > 0.0)) throw DomainError("label threshold must be positive");
  std::vector<bool> labels(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) labels[i] = distances[i] < threshold;
  return labels;
}

double point_line_distance(const LineModel& line, double x, double y)
{
  const double n2 = line.a * line.a + line.b * line.b;
  if (!(n2 > 0.0)) throw DegenerateError("line has a = b = 0");
  return std::abs(line.a * x + line.b * y + line.c) / std::sqrt(n2);
}

std::vector<double> point_line_distances(const LineModel& line, const RowMatrix& points)
{
  if (points.cols() != 2) throw ShapeError("point-line distances expect N x 2 points");
  std::vector<double> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    out[static_cast<std::size_t>(i)] = point_line_distance(line, points(i, 0), points(i, 1));
  return out;
}

Pose pose_from_essential(const Mat3& e, const RowMatrix& correspondences)
{
  if (correspondences.cols() != 4 || correspondences.rows() < 1)
    throw ShapeError("pose recovery needs at least one N x 4 correspondence");
  Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Mat3 w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Mat3 r1 = u * w * v.transpose();
  const Mat3 r2 = u * w.transpose() * v.transpose();
  const Vec3 t = u.col(2).normalized();
  const std::array<Pose, 4> candidates{Pose{r1, t}, Pose{r1, -t}, Pose{r2, t}, Pose{r2, -t}};

  std::size_t best = 0;
  long best_count = -1;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    long count = 0;
    for (Eigen::Index i = 0; i < correspondences.rows(); ++i) {
      const auto [z1, z2] = triangulate_depths(candidates[k].R, candidates[k].t,
                                               homogeneous(correspondences(i, 0), correspondences(i, 1)),
                                               homogeneous(correspondences(i, 2), correspondences(i, 3)));
      if (z1 > 0.0 && z2 > 0.0) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best = k;
    }
  }
  if (best_count <= 0) throw DegenerateError("no pose candidate passes the cheirality test");
  return candidates[best];
}

double rotation_angle_deg(const Mat3& r_a, const Mat3& r_b)
{
  // atan2 of the sine and cosine parts stays accurate near 0 and 180 degrees.
  const Mat3 r = r_a.transpose() * r_b;
  const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0)) * kRadToDeg;
}

double translation_angle_deg(const Vec3& t_a, const Vec3& t_b)
{
  const double na = t_a.norm(), nb = t_b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) return 90.0;
  return std::atan2(t_a.cross(t_b).norm(), std::abs(t_a.dot(t_b))) * kRadToDeg;
}

double pose_error_deg(const Pose& est, const Pose& gt)
{
  return std::max(rotation_angle_deg(est.R, gt.R), translation_angle_deg(est.t, gt.t));
}

std::vector<double> auc_at_thresholds(std::span<const double> errors, std::span<const double> thresholds)
{
  if (errors.empty()) throw DomainError("AUC needs at least one error value");
  const double n = static_cast<double>(errors.size());
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    if (!(t > 0.0)) throw DomainError("AUC threshold must be positive");
    // The empirical CDF steps up by 1/n at each error; its integral over
    // [0, T] is the sum of the lengths (T - e) over errors below T.
    double area = 0.0;
    for (double e : errors)
      if (e < t) area += (t - e);
    out.push_back(100.0 * area / (n * t));
  }
  return out;
}

}  // namespace clnet::geometry
