#include "clnet/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "clnet/errors.hpp"

namespace clnet::estimators {

namespace {

void check_weights(std::span<const double> weights, std::size_t count, const char* who)
{
  if (weights.size() != count)
    throw ShapeError(std::string(who) + ": " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(count) + " items");
  bool any = false;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError(std::string(who) + ": weights must be finite and >= 0");
    any = any || w > 0.0;
  }
  if (!any) throw DegenerateError(std::string(who) + ": all weights are zero");
}

}  // namespace

LineModel weighted_line_fit(const RowMatrix& points, std::span<const double> weights)
{
  if (points.cols() != 2) throw ShapeError("weighted_line_fit: expected N x 2 points");
  if (points.rows() < 2) throw DegenerateError("weighted_line_fit: need at least two points");
  check_weights(weights, static_cast<std::size_t>(points.rows()), "weighted_line_fit");

  geometry::Mat3 scatter = geometry::Mat3::Zero();
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double w = weights[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    const geometry::Vec3 h(points(i, 0), points(i, 1), 1.0);
    scatter.noalias() += w * h * h.transpose();
  }
  Eigen::SelfAdjointEigenSolver<geometry::Mat3> solver(scatter);
  const geometry::Vec3 ev = solver.eigenvalues();
  if (!(ev(1) > 1e-12 * std::max(ev(2), std::numeric_limits<double>::min())))
    throw DegenerateError("weighted_line_fit: weighted points are coincident");
  const geometry::Vec3 v = solver.eigenvectors().col(0);
  return geometry::canonicalize({v(0), v(1), v(2)});
}

EssentialMatrix weighted_eight_point(const RowMatrix& correspondences, std::span<const double> weights)
{
  if (correspondences.cols() != 4) throw ShapeError("weighted_eight_point: expected N x 4 correspondences");
  if (correspondences.rows() < 8) throw DegenerateError("weighted_eight_point: need at least 8 correspondences");
  check_weights(weights, static_cast<std::size_t>(correspondences.rows()), "weighted_eight_point");

  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < correspondences.rows(); ++i)
    if (weights[static_cast<std::size_t>(i)] > 0.0) active.push_back(i);
  if (active.size() < 8) throw DegenerateError("weighted_eight_point: fewer than 8 positively weighted rows");

  Eigen::MatrixXd design(static_cast<Eigen::Index>(active.size()), 9);
  for (std::size_t r = 0; r < active.size(); ++r) {
    const auto i = active[r];
    const double x = correspondences(i, 0), y = correspondences(i, 1);
    const double xp = correspondences(i, 2), yp = correspondences(i, 3);
    const double s = std::sqrt(weights[static_cast<std::size_t>(i)]);
    design.row(static_cast<Eigen::Index>(r)) << xp * x, xp * y, xp, yp * x, yp * y, yp, x, y, 1.0;
    design.row(static_cast<Eigen::Index>(r)) *= s;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 8 || !(sv(7) > 1e-10 * sv(0)))
    throw DegenerateError("weighted_eight_point: design matrix has rank < 8");
  const Eigen::VectorXd e = svd.matrixV().col(8);
  geometry::Mat3 m;
  m << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  EssentialMatrix out = geometry::enforce_essential(m);
  Eigen::Index r = 0, c = 0;
  out.m.cwiseAbs().maxCoeff(&r, &c);
  if (out.m(r, c) < 0.0) out.m = -out.m;
  return out;
}

std::vector<double> model_residuals(const ParametricModel& model, const RowMatrix& items)
{
  if (const auto* line = std::get_if<LineModel>(&model)) return geometry::point_line_distances(*line, items);
  const auto& e = std::get<EssentialMatrix>(model);
  if (!(e.m.norm() > 0.0)) throw DegenerateError("verification: essential matrix is zero");
  return geometry::symmetric_epipolar_distances(e.m, items);
}

Verification full_size_verification(const ParametricModel& model, const RowMatrix& items, double threshold)
{
  const std::vector<double> residuals = model_residuals(model, items);
  Verification out;
  out.mask.resize(residuals.size());
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    out.mask[i] = residuals[i] < threshold;
    out.inliers += out.mask[i] ? 1 : 0;
  }
  return out;
}

LineModel ransac_line_baseline(const RowMatrix& points, const RansacOptions& options)
{
  if (points.cols() != 2) throw ShapeError("ransac_line_baseline: expected N x 2 points");
  if (points.rows() < 2) throw DegenerateError("ransac_line_baseline: need at least two points");
  if (options.iterations < 1) throw DomainError("ransac_line_baseline: iterations must be >= 1");

  const auto n = static_cast<std::size_t>(points.rows());
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  std::size_t best_count = 0;
  double best_mean = std::numeric_limits<double>::infinity();
  std::vector<bool> best_mask;
  for (std::size_t it = 0; it < options.iterations; ++it) {
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (j == i) j = pick(rng);
    const geometry::Vec3 p(points(static_cast<Eigen::Index>(i), 0), points(static_cast<Eigen::Index>(i), 1), 1.0);
    const geometry::Vec3 q(points(static_cast<Eigen::Index>(j), 0), points(static_cast<Eigen::Index>(j), 1), 1.0);
    const geometry::Vec3 l = p.cross(q);
    if (!(l.head<2>().norm() > 0.0)) continue;  // coincident sample
    const LineModel hyp = geometry::canonicalize({l(0), l(1), l(2)});

    std::size_t count = 0;
    double total = 0.0;
    std::vector<bool> mask(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double d = geometry::point_line_distance(hyp, points(static_cast<Eigen::Index>(k), 0),
                                                     points(static_cast<Eigen::Index>(k), 1));
      if (d < options.inlier_threshold) {
        mask[k] = true;
        ++count;
        total += d;
      }
    }
    const double mean = count ? total / static_cast<double>(count) : std::numeric_limits<double>::infinity();
    if (count > best_count || (count == best_count && count > 0 && mean < best_mean)) {
      best_count = count;
      best_mean = mean;
      best_mask = std::move(mask);
    }
  }
  if (best_count < 2) throw DegenerateError("ransac_line_baseline: no hypothesis with two or more inliers");

  std::vector<double> weights(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) weights[k] = best_mask[k] ? 1.0 : 0.0;
  return weighted_line_fit(points, weights);
}

double evaluate_line(const LineModel& est, const LineModel& gt)
{
  const LineModel a = geometry::canonicalize(est);
  const LineModel b = geometry::canonicalize(gt);
  return std::sqrt((a.a - b.a) * (a.a - b.a) + (a.b - b.b) * (a.b - b.b) + (a.c - b.c) * (a.c - b.c));
}

}  // namespace clnet::estimators
