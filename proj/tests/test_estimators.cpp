#include "doctest.h"

#include <cmath>
#include <random>

#include "clnet/errors.hpp"
#include "clnet/estimators.hpp"
#include "clnet/synthetic.hpp"

using namespace clnet;
using namespace clnet::estimators;
using geometry::Mat3;

namespace {

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

RowMatrix rows_where(const RowMatrix& m, const std::vector<bool>& keep)
{
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) idx.push_back(static_cast<Eigen::Index>(i));
  RowMatrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(idx[r]);
  return out;
}

// Equal up to sign, for unit-norm matrices.
double sign_free_distance(const Mat3& a, const Mat3& b) { return std::min((a - b).norm(), (a + b).norm()); }

}  // namespace

TEST_CASE("weighted line fit")
{
  RowMatrix p(3, 2);
  p << 0, 0, 1, 1, 2, 2;
  const LineModel l = weighted_line_fit(p, ones(3));
  CHECK(evaluate_line(l, geometry::make_line(1.0, -1.0, 0.0)) < 1e-12);

  RowMatrix q(4, 2);
  q << 0, 0, 1, 1, 2, 2, 3, -7;
  const std::vector<double> w{1.0, 1.0, 1.0, 0.0};
  CHECK(weighted_line_fit(q, w) == l);

  const auto s = data::gen_line_sample(3, 0, 0.95, 1000);
  const RowMatrix in = rows_where(s.set.items, s.set.labels);
  const auto gt = std::get<LineModel>(*s.set.gt_model);
  CHECK(evaluate_line(weighted_line_fit(in, ones(in.rows())), gt) < 1e-10);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  std::vector<double> wr(in.rows());
  for (double& v : wr) v = u(rng);
  std::vector<double> wr3 = wr;
  for (double& v : wr3) v *= 37.0;
  CHECK(evaluate_line(weighted_line_fit(in, wr), weighted_line_fit(in, wr3)) < 1e-12);

  CHECK_THROWS_AS(weighted_line_fit(p, std::vector<double>(3, 0.0)), DegenerateError);
  CHECK_THROWS_AS(weighted_line_fit(p.topRows(1), ones(1)), DegenerateError);
  RowMatrix same(3, 2);
  same << 1, 1, 1, 1, 1, 1;
  CHECK_THROWS_AS(weighted_line_fit(same, ones(3)), DegenerateError);
  CHECK_THROWS_AS(weighted_line_fit(p, std::vector<double>{1.0, -1.0, 1.0}), DomainError);
}

TEST_CASE("weighted eight point")
{
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> xy(-1.0, 1.0), z(3.0, 6.0);
  RowMatrix c(20, 4);
  for (Eigen::Index i = 0; i < 20; ++i) {
    const geometry::Vec3 x(xy(rng), xy(rng), z(rng));
    const geometry::Vec3 x2 = x + geometry::Vec3::UnitX();
    c.row(i) << x.x() / x.z(), x.y() / x.z(), x2.x() / x2.z(), x2.y() / x2.z();
  }
  const EssentialMatrix e = weighted_eight_point(c, ones(20));
  Mat3 ref;
  ref << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  CHECK(sign_free_distance(e.m, ref / ref.norm()) < 1e-8);

  RowMatrix mixed(25, 4);
  mixed.topRows(20) = c;
  for (Eigen::Index i = 20; i < 25; ++i) mixed.row(i) << xy(rng), xy(rng), xy(rng), xy(rng);
  std::vector<double> w = ones(25);
  for (std::size_t i = 20; i < 25; ++i) w[i] = 0.0;
  CHECK(sign_free_distance(weighted_eight_point(mixed, w).m, e.m) < 1e-12);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    data::TwoViewOptions opt;
    opt.n_points = 100;
    opt.outlier_ratio = 0.0;
    const auto s = data::gen_two_view_sample(seed, 0, opt);
    const EssentialMatrix est = weighted_eight_point(s.set.items, ones(100));
    Eigen::JacobiSVD<Mat3> svd(est.m);
    CHECK(svd.singularValues()(2) < 1e-9);
    CHECK(std::abs(svd.singularValues()(0) - svd.singularValues()(1)) < 1e-9);
    CHECK(est.m.norm() == doctest::Approx(1.0).epsilon(1e-12));
    const auto pose = geometry::pose_from_essential(est.m, s.set.items);
    CHECK(geometry::pose_error_deg(pose, *s.gt_pose) < 0.01);

    std::vector<double> w1(100), w2(100);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (std::size_t i = 0; i < 100; ++i) {
      w1[i] = u(rng);
      w2[i] = 1e3 * w1[i];
    }
    CHECK(sign_free_distance(weighted_eight_point(s.set.items, w1).m, weighted_eight_point(s.set.items, w2).m) < 1e-12);
  }

  CHECK_THROWS_AS(weighted_eight_point(c.topRows(7), ones(7)), DegenerateError);
  CHECK_THROWS_AS(weighted_eight_point(c, std::vector<double>(20, 0.0)), DegenerateError);
}

TEST_CASE("full size verification")
{
  SUBCASE("two view")
  {
    data::TwoViewOptions opt;
    opt.n_points = 200;
    opt.outlier_ratio = 0.6;
    const auto s = data::gen_two_view_sample(4, 0, opt);
    const auto v = full_size_verification(*s.set.gt_model, s.set.items, 1e-4);
    CHECK(v.mask == s.set.labels);
    CHECK(v.inliers == 80);
    CHECK(full_size_verification(*s.set.gt_model, s.set.items, 0.0).inliers == 0);

    // Fit on a subset of inliers; verification recovers every inlier.
    std::vector<double> w(200, 0.0);
    std::size_t used = 0;
    for (std::size_t i = 0; i < 200 && used < 12; ++i)
      if (s.set.labels[i]) {
        w[i] = 1.0;
        ++used;
      }
    const ParametricModel fitted = weighted_eight_point(s.set.items, w);
    const auto vf = full_size_verification(fitted, s.set.items, 1e-4);
    for (std::size_t i = 0; i < 200; ++i)
      if (w[i] > 0.0) CHECK(vf.mask[i]);
    CHECK(vf.mask == s.set.labels);
  }
  SUBCASE("monotone in threshold")
  {
    const auto s = data::gen_line_sample(5, 0, 0.5, 300);
    const ParametricModel m = geometry::make_line(0.3, 0.7, 0.2);
    const auto small = full_size_verification(m, s.set.items, 0.5);
    const auto big = full_size_verification(m, s.set.items, 1.0);
    for (std::size_t i = 0; i < 300; ++i)
      if (small.mask[i]) CHECK(big.mask[i]);
  }
  SUBCASE("degenerate model")
  {
    const RowMatrix pts = RowMatrix::Zero(3, 4);
    CHECK_THROWS_AS(full_size_verification(ParametricModel(EssentialMatrix{}), pts, 1e-4), DegenerateError);
  }
}

TEST_CASE("line evaluation")
{
  const LineModel a = geometry::make_line(1.0, -1.0, 0.0);
  CHECK(evaluate_line(a, a) == 0.0);
  LineModel neg{-a.a, -a.b, -a.c};
  CHECK(evaluate_line(neg, a) == 0.0);
  CHECK(evaluate_line(geometry::make_line(1, 0, 0), geometry::make_line(0, 1, 0)) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("RANSAC line baseline")
{
  RansacOptions opt;
  opt.seed = 9;
  const auto clean = data::gen_line_sample(6, 0, 0.0, 1000);
  const auto gt = std::get<LineModel>(*clean.set.gt_model);
  CHECK(evaluate_line(ransac_line_baseline(clean.set.items, opt), gt) < 1e-10);

  const auto noisy = data::gen_line_sample(7, 0, 0.9, 1000);
  CHECK(ransac_line_baseline(noisy.set.items, opt) == ransac_line_baseline(noisy.set.items, opt));

  // Inlier-set recall of the returned model over many datasets.
  std::size_t found = 0, total = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto s = data::gen_line_sample(100, i, 0.9, 1000);
    RansacOptions o;
    o.seed = i;
    const LineModel m = ransac_line_baseline(s.set.items, o);
    const auto v = full_size_verification(m, s.set.items, o.inlier_threshold);
    for (std::size_t k = 0; k < s.set.size(); ++k)
      if (s.set.labels[k]) {
        ++total;
        found += v.mask[k] ? 1 : 0;
      }
  }
  CHECK(static_cast<double>(found) / static_cast<double>(total) >= 0.99);

  RowMatrix one(1, 2);
  one << 0, 0;
  CHECK_THROWS_AS(ransac_line_baseline(one, opt), DegenerateError);
  RansacOptions zero = opt;
  zero.iterations = 0;
  CHECK_THROWS_AS(ransac_line_baseline(clean.set.items, zero), DomainError);
}
