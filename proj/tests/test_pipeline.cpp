#include "doctest.h"

#include <cmath>

#include "clnet/errors.hpp"
#include "clnet/pipeline.hpp"

using namespace clnet;
using namespace clnet::pipeline;

namespace {

net::NetConfig tiny_net(std::size_t input_dim)
{
  net::NetConfig c;
  c.input_dim = input_dim;
  c.channels = 8;
  c.blocks = {{6, 3, 0.5}, {3, 3, 0.5}};
  c.resnet_depth_pre = 1;
  c.resnet_depth_mid = 1;
  return c;
}

// True when no outlier happens to lie within d_thr of the line.
bool clean_line_sample(const data::Sample& s, double d_thr)
{
  const auto d = data::gt_distances(s);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!s.set.labels[i] && d[i] < d_thr) return false;
  return true;
}

}  // namespace

TEST_CASE("ground-truth oracle on two-view data")
{
  data::TwoViewOptions opt;
  opt.n_points = 200;
  for (double ratio : {0.5, 0.7, 0.9}) {
    opt.outlier_ratio = ratio;
    const auto s = data::gen_two_view_sample(3, 0, opt);
    const Prediction p = predict_with_model(s, *s.set.gt_model, 1e-4);
    CHECK(p.verification.mask == s.set.labels);
    const SampleMetrics m = score_prediction(s, p);
    CHECK(m.f1 == 1.0);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.pose_error_deg < 1e-6);
  }
}

TEST_CASE("ground-truth oracle on line data")
{
  const double thr = 0.05;
  std::size_t checked = 0;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const auto s = data::gen_line_sample(8, i, 0.5, 200);
    const Prediction p = predict_with_model(s, *s.set.gt_model, thr);
    const SampleMetrics m = score_prediction(s, p);
    CHECK(m.line_l2 == 0.0);
    CHECK(m.recall == 1.0);
    if (clean_line_sample(s, thr)) {
      CHECK(m.f1 == 1.0);
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("estimate with fallback")
{
  const auto s = data::gen_line_sample(2, 0, 0.0, 30);
  bool fallback = false;
  const std::vector<double> zeros(30, 0.0);
  const auto m = estimate_model(data::Task::kLine, s.set.items, zeros, &fallback);
  CHECK(fallback);
  CHECK(estimators::evaluate_line(std::get<geometry::LineModel>(m), std::get<geometry::LineModel>(*s.set.gt_model)) <
        1e-10);
  const std::vector<double> ones(30, 1.0);
  estimate_model(data::Task::kLine, s.set.items, ones, &fallback);
  CHECK_FALSE(fallback);
}

TEST_CASE("network prediction shapes")
{
  const auto cfg = tiny_net(2);
  const auto params = net::init_params(cfg, 1);
  const auto s = data::gen_line_sample(1, 0, 0.6, 120);
  const Prediction p = predict(s, params, cfg, 0.05);
  REQUIRE(p.kept.size() == 2);
  CHECK(p.kept[0].size() == 60);
  CHECK(p.kept[1].size() == 30);
  CHECK(p.candidates == p.kept[1]);
  CHECK(p.final_scores.size() == 30);
  CHECK(p.verification.mask.size() == 120);
  const SampleMetrics m = score_prediction(s, p);
  REQUIRE(m.inlier_ratio_per_block.size() == 2);
  for (double r : m.inlier_ratio_per_block) CHECK((r >= 0.0 && r <= 1.0));

  // Verified mask recovers every candidate inlier the fitted model explains.
  const auto residuals = estimators::model_residuals(p.model, s.set.items);
  for (std::size_t i = 0; i < 120; ++i) CHECK(p.verification.mask[i] == (residuals[i] < 0.05));

  CHECK_THROWS_AS(predict(s, params, tiny_net(4), 0.05), ShapeError);
}

TEST_CASE("aggregation and validation metric")
{
  const auto cfg = tiny_net(2);
  const auto params = net::init_params(cfg, 1);
  std::vector<data::Sample> ds;
  for (double r : {0.5, 0.6, 0.7, 0.8, 0.9})
    for (auto& s : data::gen_line_dataset(2, r, 5, 80)) ds.push_back(s);
  const auto metrics = evaluate(ds, params, cfg, 0.05);
  REQUIRE(metrics.size() == 10);
  const auto rows = aggregate(data::Task::kLine, metrics);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].outlier_ratio == 0.5);
  CHECK(rows[4].outlier_ratio == 0.9);
  CHECK(rows[5].outlier_ratio < 0.0);
  CHECK(rows[5].count == 10);
  double mean = 0.0;
  for (const auto& m : metrics) mean += m.line_l2;
  CHECK(rows[5].mean_line_l2 == doctest::Approx(mean / 10.0));
  CHECK(validation_metric(data::Task::kLine, metrics) == doctest::Approx(mean / 10.0));

  const auto again = evaluate(ds, params, cfg, 0.05, 2);
  for (std::size_t i = 0; i < 10; ++i) CHECK(again[i].line_l2 == metrics[i].line_l2);

  CHECK(metric_improves(data::Task::kLine, 0.1, 0.2));
  CHECK_FALSE(metric_improves(data::Task::kLine, 0.3, 0.2));
  CHECK(metric_improves(data::Task::kTwoView, 30.0, 20.0));
  CHECK(metric_improves(data::Task::kLine, 0.3, std::nan("")));
  CHECK_FALSE(metric_improves(data::Task::kLine, std::nan(""), 0.3));
}

TEST_CASE("two-view AUC aggregation")
{
  std::vector<SampleMetrics> m(4);
  const double errs[] = {0.0, 2.5, 7.5, 30.0};
  for (int i = 0; i < 4; ++i) {
    m[i].pose_error_deg = errs[i];
    m[i].outlier_ratio = 0.5;
  }
  const auto rows = aggregate(data::Task::kTwoView, m);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[1].auc.size() == 3);
  // mean((T - e)+) / T per threshold.
  CHECK(rows[1].auc[0] == doctest::Approx(100.0 * (5.0 + 2.5) / (4 * 5.0)));
  CHECK(rows[1].auc[1] == doctest::Approx(100.0 * (10.0 + 7.5 + 2.5) / (4 * 10.0)));
  CHECK(rows[1].auc[2] == doctest::Approx(100.0 * (20.0 + 17.5 + 12.5) / (4 * 20.0)));
  CHECK(validation_metric(data::Task::kTwoView, m) == doctest::Approx((rows[1].auc[0] + rows[1].auc[1] + rows[1].auc[2]) / 3));
}
