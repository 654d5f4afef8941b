#include "clnet/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "clnet/errors.hpp"
#include "clnet/parallel.hpp"

namespace clnet::pipeline {

namespace {

using geometry::RowMatrix;

constexpr std::array<double, 3> kAucThresholds{5.0, 10.0, 20.0};

RowMatrix gather(const RowMatrix& items, std::span<const std::size_t> index)
{
  RowMatrix out(static_cast<Eigen::Index>(index.size()), items.cols());
  for (std::size_t r = 0; r < index.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = items.row(static_cast<Eigen::Index>(index[r]));
  return out;
}

double mean_of(const std::vector<double>& v)
{
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

geometry::ParametricModel estimate_model(data::Task task, const RowMatrix& candidates,
                                         std::span<const double> weights, bool* used_fallback)
{
  auto solve = [&](std::span<const double> w) -> geometry::ParametricModel {
    if (task == data::Task::kLine) return estimators::weighted_line_fit(candidates, w);
    return estimators::weighted_eight_point(candidates, w);
  };
  if (used_fallback) *used_fallback = false;
  try {
    return solve(weights);
  } catch (const DegenerateError&) {
    if (used_fallback) *used_fallback = true;
    const std::vector<double> uniform(weights.size(), 1.0);
    return solve(uniform);
  }
}

Prediction predict(const data::Sample& sample, const net::ParamSet& params, const net::NetConfig& config,
                   double d_thr)
{
  const ad::NoGradScope no_grad;
  const auto scores = net::clnet_forward(sample.set.items, params, config);
  Prediction out;
  for (const auto& b : scores.blocks) {
    std::vector<std::size_t> kept(b.kept.size());
    for (std::size_t r = 0; r < kept.size(); ++r) kept[r] = b.input_index[b.kept[r]];
    out.kept.push_back(std::move(kept));
  }
  out.candidates = scores.candidates;
  out.final_scores.assign(scores.final_scores.data().begin(), scores.final_scores.data().end());
  for (double w : out.final_scores)
    if (!std::isfinite(w)) throw NumericalError("predict: non-finite candidate weight");
  const RowMatrix cand = gather(sample.set.items, out.candidates);
  out.model = estimate_model(sample.task, cand, out.final_scores, &out.uniform_fallback);
  out.verification = estimators::full_size_verification(out.model, sample.set.items, d_thr);
  return out;
}

Prediction predict_with_model(const data::Sample& sample, const geometry::ParametricModel& model, double d_thr)
{
  Prediction out;
  out.model = model;
  out.verification = estimators::full_size_verification(model, sample.set.items, d_thr);
  for (std::size_t i = 0; i < out.verification.mask.size(); ++i)
    if (out.verification.mask[i]) out.candidates.push_back(i);
  out.final_scores.assign(out.candidates.size(), 1.0);
  return out;
}

SampleMetrics score_prediction(const data::Sample& sample, const Prediction& prediction)
{
  const auto& set = sample.set;
  SampleMetrics m;
  m.index = sample.index;
  m.outlier_ratio = sample.outlier_ratio;
  m.uniform_fallback = prediction.uniform_fallback;

  if (set.gt_model) {
    if (sample.task == data::Task::kLine) {
      m.line_l2 = estimators::evaluate_line(std::get<geometry::LineModel>(prediction.model),
                                            std::get<geometry::LineModel>(*set.gt_model));
    } else if (sample.gt_pose) {
      const auto& e = std::get<geometry::EssentialMatrix>(prediction.model).m;
      std::vector<std::size_t> support;
      for (std::size_t i = 0; i < prediction.verification.mask.size(); ++i)
        if (prediction.verification.mask[i]) support.push_back(i);
      const RowMatrix pts = support.empty() ? gather(set.items, prediction.candidates) : gather(set.items, support);
      try {
        m.pose_error_deg = geometry::pose_error_deg(geometry::pose_from_essential(e, pts), *sample.gt_pose);
      } catch (const DegenerateError&) {
        m.pose_error_deg = 180.0;
      }
    }
  }

  if (set.labels.size() == set.size()) {
    std::size_t tp = 0, pred = 0, pos = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const bool p = prediction.verification.mask[i];
      const bool y = set.labels[i];
      tp += p && y;
      pred += p;
      pos += y;
    }
    m.precision = pred ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
    m.recall = pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    for (const auto& kept : prediction.kept) {
      std::size_t in = 0;
      for (std::size_t i : kept) in += set.labels[i];
      m.inlier_ratio_per_block.push_back(kept.empty() ? 0.0
                                                      : static_cast<double>(in) / static_cast<double>(kept.size()));
    }
  }
  return m;
}

std::vector<Aggregate> aggregate(data::Task task, const std::vector<SampleMetrics>& metrics)
{
  std::map<double, std::vector<const SampleMetrics*>> groups;
  std::vector<const SampleMetrics*> all;
  for (const auto& m : metrics) {
    groups[m.outlier_ratio].push_back(&m);
    all.push_back(&m);
  }
  auto summarize = [task](double ratio, const std::vector<const SampleMetrics*>& rows) {
    Aggregate a;
    a.outlier_ratio = ratio;
    a.count = rows.size();
    std::vector<double> l2, pose, prec, rec, f1;
    std::size_t blocks = 0;
    for (const auto* r : rows) blocks = std::max(blocks, r->inlier_ratio_per_block.size());
    std::vector<std::vector<double>> per_block(blocks);
    for (const auto* r : rows) {
      l2.push_back(r->line_l2);
      pose.push_back(r->pose_error_deg);
      prec.push_back(r->precision);
      rec.push_back(r->recall);
      f1.push_back(r->f1);
      for (std::size_t b = 0; b < r->inlier_ratio_per_block.size(); ++b)
        per_block[b].push_back(r->inlier_ratio_per_block[b]);
    }
    a.mean_line_l2 = mean_of(l2);
    if (task == data::Task::kTwoView && !pose.empty()) a.auc = geometry::auc_at_thresholds(pose, kAucThresholds);
    a.precision = mean_of(prec);
    a.recall = mean_of(rec);
    a.f1 = mean_of(f1);
    for (const auto& v : per_block) a.inlier_ratio_per_block.push_back(mean_of(v));
    return a;
  };
  std::vector<Aggregate> out;
  for (const auto& [ratio, rows] : groups) out.push_back(summarize(ratio, rows));
  out.push_back(summarize(-1.0, all));
  return out;
}

double validation_metric(data::Task task, const std::vector<SampleMetrics>& metrics)
{
  if (metrics.empty()) throw DomainError("validation_metric: no samples");
  if (task == data::Task::kLine) {
    double s = 0.0;
    for (const auto& m : metrics) s += m.line_l2;
    return s / static_cast<double>(metrics.size());
  }
  std::vector<double> errors;
  for (const auto& m : metrics) errors.push_back(m.pose_error_deg);
  return mean_of(geometry::auc_at_thresholds(errors, kAucThresholds));
}

bool metric_improves(data::Task task, double candidate, double incumbent)
{
  if (std::isnan(candidate)) return false;
  if (std::isnan(incumbent)) return true;
  return task == data::Task::kLine ? candidate < incumbent : candidate > incumbent;
}

std::vector<SampleMetrics> evaluate(const std::vector<data::Sample>& samples, const net::ParamSet& params,
                                    const net::NetConfig& config, double d_thr, std::size_t threads)
{
  std::vector<SampleMetrics> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t, std::size_t i) {
    out[i] = score_prediction(samples[i], predict(samples[i], params, config, d_thr));
  });
  return out;
}

}  // namespace clnet::pipeline
