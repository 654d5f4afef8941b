#pragma once

// Full inference: prune with the network, fit a weighted model on the
// surviving candidates, then verify every original item against it.

#include <cstddef>
#include <optional>
#include <vector>

#include "clnet/estimators.hpp"
#include "clnet/network.hpp"
#include "clnet/synthetic.hpp"

namespace clnet::pipeline {

struct Prediction {
  std::vector<std::vector<std::size_t>> kept;  // original indices surviving each block
  std::vector<std::size_t> candidates;
  std::vector<double> final_scores;
  geometry::ParametricModel model;
  bool uniform_fallback = false;  // all candidate weights were zero
  estimators::Verification verification;
};

// Weighted estimate on the candidates, falling back to uniform weights when
// the learned weights do not determine a model.
geometry::ParametricModel estimate_model(data::Task task, const geometry::RowMatrix& candidates,
                                         std::span<const double> weights, bool* used_fallback = nullptr);

Prediction predict(const data::Sample& sample, const net::ParamSet& params, const net::NetConfig& config,
                   double d_thr);
// Skips the network and verifies with the supplied model (e.g. ground truth).
Prediction predict_with_model(const data::Sample& sample, const geometry::ParametricModel& model, double d_thr);

struct SampleMetrics {
  std::size_t index = 0;
  double outlier_ratio = 0.0;
  double line_l2 = 0.0;         // line task
  double pose_error_deg = 0.0;  // two-view task
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<double> inlier_ratio_per_block;  // GT inlier fraction among survivors of each block
  bool uniform_fallback = false;
};

SampleMetrics score_prediction(const data::Sample& sample, const Prediction& prediction);

struct Aggregate {
  double outlier_ratio = 0.0;  // negative for the all-samples row
  std::size_t count = 0;
  double mean_line_l2 = 0.0;
  std::vector<double> auc;  // AUC at 5/10/20 degrees, two-view only
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<double> inlier_ratio_per_block;
};

// One row per distinct outlier ratio (ascending) followed by an all-samples row.
std::vector<Aggregate> aggregate(data::Task task, const std::vector<SampleMetrics>& metrics);

// Mean line L2 (lower is better) or mean AUC over 5/10/20 degrees (higher is better).
double validation_metric(data::Task task, const std::vector<SampleMetrics>& metrics);
bool metric_improves(data::Task task, double candidate, double incumbent);

std::vector<SampleMetrics> evaluate(const std::vector<data::Sample>& samples, const net::ParamSet& params,
                                    const net::NetConfig& config, double d_thr, std::size_t threads = 1);

}  // namespace clnet::pipeline
