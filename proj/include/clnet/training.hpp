#pragma once

// Adaptive-temperature classification loss, model regression loss, Adam, and
// the mini-batch training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "clnet/autodiff.hpp"
#include "clnet/network.hpp"
#include "clnet/synthetic.hpp"

namespace clnet::train {

using ad::Tensor;

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double lambda_reg = 0.5;
  double d_thr = 0.05;              // 1e-4 for the two-view task
  double temperature_alpha = 1.0;   // kernel width multiplier on d_thr
  bool use_temperature = true;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// exp(-|d - d_thr| / (alpha * d_thr)) for d < d_thr, otherwise 1.
double adaptive_temperature(double d, double d_thr, double alpha = 1.0);
std::vector<double> temperatures(std::span<const double> distances, double d_thr, double alpha, bool enabled);

// One BCE term: mean over items of BCE(sigmoid(tau * o), y).
struct LogitTerm {
  Tensor logits;                     // n x 1
  std::vector<double> labels;        // 0 / 1
  std::vector<double> temperatures;  // tau per item
};

Tensor bce_term(const LogitTerm& term);
Tensor classification_loss(std::span<const LogitTerm> terms);

// Local and global terms of every block plus the final term, with labels
// and temperatures gathered through each block's surviving indices.
std::vector<LogitTerm> classification_terms(const net::ConsensusScores& scores, std::span<const bool> labels,
                                            std::span<const double> temps);

// Squared L2 between canonical line coefficients, or the mean squared
// algebraic epipolar residual x'^T E x over `gt_inliers`.
double regression_loss(const geometry::ParametricModel& est, const geometry::ParametricModel& gt,
                       const geometry::RowMatrix& gt_inliers = {});

// Differentiable counterparts through the weighted estimator. Return nullopt
// when the weights leave the estimate undetermined.
std::optional<Tensor> line_regression_loss(const geometry::RowMatrix& candidates, const Tensor& weights,
                                           const geometry::LineModel& gt);
std::optional<Tensor> essential_regression_loss(const geometry::RowMatrix& candidates, const Tensor& weights,
                                                const geometry::RowMatrix& gt_inliers);

Tensor total_loss(const Tensor& cls, const Tensor& reg, double lambda);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update on a flat parameter array.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::size_t step, double lr, double beta1, double beta2, double eps);
// Updates every parameter from its accumulated gradient; step advances by one.
void adam_step(net::ParamSet& params, AdamState& state, double lr);

struct SampleLoss {
  Tensor total;
  double cls = 0.0;
  double reg = 0.0;
  bool reg_skipped = false;
  net::ConsensusScores scores;
};

// Forward pass and loss for one sample; records on the active tape.
SampleLoss sample_loss(const data::Sample& sample, const net::ParamSet& params, const net::NetConfig& net_config,
                       const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double inlier_ratio_post_prune = 0.0;
  double wall_time_ms = 0.0;
  std::size_t reg_skipped = 0;
};

struct TrainResult {
  net::ParamSet params;
  net::ParamSet best_params;
  double best_val_metric = 0.0;
  std::vector<EpochMetrics> history;
};

std::size_t batches_per_epoch(std::size_t samples, std::size_t batch_size);

TrainResult train(const std::vector<data::Sample>& train_set, const std::vector<data::Sample>& val_set,
                  const net::NetConfig& net_config, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

// Same loop starting from given parameters.
TrainResult train_from(net::ParamSet params, const std::vector<data::Sample>& train_set,
                       const std::vector<data::Sample>& val_set, const net::NetConfig& net_config,
                       const TrainConfig& config, const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace clnet::train
