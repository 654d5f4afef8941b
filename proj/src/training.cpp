#include "clnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <string>

#include "clnet/errors.hpp"
#include "clnet/parallel.hpp"
#include "clnet/pipeline.hpp"

namespace clnet::train {

namespace {

using geometry::RowMatrix;

// Rethrows the in-flight exception with `context` prefixed, keeping its category.
[[noreturn]] void rethrow_with_context(const std::string& context)
{
  try {
    throw;
  } catch (const ShapeError& e) {
    throw ShapeError(context + ": " + e.what());
  } catch (const DomainError& e) {
    throw DomainError(context + ": " + e.what());
  } catch (const DegenerateError& e) {
    throw DegenerateError(context + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(context + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(context + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(context + ": " + e.what());
  }
}

std::size_t positive_count(const Tensor& w)
{
  const auto d = w.data();
  return static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [](double v) { return v > 0.0; }));
}

// (x', y', 1) (x) (x, y, 1) row of the epipolar design matrix, so that
// row . vec(E) = x'^T E x for row-major vec(E).
void design_row(const RowMatrix& c, Eigen::Index i, double* out)
{
  const double x = c(i, 0), y = c(i, 1), xp = c(i, 2), yp = c(i, 3);
  const double a[3] = {xp, yp, 1.0};
  const double b[3] = {x, y, 1.0};
  for (int r = 0; r < 3; ++r)
    for (int s = 0; s < 3; ++s) out[3 * r + s] = a[r] * b[s];
}

Tensor design_matrix(const RowMatrix& c)
{
  const auto n = static_cast<std::size_t>(c.rows());
  std::vector<double> rows(n * 9);
  for (std::size_t i = 0; i < n; ++i) design_row(c, static_cast<Eigen::Index>(i), &rows[9 * i]);
  return Tensor({n, 9}, std::move(rows));
}

RowMatrix gather(const RowMatrix& items, const std::vector<std::size_t>& index)
{
  RowMatrix out(static_cast<Eigen::Index>(index.size()), items.cols());
  for (std::size_t r = 0; r < index.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = items.row(static_cast<Eigen::Index>(index[r]));
  return out;
}

RowMatrix gt_inlier_rows(const geometry::MatchSet& set)
{
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < set.labels.size(); ++i)
    if (set.labels[i]) idx.push_back(i);
  return gather(set.items, idx);
}

bool all_finite(const net::ParamSet& params)
{
  for (const auto& [name, t] : params.entries())
    for (double v : t.data())
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

void TrainConfig::validate() const
{
  if (!(learning_rate > 0.0)) throw FormatError("learning_rate must be > 0");
  if (batch_size < 1) throw FormatError("batch_size must be >= 1");
  if (!(lambda_reg >= 0.0)) throw FormatError("lambda_reg must be >= 0");
  if (!(d_thr > 0.0)) throw FormatError("d_thr must be > 0");
  if (!(temperature_alpha > 0.0)) throw FormatError("temperature_alpha must be > 0");
  if (threads < 1) throw FormatError("threads must be >= 1");
}

// ---- losses ---------------------------------------------------------------------

double adaptive_temperature(double d, double d_thr, double alpha)
{
  if (!(d_thr > 0.0)) throw DomainError("adaptive_temperature: d_thr must be > 0");
  if (!(alpha > 0.0)) throw DomainError("adaptive_temperature: alpha must be > 0");
  if (d < 0.0) throw DomainError("adaptive_temperature: distance must be >= 0");
  if (d >= d_thr) return 1.0;
  return std::exp(-std::abs(d - d_thr) / (alpha * d_thr));
}

std::vector<double> temperatures(std::span<const double> distances, double d_thr, double alpha, bool enabled)
{
  std::vector<double> out(distances.size(), 1.0);
  if (!enabled) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = adaptive_temperature(distances[i], d_thr, alpha);
  return out;
}

Tensor bce_term(const LogitTerm& term)
{
  const std::size_t n = term.logits.size();
  if (term.labels.size() != n || term.temperatures.size() != n)
    throw ShapeError("bce_term: " + std::to_string(n) + " logits but " + std::to_string(term.labels.size()) +
                     " labels and " + std::to_string(term.temperatures.size()) + " temperatures");
  if (n == 0) throw ShapeError("bce_term: empty term");
  const Tensor tau({n, 1}, term.temperatures);
  const Tensor y({n, 1}, term.labels);
  const Tensor x = ad::mul(ad::reshape(term.logits, {n, 1}), tau);
  // BCE(sigmoid(x), y) = softplus(x) - y * x
  return ad::mean(ad::sub(ad::softplus(x), ad::mul(y, x)));
}

Tensor classification_loss(std::span<const LogitTerm> terms)
{
  if (terms.empty()) throw ShapeError("classification_loss: no terms");
  Tensor total = bce_term(terms[0]);
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, bce_term(terms[i]));
  return total;
}

std::vector<LogitTerm> classification_terms(const net::ConsensusScores& scores, std::span<const bool> labels,
                                            std::span<const double> temps)
{
  if (labels.size() != temps.size())
    throw ShapeError("classification_terms: " + std::to_string(labels.size()) + " labels but " +
                     std::to_string(temps.size()) + " temperatures");
  auto make = [&](const Tensor& logits, const std::vector<std::size_t>& index) {
    LogitTerm t;
    t.logits = logits;
    t.labels.reserve(index.size());
    t.temperatures.reserve(index.size());
    for (std::size_t i : index) {
      if (i >= labels.size()) throw ShapeError("classification_terms: index out of range");
      t.labels.push_back(labels[i] ? 1.0 : 0.0);
      t.temperatures.push_back(temps[i]);
    }
    return t;
  };
  std::vector<LogitTerm> out;
  for (const auto& b : scores.blocks) {
    out.push_back(make(b.logits_local, b.input_index));
    if (b.logits_global.defined()) out.push_back(make(b.logits_global, b.input_index));
  }
  out.push_back(make(scores.final_logits, scores.candidates));
  return out;
}

double regression_loss(const geometry::ParametricModel& est, const geometry::ParametricModel& gt,
                       const RowMatrix& gt_inliers)
{
  if (est.index() != gt.index()) throw DomainError("regression_loss: model variants differ");
  if (const auto* le = std::get_if<geometry::LineModel>(&est)) {
    const auto a = geometry::canonicalize(*le).coeffs();
    const auto b = geometry::canonicalize(std::get<geometry::LineModel>(gt)).coeffs();
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  }
  if (gt_inliers.rows() == 0) throw DomainError("regression_loss: no ground-truth inliers");
  if (gt_inliers.cols() != 4) throw ShapeError("regression_loss: correspondences must have 4 columns");
  geometry::Mat3 e = std::get<geometry::EssentialMatrix>(est).m;
  const double norm = e.norm();
  if (norm > 0.0) e /= norm;
  double s = 0.0;
  for (Eigen::Index i = 0; i < gt_inliers.rows(); ++i) {
    const geometry::Vec3 x(gt_inliers(i, 0), gt_inliers(i, 1), 1.0);
    const geometry::Vec3 xp(gt_inliers(i, 2), gt_inliers(i, 3), 1.0);
    const double r = xp.dot(e * x);
    s += r * r;
  }
  return s / static_cast<double>(gt_inliers.rows());
}

std::optional<Tensor> line_regression_loss(const RowMatrix& candidates, const Tensor& weights,
                                           const geometry::LineModel& gt)
{
  const auto m = static_cast<std::size_t>(candidates.rows());
  if (candidates.cols() != 2) throw ShapeError("line_regression_loss: points must have 2 columns");
  if (weights.size() != m) throw ShapeError("line_regression_loss: weight count does not match points");
  if (positive_count(weights) < 2) return std::nullopt;

  std::vector<double> h(m * 3);
  for (std::size_t i = 0; i < m; ++i) {
    h[3 * i] = candidates(static_cast<Eigen::Index>(i), 0);
    h[3 * i + 1] = candidates(static_cast<Eigen::Index>(i), 1);
    h[3 * i + 2] = 1.0;
  }
  const Tensor hm({m, 3}, std::move(h));
  const Tensor scatter = ad::matmul(ad::transpose(hm), ad::mul_rows(hm, weights));

  Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> s(scatter.data().data());
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(s);
  const auto ev = es.eigenvalues();
  if (!(ev(1) > 1e-12 * std::abs(ev(2)))) return std::nullopt;

  Tensor v = ad::symmetric_min_eigenvector(scatter);
  // Match the canonical sign of the ground-truth representation.
  double sign = 1.0;
  for (int i = 0; i < 3; ++i) {
    if (v[i] != 0.0) {
      sign = v[i] > 0.0 ? 1.0 : -1.0;
      break;
    }
  }
  v = ad::scale(v, sign);
  const auto g = geometry::canonicalize(gt);
  const Tensor gt_vec({3, 1}, {g.a, g.b, g.c});
  const Tensor diff = ad::sub(v, gt_vec);
  return ad::sum(ad::mul(diff, diff));
}

std::optional<Tensor> essential_regression_loss(const RowMatrix& candidates, const Tensor& weights,
                                                const RowMatrix& gt_inliers)
{
  const auto m = static_cast<std::size_t>(candidates.rows());
  if (candidates.cols() != 4) throw ShapeError("essential_regression_loss: correspondences must have 4 columns");
  if (weights.size() != m) throw ShapeError("essential_regression_loss: weight count does not match items");
  if (positive_count(weights) < 8 || gt_inliers.rows() == 0) return std::nullopt;

  const Tensor x = design_matrix(candidates);
  const Tensor scatter = ad::matmul(ad::transpose(x), ad::mul_rows(x, weights));
  Eigen::Map<const Eigen::Matrix<double, 9, 9, Eigen::RowMajor>> s(scatter.data().data());
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> es(s);
  if (!(es.eigenvalues()(1) > 1e-12 * std::abs(es.eigenvalues()(8)))) return std::nullopt;

  const Tensor e = ad::symmetric_min_eigenvector(scatter);
  const Tensor r = ad::matmul(design_matrix(gt_inliers), e);
  return ad::mean(ad::mul(r, r));
}

Tensor total_loss(const Tensor& cls, const Tensor& reg, double lambda)
{
  if (!(lambda >= 0.0)) throw DomainError("total_loss: lambda must be >= 0");
  if (lambda == 0.0) return cls;
  return ad::add(cls, ad::scale(reg, lambda));
}

// ---- optimizer ------------------------------------------------------------------

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::size_t step, double lr, double beta1, double beta2, double eps)
{
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw ShapeError("adam_update: parameter, gradient and moment sizes differ");
  if (step < 1) throw DomainError("adam_update: step must be >= 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void adam_step(net::ParamSet& params, AdamState& state, double lr)
{
  auto& entries = params.entries();
  if (state.m.empty() && state.v.empty()) {
    for (const auto& [name, t] : entries) {
      state.m.emplace_back(t.size(), 0.0);
      state.v.emplace_back(t.size(), 0.0);
    }
  }
  if (state.m.size() != entries.size() || state.v.size() != entries.size())
    throw ShapeError("adam_step: optimizer state has " + std::to_string(state.m.size()) + " slots for " +
                     std::to_string(entries.size()) + " parameters");
  ++state.step;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& t = entries[i].second;
    if (state.m[i].size() != t.size() || state.v[i].size() != t.size())
      throw ShapeError("adam_step: moment shape mismatch for " + entries[i].first);
    adam_update(t.mutable_data(), t.grad(), state.m[i], state.v[i], state.step, lr, state.beta1, state.beta2,
                state.eps);
  }
}

// ---- training loop ----------------------------------------------------------------

SampleLoss sample_loss(const data::Sample& sample, const net::ParamSet& params, const net::NetConfig& net_config,
                       const TrainConfig& config)
{
  const auto& set = sample.set;
  if (set.labels.size() != set.size()) throw FormatError("sample has no ground-truth labels");
  if (!set.gt_model) throw FormatError("sample has no ground-truth model");

  SampleLoss out;
  out.scores = net::clnet_forward(set.items, params, net_config);
  const auto distances = data::gt_distances(sample);
  const auto temps = temperatures(distances, config.d_thr, config.temperature_alpha, config.use_temperature);
  const std::vector<bool>& lab = set.labels;
  // std::vector<bool> has no contiguous storage.
  const std::unique_ptr<bool[]> flags(new bool[lab.size()]);
  for (std::size_t i = 0; i < lab.size(); ++i) flags[i] = lab[i];
  const auto terms = classification_terms(out.scores, std::span<const bool>(flags.get(), lab.size()), temps);
  const Tensor cls = classification_loss(terms);
  out.cls = cls.item();

  std::optional<Tensor> reg;
  if (config.lambda_reg > 0.0) {
    const RowMatrix cand = gather(set.items, out.scores.candidates);
    if (sample.task == data::Task::kLine)
      reg = line_regression_loss(cand, out.scores.final_scores, std::get<geometry::LineModel>(*set.gt_model));
    else
      reg = essential_regression_loss(cand, out.scores.final_scores, gt_inlier_rows(set));
  }
  if (reg) {
    out.reg = reg->item();
    out.total = total_loss(cls, *reg, config.lambda_reg);
  } else {
    out.reg_skipped = config.lambda_reg > 0.0;
    out.total = cls;
  }
  return out;
}

std::size_t batches_per_epoch(std::size_t samples, std::size_t batch_size)
{
  if (batch_size == 0) throw DomainError("batches_per_epoch: batch_size must be >= 1");
  return (samples + batch_size - 1) / batch_size;
}

TrainResult train(const std::vector<data::Sample>& train_set, const std::vector<data::Sample>& val_set,
                  const net::NetConfig& net_config, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch)
{
  return train_from(net::init_params(net_config, config.seed), train_set, val_set, net_config, config, on_epoch);
}

TrainResult train_from(net::ParamSet params, const std::vector<data::Sample>& train_set,
                       const std::vector<data::Sample>& val_set, const net::NetConfig& net_config,
                       const TrainConfig& config, const std::function<void(const EpochMetrics&)>& on_epoch)
{
  config.validate();
  net_config.validate();
  net::check_params(net_config, params);
  if (train_set.empty()) throw FormatError("train: training set is empty");
  const data::Task task = train_set.front().task;

  TrainResult result;
  AdamState state;
  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n_batches = batches_per_epoch(train_set.size(), config.batch_size);
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t skipped = 0;

    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(train_set.size(), lo + config.batch_size);
      const std::size_t count = hi - lo;
      const std::size_t workers = std::min(config.threads, count);
      const std::string where = "epoch " + std::to_string(epoch) + " batch " + std::to_string(b);

      std::vector<net::ParamSet> local;
      if (workers > 1)
        for (std::size_t w = 0; w < workers; ++w) local.push_back(params.clone());
      else
        params.zero_grad();
      std::vector<double> losses(count, 0.0);
      std::vector<char> skips(count, 0);

      parallel_for(count, workers, [&](std::size_t w, std::size_t i) {
        const std::size_t idx = order[lo + i];
        const net::ParamSet& p = workers > 1 ? local[w] : params;
        try {
          ad::Tape tape;
          ad::TapeScope scope(tape);
          const SampleLoss sl = sample_loss(train_set[idx], p, net_config, config);
          const double value = sl.total.item();
          if (!std::isfinite(value)) throw NumericalError("non-finite loss");
          tape.backward(sl.total);
          losses[i] = value;
          skips[i] = sl.reg_skipped ? 1 : 0;
        } catch (...) {
          rethrow_with_context(where + " sample " + std::to_string(idx));
        }
      });

      if (workers > 1) {
        params.zero_grad();
        for (std::size_t w = 0; w < workers; ++w) {
          for (std::size_t k = 0; k < params.size(); ++k) {
            auto g = params.entries()[k].second.mutable_grad();
            const auto src = local[w].entries()[k].second.grad();
            for (std::size_t e = 0; e < g.size(); ++e) g[e] += src[e];
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& [name, t] : params.entries()) {
        for (double& g : t.mutable_grad()) {
          g *= inv;
          if (!std::isfinite(g)) throw NumericalError(where + ": non-finite gradient in " + name);
        }
      }
      adam_step(params, state, config.learning_rate);
      if (!all_finite(params)) throw NumericalError(where + ": non-finite parameters after update");
      for (std::size_t i = 0; i < count; ++i) {
        loss_sum += losses[i];
        skipped += static_cast<std::size_t>(skips[i]);
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(train_set.size());
    m.reg_skipped = skipped;
    m.val_metric = std::nan("");
    m.inlier_ratio_post_prune = std::nan("");
    if (!val_set.empty()) {
      const auto metrics = pipeline::evaluate(val_set, params, net_config, config.d_thr, config.threads);
      m.val_metric = pipeline::validation_metric(task, metrics);
      double ratio = 0.0;
      for (const auto& s : metrics) ratio += s.inlier_ratio_per_block.empty() ? 0.0 : s.inlier_ratio_per_block.back();
      m.inlier_ratio_post_prune = ratio / static_cast<double>(metrics.size());
      if (!have_best || pipeline::metric_improves(task, m.val_metric, result.best_val_metric)) {
        have_best = true;
        result.best_val_metric = m.val_metric;
        result.best_params = params.clone();
      }
    }
    m.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }

  if (!have_best) {
    result.best_params = params.clone();
    result.best_val_metric = std::nan("");
  }
  result.params = std::move(params);
  return result;
}

}  // namespace clnet::train
