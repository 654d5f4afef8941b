#include "clnet/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "clnet/errors.hpp"

namespace clnet::net {

namespace {

constexpr double kStdFloor = 1e-8;

std::string block_prefix(std::size_t j) { return "block" + std::to_string(j); }

class Initializer {
 public:
  Initializer(ParamSet& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  void linear(const std::string& prefix, std::size_t in, std::size_t out, double gain = 1.0)
  {
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(in * out);
    for (double& v : w) v = dist(rng_);
    params_.add(prefix + ".w", Tensor({in, out}, std::move(w), true));
    params_.add(prefix + ".b", Tensor::zeros({1, out}, true));
  }

  void affine(const std::string& prefix, std::size_t d)
  {
    params_.add(prefix + ".gamma", Tensor::filled({1, d}, 1.0, true));
    params_.add(prefix + ".beta", Tensor::zeros({1, d}, true));
  }

  void resnet(const std::string& prefix, std::size_t d)
  {
    linear(prefix + ".l1", d, d);
    affine(prefix + ".n1", d);
    linear(prefix + ".l2", d, d);
    affine(prefix + ".n2", d);
  }

  void matrix(const std::string& name, std::size_t in, std::size_t out)
  {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(in * out);
    for (double& v : w) v = dist(rng_);
    params_.add(name, Tensor({in, out}, std::move(w), true));
  }

 private:
  ParamSet& params_;
  std::mt19937_64 rng_;
};

// Sizes of the block inputs, N_0 = n, N_{j+1} = floor(N_j * r_j), followed by
// the final candidate count.
std::vector<std::size_t> stage_sizes(const NetConfig& config, std::size_t n)
{
  std::vector<std::size_t> sizes{n};
  for (const auto& b : config.blocks)
    sizes.push_back(static_cast<std::size_t>(std::floor(static_cast<double>(sizes.back()) * b.prune_ratio)));
  return sizes;
}

}  // namespace

// ---- config -------------------------------------------------------------------

void NetConfig::validate() const
{
  if (input_dim != 2 && input_dim != 4) throw FormatError("net config: input_dim must be 2 or 4");
  if (channels == 0) throw FormatError("net config: channels must be positive");
  if (blocks.empty()) throw FormatError("net config: at least one pruning block is required");
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    const auto& b = blocks[j];
    if (b.k == 0 || b.p == 0 || b.k % b.p != 0)
      throw FormatError("net config: block " + std::to_string(j) + " needs k divisible by p (k=" +
                        std::to_string(b.k) + ", p=" + std::to_string(b.p) + ")");
    if (!(b.prune_ratio > 0.0 && b.prune_ratio <= 1.0))
      throw FormatError("net config: block " + std::to_string(j) + " prune_ratio must be in (0, 1]");
  }
}

std::size_t NetConfig::min_items() const
{
  for (std::size_t n = 2;; ++n) {
    const auto sizes = stage_sizes(*this, n);
    bool ok = sizes.back() >= 2;
    for (std::size_t j = 0; j < blocks.size() && ok; ++j) ok = sizes[j] > blocks[j].k;
    if (ok) return n;
  }
}

// ---- ParamSet ---------------------------------------------------------------------

Tensor& ParamSet::add(std::string name, Tensor value)
{
  if (contains(name)) throw FormatError("duplicate parameter " + name);
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

const Tensor& ParamSet::at(const std::string& name) const
{
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw FormatError("missing parameter " + name);
}

bool ParamSet::contains(const std::string& name) const
{
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParamSet::scalar_count() const
{
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

ParamSet ParamSet::clone() const
{
  ParamSet out;
  for (const auto& [n, t] : entries_) out.entries_.emplace_back(n, t.clone(true));
  return out;
}

void ParamSet::zero_grad()
{
  for (auto& e : entries_) e.second.zero_grad();
}

bool ParamSet::same_values(const ParamSet& other) const
{
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [na, ta] = entries_[i];
    const auto& [nb, tb] = other.entries_[i];
    if (na != nb || ta.shape() != tb.shape()) return false;
    if (!std::equal(ta.data().begin(), ta.data().end(), tb.data().begin(),
                    [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); }))
      return false;
  }
  return true;
}

ParamSet init_params(const NetConfig& config, std::uint64_t seed)
{
  config.validate();
  const std::size_t d = config.channels;
  ParamSet params;
  Initializer init(params, seed);
  init.linear("embed", config.input_dim, d);
  for (std::size_t i = 0; i < config.resnet_depth_pre; ++i) init.resnet("pre" + std::to_string(i), d);
  for (std::size_t j = 0; j < config.blocks.size(); ++j) {
    const auto& b = config.blocks[j];
    const std::string pre = block_prefix(j);
    if (j > 0) init.linear(pre + ".in", d + 2, d);
    if (config.use_annular) {
      init.linear(pre + ".ann1", 2 * d, d);
      init.affine(pre + ".ann1n", d);
      init.linear(pre + ".ann2", (b.k / b.p) * d, d);
      init.affine(pre + ".ann2n", d);
    } else {
      init.linear(pre + ".pool", 2 * d, d);
      init.affine(pre + ".pooln", d);
    }
    for (std::size_t i = 0; i < config.resnet_depth_mid; ++i) init.resnet(pre + ".mid" + std::to_string(i), d);
    init.linear(pre + ".local", d, 1, 0.1);
    if (config.use_global) {
      init.matrix(pre + ".gcn.w", d, d);
      init.resnet(pre + ".gres", d);
      init.linear(pre + ".global", d, 1, 0.1);
    }
  }
  init.linear("head.in", d + 2, d);
  for (std::size_t i = 0; i < config.final_head_depth; ++i) init.resnet("head.res" + std::to_string(i), d);
  init.linear("head.mlp1", d, d);
  init.linear("head.mlp2", d, 1, 0.1);
  return params;
}

void check_params(const NetConfig& config, const ParamSet& params)
{
  const ParamSet expected = init_params(config, 0);
  if (expected.size() != params.size())
    throw FormatError("parameter count " + std::to_string(params.size()) + " does not match the configuration (" +
                      std::to_string(expected.size()) + ")");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, t] = expected.entries()[i];
    const auto& [got_name, got] = params.entries()[i];
    if (name != got_name) throw FormatError("parameter " + std::to_string(i) + " is " + got_name + ", expected " + name);
    if (t.shape() != got.shape())
      throw FormatError("parameter " + name + " has shape " + ad::shape_str(got.shape()) + ", expected " +
                        ad::shape_str(t.shape()));
    for (double v : got.data())
      if (!std::isfinite(v)) throw FormatError("parameter " + name + " has non-finite entries");
  }
}

// ---- layers -----------------------------------------------------------------------

Tensor context_norm(const Tensor& x)
{
  if (x.rank() != 2 || x.rows() < 2) throw ShapeError("context_norm: need an N x d input with N >= 2");
  const Tensor centred = ad::sub_row(x, ad::mean_rows(x));
  const Tensor var = ad::variance_rows(x);
  const Tensor std_dev = ad::sqrt(ad::clamp_min(var, kStdFloor * kStdFloor));
  return ad::div_row(centred, std_dev);
}

Tensor linear(const Tensor& x, const ParamSet& params, const std::string& prefix)
{
  return ad::add_row(ad::matmul(x, params.at(prefix + ".w")), params.at(prefix + ".b"));
}

Tensor normalized_relu(const Tensor& x, const ParamSet& params, const std::string& prefix)
{
  const Tensor h = ad::add_row(ad::mul_row(context_norm(x), params.at(prefix + ".gamma")), params.at(prefix + ".beta"));
  return ad::relu(h);
}

Tensor resnet_block(const Tensor& x, const ParamSet& params, const std::string& prefix)
{
  Tensor h = x;
  for (const char* stage : {"1", "2"})
    h = normalized_relu(linear(h, params, prefix + ".l" + stage), params, prefix + ".n" + stage);
  return ad::add(x, h);
}

std::vector<std::size_t> knn_graph(const Tensor& z, std::size_t k)
{
  if (z.rank() != 2) throw ShapeError("knn_graph: expected N x d features");
  const std::size_t n = z.rows(), d = z.cols();
  if (k >= n) throw ShapeError("knn_graph: k = " + std::to_string(k) + " must be smaller than N = " + std::to_string(n));
  const Eigen::Map<const geometry::RowMatrix> zm(z.data().data(), static_cast<Eigen::Index>(n),
                                                 static_cast<Eigen::Index>(d));
  // Shortlist with Gram-matrix distances, then rank the shortlist by
  // directly computed distances so rounding cannot reorder neighbours.
  const geometry::RowMatrix gram = zm * zm.transpose();
  const Eigen::VectorXd sq = gram.diagonal();
  const double tol = 64.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(d + 1) * 2.0 * sq.maxCoeff();
  std::vector<std::size_t> out(n * k);
  std::vector<double> approx(n);
  std::vector<std::pair<double, std::size_t>> best;
  best.reserve(k + 1);
  std::vector<std::pair<double, std::size_t>> shortlist;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    best.clear();
    for (std::size_t j = 0; j < n; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      approx[j] = sq(ii) + sq(jj) - 2.0 * gram(ii, jj);
      if (j == i) continue;
      if (best.size() == k && !(approx[j] < best.back().first)) continue;
      const std::pair<double, std::size_t> cand{approx[j], j};
      best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
      if (best.size() > k) best.pop_back();
    }
    const double cutoff = best.back().first + tol;
    shortlist.clear();
    const double* zi = z.data().data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || approx[j] > cutoff) continue;
      const double* zj = z.data().data() + j * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = zi[c] - zj[c];
        acc += diff * diff;
      }
      shortlist.emplace_back(acc, j);
    }
    std::partial_sort(shortlist.begin(), shortlist.begin() + static_cast<std::ptrdiff_t>(k), shortlist.end());
    for (std::size_t r = 0; r < k; ++r) out[i * k + r] = shortlist[r].second;
  }
  return out;
}

Tensor edge_features(const Tensor& z, std::span<const std::size_t> neighbours, std::size_t k)
{
  const std::size_t n = z.rows();
  if (k == 0 || neighbours.size() != n * k)
    throw ShapeError("edge_features: expected " + std::to_string(n) + " x " + std::to_string(k) + " neighbour indices");
  std::vector<std::size_t> anchors(n * k);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(anchors.begin() + static_cast<std::ptrdiff_t>(i * k), k, i);
  const Tensor anchor = ad::gather_rows(z, anchors);
  const Tensor neighbour = ad::gather_rows(z, neighbours);
  return ad::concat({anchor, ad::sub(anchor, neighbour)});
}

Tensor annular_conv(const Tensor& edges, std::size_t k, std::size_t p, const ParamSet& params,
                    const std::string& prefix)
{
  if (p == 0 || k % p != 0) throw ShapeError("annular_conv: k must be divisible by p");
  if (edges.rank() != 2 || edges.rows() % k != 0) throw ShapeError("annular_conv: expected (N*k) x 2d edges");
  const std::size_t n = edges.rows() / k;
  const std::size_t annuli = k / p;
  // Shared kernel over each annulus: sum_j (W e_j) + b = W (sum_j e_j) + b.
  const Tensor per_annulus = normalized_relu(linear(ad::sum_groups(edges, p), params, prefix + ".ann1"), params,
                                             prefix + ".ann1n");
  const std::size_t d = per_annulus.cols();
  const Tensor stacked = ad::reshape(per_annulus, {n, annuli * d});
  return normalized_relu(linear(stacked, params, prefix + ".ann2"), params, prefix + ".ann2n");
}

Tensor mlp_pool_aggregate(const Tensor& edges, std::size_t k, const ParamSet& params, const std::string& prefix)
{
  if (edges.rank() != 2 || k == 0 || edges.rows() % k != 0)
    throw ShapeError("mlp_pool_aggregate: expected (N*k) x 2d edges");
  return ad::max_groups(normalized_relu(linear(edges, params, prefix + ".pool"), params, prefix + ".pooln"), k);
}

ScoreOutput scores_from_logits(const Tensor& logits) { return {logits, ad::tanh(ad::relu(logits))}; }

ScoreOutput score_head(const Tensor& features, const ParamSet& params, const std::string& prefix)
{
  return scores_from_logits(linear(features, params, prefix));
}

Tensor global_adjacency(const Tensor& w_local)
{
  const Tensor w = ad::reshape(w_local, {w_local.size(), 1});
  return ad::matmul(w, ad::transpose(w));
}

Tensor normalized_laplacian(const Tensor& a)
{
  if (a.rank() != 2 || a.rows() != a.cols()) throw ShapeError("normalized_laplacian: expected a square matrix");
  const std::size_t n = a.rows();
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  const Tensor a_tilde = ad::add(a, Tensor({n, n}, std::move(eye)));
  const Tensor degree = ad::matmul(a_tilde, Tensor::filled({n, 1}, 1.0));
  const Tensor inv_sqrt = ad::div(Tensor::filled({n, 1}, 1.0), ad::sqrt(degree));
  return ad::mul_row(ad::mul_rows(a_tilde, inv_sqrt), inv_sqrt);
}

Tensor spectral_gcn(const Tensor& laplacian, const Tensor& zt, const Tensor& w_g)
{
  return ad::matmul(ad::matmul(laplacian, zt), w_g);
}

Tensor laplacian_propagate(const Tensor& w_local, const Tensor& zt)
{
  const std::size_t n = zt.rows();
  if (w_local.size() != n) throw ShapeError("laplacian_propagate: score count does not match feature rows");
  const Tensor w = ad::reshape(w_local, {n, 1});
  // Degree of row i in w w^T + I is w_i * sum(w) + 1.
  const Tensor degree = ad::add_scalar(ad::scale_by(w, ad::sum(w)), 1.0);
  const Tensor inv_sqrt = ad::div(Tensor::filled({n, 1}, 1.0), ad::sqrt(degree));
  const Tensor y = ad::mul_rows(zt, inv_sqrt);
  const Tensor projected = ad::matmul(ad::transpose(w), y);
  return ad::mul_rows(ad::add(ad::matmul(w, projected), y), inv_sqrt);
}

std::vector<std::size_t> topk_indices(std::span<const double> scores, double ratio)
{
  if (!(ratio > 0.0 && ratio <= 1.0)) throw DomainError("prune_topk: ratio must be in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::floor(static_cast<double>(scores.size()) * ratio));
  if (keep == 0) throw DomainError("prune_topk: keeping zero items");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(keep);
  return order;
}

Pruned prune_topk(const Tensor& items, const Tensor& scores, double ratio)
{
  if (scores.size() != items.rows()) throw ShapeError("prune_topk: one score per item required");
  Pruned out;
  out.kept = topk_indices(scores.data(), ratio);
  out.items = ad::gather_rows(items, out.kept);
  return out;
}

// ---- forward ----------------------------------------------------------------------

ConsensusScores clnet_forward(const geometry::RowMatrix& items, const ParamSet& params, const NetConfig& config)
{
  const auto n = static_cast<std::size_t>(items.rows());
  if (static_cast<std::size_t>(items.cols()) != config.input_dim)
    throw ShapeError("clnet_forward: items have " + std::to_string(items.cols()) + " columns, network expects " +
                     std::to_string(config.input_dim));
  if (n < config.min_items())
    throw ShapeError("clnet_forward: " + std::to_string(n) + " items is too few for the configured blocks (need " +
                     std::to_string(config.min_items()) + ")");

  const Tensor input({n, config.input_dim}, std::vector<double>(items.data(), items.data() + items.size()));
  Tensor features = linear(input, params, "embed");
  for (std::size_t i = 0; i < config.resnet_depth_pre; ++i)
    features = resnet_block(features, params, "pre" + std::to_string(i));

  ConsensusScores out;
  std::vector<std::size_t> index(n);
  std::iota(index.begin(), index.end(), std::size_t{0});

  for (std::size_t j = 0; j < config.blocks.size(); ++j) {
    const auto& cfg = config.blocks[j];
    const std::string pre = block_prefix(j);
    BlockScores block;
    block.input_index = index;

    const Tensor z = j == 0 ? features : linear(features, params, pre + ".in");
    const auto neighbours = knn_graph(z, cfg.k);
    const Tensor edges = edge_features(z, neighbours, cfg.k);
    Tensor local = config.use_annular ? annular_conv(edges, cfg.k, cfg.p, params, pre)
                                      : mlp_pool_aggregate(edges, cfg.k, params, pre);
    for (std::size_t i = 0; i < config.resnet_depth_mid; ++i)
      local = resnet_block(local, params, pre + ".mid" + std::to_string(i));
    const ScoreOutput local_scores = score_head(local, params, pre + ".local");
    block.logits_local = local_scores.logits;
    block.scores_local = local_scores.scores;

    Tensor carried = local;
    Tensor second_channel;
    // Scores are a nondecreasing function of the logits, so ranking by logit
    // keeps the score order and separates items whose scores are all zero.
    Tensor ranking = local_scores.logits;
    if (config.use_global) {
      Tensor global = ad::matmul(laplacian_propagate(local_scores.scores, local), params.at(pre + ".gcn.w"));
      global = resnet_block(global, params, pre + ".gres");
      const ScoreOutput global_scores = score_head(global, params, pre + ".global");
      block.logits_global = global_scores.logits;
      block.scores_global = global_scores.scores;
      carried = global;
      second_channel = global_scores.scores;
      ranking = global_scores.logits;
    } else {
      second_channel = Tensor::zeros({local.rows(), 1});
    }

    block.kept = topk_indices(ranking.data(), cfg.prune_ratio);
    features = ad::concat({ad::gather_rows(carried, block.kept), ad::gather_rows(local_scores.scores, block.kept),
                           ad::gather_rows(second_channel, block.kept)});
    std::vector<std::size_t> next(block.kept.size());
    for (std::size_t r = 0; r < next.size(); ++r) next[r] = index[block.kept[r]];
    index = std::move(next);
    out.blocks.push_back(std::move(block));
  }

  Tensor head = linear(features, params, "head.in");
  for (std::size_t i = 0; i < config.final_head_depth; ++i)
    head = resnet_block(head, params, "head.res" + std::to_string(i));
  head = ad::relu(linear(head, params, "head.mlp1"));
  const ScoreOutput final_scores = score_head(head, params, "head.mlp2");
  out.final_logits = final_scores.logits;
  out.final_scores = final_scores.scores;
  out.candidates = std::move(index);
  return out;
}

}  // namespace clnet::net
