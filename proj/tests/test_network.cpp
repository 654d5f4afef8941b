#include "doctest.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "clnet/errors.hpp"
#include "clnet/network.hpp"
#include "clnet/synthetic.hpp"

using namespace clnet;
using namespace clnet::net;
using ad::Shape;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng)
{
  std::normal_distribution<double> g;
  std::vector<double> v(ad::shape_size(shape));
  for (double& x : v) x = g(rng);
  return Tensor(std::move(shape), std::move(v));
}

NetConfig small_config()
{
  NetConfig c;
  c.channels = 8;
  c.blocks = {{6, 3, 0.5}, {3, 3, 0.5}};
  c.resnet_depth_pre = 1;
  c.resnet_depth_mid = 1;
  return c;
}

Eigen::MatrixXd dense(const Tensor& t)
{
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}

// Brute-force neighbours: full sort of (squared distance, index).
std::vector<std::size_t> brute_knn(const Tensor& z, std::size_t k)
{
  const std::size_t n = z.rows(), d = z.cols();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += (z.at(i, c) - z.at(j, c)) * (z.at(i, c) - z.at(j, c));
      all.emplace_back(s, j);
    }
    std::sort(all.begin(), all.end());
    for (std::size_t r = 0; r < k; ++r) out.push_back(all[r].second);
  }
  return out;
}

}  // namespace

TEST_CASE("context normalization")
{
  const Tensor a = context_norm(Tensor({2, 1}, {1.0, 3.0}));
  CHECK(a[0] == -1.0);
  CHECK(a[1] == 1.0);
  const Tensor c = context_norm(Tensor({3, 1}, {5.0, 5.0, 5.0}));
  for (double v : c.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(context_norm(Tensor({1, 2}, {1.0, 2.0})), ShapeError);

  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({40, 5}, rng);
  const Eigen::MatrixXd y = dense(context_norm(x));
  for (int c = 0; c < 5; ++c) {
    const double mean = y.col(c).mean();
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs((y.col(c).array() - mean).square().mean() - 1.0) < 1e-9);
  }
}

TEST_CASE("resnet block")
{
  std::mt19937_64 rng(2);
  NetConfig cfg = small_config();
  ParamSet params = init_params(cfg, 3);
  const Tensor x = random_tensor({20, 8}, rng);
  CHECK(resnet_block(x, params, "pre0").shape() == x.shape());

  ParamSet zero;
  for (const auto& [name, t] : params.entries())
    if (name.rfind("pre0.", 0) == 0) zero.add(name, Tensor::zeros(t.shape()));
  const Tensor y = resnet_block(x, zero, "pre0");
  CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));

  const Tensor xs = random_tensor({12, 8}, rng);
  CHECK(ad::grad_check([&](const Tensor& t) { return ad::sum(ad::tanh(resnet_block(t, params, "pre0"))); }, xs, 1e-6) <
        1e-4);
}

TEST_CASE("k nearest neighbour graph")
{
  const Tensor line({4, 1}, {0.0, 1.0, 3.0, 7.0});
  const auto nb = knn_graph(line, 2);
  CHECK(nb[0] == 1);
  CHECK(nb[1] == 2);
  CHECK(nb[6] == 2);  // item 3 -> 3 first
  CHECK(nb[7] == 1);

  const Tensor same = Tensor::filled({6, 3}, 2.5);
  const auto tie = knn_graph(same, 3);
  CHECK(std::vector<std::size_t>(tie.begin(), tie.begin() + 3) == std::vector<std::size_t>{1, 2, 3});
  CHECK(std::vector<std::size_t>(tie.begin() + 6, tie.begin() + 9) == std::vector<std::size_t>{0, 1, 3});

  CHECK_THROWS_AS(knn_graph(line, 4), ShapeError);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 10 + static_cast<std::size_t>(trial);
    Tensor z = random_tensor({n, 4}, rng);
    // Duplicate a few rows so exact ties occur.
    for (std::size_t c = 0; c < 4; ++c) {
      z.mutable_data()[1 * 4 + c] = z[5 * 4 + c];
      z.mutable_data()[2 * 4 + c] = z[5 * 4 + c];
    }
    CHECK(knn_graph(z, 5) == brute_knn(z, 5));
  }
}

TEST_CASE("edge features")
{
  const Tensor z({2, 1}, {1.0, 3.0});
  const std::vector<std::size_t> nb{1, 0};
  const Tensor e = edge_features(z, nb, 1);
  CHECK(e.shape() == Shape{2, 2});
  CHECK(e.at(0, 0) == 1.0);
  CHECK(e.at(0, 1) == -2.0);

  std::mt19937_64 rng(5);
  const Tensor zr = random_tensor({10, 3}, rng);
  const auto nbr = knn_graph(zr, 4);
  const Tensor er = edge_features(zr, nbr, 4);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(er.at(i * 4 + j, c) == zr.at(i, c));
        CHECK(er.at(i * 4 + j, 3 + c) == zr.at(i, c) - zr.at(nbr[i * 4 + j], c));
      }
  const std::vector<std::size_t> self{0, 1};
  const Tensor es = edge_features(z, self, 1);
  CHECK(es.at(0, 1) == 0.0);
  CHECK(es.at(1, 1) == 0.0);
  CHECK_THROWS_AS(edge_features(z, nb, 2), ShapeError);
}

TEST_CASE("annular convolution")
{
  std::mt19937_64 rng(6);
  const std::size_t n = 5, k = 9, p = 3, d = 4;
  ParamSet params;
  params.add("a.ann1.w", random_tensor({2 * d, d}, rng));
  params.add("a.ann1.b", random_tensor({1, d}, rng));
  params.add("a.ann2.w", random_tensor({(k / p) * d, d}, rng));
  params.add("a.ann2.b", random_tensor({1, d}, rng));
  for (const char* norm : {"a.ann1n", "a.ann2n"}) {
    params.add(std::string(norm) + ".gamma", random_tensor({1, d}, rng));
    params.add(std::string(norm) + ".beta", random_tensor({1, d}, rng));
  }
  const Tensor edges = random_tensor({n * k, 2 * d}, rng);
  const Tensor base = annular_conv(edges, k, p, params, "a");
  CHECK(base.shape() == Shape{n, d});

  auto permuted = [&](std::size_t r1, std::size_t r2) {
    std::vector<std::size_t> order(n * k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::swap(order[r1], order[r2]);
    return annular_conv(ad::gather_rows(edges, order), k, p, params, "a");
  };
  // Within annulus 1 (positions 3..5) of anchor 0.
  const Tensor within = permuted(3, 5);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(within[i] == doctest::Approx(base[i]).epsilon(1e-12));
  // Across annuli of anchor 0.
  const Tensor across = permuted(0, 8);
  double diff = 0.0;
  for (std::size_t i = 0; i < d; ++i) diff += std::abs(across[i] - base[i]);
  CHECK(diff > 1e-6);

  // A summing kernel reproduces the per-annulus sums.
  ParamSet sum_params;
  std::vector<double> eye(2 * d * 2 * d, 0.0);
  for (std::size_t c = 0; c < 2 * d; ++c) eye[c * 2 * d + c] = 1.0;
  sum_params.add("s.ann1.w", Tensor({2 * d, 2 * d}, eye));
  sum_params.add("s.ann1.b", Tensor::zeros({1, 2 * d}));
  const Tensor positive = ad::relu(edges);
  const Tensor ann = ad::relu(linear(ad::sum_groups(positive, p), sum_params, "s.ann1"));
  for (std::size_t t = 0; t < k / p; ++t)
    for (std::size_t c = 0; c < 2 * d; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += positive.at(t * p + j, c);
      CHECK(ann.at(t, c) == doctest::Approx(s).epsilon(1e-14));
    }

  CHECK_THROWS_AS(annular_conv(edges, 9, 2, params, "a"), ShapeError);
  CHECK(ad::grad_check([&](const Tensor& t) { return ad::sum(ad::tanh(annular_conv(t, k, p, params, "a"))); },
                       random_tensor({2 * k, 2 * d}, rng), 1e-6) < 1e-4);
}

TEST_CASE("mlp and max-pool aggregation")
{
  std::mt19937_64 rng(7);
  const std::size_t n = 4, k = 6, d = 3;
  ParamSet params;
  params.add("m.pool.w", random_tensor({2 * d, d}, rng));
  params.add("m.pool.b", random_tensor({1, d}, rng));
  params.add("m.pooln.gamma", random_tensor({1, d}, rng));
  params.add("m.pooln.beta", random_tensor({1, d}, rng));
  auto mlp = [&](const Tensor& e) { return normalized_relu(linear(e, params, "m.pool"), params, "m.pooln"); };
  const Tensor edges = random_tensor({n * k, 2 * d}, rng);
  const Tensor out = mlp_pool_aggregate(edges, k, params, "m");
  const Tensor per_edge = mlp(edges);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t j = 0; j < k; ++j) CHECK(out.at(i, c) >= per_edge.at(i * k + j, c));

  std::vector<std::size_t> order(n * k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::reverse(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  const Tensor shuffled = mlp_pool_aggregate(ad::gather_rows(edges, order), k, params, "m");
  CHECK(std::equal(out.data().begin(), out.data().end(), shuffled.data().begin()));

  const std::vector<std::size_t> first(k, 0);
  const Tensor repeated = ad::gather_rows(edges, first);
  const Tensor same = mlp_pool_aggregate(repeated, k, params, "m");
  const Tensor single = mlp(repeated);
  for (std::size_t c = 0; c < d; ++c) CHECK(same.at(0, c) == single.at(0, c));
}

TEST_CASE("score head")
{
  const auto s = scores_from_logits(Tensor({3, 1}, {-3.0, 0.0, 1.0}));
  CHECK(s.scores[0] == 0.0);
  CHECK(s.scores[1] == 0.0);
  CHECK(s.scores[2] == doctest::Approx(0.7615941559557649).epsilon(1e-15));
  CHECK(s.logits[0] == -3.0);
}

TEST_CASE("global adjacency and laplacian")
{
  const Tensor a = global_adjacency(Tensor({3, 1}, {1.0, 0.5, 0.0}));
  CHECK(a.at(0, 1) == 0.5);
  for (std::size_t j = 0; j < 3; ++j) CHECK(a.at(2, j) == 0.0);
  const Tensor a0 = global_adjacency(Tensor::zeros({4, 1}));
  for (double v : a0.data()) CHECK(v == 0.0);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(30);
  for (double& v : w) v = u(rng);
  const Tensor wt({30, 1}, w);
  const Eigen::MatrixXd dense_a = dense(global_adjacency(wt));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense_a);
  CHECK(svd.singularValues()(1) < 1e-12 * svd.singularValues()(0));

  const Tensor l0 = normalized_laplacian(Tensor::zeros({3, 3}));
  CHECK(dense(l0) == Eigen::MatrixXd::Identity(3, 3));
  const Tensor l2 = normalized_laplacian(Tensor({2, 2}, {0, 1, 1, 0}));
  for (double v : l2.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

  const Eigen::MatrixXd l = dense(normalized_laplacian(global_adjacency(wt)));
  CHECK((l - l.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
  CHECK(es.eigenvalues().minCoeff() >= -1.0 - 1e-12);
  CHECK(es.eigenvalues().maxCoeff() <= 1.0 + 1e-12);

  // Direct dense oracle: D^-1/2 (A + I) D^-1/2.
  const Eigen::MatrixXd at = dense_a + Eigen::MatrixXd::Identity(30, 30);
  const Eigen::VectorXd dinv = at.rowwise().sum().array().rsqrt();
  const Eigen::MatrixXd ref = dinv.asDiagonal() * at * dinv.asDiagonal();
  CHECK((l - ref).cwiseAbs().maxCoeff() < 1e-12);

  const Tensor zt = random_tensor({30, 5}, rng);
  const Tensor wg = random_tensor({5, 4}, rng);
  const Eigen::MatrixXd gcn = dense(spectral_gcn(normalized_laplacian(global_adjacency(wt)), zt, wg));
  CHECK((gcn - ref * dense(zt) * dense(wg)).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd prop = dense(laplacian_propagate(wt, zt));
  CHECK((prop - ref * dense(zt)).cwiseAbs().maxCoeff() < 1e-12);

  std::vector<double> eye(25, 0.0);
  for (int i = 0; i < 5; ++i) eye[i * 5 + i] = 1.0;
  const Tensor id = spectral_gcn(normalized_laplacian(Tensor::zeros({30, 30})), zt, Tensor({5, 5}, eye));
  CHECK(std::equal(id.data().begin(), id.data().end(), zt.data().begin()));

  const Tensor ws = Tensor({6, 1}, {0.1, 0.9, 0.3, 0.5, 0.7, 0.2});
  const Tensor zs = random_tensor({6, 3}, rng);
  CHECK(ad::grad_check([&](const Tensor& t) { return ad::sum(ad::tanh(laplacian_propagate(t, zs))); }, ws, 1e-6) <
        1e-5);
}

TEST_CASE("top-k pruning")
{
  const std::vector<double> s{0.9, 0.1, 0.5, 0.7};
  CHECK(topk_indices(s, 0.5) == std::vector<std::size_t>{0, 3});
  CHECK(topk_indices(s, 1.0) == std::vector<std::size_t>{0, 3, 2, 1});
  const std::vector<double> tie{0.2, 0.5, 0.5, 0.2};
  CHECK(topk_indices(tie, 0.75) == std::vector<std::size_t>{1, 2, 0});
  CHECK_THROWS_AS(topk_indices(s, 0.2), DomainError);
  CHECK_THROWS_AS(topk_indices(s, 0.0), DomainError);
  CHECK_THROWS_AS(topk_indices(s, 1.5), DomainError);

  Tensor items({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    const Pruned p = prune_topk(items, Tensor({4, 1}, s), 0.5);
    CHECK(p.items.at(1, 0) == 7.0);
    tape.backward(ad::sum(p.items));
  }
  const std::vector<double> mask{1, 1, 0, 0, 0, 0, 1, 1};
  CHECK(std::vector<double>(items.grad().begin(), items.grad().end()) == mask);
}

TEST_CASE("full forward pass")
{
  NetConfig cfg = small_config();
  cfg.blocks = {{9, 3, 0.5}, {6, 3, 0.5}};
  const ParamSet params = init_params(cfg, 1);
  const auto sample = data::gen_line_sample(3, 0, 0.8);
  const auto out = clnet_forward(sample.set.items, params, cfg);
  REQUIRE(out.blocks.size() == 2);
  CHECK(out.blocks[0].kept.size() == 500);
  CHECK(out.blocks[1].kept.size() == 250);
  CHECK(out.candidates.size() == 250);
  CHECK(out.final_scores.size() == 250);
  for (const auto& b : out.blocks) {
    for (double v : b.scores_local.data()) CHECK((v >= 0.0 && v < 1.0));
    for (double v : b.scores_global.data()) CHECK((v >= 0.0 && v < 1.0));
  }
  for (double v : out.final_scores.data()) CHECK((v >= 0.0 && v < 1.0));
  std::vector<std::size_t> c = out.candidates;
  std::sort(c.begin(), c.end());
  CHECK(std::adjacent_find(c.begin(), c.end()) == c.end());
  CHECK(c.back() < 1000);
  for (std::size_t r = 0; r < 250; ++r)
    CHECK(out.candidates[r] == out.blocks[1].input_index[out.blocks[1].kept[r]]);

  CHECK(cfg.min_items() == 14);
  CHECK_THROWS_AS(clnet_forward(sample.set.items.topRows(13), params, cfg), ShapeError);
  CHECK_THROWS_AS(clnet_forward(geometry::RowMatrix::Zero(100, 4), params, cfg), ShapeError);

  NetConfig pool = cfg;
  pool.use_annular = false;
  pool.use_global = false;
  const auto po = clnet_forward(sample.set.items, init_params(pool, 1), pool);
  CHECK(po.candidates.size() == 250);
  CHECK_FALSE(po.blocks[0].scores_global.defined());
}

TEST_CASE("permutation equivariance")
{
  const NetConfig cfg = small_config();
  const ParamSet params = init_params(cfg, 5);
  const auto sample = data::gen_line_sample(9, 0, 0.5, 120);
  std::vector<std::size_t> perm(120);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(10);
  std::shuffle(perm.begin(), perm.end(), rng);
  geometry::RowMatrix shuffled(120, 2);
  for (std::size_t r = 0; r < 120; ++r) shuffled.row(static_cast<Eigen::Index>(r)) = sample.set.items.row(static_cast<Eigen::Index>(perm[r]));

  const auto a = clnet_forward(sample.set.items, params, cfg);
  const auto b = clnet_forward(shuffled, params, cfg);
  for (std::size_t r = 0; r < 120; ++r)
    CHECK(b.blocks[0].logits_local[r] == doctest::Approx(a.blocks[0].logits_local[perm[r]]).epsilon(1e-9));
  REQUIRE(a.candidates.size() == b.candidates.size());
  for (std::size_t r = 0; r < a.candidates.size(); ++r) {
    CHECK(perm[b.candidates[r]] == a.candidates[r]);
    CHECK(b.final_logits[r] == doctest::Approx(a.final_logits[r]).epsilon(1e-9));
  }
}

TEST_CASE("parameters and configuration")
{
  NetConfig cfg = small_config();
  const ParamSet a = init_params(cfg, 3);
  CHECK(a.same_values(init_params(cfg, 3)));
  CHECK_FALSE(a.same_values(init_params(cfg, 4)));
  CHECK_NOTHROW(check_params(cfg, a));
  CHECK(a.clone().same_values(a));

  NetConfig wide = cfg;
  wide.channels = 16;
  CHECK_THROWS_AS(check_params(wide, a), FormatError);

  NetConfig bad = cfg;
  bad.blocks[0].p = 4;
  CHECK_THROWS_AS(bad.validate(), FormatError);
  bad = cfg;
  bad.blocks[0].prune_ratio = 0.0;
  CHECK_THROWS_AS(bad.validate(), FormatError);
  CHECK(NetConfig{}.min_items() == 14);
}
