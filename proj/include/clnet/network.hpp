#pragma once

// Consensus network: feature embedding, dynamic k-NN graphs, annular
// convolution, local and global (spectral) consensus scores, and progressive
// top-k pruning blocks.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clnet/autodiff.hpp"
#include "clnet/geometry.hpp"

namespace clnet::net {

using ad::Tensor;

struct PruningBlockConfig {
  std::size_t k = 9;          // neighbours per local graph
  std::size_t p = 3;          // neighbours per annulus
  double prune_ratio = 0.5;   // kept fraction
  bool operator==(const PruningBlockConfig&) const = default;
};

struct NetConfig {
  std::size_t input_dim = 2;  // 2 for points, 4 for correspondences
  std::size_t channels = 128;
  std::vector<PruningBlockConfig> blocks{{9, 3, 0.5}, {6, 3, 0.5}};
  std::size_t resnet_depth_pre = 3;
  std::size_t resnet_depth_mid = 3;
  std::size_t final_head_depth = 1;
  bool use_annular = true;
  bool use_global = true;

  void validate() const;
  // Smallest input size for which every block sees more than k items.
  std::size_t min_items() const;
  bool operator==(const NetConfig&) const = default;
};

// Named layer parameters in a fixed creation order.
class ParamSet {
 public:
  Tensor& add(std::string name, Tensor value);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  // Deep copy; the copies require gradients.
  ParamSet clone() const;
  void zero_grad();
  // Bitwise equality of names, shapes and values.
  bool same_values(const ParamSet& other) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

ParamSet init_params(const NetConfig& config, std::uint64_t seed);
// Throws FormatError naming the first missing or mis-shaped parameter.
void check_params(const NetConfig& config, const ParamSet& params);

// ---- layers -------------------------------------------------------------------

// Per-channel standardization across the N items of one instance; the
// standard deviation is floored at 1e-8.
Tensor context_norm(const Tensor& x);

// ReLU(gamma * context_norm(x) + beta) with parameters <prefix>.gamma/.beta.
Tensor normalized_relu(const Tensor& x, const ParamSet& params, const std::string& prefix);

// x + f(x) with f = [linear -> context norm -> affine -> ReLU] x 2.
Tensor resnet_block(const Tensor& x, const ParamSet& params, const std::string& prefix);

Tensor linear(const Tensor& x, const ParamSet& params, const std::string& prefix);

// Row i lists the k nearest rows j != i of z (Euclidean), ascending distance,
// ties by ascending index. Returned flat, N*k entries.
std::vector<std::size_t> knn_graph(const Tensor& z, std::size_t k);

// Edge rows [z_i, z_i - z_j] for every anchor i and its neighbours in order:
// shape (N*k) x 2d.
Tensor edge_features(const Tensor& z, std::span<const std::size_t> neighbours, std::size_t k);

// Two stacked annular convolutions. The first sums each annulus of p sorted
// neighbours through a shared kernel; the second integrates the k/p annulus
// features with one kernel slice per annulus position. Each convolution is
// followed by context norm, affine and ReLU. Output N x d.
Tensor annular_conv(const Tensor& edges, std::size_t k, std::size_t p, const ParamSet& params,
                    const std::string& prefix);

// Per-edge linear, context norm, affine and ReLU, then a channel-wise max over
// the k neighbours.
Tensor mlp_pool_aggregate(const Tensor& edges, std::size_t k, const ParamSet& params, const std::string& prefix);

struct ScoreOutput {
  Tensor logits;  // N x 1 raw output o
  Tensor scores;  // tanh(relu(o)), in [0, 1)
};
ScoreOutput score_head(const Tensor& features, const ParamSet& params, const std::string& prefix);
ScoreOutput scores_from_logits(const Tensor& logits);

// A_ij = w_i * w_j.
Tensor global_adjacency(const Tensor& w_local);
// D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.
Tensor normalized_laplacian(const Tensor& a);
// L * Zt * W_g.
Tensor spectral_gcn(const Tensor& laplacian, const Tensor& zt, const Tensor& w_g);
// L(w) * Zt for the rank-one adjacency w w^T, in O(N d) without forming L.
Tensor laplacian_propagate(const Tensor& w_local, const Tensor& zt);

// Positions of the floor(N * ratio) largest scores, descending, ties by
// ascending index.
std::vector<std::size_t> topk_indices(std::span<const double> scores, double ratio);

struct Pruned {
  Tensor items;
  std::vector<std::size_t> kept;
};
Pruned prune_topk(const Tensor& items, const Tensor& scores, double ratio);

// ---- full forward pass ----------------------------------------------------------

struct BlockScores {
  std::vector<std::size_t> input_index;  // original item index of each block input row
  Tensor logits_local;
  Tensor scores_local;
  Tensor logits_global;  // undefined when global consensus is disabled
  Tensor scores_global;
  std::vector<std::size_t> kept;  // rows of the block input that survive, by descending score
};

struct ConsensusScores {
  std::vector<BlockScores> blocks;
  std::vector<std::size_t> candidates;  // original indices of the final candidates
  Tensor final_logits;
  Tensor final_scores;  // w_hat over the candidates
};

ConsensusScores clnet_forward(const geometry::RowMatrix& items, const ParamSet& params, const NetConfig& config);

// ---- checkpoints ------------------------------------------------------------------

struct Checkpoint {
  NetConfig config;
  ParamSet params;
  std::string metadata;  // free-form JSON echo of the run configuration
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace clnet::net
