#pragma once

#include <Eigen/Sparse>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dpfuse/embedding.hpp"
#include "dpfuse/graph.hpp"
#include "dpfuse/nn.hpp"

namespace dpfuse {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class NodeKind : int { kUser = 0, kPost = 1 };

/// Mean-aggregation operators, one per relation: row i of `op` carries
/// weight 1/|N_i^r| on each r-neighbour of i.
struct RelationSet {
  struct Relation {
    std::string name;
    NodeKind target;
    NodeKind source;
    SparseMatrix op;
  };
  std::vector<Relation> relations;
  std::size_t users = 0;
  std::size_t posts = 0;

  std::size_t count(NodeKind k) const { return k == NodeKind::kUser ? users : posts; }
};

/// friendship (user <- user), written-by (user <- post), write (post <- user).
RelationSet build_relations(const HeteroGraph& g);

/// Initial node states: users get their attribute encoding (numeric slots
/// plus one-hot categories); posts get the mean vector of their in-vocabulary
/// tokens (zero when none are known).
struct NodeFeatures {
  Matrix users;
  Matrix posts;
};
NodeFeatures build_node_features(const HeteroGraph& g, const WordEmbeddingTable& words);

struct HeteroLayer {
  std::vector<Matrix> relation;  // per relation; empty when the target is not computed
  std::array<Matrix, 2> self;    // per node kind; empty when not computed
};

struct HeteroEncoderParams {
  std::vector<HeteroLayer> layers;
  std::vector<Activation> activations;

  std::vector<Matrix*> parameters();
  std::vector<NamedTensor> tensors() const;
  static HeteroEncoderParams from_tensors(const std::vector<NamedTensor>& tensors,
                                          const RelationSet& rel,
                                          std::vector<Activation> activations);
};

/// Hidden layers update users and posts, the output layer users only.
/// Activations default to ReLU on hidden layers and identity on the output.
HeteroEncoderParams init_encoder(const RelationSet& rel, std::size_t user_dim,
                                 std::size_t post_dim, const std::vector<std::size_t>& dims,
                                 std::uint64_t seed);

/// Per-layer intermediates kept for the backward pass.
struct EncoderTrace {
  std::vector<std::array<Matrix, 2>> input;           // layer inputs per kind
  std::vector<std::array<Matrix, 2>> pre;             // pre-activations per kind
  std::vector<std::vector<Matrix>> aggregated;        // op_r * input[source]
};

/// h_i' = act( sum_r sum_{j in N_i^r} W_r h_j / c_{i,r} + W_0 h_i ), row form.
Matrix encode(const RelationSet& rel, const NodeFeatures& feats,
              const HeteroEncoderParams& p, EncoderTrace* trace = nullptr);
EmbeddingTable encode_users(const HeteroGraph& g, const NodeFeatures& feats,
                            const HeteroEncoderParams& p);

/// Gradients w.r.t. parameters(), given dL/d(user output).
std::vector<Matrix> encoder_backward(const RelationSet& rel, const HeteroEncoderParams& p,
                                     const EncoderTrace& trace, const Matrix& d_out);

struct TrainConfig {
  double learning_rate = 0.003;
  std::size_t epochs = 50;
  std::size_t negatives = 5;         // Q
  double negative_exponent = 0.75;
  std::uint64_t seed = 1;
  bool deterministic = true;
  std::size_t batch_pairs = 1024;
  std::size_t hidden_dim = 256;
  std::size_t output_dim = 128;

  void validate() const;
};

struct HeteroTrainResult {
  HeteroEncoderParams params;
  EmbeddingTable users;
  /// Objective after each epoch on a fixed monitoring negative set.
  std::vector<double> epoch_losses;
};

/// Adam on the negative-sampling link objective over friendship pairs.
HeteroTrainResult train_hetero(const HeteroGraph& g, const NodeFeatures& feats,
                               const TrainConfig& cfg);

}  // namespace dpfuse
