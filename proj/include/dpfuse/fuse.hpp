#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpfuse/align.hpp"
#include "dpfuse/embedding.hpp"
#include "dpfuse/graph.hpp"
#include "dpfuse/hetero.hpp"
#include "dpfuse/nn.hpp"

namespace dpfuse {

enum class FusionMode { kHierarchy, kIterative };

FusionMode parse_fusion_mode(const std::string& name);
const char* to_string(FusionMode m);

struct FusionConfig {
  std::size_t hops = 4;           // k
  double anchor_weight = 2.0;     // alpha
  std::size_t output_dim = 128;
  Activation activation = Activation::kIdentity;
  FusionMode mode = FusionMode::kHierarchy;
  double learning_rate = 0.003;
  std::size_t epochs = 100;
  std::size_t negatives = 5;
  double negative_exponent = 0.75;
  std::uint64_t seed = 1;

  void validate() const;
};

/// W12 maps network-1 vectors into network 2, W21 the reverse (column form,
/// z2' = act(z2 + W12 z1)). `output[net]` holds one ((k+1)d x d_out) map in
/// hierarchy mode, or k layer maps (d x d, ..., d x d_out) in iterative mode.
struct FusionParams {
  Matrix w12;
  Matrix w21;
  std::array<std::vector<Matrix>, 2> output;
  std::size_t hops = 4;
  double anchor_weight = 2.0;
  Activation activation = Activation::kIdentity;
  FusionMode mode = FusionMode::kHierarchy;

  std::vector<Matrix*> parameters();
  std::vector<NamedTensor> tensors() const;
  void validate(std::size_t dim) const;
};

FusionParams init_fusion(std::size_t dim, const FusionConfig& cfg);

/// D^{-1/2} A D^{-1/2} of the user graph, no self-loops; isolated rows are zero.
SparseMatrix normalized_adjacency(const UserGraph& g);

/// Diagonal of the anchor indicator: 1 at the listed rows, 0 elsewhere.
Vector anchor_mask(std::size_t n, const std::vector<std::size_t>& anchors);

/// (row in network 1, row in network 2).
using AnchorIndex = std::vector<std::pair<std::size_t, std::size_t>>;

/// Maps anchor ids to rows of the two tables; unknown ids throw.
AnchorIndex resolve_anchors(const AnchorSet& anchors, const EmbeddingTable& z1,
                            const EmbeddingTable& z2);

/// One anchor pair: (act(z1 + W21 z2), act(z2 + W12 z1)).
std::pair<Vector, Vector> inter_propagate(const Vector& z1, const Vector& z2,
                                          const FusionParams& p);

/// Applies the anchor update to all listed pairs; other rows are copied.
std::pair<Matrix, Matrix> inter_propagate(const Matrix& z1, const Matrix& z2,
                                          const AnchorIndex& anchors, const FusionParams& p);

/// Feature-axis stack (Z', H^1, ..., H^k) with P_0 = Z', P_l = A P_{l-1},
/// H^l = alpha * mask * Z' + P_l.
Matrix hierarchy_stack(const SparseMatrix& adj, const Vector& mask, const Matrix& zp,
                       std::size_t hops, double alpha);

/// act(stack * W_u).
Matrix hierarchy_propagate(const SparseMatrix& adj, const Vector& mask, const Matrix& zp,
                           const Matrix& w_u, std::size_t hops, double alpha,
                           Activation act);

/// X_{i+1} = act(A X_i W_i), for the given layer maps.
Matrix iterative_propagate(const SparseMatrix& adj, const Matrix& zp,
                           const std::vector<Matrix>& layers, Activation act);

struct FusionInputs {
  std::array<Matrix, 2> z;
  std::array<SparseMatrix, 2> adj;
  std::array<Vector, 2> mask;
  AnchorIndex anchors;
};

FusionInputs make_fusion_inputs(const UserGraph& g1, const UserGraph& g2, Matrix z1,
                                Matrix z2, AnchorIndex anchors);

struct FusionTrace {
  std::array<Matrix, 2> zp;          // after inter-graph propagation
  std::array<Matrix, 2> inter_pre;   // anchor pre-activations, one row per pair
  std::array<std::vector<Matrix>, 2> layer_in;   // inputs to each output map
  std::array<std::vector<Matrix>, 2> layer_pre;  // their pre-activations
  std::array<Matrix, 2> out;
};

FusionTrace fusion_forward(const FusionInputs& in, const FusionParams& p);

/// Gradients w.r.t. parameters(), given dL/dO for both networks.
std::vector<Matrix> fusion_backward(const FusionInputs& in, const FusionParams& p,
                                    const FusionTrace& trace,
                                    const std::array<Matrix, 2>& d_out);

struct FusionLoss {
  std::array<double, 2> graph{0.0, 0.0};
  double regularizer = 0.0;
  double total = 0.0;
};

/// Mean squared Euclidean distance over anchor pairs; 0 for no anchors.
double anchor_regularizer(const Matrix& o1, const Matrix& o2, const AnchorIndex& anchors,
                          Matrix* d1 = nullptr, Matrix* d2 = nullptr);

/// Graph losses on both outputs plus the anchor regularizer. Gradients are
/// written to d_out when non-null.
FusionLoss total_loss(const std::array<Matrix, 2>& out,
                      const std::array<std::vector<UserPair>, 2>& pairs,
                      const std::array<NegativeSet, 2>& negatives,
                      const AnchorIndex& anchors, std::array<Matrix, 2>* d_out = nullptr);

struct FusionResult {
  EmbeddingTable o1;
  EmbeddingTable o2;
  FusionParams params;
  std::vector<FusionLoss> epoch_losses;
  std::size_t anchor_count = 0;
};

/// Rows of z1/z2 are matched to the graphs' users by id.
FusionResult train_fusion(const HeteroGraph& g1, const HeteroGraph& g2,
                          const EmbeddingTable& z1, const EmbeddingTable& z2,
                          const AnchorSet& anchors, const FusionConfig& cfg);

}  // namespace dpfuse
