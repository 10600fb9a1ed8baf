#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpfuse/embedding.hpp"
#include "dpfuse/graph.hpp"

namespace dpfuse {

struct SkipGramConfig {
  std::size_t dim = 64;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;
  std::size_t min_count = 1;

  void validate() const;
};

struct WalkConfig {
  std::size_t walks_per_node = 10;
  std::size_t walk_length = 40;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Negative-sampling skip-gram objective for one (input, positive, negatives)
/// example: -log s(u.v+) - sum_k log s(-u.v_k).
struct SgnsGradient {
  double loss = 0;
  Vector d_input;
  Vector d_positive;
  Matrix d_negatives;  // one row per negative
};
SgnsGradient sgns_loss_and_gradient(const Vector& input, const Vector& positive,
                                    const Matrix& negatives);

/// Vocabulary ordered by descending count, ties by token. Negatives follow
/// unigram^(3/4). Single-threaded and deterministic given the seed.
WordEmbeddingTable train_skipgram(const std::vector<std::vector<std::string>>& sequences,
                                  const SkipGramConfig& cfg);

/// Uniform random walks, `walks_per_node` rounds over all nodes in index
/// order. Walks from isolated nodes have length 1.
std::vector<std::vector<UserIndex>> random_walks(const UserGraph& g, const WalkConfig& cfg);

/// Random-walk node embeddings keyed by user id.
EmbeddingTable node_embeddings(const UserGraph& g, const std::vector<std::string>& ids,
                               const WalkConfig& walks, const SkipGramConfig& sg);

}  // namespace dpfuse
