#pragma once

#include <cstdint>
#include <string>

#include "dpfuse/align.hpp"
#include "dpfuse/graph.hpp"
#include "dpfuse/rng.hpp"

namespace dpfuse {

/// Planted-community social network generator. Users belong to one of
/// `communities` groups; friendships follow a stochastic block model, posts
/// draw most tokens from their group's topic words, and interests are
/// {2c, 2c+1} for group c.
struct SynthConfig {
  std::size_t users = 300;
  std::size_t communities = 5;
  double intra_degree = 8.0;   // expected friends inside the group
  double inter_degree = 1.0;   // expected friends outside it
  std::size_t posts_per_user = 2;
  std::size_t tokens_per_post = 8;
  std::size_t words_per_topic = 12;
  double topic_share = 0.8;    // fraction of post tokens from the topic words
  std::uint32_t occupations = 4;
  /// Friends prefer the same gender with this probability mass shift; 0 keeps
  /// gender visible only through the attribute slot.
  double gender_homophily = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// One network. User ids are "<prefix><index>".
HeteroGraph synth_graph(const SynthConfig& cfg, const std::string& prefix = "u");

/// Two networks over overlapping populations. Network B's friendships and
/// posts follow the hidden groups that define the interest labels; network
/// A's structure, posts and attributes follow an independent grouping, so
/// A's own data carries no label signal. `anchor_fraction` of each
/// network's users also appear in the other one.
struct SynthPair {
  HeteroGraph a;
  HeteroGraph b;
  AnchorSet anchors;  // ground-truth shared users (a id, b id)
};
SynthPair synth_cross_pair(const SynthConfig& cfg, double anchor_fraction = 0.5);

/// Alignment benchmark: an anisotropic, skewed point cloud X (n x d) and
/// Y = X R^T for a random orthogonal R. Rows of both tables are unit length;
/// row i of `source` ("x<i>") corresponds to row i of `target` ("y<i>").
struct PlantedRotation {
  EmbeddingTable source;
  EmbeddingTable target;
  Matrix rotation;
};
PlantedRotation planted_rotation(std::size_t n, std::size_t d, std::uint64_t seed);

/// Haar-distributed orthogonal matrix.
Matrix random_orthogonal(std::size_t d, Rng& rng);

}  // namespace dpfuse
