#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpfuse/embedding.hpp"

namespace dpfuse {

struct GanConfig {
  std::size_t hidden = 512;            // discriminator width
  double leaky_slope = 0.2;
  std::size_t epochs = 150;            // passes over the source rows
  std::size_t batch = 32;
  std::size_t discriminator_steps = 5;
  double lr_generator = 0.01;
  double lr_discriminator = 0.1;
  double beta = 0.001;                 // orthogonalization strength
  std::uint64_t seed = 1;
  std::size_t csls_k = 10;
  bool moment_init = true;             // principal-axis initialization
  bool select_best = true;             // keep the epoch with the best criterion

  void validate() const;
};

/// Linear map from source space into target space (row form: y ~ W x).
struct AlignmentModel {
  Matrix w;
};

struct GanTrace {
  std::vector<double> discriminator_loss;  // per epoch means
  std::vector<double> generator_loss;
  std::vector<double> criterion;           // per epoch, index 0 = initialization
  std::size_t best_epoch = 0;
  std::size_t orthogonalization_steps = 0;
  std::size_t orthogonalization_increases = 0;  // steps where ||W^T W - I|| grew
};

struct AnchorPair {
  std::string source;
  std::string target;
  double score = 0;
};

/// One-to-one cross-network user pairs.
struct AnchorSet {
  std::vector<AnchorPair> pairs;

  std::size_t size() const { return pairs.size(); }
  /// Throws a validation Error if any id appears twice on one side.
  void validate() const;
};

/// Rows scaled to unit length; zero rows stay zero.
Matrix normalize_rows(const Matrix& m);

/// ||W^T W - I||_F.
double orthogonality_error(const Matrix& w);
/// W <- (1 + beta) W - beta (W W^T) W.
void orthogonalize_step(Matrix& w, double beta);

/// Principal axes of both clouds matched in eigenvalue order, axis signs
/// fixed by the sign of the third moment along each axis.
Matrix moment_match_init(const Matrix& source, const Matrix& target);

/// CSLS(s, t) = 2 cos(s, t) - r_T(s) - r_S(t), with r_T(s) the mean cosine of
/// s to its k nearest targets and r_S(t) the same for t over sources. Rows
/// are mapped-source and target vectors; zero vectors have cosine 0.
Matrix csls(const Matrix& mapped_source, const Matrix& target, std::size_t k);

/// Mean cosine between each mapped source row and its CSLS-best target.
double alignment_criterion(const Matrix& mapped_source, const Matrix& target, std::size_t k);

/// Adversarial training of W on length-normalized embeddings.
AlignmentModel train_mapping(const EmbeddingTable& z1, const EmbeddingTable& z2,
                             const GanConfig& cfg, GanTrace* trace = nullptr);

/// Mutual CSLS nearest neighbours with score strictly above `margin`.
AnchorSet predict_anchors(const EmbeddingTable& z1, const EmbeddingTable& z2,
                          const AlignmentModel& model, std::size_t k, double margin = 0.0);

void save_anchors(const std::filesystem::path& path, const AnchorSet& anchors,
                  const nlohmann::json& provenance = nullptr);
AnchorSet load_anchors(const std::filesystem::path& path);

}  // namespace dpfuse
