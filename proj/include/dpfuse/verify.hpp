#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace dpfuse {

/// Outcome of one property check.
struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;

  nlohmann::json to_json() const;
};

/// Exhaustive log-ratio bound of the text mechanism over every (x, x', y) of a
/// 10-word vocabulary with random 3-d vectors.
PropertyResult check_mdp_ratio(const std::vector<double>& eps, std::uint64_t seed);
/// Every output distribution of the text mechanism sums to 1 within 1e-12.
PropertyResult check_mdp_normalization(const std::vector<double>& eps, std::uint64_t seed);
/// Piecewise mechanism: sample mean within 4 standard errors of t and every
/// output inside [-C, C].
PropertyResult check_pm_unbiased(std::size_t draws, std::uint64_t seed);
/// k-ary randomized response: worst-case probability ratio equals e^eps.
PropertyResult check_rr_ratio();
/// Edge filter on a random simple graph: mean output edge count within 3
/// standard errors of m, every output simple.
PropertyResult check_edge_filter_expectation(std::size_t n, std::size_t m, double eps_g,
                                             std::size_t trials, std::uint64_t seed);
/// Central differences against the analytic gradients of the link loss (with
/// respect to the embeddings and through the encoder) on tiny graphs.
PropertyResult check_encoder_gradient(std::size_t restarts, std::uint64_t seed);
/// Central differences against fusion_backward through total_loss, cycling
/// over hierarchy/iterative and identity/ReLU.
PropertyResult check_fusion_gradient(std::size_t restarts, std::uint64_t seed);
/// Propagated blocks against dense powers of the normalized adjacency on
/// 10-node graphs, plus the alpha = 0, k = 1 degenerate case.
PropertyResult check_propagation_oracle(std::size_t graphs, std::uint64_t seed);
/// Planted-rotation recovery: CSLS@1 and orthogonality of the learned map.
PropertyResult check_alignment_recovery(std::uint64_t seed, double min_accuracy = 0.95,
                                        double max_orthogonality_error = 0.1);

/// Relative error ||a - b|| / max(||a||, ||b||, 1e-12) of two flattened gradients.
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

/// The fast checks, in a fixed order.
std::vector<PropertyResult> run_invariant_suite(std::uint64_t seed);

}  // namespace dpfuse
