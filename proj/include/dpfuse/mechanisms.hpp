#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <random>
#include <vector>

#include <json.hpp>

#include "dpfuse/embedding.hpp"
#include "dpfuse/graph.hpp"
#include "dpfuse/rng.hpp"

namespace dpfuse {

/// Per-type budgets of the hybrid guarantee: attributes, friendship edges,
/// post text.
struct PrivacyBudget {
  double eps_a = 5.0;
  double eps_g = 10.0;
  double eps_t = 7.5;

  /// Throws a usage Error unless all three are positive and finite.
  void validate() const;
};

// --- attributes -------------------------------------------------------------

/// Output range bound C of the piecewise mechanism at budget eps.
double piecewise_bound(double eps);
/// Probability of sampling inside the high-probability band [l(t), r(t)].
double piecewise_inside_probability(double eps);
/// The band [l(t), r(t)], of length C - 1.
std::pair<double, double> piecewise_band(double t, double eps);
/// Unbiased perturbation of t in [-1, 1]; output lies in [-C, C].
double piecewise_perturb(double t, double eps, Rng& rng);

double rr_keep_probability(double eps, std::uint32_t cardinality);
/// k-ary randomized response.
std::uint32_t randomized_response(std::uint32_t category, std::uint32_t cardinality,
                                  double eps, Rng& rng);

/// Splits eps_a evenly over the schema's slots and perturbs each slot.
AttributeVector perturb_attributes(const AttributeSchema& schema,
                                   const AttributeVector& x, double eps_a, Rng& rng);
/// Schema of perturbed vectors: numeric bounds widened to C.
AttributeSchema perturbed_schema(const AttributeSchema& schema, double eps_a);

// --- edges ------------------------------------------------------------------

/// Diagnostics of one edge-filter run.
struct EdgeFilterStats {
  std::size_t n = 0;
  std::size_t m = 0;
  double cells = 0;         // n(n-1)/2
  double eps_count = 0;     // budget spent on the noisy edge count
  double eps_filter = 0;    // budget of the per-cell filter
  double m_hat = 0;         // noisy target edge count
  double theta = 0;         // filter threshold
  double p_keep = 0;        // Pr[1 + Lap > theta]
  double p_flip = 0;        // Pr[Lap > theta]
  double expected_edges = 0;
  std::size_t kept = 0;
  std::size_t added = 0;
};

inline constexpr double kEdgeCountShare = 0.1;

/// Pr[Laplace(0, scale) > x].
double laplace_survival(double x, double scale);

/// Threshold theta such that m*Pr[1+L > theta] + (cells-m)*Pr[L > theta] is
/// within 1e-6 of target, L ~ Laplace(1/eps_filter). Returns +inf for
/// target <= 0 and -inf for target >= cells.
double solve_filter_threshold(double m, double cells, double target, double eps_filter);
double filter_expected_edges(double m, double cells, double theta, double eps_filter);

/// Edge-DP sanitizer: noisy edge count plus a per-cell Laplace threshold
/// filter. Zero cells are visited by geometric skipping.
UserGraph perturb_edges(const UserGraph& g, double eps_g, Rng& rng,
                        EdgeFilterStats* stats = nullptr);

// --- text -------------------------------------------------------------------

/// Metric-DP word replacement with Pr[y | x] proportional to
/// exp(-eps/2 * ||phi(x) - phi(y)||).
class TextSanitizer {
 public:
  TextSanitizer(const WordEmbeddingTable& vocab, double eps);

  double eps() const { return eps_; }
  std::size_t vocabulary_size() const { return vocab_->size(); }

  /// Exact output distribution for vocabulary word `word`.
  std::vector<double> distribution(std::size_t word) const;
  std::size_t sample(std::size_t word, Rng& rng);
  std::vector<std::string> sanitize(std::span<const std::string> tokens, Rng& rng);

  struct Counters {
    std::size_t tokens = 0;
    std::size_t out_of_vocabulary = 0;
    std::size_t changed = 0;
    double distance_sum = 0;  // replacement distance over in-vocabulary tokens
    double distance_max = 0;
  };
  const Counters& counters() const { return counters_; }

 private:
  const WordEmbeddingTable* vocab_;
  double eps_;
  std::unordered_map<std::size_t, std::discrete_distribution<std::size_t>> cache_;
  Counters counters_;
};

std::vector<std::string> sanitize_text(std::span<const std::string> tokens, double eps_t,
                                       const WordEmbeddingTable& emb, Rng& rng);

// --- composition ------------------------------------------------------------

struct SanitizeReport {
  PrivacyBudget budget;
  std::uint64_t seed = 0;
  double eps_per_slot = 0;
  EdgeFilterStats edges;
  TextSanitizer::Counters text;

  nlohmann::json to_json() const;
};

/// Applies the three mechanisms independently. Ids, write edges, labels and
/// sensitive fields pass through unchanged.
HeteroGraph sanitize_graph(const HeteroGraph& g, const PrivacyBudget& budget,
                           const WordEmbeddingTable& emb, std::uint64_t seed,
                           SanitizeReport* report = nullptr);

// --- budget allocation ------------------------------------------------------

enum class DataType { kAttribute = 0, kFriendship = 1, kPosts = 2 };
inline constexpr std::array<const char*, 3> kDataTypeNames = {"attribute", "friendship",
                                                              "posts"};

struct TmrEntry {
  double task = 0;
  double gender = 0;
  double occupation = 0;
  double tmr = 0;
};

/// Task-relevance to message-inference ratio per data type.
struct TmrReport {
  std::array<TmrEntry, 3> entries;

  const TmrEntry& operator[](DataType t) const {
    return entries[static_cast<std::size_t>(t)];
  }
  nlohmann::json to_json() const;
};

TmrReport compute_tmr(const std::array<double, 3>& task,
                      const std::array<double, 3>& gender,
                      const std::array<double, 3>& occupation);

/// eps_i = total * tmr_i / sum_j tmr_j.
PrivacyBudget allocate_budgets(const TmrReport& tmr, double total);

}  // namespace dpfuse
