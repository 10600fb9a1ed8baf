#include "dpfuse/mechanisms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "dpfuse/error.hpp"

namespace dpfuse {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_positive(double eps, const char* what) {
  if (!(eps > 0.0) || !std::isfinite(eps))
    throw usage_error(std::string(what) + " must be positive and finite");
}

}  // namespace

void PrivacyBudget::validate() const {
  require_positive(eps_a, "eps_a");
  require_positive(eps_g, "eps_g");
  require_positive(eps_t, "eps_t");
}

// --- attributes -------------------------------------------------------------

double piecewise_bound(double eps) {
  // (e^{eps/2} + 1) / (e^{eps/2} - 1), written in e^{-eps/2} to avoid overflow.
  const double q = std::exp(-eps / 2.0);
  return (1.0 + q) / -std::expm1(-eps / 2.0);
}

double piecewise_inside_probability(double eps) {
  return 1.0 / (1.0 + std::exp(-eps / 2.0));
}

std::pair<double, double> piecewise_band(double t, double eps) {
  const double c = piecewise_bound(eps);
  const double l = (c + 1.0) / 2.0 * t - (c - 1.0) / 2.0;
  return {l, l + c - 1.0};
}

double piecewise_perturb(double t, double eps, Rng& rng) {
  if (!(t >= -1.0 && t <= 1.0))
    throw validation_error("piecewise mechanism input outside [-1, 1]");
  require_positive(eps, "attribute budget");
  const double c = piecewise_bound(eps);
  const auto [l, r] = piecewise_band(t, eps);
  if (rng.uniform() < piecewise_inside_probability(eps)) return rng.uniform(l, r);
  const double left = l + c;   // length of [-C, l)
  const double right = c - r;  // length of (r, C]
  const double u = rng.uniform() * (left + right);
  return u < left ? -c + u : r + (u - left);
}

double rr_keep_probability(double eps, std::uint32_t cardinality) {
  if (cardinality <= 1) return 1.0;
  return 1.0 / (1.0 + static_cast<double>(cardinality - 1) * std::exp(-eps));
}

std::uint32_t randomized_response(std::uint32_t category, std::uint32_t cardinality,
                                  double eps, Rng& rng) {
  if (category >= cardinality)
    throw validation_error("randomized response: category out of range");
  if (rng.uniform() < rr_keep_probability(eps, cardinality)) return category;
  auto other = static_cast<std::uint32_t>(rng.index(cardinality - 1));
  return other >= category ? other + 1 : other;
}

AttributeVector perturb_attributes(const AttributeSchema& schema,
                                   const AttributeVector& x, double eps_a, Rng& rng) {
  require_positive(eps_a, "eps_a");
  if (x.values.size() != schema.size())
    throw validation_error("attribute vector does not match schema");
  AttributeVector out = x;
  if (schema.size() == 0) return out;
  const double eps = eps_a / static_cast<double>(schema.size());
  for (std::size_t s = 0; s < schema.size(); ++s) {
    const auto& slot = schema.slots[s];
    if (slot.is_categorical()) {
      out.values[s] = randomized_response(x.category(s), slot.cardinality, eps, rng);
    } else {
      if (!(std::abs(x.values[s]) <= 1.0))
        throw validation_error("attribute slot '" + slot.name + "' outside [-1, 1]");
      out.values[s] = piecewise_perturb(x.values[s], eps, rng);
    }
  }
  return out;
}

AttributeSchema perturbed_schema(const AttributeSchema& schema, double eps_a) {
  AttributeSchema out = schema;
  if (schema.size() == 0) return out;
  const double c = piecewise_bound(eps_a / static_cast<double>(schema.size()));
  for (auto& slot : out.slots)
    if (!slot.is_categorical()) slot.bound = c;
  return out;
}

// --- edges ------------------------------------------------------------------

double laplace_survival(double x, double scale) {
  if (x >= 0) return 0.5 * std::exp(-x / scale);
  return 1.0 - 0.5 * std::exp(x / scale);
}

double filter_expected_edges(double m, double cells, double theta, double eps_filter) {
  if (theta == kInf) return 0.0;
  if (theta == -kInf) return cells;
  const double b = 1.0 / eps_filter;
  return m * laplace_survival(theta - 1.0, b) + (cells - m) * laplace_survival(theta, b);
}

double solve_filter_threshold(double m, double cells, double target, double eps_filter) {
  require_positive(eps_filter, "edge filter budget");
  if (target <= 0) return kInf;
  if (target >= cells) return -kInf;
  auto f = [&](double th) { return filter_expected_edges(m, cells, th, eps_filter); };
  double lo = -1.0, hi = 2.0;
  while (f(lo) < target) lo *= 2.0;
  while (f(hi) > target) hi *= 2.0;
  // f is strictly decreasing in theta.
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double v = f(mid);
    if (std::abs(v - target) <= 1e-9) return mid;
    (v > target ? lo : hi) = mid;
  }
  const double best = std::abs(f(lo) - target) < std::abs(f(hi) - target) ? lo : hi;
  if (std::abs(f(best) - target) > 1e-6)
    throw numeric_error("edge filter threshold solver did not reach tolerance");
  return best;
}

UserGraph perturb_edges(const UserGraph& g, double eps_g, Rng& rng,
                        EdgeFilterStats* stats) {
  require_positive(eps_g, "eps_g");
  const std::size_t n = g.n();
  const double m = static_cast<double>(g.m());
  const double cells = 0.5 * static_cast<double>(n) * static_cast<double>(n > 0 ? n - 1 : 0);

  EdgeFilterStats st;
  st.n = n;
  st.m = g.m();
  st.cells = cells;
  st.eps_count = kEdgeCountShare * eps_g;
  st.eps_filter = eps_g - st.eps_count;
  st.m_hat = std::max(0.0, std::round(m + rng.laplace(1.0 / st.eps_count)));
  st.m_hat = std::min(st.m_hat, cells);
  st.theta = solve_filter_threshold(m, cells, st.m_hat, st.eps_filter);
  const double b = 1.0 / st.eps_filter;
  st.p_keep = std::isinf(st.theta) ? (st.theta < 0 ? 1.0 : 0.0)
                                   : laplace_survival(st.theta - 1.0, b);
  st.p_flip = std::isinf(st.theta) ? (st.theta < 0 ? 1.0 : 0.0)
                                   : laplace_survival(st.theta, b);
  st.expected_edges = filter_expected_edges(m, cells, st.theta, st.eps_filter);

  std::vector<Edge> out;
  out.reserve(static_cast<std::size_t>(st.m_hat * 1.1) + 16);
  for (const auto& e : g.edges())
    if (rng.bernoulli(st.p_keep)) out.push_back(e);
  st.kept = out.size();

  // Upper-triangle cells in row-major order; row i holds n-1-i cells.
  if (st.p_flip > 0 && n >= 2) {
    const auto total = static_cast<std::uint64_t>(cells);
    std::uint64_t row = 0, row_start = 0;
    std::uint64_t pos = rng.geometric(st.p_flip);
    while (pos < total) {
      while (pos >= row_start + (n - 1 - row)) {
        row_start += n - 1 - row;
        ++row;
      }
      const auto a = static_cast<UserIndex>(row);
      const auto c = static_cast<UserIndex>(row + 1 + (pos - row_start));
      if (!g.has_edge(a, c)) {
        out.emplace_back(a, c);
        ++st.added;
      }
      const std::uint64_t skip = rng.geometric(st.p_flip);
      if (skip >= total - pos) break;
      pos += skip + 1;
    }
  }
  if (stats) *stats = st;
  return UserGraph(n, std::move(out));
}

// --- text -------------------------------------------------------------------

TextSanitizer::TextSanitizer(const WordEmbeddingTable& vocab, double eps)
    : vocab_(&vocab), eps_(eps) {
  if (vocab.empty()) throw validation_error("text sanitizer: empty vocabulary");
  if (!(eps >= 0.0) || !std::isfinite(eps))
    throw usage_error("text budget must be non-negative and finite");
}

std::vector<double> TextSanitizer::distribution(std::size_t word) const {
  const Matrix& v = vocab_->vectors();
  const auto x = v.row(static_cast<Eigen::Index>(word));
  std::vector<double> p(vocab_->size());
  double total = 0;
  // d(x, x) = 0 is the minimum distance, so every weight lies in (0, 1].
  for (std::size_t y = 0; y < p.size(); ++y) {
    const double d = (v.row(static_cast<Eigen::Index>(y)) - x).norm();
    p[y] = std::exp(-0.5 * eps_ * d);
    total += p[y];
  }
  for (auto& q : p) q /= total;
  return p;
}

std::size_t TextSanitizer::sample(std::size_t word, Rng& rng) {
  auto it = cache_.find(word);
  if (it == cache_.end()) {
    const auto p = distribution(word);
    it = cache_.emplace(word, std::discrete_distribution<std::size_t>(p.begin(), p.end()))
             .first;
  }
  return it->second(rng.engine());
}

std::vector<std::string> TextSanitizer::sanitize(std::span<const std::string> tokens,
                                                 Rng& rng) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  const Matrix& v = vocab_->vectors();
  for (const auto& tok : tokens) {
    ++counters_.tokens;
    std::size_t y;
    if (auto x = vocab_->find(tok)) {
      y = sample(*x, rng);
      const double d = (v.row(static_cast<Eigen::Index>(y)) -
                        v.row(static_cast<Eigen::Index>(*x)))
                           .norm();
      counters_.distance_sum += d;
      counters_.distance_max = std::max(counters_.distance_max, d);
    } else {
      ++counters_.out_of_vocabulary;
      y = rng.index(vocab_->size());
    }
    const std::string& word = vocab_->ids()[y];
    if (word != tok) ++counters_.changed;
    out.push_back(word);
  }
  return out;
}

std::vector<std::string> sanitize_text(std::span<const std::string> tokens, double eps_t,
                                       const WordEmbeddingTable& emb, Rng& rng) {
  require_positive(eps_t, "eps_t");
  TextSanitizer s(emb, eps_t);
  return s.sanitize(tokens, rng);
}

// --- composition ------------------------------------------------------------

nlohmann::json SanitizeReport::to_json() const {
  nlohmann::json j;
  j["budget"] = {{"eps_a", budget.eps_a}, {"eps_g", budget.eps_g}, {"eps_t", budget.eps_t}};
  j["seed"] = seed;
  j["mechanisms"] = {{"attributes", "piecewise+randomized-response/1"},
                     {"edges", "count+threshold-filter/1"},
                     {"text", "euclidean-metric-dp/1"}};
  j["attributes"] = {{"eps_per_slot", eps_per_slot}};
  j["edges"] = {{"n", edges.n},
                {"m", edges.m},
                {"cells", edges.cells},
                {"eps_count", edges.eps_count},
                {"eps_filter", edges.eps_filter},
                {"m_hat", edges.m_hat},
                {"theta", std::isinf(edges.theta) ? nlohmann::json(edges.theta > 0 ? "inf" : "-inf")
                                                  : nlohmann::json(edges.theta)},
                {"p_keep", edges.p_keep},
                {"p_flip", edges.p_flip},
                {"expected_edges", edges.expected_edges},
                {"kept", edges.kept},
                {"added", edges.added}};
  j["text"] = {{"eps_t", budget.eps_t},
               {"tokens", text.tokens},
               {"out_of_vocabulary", text.out_of_vocabulary},
               {"changed", text.changed},
               {"mean_distance", text.tokens > text.out_of_vocabulary
                                     ? text.distance_sum /
                                           static_cast<double>(text.tokens -
                                                               text.out_of_vocabulary)
                                     : 0.0},
               {"max_distance", text.distance_max}};
  return j;
}

HeteroGraph sanitize_graph(const HeteroGraph& g, const PrivacyBudget& budget,
                           const WordEmbeddingTable& emb, std::uint64_t seed,
                           SanitizeReport* report) {
  budget.validate();
  g.validate();
  HeteroGraph out = g;

  out.schema = perturbed_schema(g.schema, budget.eps_a);
  for (std::size_t u = 0; u < g.user_count(); ++u) {
    Rng rng = Rng::substream(seed, StreamTag::kAttributes, u);
    out.attrs[u] = perturb_attributes(g.schema, g.attrs[u], budget.eps_a, rng);
  }

  EdgeFilterStats edge_stats;
  {
    Rng rng = Rng::substream(seed, StreamTag::kEdges);
    const UserGraph sanitized =
        perturb_edges(extract_user_graph(g), budget.eps_g, rng, &edge_stats);
    out.friendships = sanitized.edges();
  }

  // Graphs without post text need no vocabulary.
  TextSanitizer::Counters text_counters;
  const bool has_text = std::any_of(g.post_tokens.begin(), g.post_tokens.end(),
                                    [](const auto& t) { return !t.empty(); });
  if (has_text) {
    TextSanitizer text(emb, budget.eps_t);
    for (std::size_t p = 0; p < g.post_count(); ++p) {
      Rng rng = Rng::substream(seed, StreamTag::kText, p);
      out.post_tokens[p] = text.sanitize(g.post_tokens[p], rng);
    }
    text_counters = text.counters();
  }

  if (report) {
    report->budget = budget;
    report->seed = seed;
    report->eps_per_slot =
        g.schema.size() ? budget.eps_a / static_cast<double>(g.schema.size()) : 0.0;
    report->edges = edge_stats;
    report->text = text_counters;
  }
  return out;
}

// --- budget allocation ------------------------------------------------------

nlohmann::json TmrReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    j[kDataTypeNames[i]] = {{"task_precision", entries[i].task},
                            {"gender_precision", entries[i].gender},
                            {"occupation_precision", entries[i].occupation},
                            {"tmr", entries[i].tmr}};
  }
  return j;
}

TmrReport compute_tmr(const std::array<double, 3>& task,
                      const std::array<double, 3>& gender,
                      const std::array<double, 3>& occupation) {
  TmrReport r;
  for (std::size_t i = 0; i < 3; ++i) {
    for (double p : {task[i], gender[i], occupation[i]})
      if (!(p >= 0.0 && p <= 1.0))
        throw validation_error("TMR inputs must be precisions in [0, 1]");
    const double denom = gender[i] + occupation[i];
    if (!(denom > 0.0))
      throw numeric_error(std::string("TMR: zero message-inference precision for ") +
                          kDataTypeNames[i]);
    r.entries[i] = {task[i], gender[i], occupation[i], task[i] / denom};
  }
  return r;
}

PrivacyBudget allocate_budgets(const TmrReport& tmr, double total) {
  if (!(total > 0.0) || !std::isfinite(total))
    throw usage_error("total budget must be positive and finite");
  double sum = 0;
  for (const auto& e : tmr.entries) {
    if (!(e.tmr > 0.0)) throw validation_error("budget allocation needs positive TMR values");
    sum += e.tmr;
  }
  PrivacyBudget b;
  b.eps_a = total * tmr.entries[0].tmr / sum;
  b.eps_g = total * tmr.entries[1].tmr / sum;
  b.eps_t = total * tmr.entries[2].tmr / sum;
  return b;
}

}  // namespace dpfuse
