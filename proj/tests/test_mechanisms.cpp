#include <doctest.h>

#include <cmath>

#include "dpfuse/error.hpp"
#include "dpfuse/mechanisms.hpp"
#include "dpfuse/pipeline.hpp"
#include "dpfuse/synth.hpp"
#include "dpfuse/verify.hpp"
#include "helpers.hpp"

using namespace dpfuse;

namespace {

WordEmbeddingTable line_vocab(const std::vector<std::string>& words,
                              const std::vector<double>& positions) {
  Matrix v(static_cast<Eigen::Index>(words.size()), 1);
  for (std::size_t i = 0; i < positions.size(); ++i) v(static_cast<Eigen::Index>(i), 0) = positions[i];
  return WordEmbeddingTable(words, v);
}

}  // namespace

// --- piecewise mechanism ----------------------------------------------------

TEST_CASE("piecewise bound and band follow the closed form") {
  for (double eps : {0.5, 1.0, 5.0}) {
    const double e2 = std::exp(eps / 2);
    const double c = (e2 + 1) / (e2 - 1);
    CHECK(piecewise_bound(eps) == doctest::Approx(c).epsilon(1e-14));
    CHECK(piecewise_inside_probability(eps) == doctest::Approx(e2 / (e2 + 1)).epsilon(1e-14));
    for (double t : {-1.0, 0.0, 0.4, 1.0}) {
      const auto [l, r] = piecewise_band(t, eps);
      CHECK(r - l == doctest::Approx(c - 1).epsilon(1e-12));
      CHECK(l >= -c - 1e-12);
      CHECK(r <= c + 1e-12);
      CHECK(l <= t + 1e-12);
      CHECK(r >= t - 1e-12);
    }
  }
}

TEST_CASE("piecewise mechanism is unbiased at the default per-slot budget") {
  Rng rng(11);
  const double eps = 5.0 / 6.0;
  double sum = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += piecewise_perturb(0.5, eps, rng);
  CHECK(std::abs(sum / n - 0.5) <= 0.02);
}

TEST_CASE("piecewise mechanism concentrates for huge budgets") {
  Rng rng(3);
  int close = 0;
  for (int i = 0; i < 10000; ++i)
    if (std::abs(piecewise_perturb(0.5, 1e6, rng) - 0.5) <= 0.001) ++close;
  CHECK(close >= 9990);
}

TEST_CASE("piecewise unbiasedness and range over the grid") {
  const PropertyResult r = check_pm_unbiased(100000, 2);
  INFO(r.detail);
  CHECK(r.pass);
}

// --- randomized response ----------------------------------------------------

TEST_CASE("randomized response probabilities") {
  CHECK(rr_keep_probability(1e-12, 2) == doctest::Approx(0.5));
  CHECK(rr_keep_probability(std::log(3.0), 2) == doctest::Approx(0.75));
  const PropertyResult r = check_rr_ratio();
  INFO(r.detail);
  CHECK(r.pass);

  Rng rng(8);
  int kept = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) kept += randomized_response(2, 4, 1.0, rng) == 2;
  const double p = rr_keep_probability(1.0, 4);
  CHECK(std::abs(kept / static_cast<double>(n) - p) < 4 * std::sqrt(p * (1 - p) / n));
  CHECK_THROWS_AS(randomized_response(4, 4, 1.0, rng), Error);
}

TEST_CASE("attribute perturbation is nearly exact for huge budgets") {
  SynthConfig cfg;
  cfg.users = 30;
  const HeteroGraph g = synth_graph(cfg);
  Rng rng(4);
  for (std::size_t u = 0; u < g.user_count(); ++u) {
    const AttributeVector out = perturb_attributes(g.schema, g.attrs[u], 1e6 * 6, rng);
    for (std::size_t s = 0; s < g.schema.size(); ++s)
      CHECK(std::abs(out.values[s] - g.attrs[u].values[s]) <= 0.001);
  }
}

// --- edge filter ------------------------------------------------------------

TEST_CASE("laplace survival and filter threshold solver") {
  CHECK(laplace_survival(0.0, 2.0) == doctest::Approx(0.5));
  CHECK(laplace_survival(2.0, 1.0) == doctest::Approx(0.5 * std::exp(-2.0)));
  CHECK(laplace_survival(-2.0, 1.0) == doctest::Approx(1 - 0.5 * std::exp(-2.0)));

  for (double target : {50.0, 200.0, 900.0}) {
    const double cells = 4950, m = 200, eps = 9.0;
    const double theta = solve_filter_threshold(m, cells, target, eps);
    CHECK(filter_expected_edges(m, cells, theta, eps) == doctest::Approx(target).epsilon(1e-6));
  }
  CHECK(std::isinf(solve_filter_threshold(10, 100, 0, 1.0)));
}

TEST_CASE("edge filter keeps the graph for huge budgets") {
  Rng rng(1);
  std::vector<Edge> edges;
  for (UserIndex i = 0; i + 1 < 50; ++i) edges.emplace_back(i, i + 1);
  const UserGraph g(50, edges);
  int same = 0;
  for (int t = 0; t < 20; ++t) same += perturb_edges(g, 1e4, rng) == g;
  CHECK(same == 20);

  const UserGraph empty(30, {});
  int still_empty = 0;
  for (int t = 0; t < 20; ++t) still_empty += perturb_edges(empty, 1e4, rng).m() == 0;
  CHECK(still_empty == 20);
}

TEST_CASE("edge filter expectation and simplicity") {
  const PropertyResult r = check_edge_filter_expectation(100, 200, 10.0, 300, 5);
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("edge filter statistics are consistent") {
  Rng rng(2);
  std::vector<Edge> edges;
  for (UserIndex i = 0; i < 40; ++i) edges.emplace_back(i, i + 1);
  const UserGraph g(41, edges);
  EdgeFilterStats st;
  const UserGraph out = perturb_edges(g, 10.0, rng, &st);
  CHECK(st.n == 41);
  CHECK(st.m == 40);
  CHECK(st.cells == doctest::Approx(41.0 * 40 / 2));
  CHECK(st.eps_count + st.eps_filter == doctest::Approx(10.0));
  CHECK(st.eps_count == doctest::Approx(10.0 * kEdgeCountShare));
  CHECK(st.kept + st.added == out.m());
}

// --- text -------------------------------------------------------------------

TEST_CASE("text mechanism matches direct evaluation on a line vocabulary") {
  const auto vocab = line_vocab({"a", "b", "c"}, {0, 1, 10});
  const TextSanitizer mech(vocab, 2.0);
  const auto p = mech.distribution(0);
  CHECK(p[1] / p[2] == doctest::Approx(std::exp(9.0)).epsilon(1e-12));
  // Direct normalization: weights exp(-eps/2 * d) = 1, e^-1, e^-10.
  const double z = 1 + std::exp(-1.0) + std::exp(-10.0);
  CHECK(p[0] == doctest::Approx(1 / z).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(std::exp(-1.0) / z).epsilon(1e-14));
}

TEST_CASE("text mechanism limits") {
  const auto vocab = line_vocab({"a", "b", "c"}, {0, 1, 10});
  const TextSanitizer flat(vocab, 0.0);
  for (std::size_t x = 0; x < 3; ++x)
    for (double q : flat.distribution(x)) CHECK(q == doctest::Approx(1.0 / 3));

  const auto single = line_vocab({"only"}, {0.5});
  TextSanitizer one(single, 3.0);
  Rng rng(1);
  const std::vector<std::string> tokens{"only", "unknown", "only"};
  CHECK(one.sanitize(tokens, rng) == std::vector<std::string>{"only", "only", "only"});
  CHECK(one.counters().out_of_vocabulary == 1);

  CHECK_THROWS_AS(TextSanitizer(vocab, -1.0), Error);
}

TEST_CASE("text mechanism metric-DP ratio and normalization") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto ratio = check_mdp_ratio({0.5, 2.0, 7.5}, seed);
    INFO(ratio.detail);
    CHECK(ratio.pass);
    const auto norm = check_mdp_normalization({0.5, 2.0, 7.5}, seed);
    INFO(norm.detail);
    CHECK(norm.pass);
  }
}

TEST_CASE("text sampling follows the distribution") {
  const auto vocab = line_vocab({"a", "b", "c"}, {0, 0.5, 3});
  TextSanitizer mech(vocab, 1.0);
  const auto p = mech.distribution(1);
  Rng rng(21);
  std::vector<int> counts(3, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[mech.sample(1, rng)];
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(counts[k] / static_cast<double>(n) - p[k]) < 4 * std::sqrt(p[k] * (1 - p[k]) / n));
}

// --- composition ------------------------------------------------------------

TEST_CASE("sanitize_graph with huge budgets leaves the graph almost unchanged") {
  SynthConfig cfg;
  cfg.users = 60;
  const HeteroGraph g = synth_graph(cfg);
  const auto words = train_word_vectors(g, SkipGramConfig{});
  PrivacyBudget b{1e7, 1e7, 1e7};
  const HeteroGraph out = sanitize_graph(g, b, words, 3);
  CHECK(out.friendships == g.friendships);
  CHECK(out.post_tokens == g.post_tokens);
  for (std::size_t u = 0; u < g.user_count(); ++u)
    for (std::size_t s = 0; s < g.schema.size(); ++s)
      CHECK(std::abs(out.attrs[u].values[s] - g.attrs[u].values[s]) <= 0.001);
}

TEST_CASE("sanitize_graph preserves ids, write edges and labels and is deterministic") {
  SynthConfig cfg;
  cfg.users = 60;
  const HeteroGraph g = synth_graph(cfg);
  const auto words = train_word_vectors(g, SkipGramConfig{});
  const PrivacyBudget b;
  SanitizeReport rep;
  const HeteroGraph out = sanitize_graph(g, b, words, 3, &rep);
  CHECK(out.user_ids == g.user_ids);
  CHECK(out.post_ids == g.post_ids);
  CHECK(out.post_author == g.post_author);
  CHECK(out.interests == g.interests);
  CHECK(out.gender == g.gender);
  CHECK(out.occupation == g.occupation);
  CHECK(rep.budget.eps_a == b.eps_a);
  CHECK(rep.budget.eps_g == b.eps_g);
  CHECK(rep.budget.eps_t == b.eps_t);
  CHECK(rep.eps_per_slot == doctest::Approx(b.eps_a / static_cast<double>(g.schema.size())));

  const HeteroGraph again = sanitize_graph(g, b, words, 3);
  CHECK(test::graph_to_text(again) == test::graph_to_text(out));
  const HeteroGraph other = sanitize_graph(g, b, words, 4);
  CHECK(test::graph_to_text(other) != test::graph_to_text(out));

  // The sanitized graph survives a save/load round trip.
  CHECK(test::graph_from_text(test::graph_to_text(out)) == out);
}

TEST_CASE("budgets must be positive") {
  CHECK_THROWS_AS((PrivacyBudget{0, 1, 1}.validate()), Error);
  CHECK_THROWS_AS((PrivacyBudget{1, -1, 1}.validate()), Error);
  CHECK_THROWS_AS((PrivacyBudget{1, 1, std::numeric_limits<double>::infinity()}.validate()), Error);
  CHECK_NOTHROW(PrivacyBudget{}.validate());
}

// --- TMR --------------------------------------------------------------------

TEST_CASE("TMR values from published precisions") {
  const TmrReport r = compute_tmr({0.5, 0.453, 0.463}, {0.5, 0.508, 0.569}, {0.5, 0.102, 0.149});
  CHECK(r[DataType::kAttribute].tmr == doctest::Approx(0.5));
  CHECK(std::abs(r[DataType::kFriendship].tmr - 0.743) <= 0.001);
  CHECK(std::abs(r[DataType::kPosts].tmr - 0.645) <= 0.001);
  CHECK_THROWS_AS(compute_tmr({0.5, 0.5, 0.5}, {0, 0.5, 0.5}, {0, 0.5, 0.5}), Error);
  CHECK_THROWS_AS(compute_tmr({1.5, 0.5, 0.5}, {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}), Error);
}

TEST_CASE("budget allocation is proportional to TMR") {
  TmrReport equal;
  for (auto& e : equal.entries) e.tmr = 0.4;
  const PrivacyBudget b = allocate_budgets(equal, 9);
  CHECK(b.eps_a == doctest::Approx(3));
  CHECK(b.eps_g == doctest::Approx(3));
  CHECK(b.eps_t == doctest::Approx(3));

  TmrReport fsq;
  fsq.entries[0].tmr = 0.287;
  fsq.entries[1].tmr = 0.743;
  fsq.entries[2].tmr = 0.645;
  const PrivacyBudget f = allocate_budgets(fsq, 22.5);
  CHECK(std::abs(f.eps_a - 3.855) <= 0.001);
  CHECK(std::abs(f.eps_g - 9.981) <= 0.001);
  CHECK(std::abs(f.eps_t - 8.664) <= 0.001);

  TmrReport dominant;
  dominant.entries[0].tmr = 1;
  dominant.entries[1].tmr = 1e-9;
  dominant.entries[2].tmr = 1e-9;
  CHECK(std::abs(allocate_budgets(dominant, 10).eps_a - 10) <= 1e-6);

  CHECK_THROWS_AS(allocate_budgets(equal, 0), Error);
}
