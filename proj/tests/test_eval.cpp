#include <doctest.h>

#include <cmath>

#include "dpfuse/error.hpp"
#include "dpfuse/eval.hpp"
#include "dpfuse/rng.hpp"
#include "helpers.hpp"

using namespace dpfuse;
using dpfuse::test::labelled_users;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

EmbeddingTable table(const HeteroGraph& g, Matrix x) { return EmbeddingTable(g.user_ids, std::move(x)); }

}  // namespace

TEST_CASE("micro scores on hand-counted cases") {
  const std::vector<std::vector<int>> truth{{1, 2}, {2}};
  Metrics m = micro_scores(truth, truth);
  CHECK(m.precision == 1.0);
  CHECK(m.micro_f1 == 1.0);

  m = micro_scores({{1}, {1, 2}}, truth);
  CHECK(m.micro_f1 == doctest::Approx(4.0 / 6.0));
  CHECK(m.precision == doctest::Approx(2.0 / 3.0));

  m = micro_scores({{}, {}}, truth);
  CHECK(m.precision == 0.0);
  CHECK(m.micro_f1 == 0.0);

  CHECK(micro_scores({{}}, {{}}).micro_f1 == 1.0);
  CHECK_THROWS_AS(micro_scores({{}}, truth), Error);
}

TEST_CASE("gini impurity") {
  CHECK(gini({4, 0}) == 0.0);
  CHECK(gini({2, 2}) == doctest::Approx(0.5));
  CHECK(gini({1, 1, 1}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("summaries use the sample standard deviation") {
  const MetricSummary s = summarize({1, 2, 3, 4});
  CHECK(s.mean == doctest::Approx(2.5));
  CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(summarize({0.7, 0.7, 0.7}).std == 0.0);
  CHECK(summarize({0.4}).std == 0.0);
}

TEST_CASE("an unbounded tree memorizes consistent training data") {
  Rng rng(1);
  const Matrix x = random_matrix(200, 3, rng);
  std::vector<int> y(200);
  for (auto& v : y) v = static_cast<int>(rng.index(3));
  DecisionTree tree;
  TreeConfig cfg;
  cfg.max_depth = 0;
  cfg.min_leaf = 1;
  tree.fit(x, y, 3, cfg);
  CHECK(tree.predict(x) == y);
}

TEST_CASE("logistic regression gradient matches central differences") {
  Rng rng(2);
  const Matrix x = random_matrix(30, 4, rng);
  std::vector<int> y(30);
  for (auto& v : y) v = static_cast<int>(rng.index(2));
  Vector w(4);
  for (int i = 0; i < 4; ++i) w(i) = rng.normal();
  const double b = 0.3, l2 = 0.05, h = 1e-6;
  Vector gw;
  double gb = 0;
  LogisticRegression::loss(w, b, x, y, l2, &gw, &gb);
  for (int i = 0; i < 4; ++i) {
    Vector wp = w, wm = w;
    wp(i) += h;
    wm(i) -= h;
    const double fd = (LogisticRegression::loss(wp, b, x, y, l2) -
                       LogisticRegression::loss(wm, b, x, y, l2)) / (2 * h);
    CHECK(std::abs(fd - gw(i)) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
  const double fdb = (LogisticRegression::loss(w, b + h, x, y, l2) -
                      LogisticRegression::loss(w, b - h, x, y, l2)) / (2 * h);
  CHECK(std::abs(fdb - gb) <= 1e-5 * std::max(1.0, std::abs(fdb)));
}

TEST_CASE("one-hot interest embeddings are classified perfectly") {
  HeteroGraph g = labelled_users(100);
  Matrix x = Matrix::Zero(100, 4);
  for (int u = 0; u < 100; ++u) {
    std::vector<int> labels{u % 4};
    if (u % 3 == 0) labels.push_back((u + 1) % 4);
    for (int l : labels) x(u, l) = 1;
    g.interests[u] = labels;
  }
  const EvalReport r = predict_interests(table(g, x), g, EvalProtocol{}, TreeConfig{});
  CHECK(r.metrics.at("precision").mean == 1.0);
  CHECK(r.metrics.at("micro_f1").mean == 1.0);
  CHECK(r.repeats == 5);
}

TEST_CASE("random embeddings give chance-level interest scores") {
  HeteroGraph g = labelled_users(500);
  for (int u = 0; u < 500; ++u) g.interests[u] = std::vector<int>{u % 2};
  Rng rng(3);
  const EmbeddingTable e = table(g, random_matrix(500, 8, rng));
  const EvalReport r = predict_interests(e, g, EvalProtocol{}, TreeConfig{});
  const double f1 = r.metrics.at("micro_f1").mean;
  CHECK(f1 >= 0.3);
  CHECK(f1 <= 0.7);
  const EvalReport again = predict_interests(e, g, EvalProtocol{}, TreeConfig{});
  CHECK(again.to_json() == r.to_json());
}

TEST_CASE("gender attack") {
  HeteroGraph g = labelled_users(1000);
  Rng rng(4);
  Matrix x = random_matrix(1000, 6, rng);
  for (int u = 0; u < 1000; ++u) g.gender[u] = u % 2;

  const EvalReport chance = attack_gender(table(g, x), g, EvalProtocol{}, LogRegConfig{});
  CHECK(std::abs(chance.metrics.at("precision").mean - 0.5) <= 0.05);

  for (int u = 0; u < 1000; ++u) x(u, 2) = u % 2 ? 1.0 : -1.0;
  const EvalReport leak = attack_gender(table(g, x), g, EvalProtocol{}, LogRegConfig{});
  CHECK(leak.metrics.at("precision").mean >= 0.99);
}

TEST_CASE("occupation attack") {
  HeteroGraph g = labelled_users(1000);
  Rng rng(5);
  const int c = 4;
  Matrix onehot = Matrix::Zero(1000, c);
  for (int u = 0; u < 1000; ++u) {
    g.occupation[u] = u % c;
    onehot(u, u % c) = 1;
  }
  CHECK(attack_occupation(table(g, onehot), g, EvalProtocol{}, TreeConfig{})
            .metrics.at("precision")
            .mean == 1.0);
  const EmbeddingTable random = table(g, random_matrix(1000, 6, rng));
  const EvalReport r = attack_occupation(random, g, EvalProtocol{}, TreeConfig{});
  CHECK(std::abs(r.metrics.at("precision").mean - 1.0 / c) <= 0.05);
  CHECK(attack_occupation(random, g, EvalProtocol{}, TreeConfig{}).to_json() == r.to_json());
}

TEST_CASE("metric values lie in the unit interval and unknown users are rejected") {
  HeteroGraph g = labelled_users(50);
  Rng rng(6);
  for (int u = 0; u < 50; ++u) g.interests[u] = std::vector<int>{static_cast<int>(rng.index(5))};
  const EvalReport r =
      predict_interests(table(g, random_matrix(50, 3, rng)), g, EvalProtocol{}, TreeConfig{});
  for (const auto& [name, s] : r.metrics)
    for (double v : s.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  const EmbeddingTable partial({"u0"}, Matrix::Ones(1, 3));
  CHECK_THROWS_AS(user_rows(partial, g), Error);
}
