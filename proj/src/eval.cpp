#include "dpfuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>

#include "dpfuse/error.hpp"
#include "dpfuse/log.hpp"
#include "dpfuse/nn.hpp"

namespace dpfuse {

void TreeConfig::validate() const {
  if (min_leaf == 0) throw usage_error("tree: min samples per leaf must be positive");
}

nlohmann::json TreeConfig::to_json() const {
  return {{"max_depth", max_depth}, {"min_leaf", min_leaf}, {"criterion", "gini"}};
}

void LogRegConfig::validate() const {
  if (!(learning_rate > 0.0) || epochs == 0 || !(l2 >= 0.0))
    throw usage_error("logistic regression: learning rate and epochs must be positive, l2 >= 0");
}

nlohmann::json LogRegConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"epochs", epochs}, {"l2", l2}};
}

double gini(const std::vector<std::size_t>& counts) {
  const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (n == 0) return 0;
  double s = 1.0;
  for (std::size_t c : counts) s -= (static_cast<double>(c) / n) * (static_cast<double>(c) / n);
  return s;
}

void DecisionTree::fit(const Matrix& x, const std::vector<int>& y, int classes,
                       const TreeConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw validation_error("tree: feature and label counts differ");
  if (y.empty()) throw validation_error("tree: no training rows");
  if (classes <= 0) throw validation_error("tree: class count must be positive");
  for (int v : y)
    if (v < 0 || v >= classes) throw validation_error("tree: label out of range");
  classes_ = classes;
  nodes_.clear();
  std::vector<std::size_t> idx(y.size());
  std::iota(idx.begin(), idx.end(), 0);
  build(x, y, idx, 0, idx.size(), 0, cfg);
}

int DecisionTree::build(const Matrix& x, const std::vector<int>& y, std::vector<std::size_t>& idx,
                        std::size_t begin, std::size_t end, std::size_t depth,
                        const TreeConfig& cfg) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes_), 0);
  for (std::size_t i = begin; i < end; ++i) ++counts[static_cast<std::size_t>(y[idx[i]])];
  const int node = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_[static_cast<std::size_t>(node)].label =
      static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());

  const std::size_t n = end - begin;
  const bool pure = *std::max_element(counts.begin(), counts.end()) == n;
  if (pure || (cfg.max_depth != 0 && depth >= cfg.max_depth) || n < 2 * cfg.min_leaf) return node;

  // Best threshold over all features; ties keep the first candidate found.
  double best_impurity = std::numeric_limits<double>::infinity();
  int best_feature = -1;
  double best_threshold = 0;
  std::vector<std::pair<double, int>> col(n);
  std::vector<std::size_t> left(counts.size()), right(counts.size());
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    for (std::size_t i = 0; i < n; ++i)
      col[i] = {x(static_cast<Eigen::Index>(idx[begin + i]), f), y[idx[begin + i]]};
    std::sort(col.begin(), col.end());
    std::fill(left.begin(), left.end(), 0);
    right = counts;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      ++left[static_cast<std::size_t>(col[i].second)];
      --right[static_cast<std::size_t>(col[i].second)];
      const std::size_t nl = i + 1, nr = n - nl;
      if (col[i].first == col[i + 1].first || nl < cfg.min_leaf || nr < cfg.min_leaf) continue;
      const double imp = (static_cast<double>(nl) * gini(left) + static_cast<double>(nr) * gini(right)) /
                         static_cast<double>(n);
      if (imp < best_impurity) {
        best_impurity = imp;
        best_feature = static_cast<int>(f);
        best_threshold = col[i].first + (col[i + 1].first - col[i].first) / 2;
        if (!(best_threshold < col[i + 1].first)) best_threshold = col[i].first;
      }
    }
  }
  if (best_feature < 0) return node;

  const auto mid = std::partition(
      idx.begin() + static_cast<std::ptrdiff_t>(begin), idx.begin() + static_cast<std::ptrdiff_t>(end),
      [&](std::size_t r) { return x(static_cast<Eigen::Index>(r), best_feature) <= best_threshold; });
  const std::size_t split = static_cast<std::size_t>(mid - idx.begin());
  const int l = build(x, y, idx, begin, split, depth + 1, cfg);
  const int r = build(x, y, idx, split, end, depth + 1, cfg);
  Node& nd = nodes_[static_cast<std::size_t>(node)];
  nd.feature = best_feature;
  nd.threshold = best_threshold;
  nd.left = l;
  nd.right = r;
  return node;
}

int DecisionTree::predict_row(const Eigen::RowVectorXd& row) const {
  if (nodes_.empty()) throw validation_error("tree: predict before fit");
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const Node& nd = nodes_[i];
    i = static_cast<std::size_t>(row(nd.feature) <= nd.threshold ? nd.left : nd.right);
  }
  return nodes_[i].label;
}

std::vector<int> DecisionTree::predict(const Matrix& x) const {
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = predict_row(x.row(i));
  return out;
}

double LogisticRegression::loss(const Vector& w, double b, const Matrix& x,
                                const std::vector<int>& y, double l2, Vector* grad_w,
                                double* grad_b) {
  const double n = static_cast<double>(x.rows());
  const Vector z = (x * w).array() + b;
  double total = 0;
  Vector r(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double t = y[static_cast<std::size_t>(i)];
    total -= t * log_sigmoid(z(i)) + (1.0 - t) * log_sigmoid(-z(i));
    r(i) = (sigmoid(z(i)) - t) / n;
  }
  if (grad_w) *grad_w = x.transpose() * r + l2 * w;
  if (grad_b) *grad_b = r.sum();
  return total / n + 0.5 * l2 * w.squaredNorm();
}

void LogisticRegression::fit(const Matrix& x, const std::vector<int>& y, const LogRegConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(x.rows()) != y.size() || y.empty())
    throw validation_error("logistic regression: feature and label counts differ or are empty");
  for (int v : y)
    if (v != 0 && v != 1) throw validation_error("logistic regression: labels must be 0 or 1");
  mean_ = x.colwise().mean();
  const Matrix c = x.rowwise() - mean_;
  scale_ = (c.array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index j = 0; j < scale_.size(); ++j)
    if (!(scale_(j) > 1e-12)) scale_(j) = 1.0;
  const Matrix xs = c.array().rowwise() / scale_.array();

  const auto positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  constant_ = -1;
  if (positives == 0 || positives == y.size()) {
    warn("logistic regression: training data has a single class; predicting the majority class");
    constant_ = positives == 0 ? 0 : 1;
    return;
  }
  w_ = Vector::Zero(x.cols());
  b_ = 0;
  Vector gw;
  double gb = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double l = loss(w_, b_, xs, y, cfg.l2, &gw, &gb);
    if (!std::isfinite(l)) throw numeric_error("logistic regression loss is not finite");
    w_ -= cfg.learning_rate * gw;
    b_ -= cfg.learning_rate * gb;
  }
}

double LogisticRegression::probability(const Eigen::RowVectorXd& row) const {
  if (constant_ >= 0) return constant_;
  if (w_.size() == 0) throw validation_error("logistic regression: predict before fit");
  const Eigen::RowVectorXd s = (row - mean_).array() / scale_.array();
  return sigmoid(s.dot(w_.transpose()) + b_);
}

std::vector<int> LogisticRegression::predict(const Matrix& x) const {
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out[static_cast<std::size_t>(i)] = probability(x.row(i)) >= 0.5 ? 1 : 0;
  return out;
}

Metrics micro_scores(const std::vector<std::vector<int>>& predicted,
                     const std::vector<std::vector<int>>& truth) {
  if (predicted.size() != truth.size())
    throw validation_error("metrics: prediction and truth cover different user counts");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t u = 0; u < truth.size(); ++u) {
    const std::set<int> p(predicted[u].begin(), predicted[u].end());
    const std::set<int> t(truth[u].begin(), truth[u].end());
    for (int v : p) (t.count(v) ? tp : fp) += 1;
    for (int v : t)
      if (!p.count(v)) ++fn;
  }
  Metrics m;
  m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const std::size_t denom = 2 * tp + fp + fn;
  m.micro_f1 = denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  return m;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.values = values;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (std::adjacent_find(values.begin(), values.end(), std::not_equal_to<>()) == values.end()) {
    s.mean = values.front();  // identical repeats: exact mean, zero spread
  } else {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

void EvalProtocol::validate() const {
  if (!(train_ratio > 0.0 && train_ratio < 1.0))
    throw usage_error("evaluation train ratio must lie in (0, 1)");
  if (seeds.empty()) throw usage_error("evaluation needs at least one repeat seed");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json metrics_json = nlohmann::json::object();
  for (const auto& [name, s] : metrics)
    metrics_json[name] = {{"mean", s.mean}, {"std", s.std}, {"values", s.values}};
  return {{"task", task}, {"metrics", metrics_json}, {"repeats", repeats},
          {"seeds", seeds}, {"config", config}};
}

Matrix user_rows(const EmbeddingTable& emb, const HeteroGraph& g) {
  Matrix x(static_cast<Eigen::Index>(g.user_count()), static_cast<Eigen::Index>(emb.dim()));
  for (std::size_t u = 0; u < g.user_count(); ++u)
    x.row(static_cast<Eigen::Index>(u)) = emb.row(emb.index_of(g.user_ids[u]));
  return x;
}

namespace {

Matrix take_rows(const Matrix& x, const std::vector<UserIndex>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

void check_split(const Matrix& x, std::size_t labels, const LabelSplit& split) {
  if (static_cast<std::size_t>(x.rows()) != labels)
    throw validation_error("evaluation: embedding rows and labels differ in count");
  for (const auto* part : {&split.train, &split.test})
    for (UserIndex u : *part)
      if (u >= labels) throw validation_error("evaluation: split index out of range");
  if (split.train.empty() || split.test.empty())
    throw validation_error("evaluation: train and test splits must be non-empty");
}

Metrics single_label_scores(const std::vector<int>& predicted, const std::vector<int>& truth) {
  std::vector<std::vector<int>> p, t;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    p.push_back({predicted[i]});
    t.push_back({truth[i]});
  }
  return micro_scores(p, t);
}

template <typename T>
std::vector<UserIndex> labelled(const std::vector<std::optional<T>>& labels) {
  std::vector<UserIndex> ids;
  for (std::size_t u = 0; u < labels.size(); ++u)
    if (labels[u]) ids.push_back(static_cast<UserIndex>(u));
  return ids;
}

template <typename Fn>
EvalReport repeat(const std::string& task, const EvalProtocol& protocol,
                  const std::vector<UserIndex>& ids, nlohmann::json config, Fn&& run) {
  protocol.validate();
  if (ids.size() < 2) throw validation_error(task + ": fewer than two labelled users");
  std::vector<double> precision, f1;
  for (std::uint64_t seed : protocol.seeds) {
    const Metrics m = run(split_ids(ids, protocol.train_ratio, seed));
    precision.push_back(m.precision);
    f1.push_back(m.micro_f1);
  }
  EvalReport r;
  r.task = task;
  r.metrics["precision"] = summarize(precision);
  r.metrics["micro_f1"] = summarize(f1);
  r.repeats = protocol.seeds.size();
  r.seeds = protocol.seeds;
  config["train_ratio"] = protocol.train_ratio;
  r.config = std::move(config);
  return r;
}

}  // namespace

Metrics evaluate_interests(const Matrix& x, const std::vector<std::vector<int>>& labels,
                           const LabelSplit& split, const TreeConfig& cfg) {
  check_split(x, labels.size(), split);
  const Matrix xtr = take_rows(x, split.train);
  const Matrix xte = take_rows(x, split.test);
  std::vector<std::vector<int>> predicted(split.test.size()), truth(split.test.size());
  for (std::size_t i = 0; i < split.test.size(); ++i) truth[i] = labels[split.test[i]];
  for (int c = 0; c < kInterestCategories; ++c) {
    std::vector<int> y(split.train.size());
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      const auto& l = labels[split.train[i]];
      y[i] = std::find(l.begin(), l.end(), c) != l.end() ? 1 : 0;
    }
    if (std::find(y.begin(), y.end(), 1) == y.end()) {
      warn("interest category " + std::to_string(c) +
           " has no positive training examples; predicting negative");
      continue;
    }
    DecisionTree tree;
    tree.fit(xtr, y, 2, cfg);
    const auto pred = tree.predict(xte);
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == 1) predicted[i].push_back(c);
  }
  return micro_scores(predicted, truth);
}

Metrics evaluate_gender(const Matrix& x, const std::vector<int>& labels,
                        const LabelSplit& split, const LogRegConfig& cfg) {
  check_split(x, labels.size(), split);
  std::vector<int> ytr, yte;
  for (UserIndex u : split.train) ytr.push_back(labels[u]);
  for (UserIndex u : split.test) yte.push_back(labels[u]);
  LogisticRegression lr;
  lr.fit(take_rows(x, split.train), ytr, cfg);
  return single_label_scores(lr.predict(take_rows(x, split.test)), yte);
}

Metrics evaluate_occupation(const Matrix& x, const std::vector<int>& labels,
                            const LabelSplit& split, const TreeConfig& cfg) {
  check_split(x, labels.size(), split);
  std::vector<int> ytr, yte;
  for (UserIndex u : split.train) ytr.push_back(labels[u]);
  for (UserIndex u : split.test) yte.push_back(labels[u]);
  const int classes = 1 + std::max(*std::max_element(labels.begin(), labels.end()), 0);
  if (std::set<int>(ytr.begin(), ytr.end()).size() == 1)
    warn("occupation attack: training data has a single class; predicting the majority class");
  DecisionTree tree;
  tree.fit(take_rows(x, split.train), ytr, classes, cfg);
  return single_label_scores(tree.predict(take_rows(x, split.test)), yte);
}

EvalReport predict_interests(const EmbeddingTable& emb, const HeteroGraph& g,
                             const EvalProtocol& protocol, const TreeConfig& cfg) {
  const Matrix x = user_rows(emb, g);
  std::vector<std::vector<int>> labels(g.user_count());
  for (std::size_t u = 0; u < g.user_count(); ++u)
    if (g.interests[u]) labels[u] = *g.interests[u];
  return repeat("interest_prediction", protocol, labelled(g.interests),
                {{"classifier", "decision_tree"}, {"tree", cfg.to_json()}},
                [&](const LabelSplit& s) { return evaluate_interests(x, labels, s, cfg); });
}

EvalReport attack_gender(const EmbeddingTable& emb, const HeteroGraph& g,
                         const EvalProtocol& protocol, const LogRegConfig& cfg) {
  const Matrix x = user_rows(emb, g);
  std::vector<int> labels(g.user_count(), 0);
  for (std::size_t u = 0; u < g.user_count(); ++u)
    if (g.gender[u]) labels[u] = *g.gender[u];
  return repeat("gender_attack", protocol, labelled(g.gender),
                {{"classifier", "logistic_regression"}, {"logreg", cfg.to_json()}},
                [&](const LabelSplit& s) { return evaluate_gender(x, labels, s, cfg); });
}

EvalReport attack_occupation(const EmbeddingTable& emb, const HeteroGraph& g,
                             const EvalProtocol& protocol, const TreeConfig& cfg) {
  const Matrix x = user_rows(emb, g);
  std::vector<int> labels(g.user_count(), 0);
  for (std::size_t u = 0; u < g.user_count(); ++u)
    if (g.occupation[u]) labels[u] = *g.occupation[u];
  return repeat("occupation_attack", protocol, labelled(g.occupation),
                {{"classifier", "decision_tree"}, {"tree", cfg.to_json()}},
                [&](const LabelSplit& s) { return evaluate_occupation(x, labels, s, cfg); });
}

}  // namespace dpfuse
