#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpfuse/embedding.hpp"
#include "dpfuse/graph.hpp"

namespace dpfuse {

struct TreeConfig {
  std::size_t max_depth = 10;  // 0 = unbounded
  std::size_t min_leaf = 2;

  void validate() const;
  nlohmann::json to_json() const;
};

struct LogRegConfig {
  double learning_rate = 0.5;
  std::size_t epochs = 300;
  double l2 = 1e-3;

  void validate() const;
  nlohmann::json to_json() const;
};

/// CART classifier with Gini impurity and axis-aligned threshold splits.
class DecisionTree {
 public:
  void fit(const Matrix& x, const std::vector<int>& y, int classes, const TreeConfig& cfg);
  int predict_row(const Eigen::RowVectorXd& row) const;
  std::vector<int> predict(const Matrix& x) const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int feature = -1;  // -1 for leaves
    double threshold = 0;
    int left = -1, right = -1;
    int label = 0;
  };
  int build(const Matrix& x, const std::vector<int>& y, std::vector<std::size_t>& idx,
            std::size_t begin, std::size_t end, std::size_t depth, const TreeConfig& cfg);

  std::vector<Node> nodes_;
  int classes_ = 0;
};

/// Gini impurity of a label multiset given class counts.
double gini(const std::vector<std::size_t>& counts);

/// Binary logistic regression on standardized features, full-batch gradient
/// descent, L2 penalty on the weights (not the bias).
class LogisticRegression {
 public:
  void fit(const Matrix& x, const std::vector<int>& y, const LogRegConfig& cfg);
  double probability(const Eigen::RowVectorXd& row) const;
  std::vector<int> predict(const Matrix& x) const;

  /// Mean cross-entropy plus (l2/2)||w||^2 on already standardized x, with
  /// the gradient w.r.t. (w, b).
  static double loss(const Vector& w, double b, const Matrix& x, const std::vector<int>& y,
                     double l2, Vector* grad_w = nullptr, double* grad_b = nullptr);

 private:
  Eigen::RowVectorXd mean_, scale_;
  Vector w_;
  double b_ = 0;
  int constant_ = -1;  // >= 0 when trained on a single class
};

struct Metrics {
  double precision = 0;
  double micro_f1 = 0;
};

/// Micro-averaged precision TP/(TP+FP) and F1 2TP/(2TP+FP+FN) over all
/// (user, label) cells. Precision is 0 when nothing is predicted.
Metrics micro_scores(const std::vector<std::vector<int>>& predicted,
                     const std::vector<std::vector<int>>& truth);

struct MetricSummary {
  double mean = 0;
  double std = 0;  // sample standard deviation; 0 for one repeat
  std::vector<double> values;
};
MetricSummary summarize(const std::vector<double>& values);

struct EvalProtocol {
  double train_ratio = 0.8;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  void validate() const;
};

struct EvalReport {
  std::string task;
  std::map<std::string, MetricSummary> metrics;  // "precision", "micro_f1"
  std::size_t repeats = 0;
  std::vector<std::uint64_t> seeds;
  nlohmann::json config;

  nlohmann::json to_json() const;
};

/// Rows of `emb` for the graph's users in user order; unknown users throw.
Matrix user_rows(const EmbeddingTable& emb, const HeteroGraph& g);

/// Binary relevance: one tree per interest category.
Metrics evaluate_interests(const Matrix& x, const std::vector<std::vector<int>>& labels,
                           const LabelSplit& split, const TreeConfig& cfg);
/// Single-label classification scored as micro precision / F1.
Metrics evaluate_gender(const Matrix& x, const std::vector<int>& labels,
                        const LabelSplit& split, const LogRegConfig& cfg);
Metrics evaluate_occupation(const Matrix& x, const std::vector<int>& labels,
                            const LabelSplit& split, const TreeConfig& cfg);

EvalReport predict_interests(const EmbeddingTable& emb, const HeteroGraph& g,
                             const EvalProtocol& protocol, const TreeConfig& cfg);
EvalReport attack_gender(const EmbeddingTable& emb, const HeteroGraph& g,
                         const EvalProtocol& protocol, const LogRegConfig& cfg);
EvalReport attack_occupation(const EmbeddingTable& emb, const HeteroGraph& g,
                             const EvalProtocol& protocol, const TreeConfig& cfg);

}  // namespace dpfuse
