#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpfuse/embedding.hpp"
#include "dpfuse/graph.hpp"
#include "dpfuse/rng.hpp"

namespace dpfuse {

enum class Activation { kIdentity, kRelu };

Activation parse_activation(const std::string& name);
const char* to_string(Activation a);

void activate_inplace(Matrix& m, Activation a);
/// Multiplies `grad` by the activation derivative evaluated at `pre`.
void activation_backward(Matrix& grad, const Matrix& pre, Activation a);

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Ordered (u, u') positive pair.
using UserPair = std::pair<UserIndex, UserIndex>;

/// Both orientations of every edge.
std::vector<UserPair> positive_pairs(const UserGraph& g);

/// Draws users with probability proportional to degree^exponent.
class NegativeSampler {
 public:
  NegativeSampler(const UserGraph& g, double exponent = 0.75);
  UserIndex operator()(Rng& rng) const;
  bool empty() const { return empty_; }

 private:
  mutable std::discrete_distribution<UserIndex> dist_;
  bool empty_ = true;
};

/// q negatives per pair, stored pair-major.
struct NegativeSet {
  std::size_t per_pair = 0;
  std::vector<UserIndex> ids;
  std::span<const UserIndex> of(std::size_t pair) const {
    return {ids.data() + pair * per_pair, per_pair};
  }
};
NegativeSet draw_negatives(const NegativeSampler& sampler, std::size_t pairs,
                           std::size_t per_pair, Rng& rng);

/// Mean over pairs of -log s(z_u.z_u') - sum_q log s(-z_u.z_n). With Q
/// negatives this is the Q-scaled expectation form. Writes dL/dz when `dz` is
/// non-null (dz is resized and overwritten).
double graph_loss(const Matrix& z, std::span<const UserPair> pairs,
                  const NegativeSet& negatives, Matrix* dz = nullptr);

/// Samples Q negatives per pair from `sampler` and evaluates graph_loss.
double loss_graph(const Matrix& z, std::span<const UserPair> pairs,
                  const NegativeSampler& sampler, std::size_t q, Rng& rng);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace dpfuse
