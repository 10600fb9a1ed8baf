#include "dpfuse/nn.hpp"

#include <algorithm>

#include "dpfuse/error.hpp"

namespace dpfuse {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "identity" || name == "linear") return Activation::kIdentity;
  throw usage_error("unknown activation '" + name + "'");
}

const char* to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "identity";
}

void activate_inplace(Matrix& m, Activation a) {
  if (a == Activation::kRelu) m = m.cwiseMax(0.0);
}

void activation_backward(Matrix& grad, const Matrix& pre, Activation a) {
  if (a == Activation::kRelu) grad = (pre.array() > 0.0).select(grad, 0.0);
}

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double r = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(cols, 1)));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-r, r);
  return m;
}

std::vector<UserPair> positive_pairs(const UserGraph& g) {
  std::vector<UserPair> pairs;
  pairs.reserve(2 * g.m());
  for (const auto& [a, b] : g.edges()) {
    pairs.emplace_back(a, b);
    pairs.emplace_back(b, a);
  }
  return pairs;
}

NegativeSampler::NegativeSampler(const UserGraph& g, double exponent) {
  std::vector<double> w(g.n());
  for (std::size_t u = 0; u < g.n(); ++u) {
    w[u] = std::pow(static_cast<double>(g.degree(static_cast<UserIndex>(u))), exponent);
    if (w[u] > 0) empty_ = false;
  }
  if (!empty_) dist_ = std::discrete_distribution<UserIndex>(w.begin(), w.end());
}

UserIndex NegativeSampler::operator()(Rng& rng) const {
  if (empty_) throw validation_error("negative sampler has no nodes with positive degree");
  return dist_(rng.engine());
}

NegativeSet draw_negatives(const NegativeSampler& sampler, std::size_t pairs,
                           std::size_t per_pair, Rng& rng) {
  NegativeSet s;
  s.per_pair = per_pair;
  s.ids.resize(pairs * per_pair);
  for (auto& id : s.ids) id = sampler(rng);
  return s;
}

double graph_loss(const Matrix& z, std::span<const UserPair> pairs,
                  const NegativeSet& negatives, Matrix* dz) {
  if (pairs.empty()) throw validation_error("graph loss needs at least one positive pair");
  if (negatives.ids.size() != pairs.size() * negatives.per_pair)
    throw validation_error("negative set does not match the pair list");
  const double scale = 1.0 / static_cast<double>(pairs.size());
  if (dz) dz->setZero(z.rows(), z.cols());
  double loss = 0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [u, v] = pairs[k];
    const auto zu = z.row(u);
    const double s = zu.dot(z.row(v));
    loss -= log_sigmoid(s);
    if (dz) {
      const double g = (sigmoid(s) - 1.0) * scale;
      dz->row(u) += g * z.row(v);
      dz->row(v) += g * zu;
    }
    for (UserIndex n : negatives.of(k)) {
      const double t = zu.dot(z.row(n));
      loss -= log_sigmoid(-t);
      if (dz) {
        const double g = sigmoid(t) * scale;
        dz->row(u) += g * z.row(n);
        dz->row(n) += g * zu;
      }
    }
  }
  return loss * scale;
}

double loss_graph(const Matrix& z, std::span<const UserPair> pairs,
                  const NegativeSampler& sampler, std::size_t q, Rng& rng) {
  if (pairs.empty()) throw validation_error("graph loss needs at least one positive pair");
  const NegativeSet neg = q > 0 ? draw_negatives(sampler, pairs.size(), q, rng) : NegativeSet{};
  return graph_loss(z, pairs, neg);
}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
    params[i]->array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

}  // namespace dpfuse
