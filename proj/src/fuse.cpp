#include "dpfuse/fuse.hpp"

#include <cmath>
#include <memory>

#include "dpfuse/error.hpp"
#include "dpfuse/log.hpp"
#include "dpfuse/rng.hpp"

namespace dpfuse {
namespace {

Matrix row_matrix(const Vector& v) { return v.transpose(); }

void check_dim(const Matrix& m, Eigen::Index cols, const char* what) {
  if (m.cols() != cols)
    throw validation_error(std::string(what) + ": expected dimension " + std::to_string(cols) +
                           ", got " + std::to_string(m.cols()));
}

}  // namespace

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "hierarchy") return FusionMode::kHierarchy;
  if (name == "iterative") return FusionMode::kIterative;
  throw usage_error("unknown fusion mode '" + name + "' (expected hierarchy or iterative)");
}

const char* to_string(FusionMode m) {
  return m == FusionMode::kHierarchy ? "hierarchy" : "iterative";
}

void FusionConfig::validate() const {
  if (hops == 0) throw usage_error("fusion hop depth k must be at least 1");
  if (!(anchor_weight >= 0.0) || !std::isfinite(anchor_weight))
    throw usage_error("fusion anchor weight alpha must be non-negative");
  if (output_dim == 0) throw usage_error("fusion output dimension must be positive");
  if (!(learning_rate > 0.0)) throw usage_error("fusion learning rate must be positive");
  if (negatives == 0) throw usage_error("fusion needs at least one negative per pair");
}

std::vector<Matrix*> FusionParams::parameters() {
  std::vector<Matrix*> out{&w12, &w21};
  for (auto& net : output)
    for (auto& m : net) out.push_back(&m);
  return out;
}

std::vector<NamedTensor> FusionParams::tensors() const {
  std::vector<NamedTensor> out{{"w12", w12}, {"w21", w21}};
  for (std::size_t net = 0; net < 2; ++net)
    for (std::size_t i = 0; i < output[net].size(); ++i)
      out.push_back({"out" + std::to_string(net + 1) + "." + std::to_string(i), output[net][i]});
  return out;
}

void FusionParams::validate(std::size_t dim) const {
  const auto d = static_cast<Eigen::Index>(dim);
  if (w12.rows() != d || w12.cols() != d || w21.rows() != d || w21.cols() != d)
    throw validation_error("fusion: cross-space maps must be " + std::to_string(dim) + "x" +
                           std::to_string(dim));
  if (hops == 0) throw validation_error("fusion: k must be at least 1");
  if (!(anchor_weight >= 0.0)) throw validation_error("fusion: alpha must be non-negative");
  for (const auto& net : output) {
    if (mode == FusionMode::kHierarchy) {
      if (net.size() != 1 || net[0].rows() != static_cast<Eigen::Index>(hops + 1) * d)
        throw validation_error("fusion: output map must have (k+1)*d rows");
    } else {
      if (net.size() != hops) throw validation_error("fusion: iterative mode needs k layer maps");
      Eigen::Index in = d;
      for (const auto& w : net) {
        if (w.rows() != in) throw validation_error("fusion: layer map shapes do not chain");
        in = w.cols();
      }
    }
  }
}

FusionParams init_fusion(std::size_t dim, const FusionConfig& cfg) {
  cfg.validate();
  Rng rng = Rng::substream(cfg.seed, StreamTag::kFuse);
  const auto d = static_cast<Eigen::Index>(dim);
  const auto out = static_cast<Eigen::Index>(cfg.output_dim);
  FusionParams p;
  p.hops = cfg.hops;
  p.anchor_weight = cfg.anchor_weight;
  p.activation = cfg.activation;
  p.mode = cfg.mode;
  // uniform_init takes (rows, cols) with cols as fan-in; transpose to get
  // (fan_in x fan_out) maps.
  p.w12 = uniform_init(d, d, rng);
  p.w21 = uniform_init(d, d, rng);
  for (auto& net : p.output) {
    if (cfg.mode == FusionMode::kHierarchy) {
      net.push_back(uniform_init(out, static_cast<Eigen::Index>(cfg.hops + 1) * d, rng).transpose());
    } else {
      for (std::size_t i = 0; i < cfg.hops; ++i)
        net.push_back(uniform_init(i + 1 == cfg.hops ? out : d, d, rng).transpose());
    }
  }
  return p;
}

SparseMatrix normalized_adjacency(const UserGraph& g) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(2 * g.m());
  for (const auto& [a, b] : g.edges()) {
    const double w = 1.0 / std::sqrt(static_cast<double>(g.degree(a)) *
                                     static_cast<double>(g.degree(b)));
    t.emplace_back(static_cast<int>(a), static_cast<int>(b), w);
    t.emplace_back(static_cast<int>(b), static_cast<int>(a), w);
  }
  SparseMatrix adj(static_cast<Eigen::Index>(g.n()), static_cast<Eigen::Index>(g.n()));
  adj.setFromTriplets(t.begin(), t.end());
  return adj;
}

Vector anchor_mask(std::size_t n, const std::vector<std::size_t>& anchors) {
  Vector mask = Vector::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i : anchors) {
    if (i >= n) throw validation_error("anchor row out of range");
    mask(static_cast<Eigen::Index>(i)) = 1.0;
  }
  return mask;
}

AnchorIndex resolve_anchors(const AnchorSet& anchors, const EmbeddingTable& z1,
                            const EmbeddingTable& z2) {
  anchors.validate();
  AnchorIndex out;
  out.reserve(anchors.size());
  for (const auto& p : anchors.pairs) {
    auto a = z1.find(p.source);
    auto b = z2.find(p.target);
    if (!a) throw validation_error("anchor source '" + p.source + "' is not a network-1 user");
    if (!b) throw validation_error("anchor target '" + p.target + "' is not a network-2 user");
    out.emplace_back(*a, *b);
  }
  return out;
}

std::pair<Vector, Vector> inter_propagate(const Vector& z1, const Vector& z2,
                                          const FusionParams& p) {
  if (z1.size() != z2.size() || z1.size() != p.w12.cols() || z1.size() != p.w21.cols())
    throw validation_error("inter-graph propagation: dimension mismatch");
  Matrix a = row_matrix(z1 + p.w21 * z2);
  Matrix b = row_matrix(z2 + p.w12 * z1);
  activate_inplace(a, p.activation);
  activate_inplace(b, p.activation);
  return {a.row(0).transpose(), b.row(0).transpose()};
}

namespace {

// Inter-graph step returning the updated tables and anchor pre-activations.
void inter_forward(const Matrix& z1, const Matrix& z2, const AnchorIndex& anchors,
                   const FusionParams& p, Matrix& out1, Matrix& out2, Matrix& pre1,
                   Matrix& pre2) {
  if (z1.cols() != z2.cols() || z1.cols() != p.w12.cols())
    throw validation_error("inter-graph propagation: dimension mismatch (" +
                           std::to_string(z1.cols()) + " vs " + std::to_string(z2.cols()) + ")");
  out1 = z1;
  out2 = z2;
  const auto n = static_cast<Eigen::Index>(anchors.size());
  pre1.resize(n, z1.cols());
  pre2.resize(n, z1.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [a, b] = anchors[static_cast<std::size_t>(i)];
    if (a >= static_cast<std::size_t>(z1.rows()) || b >= static_cast<std::size_t>(z2.rows()))
      throw validation_error("anchor row out of range");
    pre1.row(i) = z1.row(static_cast<Eigen::Index>(a)) +
                  z2.row(static_cast<Eigen::Index>(b)) * p.w21.transpose();
    pre2.row(i) = z2.row(static_cast<Eigen::Index>(b)) +
                  z1.row(static_cast<Eigen::Index>(a)) * p.w12.transpose();
  }
  Matrix act1 = pre1, act2 = pre2;
  activate_inplace(act1, p.activation);
  activate_inplace(act2, p.activation);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [a, b] = anchors[static_cast<std::size_t>(i)];
    out1.row(static_cast<Eigen::Index>(a)) = act1.row(i);
    out2.row(static_cast<Eigen::Index>(b)) = act2.row(i);
  }
}

}  // namespace

std::pair<Matrix, Matrix> inter_propagate(const Matrix& z1, const Matrix& z2,
                                          const AnchorIndex& anchors, const FusionParams& p) {
  Matrix o1, o2, pre1, pre2;
  inter_forward(z1, z2, anchors, p, o1, o2, pre1, pre2);
  return {std::move(o1), std::move(o2)};
}

Matrix hierarchy_stack(const SparseMatrix& adj, const Vector& mask, const Matrix& zp,
                       std::size_t hops, double alpha) {
  if (adj.rows() != zp.rows() || adj.cols() != zp.rows() || mask.size() != zp.rows())
    throw validation_error("hierarchy propagation: adjacency, mask and embeddings disagree in size");
  const Eigen::Index d = zp.cols();
  Matrix s(zp.rows(), static_cast<Eigen::Index>(hops + 1) * d);
  s.leftCols(d) = zp;
  const Matrix emphasis = alpha * (mask.asDiagonal() * zp);
  Matrix p = zp;
  for (std::size_t l = 1; l <= hops; ++l) {
    p = adj * p;
    s.middleCols(static_cast<Eigen::Index>(l) * d, d) = emphasis + p;
  }
  return s;
}

Matrix hierarchy_propagate(const SparseMatrix& adj, const Vector& mask, const Matrix& zp,
                           const Matrix& w_u, std::size_t hops, double alpha,
                           Activation act) {
  const Matrix s = hierarchy_stack(adj, mask, zp, hops, alpha);
  if (w_u.rows() != s.cols())
    throw validation_error("hierarchy propagation: output map expects " +
                           std::to_string(w_u.rows()) + " stacked features, got " +
                           std::to_string(s.cols()));
  Matrix out = s * w_u;
  activate_inplace(out, act);
  return out;
}

Matrix iterative_propagate(const SparseMatrix& adj, const Matrix& zp,
                           const std::vector<Matrix>& layers, Activation act) {
  if (adj.rows() != zp.rows()) throw validation_error("iterative propagation: size mismatch");
  Matrix x = zp;
  for (const auto& w : layers) {
    if (w.rows() != x.cols()) throw validation_error("iterative propagation: dimension mismatch");
    Matrix next = (adj * x) * w;
    activate_inplace(next, act);
    x = std::move(next);
  }
  return x;
}

FusionInputs make_fusion_inputs(const UserGraph& g1, const UserGraph& g2, Matrix z1,
                                Matrix z2, AnchorIndex anchors) {
  if (static_cast<std::size_t>(z1.rows()) != g1.n() || static_cast<std::size_t>(z2.rows()) != g2.n())
    throw validation_error("fusion: embedding rows do not match the user graphs");
  if (z1.cols() != z2.cols())
    throw validation_error("fusion: embedding dimension mismatch (" + std::to_string(z1.cols()) +
                           " vs " + std::to_string(z2.cols()) + ")");
  FusionInputs in;
  in.z = {std::move(z1), std::move(z2)};
  in.adj = {normalized_adjacency(g1), normalized_adjacency(g2)};
  std::vector<std::size_t> a1, a2;
  for (const auto& [a, b] : anchors) {
    a1.push_back(a);
    a2.push_back(b);
  }
  in.mask = {anchor_mask(g1.n(), a1), anchor_mask(g2.n(), a2)};
  in.anchors = std::move(anchors);
  return in;
}

FusionTrace fusion_forward(const FusionInputs& in, const FusionParams& p) {
  p.validate(static_cast<std::size_t>(in.z[0].cols()));
  FusionTrace t;
  inter_forward(in.z[0], in.z[1], in.anchors, p, t.zp[0], t.zp[1], t.inter_pre[0],
                t.inter_pre[1]);
  for (std::size_t net = 0; net < 2; ++net) {
    if (p.mode == FusionMode::kHierarchy) {
      t.layer_in[net].push_back(
          hierarchy_stack(in.adj[net], in.mask[net], t.zp[net], p.hops, p.anchor_weight));
      t.layer_pre[net].push_back(t.layer_in[net][0] * p.output[net][0]);
      t.out[net] = t.layer_pre[net][0];
      activate_inplace(t.out[net], p.activation);
    } else {
      Matrix x = t.zp[net];
      for (const auto& w : p.output[net]) {
        t.layer_in[net].push_back(in.adj[net] * x);
        t.layer_pre[net].push_back(t.layer_in[net].back() * w);
        x = t.layer_pre[net].back();
        activate_inplace(x, p.activation);
      }
      t.out[net] = std::move(x);
    }
  }
  return t;
}

std::vector<Matrix> fusion_backward(const FusionInputs& in, const FusionParams& p,
                                    const FusionTrace& t, const std::array<Matrix, 2>& d_out) {
  const Eigen::Index d = in.z[0].cols();
  std::array<Matrix, 2> d_zp;
  std::array<std::vector<Matrix>, 2> d_layers;
  for (std::size_t net = 0; net < 2; ++net) {
    check_dim(d_out[net], t.out[net].cols(), "fusion backward");
    Matrix grad = d_out[net];
    const std::size_t layers = p.output[net].size();
    d_layers[net].resize(layers);
    for (std::size_t i = layers; i-- > 0;) {
      activation_backward(grad, t.layer_pre[net][i], p.activation);
      d_layers[net][i] = t.layer_in[net][i].transpose() * grad;
      Matrix d_in = grad * p.output[net][i].transpose();
      if (p.mode == FusionMode::kHierarchy) {
        // Stack blocks: S_0 = Z', S_l = alpha*mask*Z' + P_l with P_l = A P_{l-1}.
        Matrix d_p = d_in.middleCols(static_cast<Eigen::Index>(p.hops) * d, d);
        Matrix emphasis_grad = d_p;
        for (std::size_t l = p.hops - 1; l >= 1; --l) {
          const Matrix block = d_in.middleCols(static_cast<Eigen::Index>(l) * d, d);
          d_p = block + in.adj[net].transpose() * d_p;
          emphasis_grad += block;
        }
        d_zp[net] = d_in.leftCols(d) + in.adj[net].transpose() * d_p +
                    p.anchor_weight * (in.mask[net].asDiagonal() * emphasis_grad);
      } else {
        grad = in.adj[net].transpose() * d_in;
        if (i == 0) d_zp[net] = grad;
      }
    }
  }

  // Inter-graph step: anchor rows went through act(z1 + W21 z2) and
  // act(z2 + W12 z1); inputs z are fixed.
  Matrix g_w12 = Matrix::Zero(d, d), g_w21 = Matrix::Zero(d, d);
  const auto n = static_cast<Eigen::Index>(in.anchors.size());
  Matrix d_pre1(n, d), d_pre2(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [a, b] = in.anchors[static_cast<std::size_t>(i)];
    d_pre1.row(i) = d_zp[0].row(static_cast<Eigen::Index>(a));
    d_pre2.row(i) = d_zp[1].row(static_cast<Eigen::Index>(b));
  }
  activation_backward(d_pre1, t.inter_pre[0], p.activation);
  activation_backward(d_pre2, t.inter_pre[1], p.activation);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [a, b] = in.anchors[static_cast<std::size_t>(i)];
    g_w21 += d_pre1.row(i).transpose() * in.z[1].row(static_cast<Eigen::Index>(b));
    g_w12 += d_pre2.row(i).transpose() * in.z[0].row(static_cast<Eigen::Index>(a));
  }

  std::vector<Matrix> grads{std::move(g_w12), std::move(g_w21)};
  for (auto& net : d_layers)
    for (auto& g : net) grads.push_back(std::move(g));
  return grads;
}

double anchor_regularizer(const Matrix& o1, const Matrix& o2, const AnchorIndex& anchors,
                          Matrix* d1, Matrix* d2) {
  if (o1.cols() != o2.cols()) throw validation_error("anchor regularizer: dimension mismatch");
  if (d1) *d1 = Matrix::Zero(o1.rows(), o1.cols());
  if (d2) *d2 = Matrix::Zero(o2.rows(), o2.cols());
  if (anchors.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(anchors.size());
  double total = 0;
  for (const auto& [a, b] : anchors) {
    const Eigen::RowVectorXd diff =
        o1.row(static_cast<Eigen::Index>(a)) - o2.row(static_cast<Eigen::Index>(b));
    total += diff.squaredNorm();
    if (d1) d1->row(static_cast<Eigen::Index>(a)) += 2.0 * scale * diff;
    if (d2) d2->row(static_cast<Eigen::Index>(b)) -= 2.0 * scale * diff;
  }
  return total * scale;
}

FusionLoss total_loss(const std::array<Matrix, 2>& out,
                      const std::array<std::vector<UserPair>, 2>& pairs,
                      const std::array<NegativeSet, 2>& negatives,
                      const AnchorIndex& anchors, std::array<Matrix, 2>* d_out) {
  FusionLoss loss;
  std::array<Matrix, 2> d_graph, d_reg;
  for (std::size_t net = 0; net < 2; ++net)
    loss.graph[net] = graph_loss(out[net], pairs[net], negatives[net],
                                 d_out ? &d_graph[net] : nullptr);
  loss.regularizer = anchor_regularizer(out[0], out[1], anchors,
                                        d_out ? &d_reg[0] : nullptr, d_out ? &d_reg[1] : nullptr);
  loss.total = loss.graph[0] + loss.graph[1] + loss.regularizer;
  if (d_out)
    for (std::size_t net = 0; net < 2; ++net) (*d_out)[net] = d_graph[net] + d_reg[net];
  return loss;
}

FusionResult train_fusion(const HeteroGraph& g1, const HeteroGraph& g2,
                          const EmbeddingTable& z1, const EmbeddingTable& z2,
                          const AnchorSet& anchors, const FusionConfig& cfg) {
  cfg.validate();
  if (z1.dim() != z2.dim())
    throw validation_error("fusion: embedding dimension mismatch (" + std::to_string(z1.dim()) +
                           " vs " + std::to_string(z2.dim()) + ")");
  // Rows in graph user order.
  auto gather = [](const HeteroGraph& g, const EmbeddingTable& z) {
    Matrix m(static_cast<Eigen::Index>(g.user_count()), static_cast<Eigen::Index>(z.dim()));
    for (std::size_t u = 0; u < g.user_count(); ++u)
      m.row(static_cast<Eigen::Index>(u)) = z.row(z.index_of(g.user_ids[u]));
    return m;
  };
  const EmbeddingTable t1(g1.user_ids, gather(g1, z1));
  const EmbeddingTable t2(g2.user_ids, gather(g2, z2));
  AnchorIndex idx = resolve_anchors(anchors, t1, t2);
  if (idx.empty()) warn("fusion: no anchors; the two networks are trained independently");

  const UserGraph ug1 = extract_user_graph(g1);
  const UserGraph ug2 = extract_user_graph(g2);
  const FusionInputs in = make_fusion_inputs(ug1, ug2, t1.vectors(), t2.vectors(), idx);
  FusionResult res;
  res.anchor_count = idx.size();
  res.params = init_fusion(z1.dim(), cfg);

  const std::array<std::vector<UserPair>, 2> pairs{positive_pairs(ug1), positive_pairs(ug2)};
  if (cfg.epochs > 0 && (pairs[0].empty() || pairs[1].empty()))
    throw validation_error("fusion: both networks need at least one friendship edge");
  std::unique_ptr<NegativeSampler> s1, s2;
  if (cfg.epochs > 0) {
    s1 = std::make_unique<NegativeSampler>(ug1, cfg.negative_exponent);
    s2 = std::make_unique<NegativeSampler>(ug2, cfg.negative_exponent);
  }
  Rng rng = Rng::substream(cfg.seed, StreamTag::kFuse, 1);
  Adam opt(cfg.learning_rate);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::array<NegativeSet, 2> neg{
        draw_negatives(*s1, pairs[0].size(), cfg.negatives, rng),
        draw_negatives(*s2, pairs[1].size(), cfg.negatives, rng)};
    const FusionTrace t = fusion_forward(in, res.params);
    std::array<Matrix, 2> d_out;
    const FusionLoss loss = total_loss(t.out, pairs, neg, idx, &d_out);
    if (!std::isfinite(loss.total))
      throw numeric_error("fusion loss is not finite in epoch " + std::to_string(epoch));
    res.epoch_losses.push_back(loss);
    opt.step(res.params.parameters(), fusion_backward(in, res.params, t, d_out));
  }
  const FusionTrace final_pass = fusion_forward(in, res.params);
  if (!final_pass.out[0].allFinite() || !final_pass.out[1].allFinite())
    throw numeric_error("fusion produced non-finite embeddings");
  res.o1 = EmbeddingTable(g1.user_ids, final_pass.out[0]);
  res.o2 = EmbeddingTable(g2.user_ids, final_pass.out[1]);
  return res;
}

}  // namespace dpfuse
