#include "dpfuse/hetero.hpp"

#include <algorithm>
#include <cmath>

#include "dpfuse/error.hpp"
#include "dpfuse/rng.hpp"

namespace dpfuse {
namespace {

int k(NodeKind kind) { return static_cast<int>(kind); }

SparseMatrix mean_operator(std::size_t rows, std::size_t cols,
                           const std::vector<std::vector<std::size_t>>& nbrs) {
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t i = 0; i < rows; ++i) {
    if (nbrs[i].empty()) continue;
    const double w = 1.0 / static_cast<double>(nbrs[i].size());
    for (std::size_t j : nbrs[i])
      t.emplace_back(static_cast<int>(i), static_cast<int>(j), w);
  }
  SparseMatrix op(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  op.setFromTriplets(t.begin(), t.end());
  return op;
}

std::string tensor_name(std::size_t layer, const std::string& what) {
  return "layer" + std::to_string(layer) + "." + what;
}

const char* kind_name(int kind) { return kind == 0 ? "user" : "post"; }

}  // namespace

RelationSet build_relations(const HeteroGraph& g) {
  RelationSet rel;
  rel.users = g.user_count();
  rel.posts = g.post_count();
  std::vector<std::vector<std::size_t>> friends(rel.users), written(rel.users),
      author(rel.posts);
  for (const auto& [a, b] : g.friendships) {
    friends[a].push_back(b);
    friends[b].push_back(a);
  }
  for (std::size_t p = 0; p < rel.posts; ++p) {
    written[g.post_author[p]].push_back(p);
    author[p].push_back(g.post_author[p]);
  }
  for (auto& v : friends) std::sort(v.begin(), v.end());
  rel.relations.push_back({"friendship", NodeKind::kUser, NodeKind::kUser,
                           mean_operator(rel.users, rel.users, friends)});
  rel.relations.push_back({"written_by", NodeKind::kUser, NodeKind::kPost,
                           mean_operator(rel.users, rel.posts, written)});
  rel.relations.push_back({"write", NodeKind::kPost, NodeKind::kUser,
                           mean_operator(rel.posts, rel.users, author)});
  return rel;
}

NodeFeatures build_node_features(const HeteroGraph& g, const WordEmbeddingTable& words) {
  NodeFeatures f;
  const auto width = static_cast<Eigen::Index>(g.schema.feature_width());
  f.users.resize(static_cast<Eigen::Index>(g.user_count()), width);
  for (std::size_t u = 0; u < g.user_count(); ++u) {
    const auto x = encode_features(g.schema, g.attrs[u]);
    for (Eigen::Index j = 0; j < width; ++j)
      f.users(static_cast<Eigen::Index>(u), j) = x[static_cast<std::size_t>(j)];
  }
  const auto d = static_cast<Eigen::Index>(words.dim());
  f.posts = Matrix::Zero(static_cast<Eigen::Index>(g.post_count()), d);
  for (std::size_t p = 0; p < g.post_count(); ++p) {
    std::size_t known = 0;
    for (const auto& tok : g.post_tokens[p]) {
      if (auto w = words.find(tok)) {
        f.posts.row(static_cast<Eigen::Index>(p)) += words.row(*w);
        ++known;
      }
    }
    if (known) f.posts.row(static_cast<Eigen::Index>(p)) /= static_cast<double>(known);
  }
  return f;
}

std::vector<Matrix*> HeteroEncoderParams::parameters() {
  std::vector<Matrix*> out;
  for (auto& layer : layers) {
    for (auto& w : layer.relation)
      if (w.rows()) out.push_back(&w);
    for (auto& w : layer.self)
      if (w.rows()) out.push_back(&w);
  }
  return out;
}

std::vector<NamedTensor> HeteroEncoderParams::tensors() const {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t r = 0; r < layers[l].relation.size(); ++r)
      if (layers[l].relation[r].rows())
        out.push_back({tensor_name(l, "rel" + std::to_string(r)), layers[l].relation[r]});
    for (int kind = 0; kind < 2; ++kind)
      if (layers[l].self[kind].rows())
        out.push_back({tensor_name(l, std::string("self_") + kind_name(kind)),
                       layers[l].self[kind]});
  }
  return out;
}

HeteroEncoderParams HeteroEncoderParams::from_tensors(const std::vector<NamedTensor>& tensors,
                                                      const RelationSet& rel,
                                                      std::vector<Activation> activations) {
  HeteroEncoderParams p;
  p.activations = std::move(activations);
  p.layers.resize(p.activations.size());
  for (auto& layer : p.layers) layer.relation.resize(rel.relations.size());
  for (const auto& t : tensors) {
    const auto dot = t.name.find('.');
    if (t.name.rfind("layer", 0) != 0 || dot == std::string::npos)
      throw validation_error("unexpected tensor '" + t.name + "' in encoder checkpoint");
    const auto l = std::stoul(t.name.substr(5, dot - 5));
    const std::string what = t.name.substr(dot + 1);
    if (l >= p.layers.size())
      throw validation_error("encoder checkpoint has more layers than configured");
    if (what.rfind("rel", 0) == 0) {
      const auto r = std::stoul(what.substr(3));
      if (r >= rel.relations.size()) throw validation_error("unknown relation in checkpoint");
      p.layers[l].relation[r] = t.value;
    } else if (what == "self_user") {
      p.layers[l].self[0] = t.value;
    } else if (what == "self_post") {
      p.layers[l].self[1] = t.value;
    } else {
      throw validation_error("unexpected tensor '" + t.name + "' in encoder checkpoint");
    }
  }
  return p;
}

HeteroEncoderParams init_encoder(const RelationSet& rel, std::size_t user_dim,
                                 std::size_t post_dim, const std::vector<std::size_t>& dims,
                                 std::uint64_t seed) {
  if (dims.empty()) throw usage_error("encoder needs at least one layer");
  Rng rng = Rng::substream(seed, StreamTag::kHetero, 0);
  HeteroEncoderParams p;
  std::array<std::size_t, 2> in_dim = {user_dim, post_dim};
  for (std::size_t l = 0; l < dims.size(); ++l) {
    const bool last = l + 1 == dims.size();
    const auto out = static_cast<Eigen::Index>(dims[l]);
    HeteroLayer layer;
    layer.relation.resize(rel.relations.size());
    for (std::size_t r = 0; r < rel.relations.size(); ++r) {
      const auto& R = rel.relations[r];
      if (last && R.target != NodeKind::kUser) continue;
      layer.relation[r] =
          uniform_init(out, static_cast<Eigen::Index>(in_dim[k(R.source)]), rng);
    }
    layer.self[0] = uniform_init(out, static_cast<Eigen::Index>(in_dim[0]), rng);
    if (!last) layer.self[1] = uniform_init(out, static_cast<Eigen::Index>(in_dim[1]), rng);
    p.layers.push_back(std::move(layer));
    p.activations.push_back(last ? Activation::kIdentity : Activation::kRelu);
    in_dim = {dims[l], dims[l]};
  }
  return p;
}

Matrix encode(const RelationSet& rel, const NodeFeatures& feats,
              const HeteroEncoderParams& p, EncoderTrace* trace) {
  if (p.layers.empty()) throw usage_error("encoder has no layers");
  std::array<Matrix, 2> h = {feats.users, feats.posts};
  if (static_cast<std::size_t>(h[0].rows()) != rel.users ||
      static_cast<std::size_t>(h[1].rows()) != rel.posts)
    throw validation_error("node feature rows do not match the graph");
  if (trace) *trace = EncoderTrace{};

  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    std::array<Matrix, 2> pre;
    std::vector<Matrix> agg(rel.relations.size());
    for (int kind = 0; kind < 2; ++kind) {
      const Matrix& self = layer.self[kind];
      if (!self.rows()) continue;
      if (self.cols() != h[kind].cols())
        throw validation_error("dimension mismatch: layer " + std::to_string(l) + " " +
                               kind_name(kind) + " input has " +
                               std::to_string(h[kind].cols()) + " columns, weight expects " +
                               std::to_string(self.cols()));
      pre[kind] = h[kind] * self.transpose();
    }
    for (std::size_t r = 0; r < rel.relations.size(); ++r) {
      const Matrix& w = layer.relation[r];
      if (!w.rows()) continue;
      const auto& R = rel.relations[r];
      const Matrix& src = h[k(R.source)];
      if (w.cols() != src.cols())
        throw validation_error("dimension mismatch in relation '" + R.name + "'");
      agg[r] = R.op * src;
      pre[k(R.target)].noalias() += agg[r] * w.transpose();
    }
    std::array<Matrix, 2> next;
    for (int kind = 0; kind < 2; ++kind) {
      if (!layer.self[kind].rows()) continue;
      next[kind] = pre[kind];
      activate_inplace(next[kind], p.activations[l]);
    }
    if (trace) {
      trace->input.push_back(std::move(h));
      trace->pre.push_back(std::move(pre));
      trace->aggregated.push_back(std::move(agg));
    }
    h = std::move(next);
  }
  return h[0];
}

EmbeddingTable encode_users(const HeteroGraph& g, const NodeFeatures& feats,
                            const HeteroEncoderParams& p) {
  return EmbeddingTable(g.user_ids, encode(build_relations(g), feats, p));
}

std::vector<Matrix> encoder_backward(const RelationSet& rel, const HeteroEncoderParams& p,
                                     const EncoderTrace& trace, const Matrix& d_out) {
  const std::size_t L = p.layers.size();
  std::vector<std::vector<Matrix>> rel_grads(L);
  std::vector<std::array<Matrix, 2>> self_grads(L);
  std::array<Matrix, 2> d_h = {d_out, Matrix()};

  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = p.layers[l];
    std::array<Matrix, 2> d_pre;
    for (int kind = 0; kind < 2; ++kind) {
      if (!layer.self[kind].rows()) continue;
      d_pre[kind] = d_h[kind].size() ? d_h[kind]
                                     : Matrix::Zero(trace.pre[l][kind].rows(),
                                                    trace.pre[l][kind].cols());
      activation_backward(d_pre[kind], trace.pre[l][kind], p.activations[l]);
    }
    std::array<Matrix, 2> d_in;
    for (int kind = 0; kind < 2; ++kind)
      d_in[kind] = Matrix::Zero(trace.input[l][kind].rows(), trace.input[l][kind].cols());

    rel_grads[l].resize(rel.relations.size());
    for (std::size_t r = 0; r < rel.relations.size(); ++r) {
      const Matrix& w = layer.relation[r];
      if (!w.rows()) continue;
      const auto& R = rel.relations[r];
      const Matrix& dp = d_pre[k(R.target)];
      rel_grads[l][r] = dp.transpose() * trace.aggregated[l][r];
      if (l > 0) d_in[k(R.source)].noalias() += R.op.transpose() * (dp * w);
    }
    for (int kind = 0; kind < 2; ++kind) {
      if (!layer.self[kind].rows()) continue;
      self_grads[l][kind] = d_pre[kind].transpose() * trace.input[l][kind];
      if (l > 0) d_in[kind].noalias() += d_pre[kind] * layer.self[kind];
    }
    d_h = std::move(d_in);
  }

  std::vector<Matrix> grads;
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t r = 0; r < rel.relations.size(); ++r)
      if (p.layers[l].relation[r].rows()) grads.push_back(std::move(rel_grads[l][r]));
    for (int kind = 0; kind < 2; ++kind)
      if (p.layers[l].self[kind].rows()) grads.push_back(std::move(self_grads[l][kind]));
  }
  return grads;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw usage_error("learning rate must be positive");
  if (batch_pairs == 0 || hidden_dim == 0 || output_dim == 0)
    throw usage_error("batch size and layer dimensions must be positive");
}

HeteroTrainResult train_hetero(const HeteroGraph& g, const NodeFeatures& feats,
                               const TrainConfig& cfg) {
  cfg.validate();
  const RelationSet rel = build_relations(g);
  HeteroTrainResult result;
  result.params = init_encoder(rel, static_cast<std::size_t>(feats.users.cols()),
                               static_cast<std::size_t>(feats.posts.cols()),
                               {cfg.hidden_dim, cfg.output_dim}, cfg.seed);
  if (cfg.epochs > 0) {
    const UserGraph ug = extract_user_graph(g);
    std::vector<UserPair> pairs = positive_pairs(ug);
    if (pairs.empty()) throw validation_error("graph has no friendship pairs to train on");
    const NegativeSampler sampler(ug, cfg.negative_exponent);
    Rng rng = Rng::substream(cfg.seed, StreamTag::kHetero, 1);
    Rng monitor_rng = Rng::substream(cfg.seed, StreamTag::kHetero, 2);
    const NegativeSet monitor =
        draw_negatives(sampler, pairs.size(), cfg.negatives, monitor_rng);
    Adam opt(cfg.learning_rate);
    auto params = result.params.parameters();
    EncoderTrace trace;
    Matrix dz;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (std::size_t i = pairs.size() - 1; i > 0; --i)
        std::swap(pairs[i], pairs[rng.index(i + 1)]);
      for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_pairs) {
        const std::size_t len = std::min(cfg.batch_pairs, pairs.size() - start);
        std::span<const UserPair> batch(pairs.data() + start, len);
        const NegativeSet neg = draw_negatives(sampler, len, cfg.negatives, rng);
        const Matrix z = encode(rel, feats, result.params, &trace);
        const double loss = graph_loss(z, batch, neg, &dz);
        if (!std::isfinite(loss))
          throw numeric_error("encoder training diverged in epoch " + std::to_string(epoch));
        opt.step(params, encoder_backward(rel, result.params, trace, dz));
      }
      // Monitoring pass over all pairs in canonical order.
      std::vector<UserPair> canonical = positive_pairs(ug);
      const double loss = graph_loss(encode(rel, feats, result.params), canonical, monitor);
      if (!std::isfinite(loss))
        throw numeric_error("encoder training diverged in epoch " + std::to_string(epoch));
      result.epoch_losses.push_back(loss);
    }
  }
  result.users = EmbeddingTable(g.user_ids, encode(rel, feats, result.params));
  return result;
}

}  // namespace dpfuse
