#include "dpfuse/verify.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "dpfuse/align.hpp"
#include "dpfuse/fuse.hpp"
#include "dpfuse/hetero.hpp"
#include "dpfuse/mechanisms.hpp"
#include "dpfuse/nn.hpp"
#include "dpfuse/synth.hpp"

namespace dpfuse {
namespace {

using Clock = std::chrono::steady_clock;

template <typename F>
PropertyResult timed(const std::string& name, F&& body) {
  PropertyResult r;
  r.name = name;
  const auto t0 = Clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

WordEmbeddingTable small_vocabulary(std::uint64_t seed) {
  Rng rng = Rng::substream(seed, StreamTag::kText, 99);
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("w" + std::to_string(i));
  return WordEmbeddingTable(std::move(ids), random_normal(10, 3, rng));
}

std::vector<Edge> random_edges(std::size_t n, double p, Rng& rng) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.bernoulli(p)) edges.emplace_back(static_cast<UserIndex>(i), static_cast<UserIndex>(j));
  if (edges.empty()) edges.emplace_back(0, 1);
  return edges;
}

NegativeSet random_negatives(std::size_t pairs, std::size_t per_pair, std::size_t n, Rng& rng) {
  NegativeSet s;
  s.per_pair = per_pair;
  for (std::size_t i = 0; i < pairs * per_pair; ++i)
    s.ids.push_back(static_cast<UserIndex>(rng.index(n)));
  return s;
}

std::vector<double> flatten(const std::vector<Matrix>& ms) {
  std::vector<double> out;
  for (const auto& m : ms)
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data()[i]);
  return out;
}

// Central differences of `loss` over every entry of `params`.
std::vector<double> numeric_gradient(const std::vector<Matrix*>& params,
                                     const std::function<double()>& loss, double h = 1e-6) {
  std::vector<double> out;
  for (Matrix* m : params) {
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      double& x = m->data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      out.push_back((up - down) / (2 * h));
    }
  }
  return out;
}

Matrix dense_normalized_adjacency(std::size_t n, const std::vector<Edge>& edges) {
  const auto sz = static_cast<Eigen::Index>(n);
  Matrix a = Matrix::Zero(sz, sz);
  for (const auto& [u, v] : edges) a(u, v) = a(v, u) = 1.0;
  const Vector deg = a.rowwise().sum();
  for (Eigen::Index i = 0; i < sz; ++i)
    for (Eigen::Index j = 0; j < sz; ++j)
      if (a(i, j) != 0) a(i, j) /= std::sqrt(deg(i) * deg(j));
  return a;
}

}  // namespace

nlohmann::json PropertyResult::to_json() const {
  return {{"name", name}, {"pass", pass}, {"detail", detail}, {"seconds", seconds}};
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

PropertyResult check_mdp_ratio(const std::vector<double>& eps, std::uint64_t seed) {
  return timed("mdp_ratio", [&](PropertyResult& r) {
    const auto vocab = small_vocabulary(seed);
    const auto& phi = vocab.vectors();
    double worst = -std::numeric_limits<double>::infinity();
    for (double e : eps) {
      TextSanitizer mech(vocab, e);
      std::vector<std::vector<double>> dist;
      for (std::size_t x = 0; x < vocab.size(); ++x) dist.push_back(mech.distribution(x));
      for (std::size_t x = 0; x < vocab.size(); ++x)
        for (std::size_t x2 = 0; x2 < vocab.size(); ++x2) {
          const double d = (phi.row(static_cast<Eigen::Index>(x)) -
                            phi.row(static_cast<Eigen::Index>(x2))).norm();
          for (std::size_t y = 0; y < vocab.size(); ++y) {
            const double slack =
                std::log(dist[x][y]) - std::log(dist[x2][y]) - e * d;
            worst = std::max(worst, slack);
          }
        }
    }
    r.pass = worst <= 1e-9;
    r.detail = "max(log ratio - eps*d) = " + fmt(worst);
  });
}

PropertyResult check_mdp_normalization(const std::vector<double>& eps, std::uint64_t seed) {
  return timed("mdp_normalization", [&](PropertyResult& r) {
    const auto vocab = small_vocabulary(seed);
    double worst = 0;
    for (double e : eps) {
      TextSanitizer mech(vocab, e);
      for (std::size_t x = 0; x < vocab.size(); ++x) {
        double s = 0;
        for (double p : mech.distribution(x)) s += p;
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
    r.pass = worst <= 1e-12;
    r.detail = "max |sum - 1| = " + fmt(worst);
  });
}

PropertyResult check_pm_unbiased(std::size_t draws, std::uint64_t seed) {
  return timed("pm_unbiased", [&](PropertyResult& r) {
    Rng rng = Rng::substream(seed, StreamTag::kAttributes, 99);
    double worst_z = 0;
    bool in_range = true;
    for (double t : {-1.0, -0.3, 0.0, 0.7, 1.0}) {
      for (double e : {0.5, 1.0, 5.0}) {
        const double c = piecewise_bound(e);
        double sum = 0, sq = 0;
        for (std::size_t i = 0; i < draws; ++i) {
          const double v = piecewise_perturb(t, e, rng);
          if (!(v >= -c && v <= c)) in_range = false;
          sum += v;
          sq += v * v;
        }
        const double n = static_cast<double>(draws);
        const double mean = sum / n;
        const double var = (sq - n * mean * mean) / (n - 1);
        worst_z = std::max(worst_z, std::abs(mean - t) / std::sqrt(var / n));
      }
    }
    r.pass = worst_z <= 4.0 && in_range;
    r.detail = "max |mean - t| / SE = " + fmt(worst_z) + (in_range ? "" : "; output outside [-C, C]");
  });
}

PropertyResult check_rr_ratio() {
  return timed("rr_ratio", [&](PropertyResult& r) {
    double worst = 0;
    for (std::uint32_t c : {2u, 3u, 5u, 10u}) {
      for (double e : {0.5, 1.0, 5.0}) {
        const double keep = rr_keep_probability(e, c);
        const double other = (1.0 - keep) / (c - 1);
        worst = std::max(worst, std::abs(std::log(keep / other) - e));
      }
    }
    r.pass = worst <= 1e-12;
    r.detail = "max |log ratio - eps| = " + fmt(worst);
  });
}

PropertyResult check_edge_filter_expectation(std::size_t n, std::size_t m, double eps_g,
                                             std::size_t trials, std::uint64_t seed) {
  return timed("edge_filter_expectation", [&](PropertyResult& r) {
    Rng rng = Rng::substream(seed, StreamTag::kEdges, 99);
    std::set<Edge> chosen;
    while (chosen.size() < m) {
      auto a = static_cast<UserIndex>(rng.index(n));
      auto b = static_cast<UserIndex>(rng.index(n));
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      chosen.emplace(a, b);
    }
    const UserGraph g(n, {chosen.begin(), chosen.end()});
    double sum = 0, sq = 0;
    bool simple = true;
    for (std::size_t t = 0; t < trials; ++t) {
      Rng trial = Rng::substream(seed + t, StreamTag::kEdges, 0);
      const UserGraph out = perturb_edges(g, eps_g, trial);
      const auto& e = out.edges();
      for (std::size_t i = 0; i < e.size(); ++i) {
        if (e[i].first >= e[i].second || e[i].second >= n) simple = false;
        if (i > 0 && !(e[i - 1] < e[i])) simple = false;
      }
      const double k = static_cast<double>(out.m());
      sum += k;
      sq += k * k;
    }
    const double cnt = static_cast<double>(trials);
    const double mean = sum / cnt;
    const double se = std::sqrt((sq - cnt * mean * mean) / (cnt - 1) / cnt);
    const double z = std::abs(mean - static_cast<double>(m)) / se;
    r.pass = z <= 3.0 && simple;
    r.detail = "mean edges " + fmt(mean) + ", SE " + fmt(se) + ", |z| " + fmt(z) +
               (simple ? "" : "; non-simple output");
  });
}

PropertyResult check_encoder_gradient(std::size_t restarts, std::uint64_t seed) {
  return timed("encoder_gradient", [&](PropertyResult& r) {
    double worst = 0;
    for (std::size_t k = 0; k < restarts; ++k) {
      Rng rng = Rng::substream(seed, StreamTag::kHetero, 1000 + k);
      const std::size_t users = 4 + rng.index(3), posts = 2 + rng.index(3);
      HeteroGraph g;
      for (std::size_t u = 0; u < users; ++u) g.user_ids.push_back("u" + std::to_string(u));
      for (std::size_t p = 0; p < posts; ++p) {
        g.post_ids.push_back("p" + std::to_string(p));
        g.post_author.push_back(static_cast<UserIndex>(rng.index(users)));
      }
      g.friendships = random_edges(users, 0.5, rng);
      const RelationSet rel = build_relations(g);
      NodeFeatures feats{random_normal(static_cast<Eigen::Index>(users), 3, rng),
                         random_normal(static_cast<Eigen::Index>(posts), 4, rng)};
      HeteroEncoderParams p = init_encoder(rel, 3, 4, {5, 3}, seed + k);
      for (Matrix* m : p.parameters()) *m *= 3.0;  // larger scores exercise both sigmoid tails

      const auto pairs = positive_pairs(UserGraph(users, g.friendships));
      const NegativeSet negs = random_negatives(pairs.size(), 3, users, rng);

      // Link loss with respect to the embeddings themselves.
      Matrix z = random_normal(static_cast<Eigen::Index>(users), 3, rng);
      Matrix dz;
      graph_loss(z, pairs, negs, &dz);
      const auto num_z = numeric_gradient({&z}, [&] { return graph_loss(z, pairs, negs); });
      worst = std::max(worst, relative_error(flatten({dz}), num_z));

      // Through the encoder.
      EncoderTrace trace;
      const Matrix out = encode(rel, feats, p, &trace);
      Matrix dout;
      graph_loss(out, pairs, negs, &dout);
      const auto analytic = flatten(encoder_backward(rel, p, trace, dout));
      const auto numeric = numeric_gradient(
          p.parameters(), [&] { return graph_loss(encode(rel, feats, p), pairs, negs); });
      worst = std::max(worst, relative_error(analytic, numeric));
    }
    r.pass = worst <= 1e-4;
    r.detail = "max relative error " + fmt(worst) + " over " + std::to_string(restarts) + " restarts";
  });
}

PropertyResult check_fusion_gradient(std::size_t restarts, std::uint64_t seed) {
  return timed("fusion_gradient", [&](PropertyResult& r) {
    double worst = 0;
    for (std::size_t k = 0; k < restarts; ++k) {
      Rng rng = Rng::substream(seed, StreamTag::kFuse, 1000 + k);
      const std::size_t n1 = 4 + rng.index(3), n2 = 4 + rng.index(3), d = 4;
      const UserGraph g1(n1, random_edges(n1, 0.5, rng));
      const UserGraph g2(n2, random_edges(n2, 0.5, rng));
      AnchorIndex anchors;
      for (std::size_t i = 0; i < 2; ++i) anchors.emplace_back(i, n2 - 1 - i);

      FusionConfig cfg;
      cfg.hops = 2;
      cfg.output_dim = 3;
      cfg.anchor_weight = 1.5;
      cfg.mode = k % 2 == 0 ? FusionMode::kHierarchy : FusionMode::kIterative;
      cfg.activation = (k / 2) % 2 == 0 ? Activation::kIdentity : Activation::kRelu;
      cfg.seed = seed + k;
      FusionParams p = init_fusion(d, cfg);
      for (Matrix* m : p.parameters()) *m *= 2.0;

      const FusionInputs in = make_fusion_inputs(
          g1, g2, random_normal(static_cast<Eigen::Index>(n1), d, rng),
          random_normal(static_cast<Eigen::Index>(n2), d, rng), anchors);
      const std::array<std::vector<UserPair>, 2> pairs{positive_pairs(g1), positive_pairs(g2)};
      const std::array<NegativeSet, 2> negs{random_negatives(pairs[0].size(), 3, n1, rng),
                                            random_negatives(pairs[1].size(), 3, n2, rng)};

      const FusionTrace trace = fusion_forward(in, p);
      std::array<Matrix, 2> dout;
      total_loss(trace.out, pairs, negs, in.anchors, &dout);
      const auto analytic = flatten(fusion_backward(in, p, trace, dout));
      const auto numeric = numeric_gradient(p.parameters(), [&] {
        return total_loss(fusion_forward(in, p).out, pairs, negs, in.anchors).total;
      });
      worst = std::max(worst, relative_error(analytic, numeric));
    }
    r.pass = worst <= 1e-4;
    r.detail = "max relative error " + fmt(worst) + " over " + std::to_string(restarts) + " restarts";
  });
}

PropertyResult check_propagation_oracle(std::size_t graphs, std::uint64_t seed) {
  return timed("propagation_oracle", [&](PropertyResult& r) {
    double worst = 0, worst_degenerate = 0;
    const std::size_t n = 10, hops = 4;
    const Eigen::Index d = 3;
    for (std::size_t k = 0; k < graphs; ++k) {
      Rng rng = Rng::substream(seed, StreamTag::kFuse, 2000 + k);
      const auto edges = random_edges(n, 0.3, rng);
      const UserGraph g(n, edges);
      const SparseMatrix adj = normalized_adjacency(g);
      const Matrix dense = dense_normalized_adjacency(n, edges);
      const Matrix zp = random_normal(static_cast<Eigen::Index>(n), d, rng);
      const Vector mask = anchor_mask(n, {0, 3, 7});

      std::vector<Matrix> powers{zp};
      for (std::size_t l = 1; l <= hops; ++l) powers.push_back(dense * powers.back());

      for (double alpha : {0.0, 2.0}) {
        const Matrix stack = hierarchy_stack(adj, mask, zp, hops, alpha);
        for (std::size_t l = 0; l <= hops; ++l) {
          Matrix block = stack.middleCols(static_cast<Eigen::Index>(l) * d, d);
          if (l > 0) block -= alpha * (mask.asDiagonal() * zp);
          worst = std::max(worst, (block - powers[l]).cwiseAbs().maxCoeff());
        }
      }
      for (std::size_t l = 1; l <= hops; ++l) {
        const std::vector<Matrix> eye(l, Matrix::Identity(d, d));
        const Matrix it = iterative_propagate(adj, zp, eye, Activation::kIdentity);
        worst = std::max(worst, (it - powers[l]).cwiseAbs().maxCoeff());
      }

      const Matrix w = random_normal(2 * d, 2, rng);
      const Matrix h = hierarchy_propagate(adj, mask, zp, w, 1, 0.0, Activation::kIdentity);
      const Matrix expect = zp * w.topRows(d) + (dense * zp) * w.bottomRows(d);
      worst_degenerate = std::max(worst_degenerate, (h - expect).cwiseAbs().maxCoeff());
    }
    r.pass = worst <= 1e-10 && worst_degenerate <= 1e-12;
    r.detail = "max |P_l - A^l Z'| = " + fmt(worst) + ", degenerate case error " + fmt(worst_degenerate);
  });
}

PropertyResult check_alignment_recovery(std::uint64_t seed, double min_accuracy,
                                        double max_orthogonality_error) {
  return timed("alignment_recovery", [&](PropertyResult& r) {
    const PlantedRotation bench = planted_rotation(200, 16, seed);
    GanConfig cfg;
    cfg.seed = seed;
    GanTrace trace;
    const AlignmentModel model = train_mapping(bench.source, bench.target, cfg, &trace);
    const Matrix mapped = bench.source.vectors() * model.w.transpose();
    const Matrix scores = csls(mapped, bench.target.vectors(), cfg.csls_k);
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      Eigen::Index j = 0;
      scores.row(i).maxCoeff(&j);
      if (j == i) ++hits;
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(scores.rows());
    const double orth = orthogonality_error(model.w);
    r.pass = acc >= min_accuracy && orth <= max_orthogonality_error;
    r.detail = "seed " + std::to_string(seed) + ": CSLS@1 " + fmt(acc) + ", ||W^T W - I|| " + fmt(orth) +
               ", selected epoch " + std::to_string(trace.best_epoch);
  });
}

std::vector<PropertyResult> run_invariant_suite(std::uint64_t seed) {
  const std::vector<double> eps{0.5, 2.0, 7.5};
  return {check_mdp_ratio(eps, seed),
          check_mdp_normalization(eps, seed),
          check_pm_unbiased(100000, seed),
          check_rr_ratio(),
          check_edge_filter_expectation(100, 200, 10.0, 200, seed),
          check_encoder_gradient(10, seed),
          check_fusion_gradient(10, seed),
          check_propagation_oracle(5, seed)};
}

}  // namespace dpfuse
