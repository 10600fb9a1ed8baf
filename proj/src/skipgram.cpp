#include "dpfuse/skipgram.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <unordered_map>

#include "dpfuse/error.hpp"
#include "dpfuse/nn.hpp"
#include "dpfuse/rng.hpp"

namespace dpfuse {

void SkipGramConfig::validate() const {
  if (dim == 0 || window == 0 || epochs == 0 || min_count == 0)
    throw usage_error("skip-gram: dim, window, epochs and min_count must be positive");
  if (!(learning_rate > 0.0)) throw usage_error("skip-gram: learning rate must be positive");
}

void WalkConfig::validate() const {
  if (walks_per_node == 0 || walk_length == 0)
    throw usage_error("random walks: counts must be positive");
}

SgnsGradient sgns_loss_and_gradient(const Vector& input, const Vector& positive,
                                    const Matrix& negatives) {
  SgnsGradient g;
  const double s = input.dot(positive);
  g.loss = -log_sigmoid(s);
  const double gp = sigmoid(s) - 1.0;
  g.d_input = gp * positive;
  g.d_positive = gp * input;
  g.d_negatives.resize(negatives.rows(), negatives.cols());
  for (Eigen::Index k = 0; k < negatives.rows(); ++k) {
    const double t = input.dot(negatives.row(k));
    g.loss -= log_sigmoid(-t);
    const double gn = sigmoid(t);
    g.d_input += gn * negatives.row(k).transpose();
    g.d_negatives.row(k) = gn * input.transpose();
  }
  return g;
}

WordEmbeddingTable train_skipgram(const std::vector<std::vector<std::string>>& sequences,
                                  const SkipGramConfig& cfg) {
  cfg.validate();
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& seq : sequences)
    for (const auto& tok : seq) ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> vocab;
  for (auto& [tok, c] : counts)
    if (c >= cfg.min_count) vocab.emplace_back(tok, c);
  if (vocab.empty()) throw validation_error("skip-gram: empty corpus after min-count filtering");
  std::sort(vocab.begin(), vocab.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> ids;
  std::vector<double> noise;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    index.emplace(vocab[i].first, i);
    ids.push_back(vocab[i].first);
    noise.push_back(std::pow(static_cast<double>(vocab[i].second), 0.75));
  }
  std::discrete_distribution<std::size_t> noise_dist(noise.begin(), noise.end());

  // Encoded corpus with filtered tokens dropped.
  std::vector<std::vector<std::size_t>> corpus;
  std::size_t total_tokens = 0;
  for (const auto& seq : sequences) {
    std::vector<std::size_t> enc;
    for (const auto& tok : seq) {
      auto it = index.find(tok);
      if (it != index.end()) enc.push_back(it->second);
    }
    total_tokens += enc.size();
    if (!enc.empty()) corpus.push_back(std::move(enc));
  }

  const auto V = static_cast<Eigen::Index>(ids.size());
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  Rng rng = Rng::substream(cfg.seed, StreamTag::kSkipGram);
  Matrix in(V, d), out = Matrix::Zero(V, d);
  for (Eigen::Index i = 0; i < V; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      in(i, j) = (rng.uniform() - 0.5) / static_cast<double>(d);

  const double total_steps =
      static_cast<double>(std::max<std::size_t>(1, total_tokens * cfg.epochs));
  double processed = 0;
  Vector grad_in(d);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& seq : corpus) {
      for (std::size_t pos = 0; pos < seq.size(); ++pos, processed += 1) {
        const double lr =
            cfg.learning_rate * std::max(1e-4, 1.0 - processed / total_steps);
        const auto span = static_cast<std::ptrdiff_t>(1 + rng.index(cfg.window));
        const auto center = static_cast<Eigen::Index>(seq[pos]);
        const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(pos) - span);
        const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(seq.size()) - 1,
                                                 static_cast<std::ptrdiff_t>(pos) + span);
        for (std::ptrdiff_t c = lo; c <= hi; ++c) {
          if (c == static_cast<std::ptrdiff_t>(pos)) continue;
          const auto context = static_cast<Eigen::Index>(seq[static_cast<std::size_t>(c)]);
          grad_in.setZero();
          // Positive target, then negatives; same update as the analytic
          // gradient in sgns_loss_and_gradient.
          for (std::size_t k = 0; k <= cfg.negatives; ++k) {
            Eigen::Index target;
            double label;
            if (k == 0) {
              target = context;
              label = 1.0;
            } else {
              target = static_cast<Eigen::Index>(noise_dist(rng.engine()));
              if (target == context) continue;
              label = 0.0;
            }
            const double score = in.row(center).dot(out.row(target));
            const double g = (sigmoid(score) - label) * lr;
            grad_in += g * out.row(target).transpose();
            out.row(target) -= g * in.row(center);
          }
          in.row(center) -= grad_in.transpose();
        }
      }
    }
  }
  if (!in.allFinite()) throw numeric_error("skip-gram training produced non-finite vectors");
  return WordEmbeddingTable(std::move(ids), std::move(in));
}

std::vector<std::vector<UserIndex>> random_walks(const UserGraph& g, const WalkConfig& cfg) {
  cfg.validate();
  Rng rng = Rng::substream(cfg.seed, StreamTag::kWalks);
  std::vector<std::vector<UserIndex>> walks;
  walks.reserve(cfg.walks_per_node * g.n());
  for (std::size_t round = 0; round < cfg.walks_per_node; ++round) {
    for (std::size_t start = 0; start < g.n(); ++start) {
      std::vector<UserIndex> walk{static_cast<UserIndex>(start)};
      while (walk.size() < cfg.walk_length) {
        const auto nb = g.neighbors(walk.back());
        if (nb.empty()) break;
        walk.push_back(nb[rng.index(nb.size())]);
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

EmbeddingTable node_embeddings(const UserGraph& g, const std::vector<std::string>& ids,
                               const WalkConfig& walks, const SkipGramConfig& sg) {
  if (ids.size() != g.n()) throw validation_error("node id list does not match graph size");
  std::vector<std::vector<std::string>> corpus;
  for (const auto& w : random_walks(g, walks)) {
    std::vector<std::string> seq;
    seq.reserve(w.size());
    for (UserIndex u : w) seq.push_back(ids[u]);
    corpus.push_back(std::move(seq));
  }
  WordEmbeddingTable trained = train_skipgram(corpus, sg);
  // Reorder rows to user-index order.
  Matrix v(static_cast<Eigen::Index>(g.n()), static_cast<Eigen::Index>(trained.dim()));
  for (std::size_t u = 0; u < g.n(); ++u)
    v.row(static_cast<Eigen::Index>(u)) = trained.row(trained.index_of(ids[u]));
  return EmbeddingTable(ids, std::move(v));
}

}  // namespace dpfuse
