#include "dpfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/QR>

#include <json.hpp>

#include "dpfuse/error.hpp"
#include "dpfuse/rng.hpp"

namespace dpfuse {
namespace {

using nlohmann::json;

struct Person {
  std::size_t label_group = 0;  // defines interests
  int gender = 0;
  int occupation = 0;
};

struct Member {
  std::size_t person;
  std::size_t group;  // drives structure and posts in this network
  std::string id;
};

std::string topic_word(std::size_t group, std::size_t k) {
  return "t" + std::to_string(group) + "_" + std::to_string(k);
}

std::string screen_name(Rng& rng) {
  std::string s = "user_";
  for (int i = 0; i < 6; ++i) s.push_back(static_cast<char>('a' + rng.index(26)));
  return s;
}

HeteroGraph build_network(const std::vector<Person>& people, const std::vector<Member>& members,
                          const SynthConfig& cfg, std::uint64_t stream) {
  Rng rng = Rng::substream(cfg.seed, StreamTag::kSynth, stream);
  const std::size_t n = members.size();
  std::vector<std::size_t> group_size(cfg.communities, 0);
  for (const auto& m : members) ++group_size[m.group];

  std::vector<Edge> edges;
  std::vector<std::size_t> degree(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool same = members[i].group == members[j].group;
      const double pool = same ? static_cast<double>(group_size[members[i].group] - 1)
                               : static_cast<double>(n - group_size[members[i].group]);
      double p = pool > 0 ? (same ? cfg.intra_degree : cfg.inter_degree) / pool : 0.0;
      if (cfg.gender_homophily > 0) {
        const bool same_gender =
            people[members[i].person].gender == people[members[j].person].gender;
        p *= same_gender ? 1.0 + cfg.gender_homophily : 1.0 - cfg.gender_homophily;
      }
      if (rng.bernoulli(std::min(1.0, p))) {
        edges.emplace_back(static_cast<UserIndex>(i), static_cast<UserIndex>(j));
        ++degree[i];
        ++degree[j];
      }
    }
  }

  std::ostringstream out;
  for (std::size_t i = 0; i < n; ++i) {
    const Person& p = people[members[i].person];
    const std::size_t c = p.label_group;
    json attrs = {
        {"screen_name", screen_name(rng)},
        {"followers", static_cast<double>(3 * degree[i] + rng.index(20))},
        {"post_count", static_cast<double>(cfg.posts_per_user)},
        {"gender", {{"category", p.gender}, {"cardinality", 2}}},
        {"occupation", {{"category", p.occupation}, {"cardinality", cfg.occupations}}},
    };
    json rec = {{"kind", "user"},
                {"id", members[i].id},
                {"attrs", attrs},
                {"gender", p.gender},
                {"occupation", p.occupation},
                {"interests", {static_cast<int>(2 * c), static_cast<int>(2 * c + 1)}}};
    out << rec.dump() << '\n';
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < cfg.posts_per_user; ++k) {
      std::string text;
      for (std::size_t t = 0; t < cfg.tokens_per_post; ++t) {
        const std::size_t g =
            rng.bernoulli(cfg.topic_share) ? members[i].group : rng.index(cfg.communities);
        if (!text.empty()) text.push_back(' ');
        text += topic_word(g, rng.index(cfg.words_per_topic));
      }
      json rec = {{"kind", "post"},
                  {"id", members[i].id + "_p" + std::to_string(k)},
                  {"author", members[i].id},
                  {"text", text}};
      out << rec.dump() << '\n';
    }
  }
  for (const auto& [a, b] : edges)
    out << json{{"kind", "friend"}, {"a", members[a].id}, {"b", members[b].id}}.dump() << '\n';

  std::istringstream in(out.str());
  return parse_graph(in, "<synthetic>");
}

std::vector<Person> draw_people(std::size_t count, const SynthConfig& cfg, Rng& rng) {
  std::vector<Person> people(count);
  for (auto& p : people) {
    p.label_group = rng.index(cfg.communities);
    p.gender = rng.bernoulli(0.5) ? 1 : 0;
    p.occupation = static_cast<int>(rng.index(cfg.occupations));
  }
  return people;
}

}  // namespace

void SynthConfig::validate() const {
  if (users < 2) throw usage_error("synthetic graph needs at least two users");
  if (communities == 0 || words_per_topic == 0 || occupations == 0)
    throw usage_error("synthetic graph: communities, topic words and occupations must be positive");
  if (2 * communities > static_cast<std::size_t>(kInterestCategories))
    throw usage_error("synthetic graph: at most 5 communities (two interests each)");
  if (!(intra_degree >= 0) || !(inter_degree >= 0))
    throw usage_error("synthetic graph: degrees must be non-negative");
  if (!(topic_share >= 0 && topic_share <= 1))
    throw usage_error("synthetic graph: topic share must lie in [0, 1]");
  if (!(gender_homophily >= 0 && gender_homophily < 1))
    throw usage_error("synthetic graph: gender homophily must lie in [0, 1)");
}

HeteroGraph synth_graph(const SynthConfig& cfg, const std::string& prefix) {
  cfg.validate();
  Rng rng = Rng::substream(cfg.seed, StreamTag::kSynth, 0);
  const auto people = draw_people(cfg.users, cfg, rng);
  std::vector<Member> members;
  for (std::size_t i = 0; i < cfg.users; ++i)
    members.push_back({i, people[i].label_group, prefix + std::to_string(i)});
  return build_network(people, members, cfg, 1);
}

SynthPair synth_cross_pair(const SynthConfig& cfg, double anchor_fraction) {
  cfg.validate();
  if (!(anchor_fraction >= 0 && anchor_fraction <= 1))
    throw usage_error("anchor fraction must lie in [0, 1]");
  const std::size_t n = cfg.users;
  const auto shared = static_cast<std::size_t>(std::llround(anchor_fraction * static_cast<double>(n)));
  Rng rng = Rng::substream(cfg.seed, StreamTag::kSynth, 0);
  const auto people = draw_people(2 * n - shared, cfg, rng);

  // Network A members are people [0, n), B members [n - shared, 2n - shared).
  // B lists its members in a shuffled order so row order carries no pairing.
  std::vector<Member> ma, mb;
  for (std::size_t i = 0; i < n; ++i)
    ma.push_back({i, rng.index(cfg.communities), "a" + std::to_string(i)});
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = n - shared + i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < n; ++i)
    mb.push_back({order[i], people[order[i]].label_group, "b" + std::to_string(i)});

  SynthPair pair;
  pair.a = build_network(people, ma, cfg, 1);
  pair.b = build_network(people, mb, cfg, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t person = mb[i].person;
    if (person < n) pair.anchors.pairs.push_back({ma[person].id, mb[i].id, 1.0});
  }
  std::sort(pair.anchors.pairs.begin(), pair.anchors.pairs.end(),
            [&](const AnchorPair& x, const AnchorPair& y) {
              return std::stoul(x.source.substr(1)) < std::stoul(y.source.substr(1));
            });
  return pair;
}

Matrix random_orthogonal(std::size_t d, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(d);
  Matrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Sign fix so the distribution is uniform over O(d).
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

PlantedRotation planted_rotation(std::size_t n, std::size_t d, std::uint64_t seed) {
  if (n == 0 || d == 0) throw usage_error("planted rotation needs n > 0 and d > 0");
  Rng rng = Rng::substream(seed, StreamTag::kSynth, 7);
  const auto rows = static_cast<Eigen::Index>(n);
  const auto cols = static_cast<Eigen::Index>(d);
  Matrix x(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double scale = d > 1 ? 2.0 - 1.5 * static_cast<double>(j) / static_cast<double>(d - 1) : 1.0;
    for (Eigen::Index i = 0; i < rows; ++i)
      x(i, j) = scale * rng.normal() - 0.8 * std::log(rng.uniform_open());
  }
  PlantedRotation out;
  out.rotation = random_orthogonal(d, rng);
  const Matrix y = x * out.rotation.transpose();
  std::vector<std::string> xs, ys;
  for (std::size_t i = 0; i < n; ++i) {
    xs.push_back("x" + std::to_string(i));
    ys.push_back("y" + std::to_string(i));
  }
  out.source = EmbeddingTable(std::move(xs), normalize_rows(x));
  out.target = EmbeddingTable(std::move(ys), normalize_rows(y));
  return out;
}

}  // namespace dpfuse
