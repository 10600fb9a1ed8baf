#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "dpfuse/error.hpp"
#include "dpfuse/hetero.hpp"
#include "dpfuse/skipgram.hpp"
#include "dpfuse/synth.hpp"
#include "dpfuse/verify.hpp"
#include "helpers.hpp"

using namespace dpfuse;
using dpfuse::test::graph_from_text;

namespace {

// Two users with one numeric attribute (normalized to -1 and +1) and a
// friendship between them.
const char* kPair =
    R"({"kind":"user","id":"a","attrs":{"x":0}})" "\n"
    R"({"kind":"user","id":"b","attrs":{"x":1}})" "\n"
    R"({"kind":"friend","a":"a","b":"b"})" "\n";

double cosine(const Matrix& z, Eigen::Index i, Eigen::Index j) {
  return z.row(i).dot(z.row(j)) / (z.row(i).norm() * z.row(j).norm());
}

// Two 6-cliques joined by one bridge edge; attributes are random noise.
HeteroGraph two_cliques() {
  std::string text;
  Rng rng(2);
  for (int u = 0; u < 12; ++u)
    text += R"({"kind":"user","id":"u)" + std::to_string(u) + R"(","attrs":{"p":)" +
            std::to_string(rng.uniform()) + R"(,"q":)" + std::to_string(rng.uniform()) + "}}\n";
  auto edge = [&](int a, int b) {
    text += R"({"kind":"friend","a":"u)" + std::to_string(a) + R"(","b":"u)" + std::to_string(b) +
            "\"}\n";
  };
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 6; ++i)
      for (int j = i + 1; j < 6; ++j) edge(6 * c + i, 6 * c + j);
  edge(0, 6);
  return graph_from_text(text);
}

HeteroGraph permute_users(const HeteroGraph& g, const std::vector<UserIndex>& perm) {
  HeteroGraph out = g;
  for (std::size_t u = 0; u < g.user_count(); ++u) {
    out.user_ids[perm[u]] = g.user_ids[u];
    out.attrs[perm[u]] = g.attrs[u];
    out.interests[perm[u]] = g.interests[u];
    out.gender[perm[u]] = g.gender[u];
    out.occupation[perm[u]] = g.occupation[u];
  }
  for (auto& [a, b] : out.friendships) {
    a = perm[a];
    b = perm[b];
    if (a > b) std::swap(a, b);
  }
  for (auto& a : out.post_author) a = perm[a];
  return out;
}

}  // namespace

TEST_CASE("relations are mean operators over each neighbourhood") {
  SynthConfig cfg;
  cfg.users = 30;
  const HeteroGraph g = synth_graph(cfg);
  const RelationSet rel = build_relations(g);
  REQUIRE(rel.relations.size() == 3);
  CHECK(rel.relations[0].name == "friendship");
  CHECK(rel.relations[1].name == "written_by");
  CHECK(rel.relations[2].name == "write");
  for (const auto& r : rel.relations) {
    const Vector sums = r.op * Vector::Ones(r.op.cols());
    for (Eigen::Index i = 0; i < sums.size(); ++i)
      CHECK((std::abs(sums(i) - 1) < 1e-12 || sums(i) == 0));
  }
}

TEST_CASE("zero weights give zero output") {
  const HeteroGraph g = graph_from_text(kPair);
  const RelationSet rel = build_relations(g);
  const NodeFeatures f = build_node_features(g, WordEmbeddingTable{});
  HeteroEncoderParams p = init_encoder(rel, 1, 0, {4, 3}, 1);
  for (Matrix* w : p.parameters()) w->setZero();
  CHECK(encode(rel, f, p).isZero());
}

TEST_CASE("single-layer forward pass matches a hand computation") {
  const HeteroGraph g = graph_from_text(kPair);
  const RelationSet rel = build_relations(g);
  const NodeFeatures f = build_node_features(g, WordEmbeddingTable{});
  REQUIRE(f.users.rows() == 2);
  CHECK(f.users(0, 0) == doctest::Approx(-1));
  CHECK(f.users(1, 0) == doctest::Approx(1));

  HeteroEncoderParams p = init_encoder(rel, 1, 0, {2}, 1);
  p.layers[0].relation[0] = (Matrix(2, 1) << 2.0, -1.0).finished();  // friendship
  p.layers[0].self[0] = (Matrix(2, 1) << 0.5, 3.0).finished();
  const Matrix z = encode(rel, f, p);
  // z_a = W_f h_b + W_0 h_a with h_a = -1, h_b = 1.
  CHECK(z(0, 0) == doctest::Approx(2.0 - 0.5));
  CHECK(z(0, 1) == doctest::Approx(-1.0 - 3.0));
  CHECK(z(1, 0) == doctest::Approx(-2.0 + 0.5));
  CHECK(z(1, 1) == doctest::Approx(1.0 + 3.0));
}

TEST_CASE("an isolated user keeps only its self term") {
  const std::string text = std::string(kPair) + R"({"kind":"user","id":"c","attrs":{"x":0.5}})" "\n";
  const HeteroGraph g = graph_from_text(text);
  const RelationSet rel = build_relations(g);
  const NodeFeatures f = build_node_features(g, WordEmbeddingTable{});
  HeteroEncoderParams p = init_encoder(rel, 1, 0, {2}, 4);
  const Matrix z = encode(rel, f, p);
  const Vector expected = p.layers[0].self[0] * f.users.row(2).transpose();
  CHECK((z.row(2).transpose() - expected).norm() < 1e-12);
}

TEST_CASE("link loss on hand-picked embeddings") {
  const std::vector<UserPair> pair{{0, 1}};
  NegativeSet none;
  none.per_pair = 0;
  CHECK(graph_loss(Matrix::Zero(2, 3), pair, none) == doctest::Approx(std::log(2.0)));

  Matrix z(2, 1);
  z << std::sqrt(10.0), std::sqrt(10.0);
  CHECK(graph_loss(z, pair, none) == doctest::Approx(4.5399e-5).epsilon(1e-3));

  Matrix w(3, 2);
  w << 1, 0, 0.5, 0.5, -1, 2;
  NegativeSet one;
  one.per_pair = 1;
  one.ids = {2};
  const double pos = w.row(0).dot(w.row(1)), neg = w.row(0).dot(w.row(2));
  CHECK(graph_loss(w, pair, one) ==
        doctest::Approx(-std::log(1 / (1 + std::exp(-pos))) - std::log(1 / (1 + std::exp(neg)))));

  Matrix unit(2, 2);
  unit << 1, 0, 1, 0;
  CHECK(graph_loss(unit, pair, none) == doctest::Approx(-log_sigmoid(1.0)));
}

TEST_CASE("encoder gradients match central differences") {
  const PropertyResult r = check_encoder_gradient(5, 13);
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("relabelling users permutes the outputs") {
  SynthConfig cfg;
  cfg.users = 25;
  const HeteroGraph g = synth_graph(cfg);
  std::vector<UserIndex> perm(g.user_count());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(6);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  const HeteroGraph h = permute_users(g, perm);
  h.validate();

  SkipGramConfig sg;
  sg.dim = 8;
  const auto words = train_skipgram(std::vector<std::vector<std::string>>(g.post_tokens), sg);
  const RelationSet rg = build_relations(g), rh = build_relations(h);
  const NodeFeatures fg = build_node_features(g, words), fh = build_node_features(h, words);
  const auto p = init_encoder(rg, fg.users.cols(), fg.posts.cols(), {6, 4}, 2);
  const Matrix zg = encode(rg, fg, p), zh = encode(rh, fh, p);
  double worst = 0;
  for (std::size_t u = 0; u < g.user_count(); ++u)
    worst = std::max(worst, (zg.row(u) - zh.row(perm[u])).cwiseAbs().maxCoeff());
  CHECK(worst < 1e-12);
}

TEST_CASE("training separates two cliques and lowers the loss") {
  const HeteroGraph g = two_cliques();
  const NodeFeatures f = build_node_features(g, WordEmbeddingTable{});
  TrainConfig cfg;
  cfg.hidden_dim = 16;
  cfg.output_dim = 8;
  cfg.epochs = 200;
  cfg.learning_rate = 0.001;
  const HeteroTrainResult r = train_hetero(g, f, cfg);
  REQUIRE(r.epoch_losses.size() == 200);
  CHECK(r.epoch_losses.back() < r.epoch_losses.front());
  std::size_t increases = 0;
  for (std::size_t e = 1; e < r.epoch_losses.size(); ++e)
    increases += r.epoch_losses[e] > r.epoch_losses[e - 1];
  CHECK(increases <= r.epoch_losses.size() / 20);

  const Matrix& z = r.users.vectors();
  double within = 0, across = 0;
  int nw = 0, na = 0;
  for (int i = 1; i < 12; ++i)
    for (int j = 1; j < 12; ++j) {
      if (i == j || i == 6 || j == 6) continue;
      if ((i < 6) == (j < 6)) {
        within += cosine(z, i, j);
        ++nw;
      } else {
        across += cosine(z, i, j);
        ++na;
      }
    }
  CHECK(within / nw > across / na + 0.5);

  // Same seed, same result.
  CHECK(train_hetero(g, f, cfg).users == r.users);
}

TEST_CASE("zero epochs returns the initial encoder") {
  const HeteroGraph g = two_cliques();
  const NodeFeatures f = build_node_features(g, WordEmbeddingTable{});
  TrainConfig cfg;
  cfg.hidden_dim = 5;
  cfg.output_dim = 3;
  cfg.epochs = 0;
  const HeteroTrainResult r = train_hetero(g, f, cfg);
  const RelationSet rel = build_relations(g);
  const auto init = init_encoder(rel, f.users.cols(), f.posts.cols(), {5, 3}, cfg.seed);
  CHECK(r.users.vectors() == encode(rel, f, init));
  CHECK(r.epoch_losses.empty());
}

TEST_CASE("training needs friendships") {
  const HeteroGraph g =
      graph_from_text(R"({"kind":"user","id":"a"})" "\n" R"({"kind":"user","id":"b"})" "\n");
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_hetero(g, build_node_features(g, WordEmbeddingTable{}), cfg), Error);
}

TEST_CASE("checkpoints round trip in float32") {
  const HeteroGraph g = two_cliques();
  const RelationSet rel = build_relations(g);
  const NodeFeatures f = build_node_features(g, WordEmbeddingTable{});
  const auto p = init_encoder(rel, f.users.cols(), f.posts.cols(), {5, 3}, 8);
  const auto dir = test::scratch_dir("hetero-ckpt");
  save_checkpoint(dir / "enc.bin", p.tensors(), R"({"seed":8})");
  std::string meta;
  const auto back = load_checkpoint(dir / "enc.bin", &meta);
  CHECK(meta == R"({"seed":8})");
  const auto orig = p.tensors();
  REQUIRE(back.size() == orig.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == orig[i].name);
    CHECK(back[i].value == orig[i].value.cast<float>().cast<double>());
  }
  const auto restored = HeteroEncoderParams::from_tensors(back, rel, p.activations);
  CHECK((encode(rel, f, restored) - encode(rel, f, p)).cwiseAbs().maxCoeff() < 1e-5);

  std::ofstream(dir / "junk.bin") << "XXXXnot a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin"), Error);
}

TEST_CASE("embedding files round trip and report bad lines") {
  Matrix v(2, 3);
  v << 0.1, -2.5, 1e-17, 3, 4, 5.25;
  const EmbeddingTable t({"a", "b"}, v);
  const auto dir = test::scratch_dir("hetero-emb");
  save_embeddings(dir / "z.txt", t, {{"stage", "embed"}});
  CHECK(load_embeddings(dir / "z.txt") == t);

  std::ofstream(dir / "bad.txt") << "2 3\na 1 2 3\nb 1 x 3\n";
  try {
    load_embeddings(dir / "bad.txt");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("bad.txt:3") != std::string::npos);
    CHECK(e.kind() == ErrorKind::kValidation);
  }
}
