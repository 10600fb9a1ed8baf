#include <doctest.h>

#include <bit>
#include <set>

#include "dpfuse/error.hpp"
#include "dpfuse/graph.hpp"
#include "dpfuse/synth.hpp"
#include "helpers.hpp"

using namespace dpfuse;
using dpfuse::test::graph_from_text;
using dpfuse::test::graph_to_text;

namespace {

const char* kMinimal =
    R"({"kind":"user","id":"alice","attrs":{"followers":10,"name":"alice_x"},"interests":[1,3],"gender":0})"
    "\n"
    R"({"kind":"user","id":"bob","attrs":{"followers":30,"name":"bobby"},"gender":1})"
    "\n"
    R"({"kind":"friend","a":"alice","b":"bob"})"
    "\n"
    R"({"kind":"post","id":"p1","author":"bob","text":"hello world"})"
    "\n";

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("minimal file loads with the expected counts") {
  const HeteroGraph g = graph_from_text(kMinimal);
  CHECK(g.user_count() == 2);
  CHECK(g.post_count() == 1);
  CHECK(g.friendships.size() == 1);
  CHECK(g.post_author[0] == 1);
  CHECK(g.post_tokens[0] == std::vector<std::string>{"hello", "world"});
  REQUIRE(g.interests[0].has_value());
  CHECK(*g.interests[0] == std::vector<int>{1, 3});
  CHECK_FALSE(g.interests[1].has_value());
  CHECK(extract_user_graph(g).m() == 1);
}

TEST_CASE("numeric slots are normalized into [-1, 1]") {
  const HeteroGraph g = graph_from_text(kMinimal);
  for (const auto& a : g.attrs)
    for (double v : a.values) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
}

TEST_CASE("dangling and malformed references are rejected with a line number") {
  const std::string dangling = std::string(kMinimal) +
                               R"({"kind":"post","id":"p2","author":"carol","text":"x"})" + "\n";
  const auto msg = message_of([&] { graph_from_text(dangling); });
  CHECK(msg.find("dangling") != std::string::npos);
  CHECK(msg.find("<test>:5") != std::string::npos);

  CHECK_THROWS_AS(graph_from_text(std::string(kMinimal) + R"({"kind":"friend","a":"bob","b":"bob"})" + "\n"),
                  Error);
  CHECK_THROWS_AS(graph_from_text(std::string(kMinimal) + R"({"kind":"friend","a":"bob","b":"alice"})" + "\n"),
                  Error);
  CHECK_THROWS_AS(graph_from_text(std::string(kMinimal) + R"({"kind":"user","id":"bob","attrs":{"followers":1,"name":"b"}})" + "\n"),
                  Error);
  CHECK_THROWS_AS(graph_from_text("{not json}\n"), Error);
  CHECK_THROWS_AS(graph_from_text(R"({"kind":"alien"})" "\n"), Error);
}

TEST_CASE("attribute schema mismatches are rejected") {
  const std::string text =
      R"({"kind":"user","id":"a","attrs":{"followers":1}})" "\n"
      R"({"kind":"user","id":"b","attrs":{"following":1}})" "\n";
  CHECK_THROWS_AS(graph_from_text(text), Error);
  const std::string bad_category =
      R"({"kind":"user","id":"a","attrs":{"g":{"category":3,"cardinality":2}}})" "\n";
  CHECK_THROWS_AS(graph_from_text(bad_category), Error);
}

TEST_CASE("screen-name encoding is deterministic, bounded and locality sensitive") {
  CHECK(encode_screen_name("alice_w") == encode_screen_name("alice_w"));
  const double a = encode_screen_name("a");
  CHECK(a >= -1.0);
  CHECK(a <= 1.0);

  // One-character edits move the fingerprint less than unrelated names do.
  Rng rng(5);
  auto random_name = [&] {
    std::string s;
    for (int i = 0; i < 12; ++i) s.push_back(static_cast<char>('a' + rng.index(26)));
    return s;
  };
  double near = 0, far = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    std::string s = random_name();
    std::string edited = s;
    edited[6] = edited[6] == 'z' ? 'y' : static_cast<char>(edited[6] + 1);
    near += std::popcount(simhash64(s) ^ simhash64(edited));
    far += std::popcount(simhash64(s) ^ simhash64(random_name()));
  }
  CHECK(near / trials < 0.6 * far / trials);
}

TEST_CASE("user graph extraction") {
  const std::string no_edges =
      R"({"kind":"user","id":"a"})" "\n" R"({"kind":"user","id":"b"})" "\n";
  CHECK(extract_user_graph(graph_from_text(no_edges)).m() == 0);

  std::string triangle =
      R"({"kind":"user","id":"a"})" "\n" R"({"kind":"user","id":"b"})" "\n"
      R"({"kind":"user","id":"c"})" "\n"
      R"({"kind":"friend","a":"a","b":"b"})" "\n" R"({"kind":"friend","a":"b","b":"c"})" "\n"
      R"({"kind":"friend","a":"c","b":"a"})" "\n";
  for (int p = 0; p < 5; ++p)
    triangle += R"({"kind":"post","id":"p)" + std::to_string(p) + R"(","author":"a","text":"x"})" "\n";
  const UserGraph ug = extract_user_graph(graph_from_text(triangle));
  CHECK(ug.n() == 3);
  CHECK(ug.m() == 3);
  CHECK(ug.has_edge(2, 0));
  CHECK(ug.degree(1) == 2);
}

TEST_CASE("user graph rejects self-loops and duplicates") {
  CHECK_THROWS_AS(UserGraph(3, {{0, 0}}), Error);
  CHECK_THROWS_AS(UserGraph(3, {{0, 1}, {1, 0}}), Error);
  CHECK_THROWS_AS(UserGraph(2, {{0, 2}}), Error);
}

TEST_CASE("label splits follow the rounding rule and are deterministic") {
  auto ids = [](std::size_t n) {
    std::vector<UserIndex> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<UserIndex>(i);
    return v;
  };
  const LabelSplit s10 = split_ids(ids(10), 0.8, 3);
  CHECK(s10.train.size() == 8);
  CHECK(s10.test.size() == 2);
  const LabelSplit s5 = split_ids(ids(5), 0.8, 3);
  CHECK(s5.train.size() == 4);
  CHECK(s5.test.size() == 1);

  const LabelSplit again = split_ids(ids(10), 0.8, 3);
  CHECK(again.train == s10.train);
  CHECK(again.test == s10.test);

  std::set<UserIndex> all(s10.train.begin(), s10.train.end());
  for (auto t : s10.test) CHECK(all.insert(t).second);
  CHECK(all.size() == 10);

  CHECK_THROWS_AS(split_ids(ids(10), 1.5, 1), Error);
  CHECK_THROWS_AS(split_ids({}, 0.8, 1), Error);
}

TEST_CASE("split_labels only uses interest-labelled users") {
  SynthConfig cfg;
  cfg.users = 12;
  HeteroGraph g = synth_graph(cfg);
  g.interests[0].reset();
  g.interests[5].reset();
  const LabelSplit s = split_labels(g, 0.8, 9);
  CHECK(s.train.size() == 8);
  CHECK(s.test.size() == 2);
  for (auto u : s.train) CHECK(g.interests[u].has_value());
  for (auto u : s.test) CHECK(g.interests[u].has_value());

  const HeteroGraph none = graph_from_text(R"({"kind":"user","id":"a"})" "\n");
  CHECK_THROWS_AS(split_labels(none, 0.8, 1), Error);
}

TEST_CASE("save then load reproduces the graph") {
  SynthConfig cfg;
  cfg.users = 40;
  const HeteroGraph g = synth_graph(cfg);
  const std::string text = graph_to_text(g);
  const HeteroGraph back = graph_from_text(text);
  CHECK(back == g);
  CHECK(graph_to_text(back) == text);
}

TEST_CASE("provenance records are carried as the first line and ignored on load") {
  const HeteroGraph g = graph_from_text(kMinimal);
  std::ostringstream out;
  write_graph(out, g, {{"tool", "dpfuse"}, {"seed", 4}});
  const std::string text = out.str();
  CHECK(text.rfind(R"({"kind":"provenance")", 0) == 0);
  CHECK(graph_from_text(text) == g);
}
