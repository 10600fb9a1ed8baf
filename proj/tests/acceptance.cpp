// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dpfuse/io.hpp"
#include "dpfuse/mechanisms.hpp"
#include "dpfuse/pipeline.hpp"
#include "dpfuse/synth.hpp"
#include "dpfuse/verify.hpp"

using namespace dpfuse;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds, double limit) {
  const bool in_time = limit <= 0 || seconds < limit;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::ostringstream line;
  line << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " ("
       << format_double(seconds) << " s";
  if (limit > 0) line << ", limit " << format_double(limit) << " s";
  line << ")";
  std::cout << line.str() << std::endl;
}

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void timed(int id, const std::string& name, double limit, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  report(id, name, o, elapsed(start), limit);
}

Outcome from(const PropertyResult& r) { return {r.pass, r.detail}; }

Outcome all_of(const std::vector<PropertyResult>& rs) {
  Outcome o{true, ""};
  for (const auto& r : rs) {
    o.pass = o.pass && r.pass;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += r.detail;
  }
  return o;
}

std::string points(double v) { return format_double(std::round(v * 1000) / 10); }

double precision_of(const EvalReport& r) { return r.metrics.at("precision").mean; }

// Interest precision of single-network, hierarchy-fused and iterative-fused
// embeddings of network A, averaged over seeds.
struct FusionTrend {
  double single = 0, hierarchy = 0, iterative = 0;
  double seconds = 0;
};

FusionTrend fusion_trend(int seeds) {
  const auto start = Clock::now();
  FusionTrend t;
  for (int s = 1; s <= seeds; ++s) {
    SynthConfig sc;
    sc.users = 300;
    sc.seed = static_cast<std::uint64_t>(s);
    const SynthPair pair = synth_cross_pair(sc, 0.5);

    PipelineConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(s);
    cfg.propagate_seed();
    const HeteroGraph a = sanitize_graph(pair.a, cfg.budget, train_word_vectors(pair.a, cfg.embed.words),
                                         cfg.seed);
    const HeteroGraph b = sanitize_graph(pair.b, cfg.budget, train_word_vectors(pair.b, cfg.embed.words),
                                         cfg.seed + 100);
    const EmbedOutput ea = embed_graph(a, cfg.embed);
    const EmbedOutput eb = embed_graph(b, cfg.embed);

    FusionConfig hier = cfg.fuse;
    hier.mode = FusionMode::kHierarchy;
    FusionConfig iter = cfg.fuse;
    iter.mode = FusionMode::kIterative;
    const FusionResult fh = train_fusion(a, b, ea.train.users, eb.train.users, pair.anchors, hier);
    const FusionResult fi = train_fusion(a, b, ea.train.users, eb.train.users, pair.anchors, iter);

    t.single += precision_of(predict_interests(ea.train.users, a, cfg.eval, cfg.tree));
    t.hierarchy += precision_of(predict_interests(fh.o1, a, cfg.eval, cfg.tree));
    t.iterative += precision_of(predict_interests(fi.o1, a, cfg.eval, cfg.tree));
  }
  t.single /= seeds;
  t.hierarchy /= seeds;
  t.iterative /= seeds;
  t.seconds = elapsed(start);
  return t;
}

Outcome privacy_trend(int seeds) {
  double raw = 0, sanitized = 0;
  for (int s = 1; s <= seeds; ++s) {
    SynthConfig sc;
    sc.seed = static_cast<std::uint64_t>(s);
    const HeteroGraph g = synth_graph(sc, "u");
    PipelineConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(s);
    cfg.propagate_seed();
    cfg.budget.eps_a = 1.0;
    const HeteroGraph clean = sanitize_graph(g, cfg.budget, train_word_vectors(g, cfg.embed.words), cfg.seed);
    raw += precision_of(attack_gender(embed_graph(g, cfg.embed).train.users, g, cfg.eval, cfg.logreg));
    sanitized +=
        precision_of(attack_gender(embed_graph(clean, cfg.embed).train.users, clean, cfg.eval, cfg.logreg));
  }
  raw /= seeds;
  sanitized /= seeds;
  const double drop = raw - sanitized;
  return {drop >= 0.10, "gender attack precision unsanitized " + points(raw) + "%, sanitized " +
                            points(sanitized) + "%, drop " + points(drop) + " points (need >= 10)"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("cd '") + DPFUSE_SOURCE_DIR + "' && '" + DPFUSE_CLI + "' " + args +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file()) files[fs::relative(entry.path(), root).string()] = read_file(entry.path());
  return files;
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "dpfuse-acceptance";
  fs::remove_all(base);
  const fs::path first = base / "first", second = base / "second";
  const std::string conf = " --config data/fixtures/pipeline.conf -o ";
  const int c1 = run_cli("run" + conf + "'" + first.string() + "'");
  const int c2 = run_cli("run" + conf + "'" + second.string() + "'");
  if (c1 != 0 || c2 != 0)
    return {false, "run exited " + std::to_string(c1) + " and " + std::to_string(c2)};
  const auto a = tree_contents(first), b = tree_contents(second);
  if (a.empty()) return {false, "run wrote no files"};
  if (a != b) {
    for (const auto& [name, bytes] : a) {
      const auto it = b.find(name);
      if (it == b.end()) return {false, name + " missing from the second run"};
      if (it->second != bytes) return {false, name + " differs between runs"};
    }
    return {false, "the second run wrote extra files"};
  }
  fs::remove_all(base);
  return {true, std::to_string(a.size()) + " files byte-identical across two runs"};
}

}  // namespace

int main() {
  timed(1, "text mechanism log-ratio bound", 1,
        [] { return from(check_mdp_ratio({0.5, 2, 7.5}, 1)); });
  timed(2, "text mechanism normalization", 1,
        [] { return from(check_mdp_normalization({0.5, 2, 7.5}, 1)); });
  timed(3, "piecewise mechanism unbiasedness", 10, [] { return from(check_pm_unbiased(100000, 1)); });
  timed(4, "edge filter expected edge count", 30,
        [] { return from(check_edge_filter_expectation(100, 200, 10, 1000, 1)); });
  timed(5, "TMR from published precisions", 1, [] {
    // Attribute precisions are placeholders; only friendship and posts are checked.
    const TmrReport r = compute_tmr({0.5, 0.453, 0.463}, {0.5, 0.508, 0.569}, {0.5, 0.102, 0.149});
    const double friendship = r[DataType::kFriendship].tmr, posts = r[DataType::kPosts].tmr;
    return Outcome{std::abs(friendship - 0.743) <= 0.001 && std::abs(posts - 0.645) <= 0.001,
                   "friendship " + format_double(friendship) + ", posts " + format_double(posts) +
                       " (expected 0.743 and 0.645 within 0.001)"};
  });
  timed(6, "analytic gradients against central differences", 30, [] {
    return all_of({check_encoder_gradient(10, 1), check_fusion_gradient(10, 1)});
  });
  timed(7, "propagation against dense adjacency powers", 5,
        [] { return from(check_propagation_oracle(10, 1)); });
  timed(8, "planted-rotation alignment recovery", 120, [] {
    return all_of({check_alignment_recovery(1), check_alignment_recovery(2), check_alignment_recovery(3)});
  });

  FusionTrend trend;
  std::string trend_error;
  try {
    trend = fusion_trend(5);
  } catch (const std::exception& e) {
    trend_error = std::string("error: ") + e.what();
  }
  const double gain = trend.hierarchy - trend.single;
  report(9, "fusion beats single-network embeddings",
         trend_error.empty()
             ? Outcome{gain >= 0.02, "interest precision single " + points(trend.single) + "%, fused " +
                                         points(trend.hierarchy) + "%, gain " + points(gain) +
                                         " points (need >= 2)"}
             : Outcome{false, trend_error},
         trend.seconds, 600);

  timed(10, "sanitization lowers gender-attack precision", 600, [] { return privacy_trend(5); });

  // Reuses the runs of criterion 9; its time is already counted there.
  const double margin = trend.hierarchy - trend.iterative;
  report(11, "hierarchy mode does not lose to iterative mode",
         trend_error.empty()
             ? Outcome{margin >= -0.005, "hierarchy " + points(trend.hierarchy) + "%, iterative " +
                                             points(trend.iterative) + "%, difference " + points(margin) +
                                             " points (need >= -0.5)"}
             : Outcome{false, trend_error},
         0, 0);
  timed(12, "pipeline reruns are byte-identical", 0, determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
