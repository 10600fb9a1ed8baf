// Command-line driver: one subcommand per pipeline stage plus sweep, tmr,
// verify and synthetic-data generation.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpfuse/error.hpp"
#include "dpfuse/io.hpp"
#include "dpfuse/pipeline.hpp"
#include "dpfuse/synth.hpp"
#include "dpfuse/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dpfuse;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "Flat 'key = value' configuration file");
  cmd->add_option("--set", o.sets, "Override one key (key=value); repeatable");
  cmd->add_option("-o,--out-dir", o.out_dir, "Output directory (overrides DPFUSE_OUT_DIR)");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&o](std::uint64_t s) { o.seed = s, o.seed_given = true; }, "Master seed");
}

// Precedence: defaults < config file < DPFUSE_OUT_DIR < --set < explicit flags.
PipelineConfig resolve_config(const CommonOptions& o) {
  PipelineConfig cfg;
  if (!o.config.empty()) cfg = load_config(o.config);
  if (const char* env = std::getenv("DPFUSE_OUT_DIR"); env && *env) cfg.out_dir = env;
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw usage_error("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.seed_given) cfg.set("seed", std::to_string(o.seed));
  return cfg;
}

json paths_json(const std::map<std::string, fs::path>& outputs) {
  json j = json::object();
  for (const auto& [k, v] : outputs) j[k] = v.string();
  return j;
}

void print_stage(const std::string& stage, const StageResult& r) {
  std::cout << json{{"stage", stage}, {"outputs", paths_json(r.outputs)}, {"reused", r.reused}}.dump()
            << '\n';
}

std::array<double, 3> parse_triple(const std::string& name, const std::string& text) {
  std::array<double, 3> out{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 3) break;
    try {
      std::size_t used = 0;
      out[i] = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw usage_error(name + ": '" + item + "' is not a number");
    }
    ++i;
  }
  if (i != 3 || std::getline(ss, item, ','))
    throw usage_error(name + " expects three comma-separated values (attribute,friendship,posts)");
  return out;
}

void write_error_record(const json& record, const fs::path& out_dir) {
  std::cerr << record.dump() << '\n';
  if (out_dir.empty()) return;
  try {
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "error.json",
                      [&](std::ostream& out) { out << record.dump(2) << '\n'; });
  } catch (const std::exception&) {
    // The stderr record is enough when the directory is unusable.
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privacy-preserving cross-network user embedding pipeline", "dpfuse"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  CommonOptions common;
  std::string graph, graph_a, graph_b, z1, z2, anchors, embeddings, out, out_a, out_b;

  auto* sanitize = app.add_subcommand("sanitize", "Perturb a graph under the hybrid budget");
  add_common(sanitize, common);
  sanitize->add_option("-g,--graph", graph, "Input graph (JSON Lines)")->required();
  sanitize->add_option("--out", out, "Output graph path (default: digest-named in out_dir)");

  auto* embed = app.add_subcommand("embed", "Train the heterogeneous encoder on a graph");
  add_common(embed, common);
  embed->add_option("-g,--graph", graph, "Sanitized graph")->required();
  embed->add_option("--out", out, "Output embedding path");

  auto* align = app.add_subcommand("align", "Learn the cross-network map and predict anchors");
  add_common(align, common);
  align->add_option("--z1", z1, "Network A embeddings")->required();
  align->add_option("--z2", z2, "Network B embeddings")->required();
  align->add_option("--out", out, "Output anchor file");

  auto* fuse = app.add_subcommand("fuse", "Fuse the two embedding tables through anchors");
  add_common(fuse, common);
  fuse->add_option("--graph-a", graph_a, "Sanitized graph A")->required();
  fuse->add_option("--graph-b", graph_b, "Sanitized graph B")->required();
  fuse->add_option("--z1", z1, "Network A embeddings")->required();
  fuse->add_option("--z2", z2, "Network B embeddings")->required();
  fuse->add_option("--anchors", anchors, "Anchor file")->required();
  fuse->add_option("--out-a", out_a, "Fused A output");
  fuse->add_option("--out-b", out_b, "Fused B output");

  auto* eval = app.add_subcommand("eval", "Interest prediction and attribute-inference attacks");
  add_common(eval, common);
  eval->add_option("-g,--graph", graph, "Graph carrying the labels")->required();
  eval->add_option("-e,--embeddings", embeddings, "Embedding table")->required();
  eval->add_option("--out", out, "Report path");

  auto* run = app.add_subcommand("run", "sanitize -> embed -> align -> fuse -> eval");
  add_common(run, common);
  run->add_option("--graph-a", graph_a, "Graph A (overrides graph_a)");
  run->add_option("--graph-b", graph_b, "Graph B (overrides graph_b)");

  auto* sweep = app.add_subcommand("sweep", "Repeat the pipeline over a budget grid, write CSV");
  add_common(sweep, common);
  sweep->add_option("--graph-a", graph_a, "Graph A (overrides graph_a)");
  sweep->add_option("--graph-b", graph_b, "Graph B (overrides graph_b)");
  sweep->add_option("--out", out, "CSV path");

  std::string task, gender, occupation;
  double total = 0;
  auto* tmr = app.add_subcommand("tmr", "Task-relevance to message-inference ratios");
  add_common(tmr, common);
  tmr->add_option("-g,--graph", graph, "Measure precisions on this labelled graph");
  tmr->add_option("--task", task, "Given task precisions: attribute,friendship,posts");
  tmr->add_option("--gender", gender, "Given gender-attack precisions");
  tmr->add_option("--occupation", occupation, "Given occupation-attack precisions");
  tmr->add_option("--total", total, "Total budget to allocate (default eps_a+eps_g+eps_t)");
  tmr->add_option("--out", out, "Report path");

  std::vector<std::string> check_files;
  bool with_alignment = false;
  auto* verify = app.add_subcommand("verify", "Run the invariant suite");
  add_common(verify, common);
  verify->add_option("--embeddings", check_files, "Also check that these embedding files load");
  verify->add_flag("--alignment", with_alignment, "Include the planted-rotation alignment check");

  SynthConfig synth_cfg;
  bool pair = false;
  double anchor_fraction = 0.5;
  std::string anchors_out, prefix = "u";
  auto* synth = app.add_subcommand("synth", "Write planted-community synthetic graphs");
  synth->add_option("--users", synth_cfg.users, "Users per graph");
  synth->add_option("--communities", synth_cfg.communities, "Planted groups (at most 5)");
  synth->add_option("--intra-degree", synth_cfg.intra_degree, "Expected friends inside a group");
  synth->add_option("--inter-degree", synth_cfg.inter_degree, "Expected friends across groups");
  synth->add_option("--posts", synth_cfg.posts_per_user, "Posts per user");
  synth->add_option("--gender-homophily", synth_cfg.gender_homophily, "Same-gender edge bias");
  synth->add_option("--seed", synth_cfg.seed, "Generator seed");
  synth->add_option("--prefix", prefix, "User id prefix (single graph)");
  synth->add_flag("--pair", pair, "Write two overlapping networks and their true anchors");
  synth->add_option("--anchor-fraction", anchor_fraction, "Shared users with --pair");
  synth->add_option("--out", out, "Graph path (single graph)");
  synth->add_option("--out-a", out_a, "Graph A path (--pair)");
  synth->add_option("--out-b", out_b, "Graph B path (--pair)");
  synth->add_option("--anchors-out", anchors_out, "True anchor path (--pair)");

  auto* config = app.add_subcommand("config", "Print the resolved configuration");
  add_common(config, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    std::cerr << app.help();
    std::cerr << json{{"error", {{"kind", "usage"}, {"message", e.what()}, {"exit_code", 1}}}}.dump()
              << '\n';
    return 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  fs::path out_dir;
  try {
    if (command == "synth") {
      if (pair) {
        if (out_a.empty() || out_b.empty())
          throw usage_error("synth --pair needs --out-a and --out-b");
        const SynthPair p = synth_cross_pair(synth_cfg, anchor_fraction);
        const json prov = {{"tool", kToolName}, {"version", kToolVersion}, {"stage", "synth"},
                           {"seed", synth_cfg.seed}, {"users", synth_cfg.users},
                           {"anchor_fraction", anchor_fraction}};
        save_graph(out_a, p.a, prov);
        save_graph(out_b, p.b, prov);
        if (!anchors_out.empty()) save_anchors(anchors_out, p.anchors, prov);
      } else {
        if (out.empty()) throw usage_error("synth needs --out");
        save_graph(out, synth_graph(synth_cfg, prefix),
                   {{"tool", kToolName}, {"version", kToolVersion}, {"stage", "synth"},
                    {"seed", synth_cfg.seed}, {"users", synth_cfg.users}});
      }
      return 0;
    }

    // Where to leave error.json if the configuration itself is rejected.
    if (!common.out_dir.empty()) {
      out_dir = common.out_dir;
    } else if (const char* env = std::getenv("DPFUSE_OUT_DIR"); env && *env) {
      out_dir = env;
    }
    PipelineConfig cfg = resolve_config(common);
    out_dir = cfg.out_dir;
    if (!graph_a.empty()) cfg.graph_a = graph_a;
    if (!graph_b.empty()) cfg.graph_b = graph_b;

    if (command == "config") {
      std::cout << cfg.to_json().dump(2) << '\n';
    } else if (command == "sanitize") {
      print_stage("sanitize", run_sanitize(cfg, graph, out));
    } else if (command == "embed") {
      print_stage("embed", run_embed(cfg, graph, out));
    } else if (command == "align") {
      print_stage("align", run_align(cfg, z1, z2, out));
    } else if (command == "fuse") {
      print_stage("fuse", run_fuse(cfg, graph_a, graph_b, z1, z2, anchors, out_a, out_b));
    } else if (command == "eval") {
      const StageResult r = run_eval(cfg, graph, embeddings, out);
      print_stage("eval", r);
    } else if (command == "run") {
      const PipelineRun r = run_pipeline(cfg);
      std::cout << json{{"stage", "run"}, {"outputs", paths_json(r.outputs)}}.dump() << '\n';
    } else if (command == "sweep") {
      std::cout << json{{"stage", "sweep"}, {"outputs", {{"csv", run_sweep(cfg, out).string()}}}}.dump()
                << '\n';
    } else if (command == "tmr") {
      const bool given = !task.empty() || !gender.empty() || !occupation.empty();
      if (given == !graph.empty())
        throw usage_error("tmr needs either --graph or all of --task, --gender, --occupation");
      if (total == 0) total = cfg.budget.eps_a + cfg.budget.eps_g + cfg.budget.eps_t;
      if (!graph.empty()) {
        const StageResult r = run_tmr(cfg, graph, out);
        print_stage("tmr", r);
      } else {
        if (task.empty() || gender.empty() || occupation.empty())
          throw usage_error("tmr needs all of --task, --gender, --occupation");
        const TmrReport rep = compute_tmr(parse_triple("--task", task), parse_triple("--gender", gender),
                                          parse_triple("--occupation", occupation));
        const PrivacyBudget alloc = allocate_budgets(rep, total);
        json doc = {{"tmr", rep.to_json()},
                    {"total_budget", total},
                    {"allocation", {{"eps_a", alloc.eps_a}, {"eps_g", alloc.eps_g}, {"eps_t", alloc.eps_t}}}};
        if (!out.empty()) {
          doc["provenance"] = provenance("tmr", cfg, {}, {{"task", task}, {"gender", gender},
                                                         {"occupation", occupation}});
          if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
          write_file_atomic(out, [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
        }
        std::cout << doc.dump(2) << '\n';
      }
    } else if (command == "verify") {
      auto results = run_invariant_suite(cfg.seed);
      if (with_alignment) results.push_back(check_alignment_recovery(cfg.seed));
      for (const auto& f : check_files) {
        PropertyResult r;
        r.name = "load " + f;
        try {
          const EmbeddingTable t = load_embeddings(f);
          r.pass = true;
          r.detail = std::to_string(t.size()) + " rows, dim " + std::to_string(t.dim());
        } catch (const std::exception& e) {
          r.detail = e.what();
        }
        results.push_back(r);
      }
      bool ok = true;
      for (const auto& r : results) {
        ok = ok && r.pass;
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " ["
                  << format_double(r.seconds) << " s]\n";
      }
      if (!ok) throw validation_error("verify: at least one property failed");
    }
    return 0;
  } catch (const Error& e) {
    write_error_record({{"error",
                         {{"kind", to_string(e.kind())},
                          {"command", command},
                          {"message", e.what()},
                          {"exit_code", exit_code(e.kind())}}}},
                       out_dir);
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    write_error_record({{"error",
                         {{"kind", "internal"},
                          {"command", command},
                          {"message", e.what()},
                          {"exit_code", 2}}}},
                       out_dir);
    return 2;
  }
}
