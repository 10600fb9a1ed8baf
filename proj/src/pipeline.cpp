#include "dpfuse/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "dpfuse/error.hpp"
#include "dpfuse/io.hpp"
#include "dpfuse/log.hpp"

namespace dpfuse {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw usage_error("config key '" + key + "': '" + v + "' is not a number");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw usage_error("config key '" + key + "': '" + v + "' is not a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw usage_error("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double(key, item));
  }
  return out;
}

struct Key {
  const char* name;
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  std::function<json(const PipelineConfig&)> get;
};

#define DPFUSE_NUM(KEY, FIELD)                                                             \
  Key {                                                                                    \
    KEY, [](PipelineConfig& c, const std::string& k, const std::string& v) {               \
      c.FIELD = to_double(k, v);                                                           \
    },                                                                                     \
        [](const PipelineConfig& c) { return json(c.FIELD); }                              \
  }
#define DPFUSE_INT(KEY, FIELD)                                                             \
  Key {                                                                                    \
    KEY, [](PipelineConfig& c, const std::string& k, const std::string& v) {               \
      c.FIELD = static_cast<decltype(c.FIELD)>(to_u64(k, v));                              \
    },                                                                                     \
        [](const PipelineConfig& c) { return json(c.FIELD); }                              \
  }
#define DPFUSE_BOOL(KEY, FIELD)                                                            \
  Key {                                                                                    \
    KEY, [](PipelineConfig& c, const std::string& k, const std::string& v) {               \
      c.FIELD = to_bool(k, v);                                                             \
    },                                                                                     \
        [](const PipelineConfig& c) { return json(c.FIELD); }                              \
  }
#define DPFUSE_PATH(KEY, FIELD)                                                            \
  Key {                                                                                    \
    KEY, [](PipelineConfig& c, const std::string&, const std::string& v) { c.FIELD = v; }, \
        [](const PipelineConfig& c) { return json(c.FIELD.string()); }                     \
  }
#define DPFUSE_LIST(KEY, FIELD)                                                            \
  Key {                                                                                    \
    KEY, [](PipelineConfig& c, const std::string& k, const std::string& v) {               \
      c.FIELD = to_list(k, v);                                                             \
    },                                                                                     \
        [](const PipelineConfig& c) { return json(c.FIELD); }                              \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      DPFUSE_PATH("graph_a", graph_a),
      DPFUSE_PATH("graph_b", graph_b),
      DPFUSE_PATH("out_dir", out_dir),
      DPFUSE_NUM("eps_a", budget.eps_a),
      DPFUSE_NUM("eps_g", budget.eps_g),
      DPFUSE_NUM("eps_t", budget.eps_t),
      Key{"seed",
          [](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.seed = to_u64(k, v);
            c.propagate_seed();
          },
          [](const PipelineConfig& c) { return json(c.seed); }},
      DPFUSE_BOOL("deterministic", deterministic),
      DPFUSE_BOOL("reuse_outputs", reuse_outputs),
      DPFUSE_INT("words.dim", embed.words.dim),
      DPFUSE_INT("words.window", embed.words.window),
      DPFUSE_INT("words.negatives", embed.words.negatives),
      DPFUSE_INT("words.epochs", embed.words.epochs),
      DPFUSE_NUM("words.lr", embed.words.learning_rate),
      DPFUSE_INT("words.min_count", embed.words.min_count),
      DPFUSE_INT("walks.per_node", walks.walks_per_node),
      DPFUSE_INT("walks.length", walks.walk_length),
      DPFUSE_NUM("hetero.lr", embed.encoder.learning_rate),
      DPFUSE_INT("hetero.epochs", embed.encoder.epochs),
      DPFUSE_INT("hetero.negatives", embed.encoder.negatives),
      DPFUSE_NUM("hetero.negative_exponent", embed.encoder.negative_exponent),
      DPFUSE_INT("hetero.batch_pairs", embed.encoder.batch_pairs),
      DPFUSE_INT("hetero.hidden", embed.encoder.hidden_dim),
      DPFUSE_INT("hetero.output", embed.encoder.output_dim),
      DPFUSE_INT("align.hidden", align.hidden),
      DPFUSE_NUM("align.leaky_slope", align.leaky_slope),
      DPFUSE_INT("align.epochs", align.epochs),
      DPFUSE_INT("align.batch", align.batch),
      DPFUSE_INT("align.discriminator_steps", align.discriminator_steps),
      DPFUSE_NUM("align.lr_generator", align.lr_generator),
      DPFUSE_NUM("align.lr_discriminator", align.lr_discriminator),
      DPFUSE_NUM("align.beta", align.beta),
      DPFUSE_INT("align.csls_k", align.csls_k),
      DPFUSE_BOOL("align.moment_init", align.moment_init),
      DPFUSE_BOOL("align.select_best", align.select_best),
      DPFUSE_NUM("align.margin", anchor_margin),
      DPFUSE_INT("fuse.k", fuse.hops),
      DPFUSE_NUM("fuse.alpha", fuse.anchor_weight),
      DPFUSE_INT("fuse.output", fuse.output_dim),
      Key{"fuse.activation",
          [](PipelineConfig& c, const std::string&, const std::string& v) {
            c.fuse.activation = parse_activation(v);
          },
          [](const PipelineConfig& c) { return json(to_string(c.fuse.activation)); }},
      Key{"fuse.mode",
          [](PipelineConfig& c, const std::string&, const std::string& v) {
            c.fuse.mode = parse_fusion_mode(v);
          },
          [](const PipelineConfig& c) { return json(to_string(c.fuse.mode)); }},
      DPFUSE_NUM("fuse.lr", fuse.learning_rate),
      DPFUSE_INT("fuse.epochs", fuse.epochs),
      DPFUSE_INT("fuse.negatives", fuse.negatives),
      DPFUSE_NUM("fuse.negative_exponent", fuse.negative_exponent),
      DPFUSE_NUM("eval.train_ratio", eval.train_ratio),
      Key{"eval.repeats",
          [](PipelineConfig& c, const std::string& k, const std::string& v) {
            const auto r = to_u64(k, v);
            if (r == 0) throw usage_error("eval.repeats must be positive");
            c.eval.seeds.resize(r);
            c.propagate_seed();
          },
          [](const PipelineConfig& c) { return json(c.eval.seeds.size()); }},
      DPFUSE_INT("eval.tree_depth", tree.max_depth),
      DPFUSE_INT("eval.tree_min_leaf", tree.min_leaf),
      DPFUSE_NUM("eval.logreg_lr", logreg.learning_rate),
      DPFUSE_INT("eval.logreg_epochs", logreg.epochs),
      DPFUSE_NUM("eval.logreg_l2", logreg.l2),
      DPFUSE_LIST("sweep.eps_a", sweep_eps_a),
      DPFUSE_LIST("sweep.eps_g", sweep_eps_g),
      DPFUSE_LIST("sweep.eps_t", sweep_eps_t),
      DPFUSE_INT("sweep.jobs", sweep_jobs),
  };
  return table;
}

#undef DPFUSE_NUM
#undef DPFUSE_INT
#undef DPFUSE_BOOL
#undef DPFUSE_PATH
#undef DPFUSE_LIST

json budget_json(const PrivacyBudget& b) {
  return {{"eps_a", b.eps_a}, {"eps_g", b.eps_g}, {"eps_t", b.eps_t}};
}

json skipgram_json(const SkipGramConfig& c) {
  return {{"dim", c.dim},           {"window", c.window}, {"negatives", c.negatives},
          {"epochs", c.epochs},     {"lr", c.learning_rate}, {"seed", c.seed},
          {"min_count", c.min_count}};
}

json encoder_json(const TrainConfig& c) {
  return {{"lr", c.learning_rate},     {"epochs", c.epochs},
          {"negatives", c.negatives},  {"negative_exponent", c.negative_exponent},
          {"seed", c.seed},            {"batch_pairs", c.batch_pairs},
          {"hidden", c.hidden_dim},    {"output", c.output_dim}};
}

json walks_json(const WalkConfig& c) {
  return {{"per_node", c.walks_per_node}, {"length", c.walk_length}, {"seed", c.seed}};
}

json gan_json(const GanConfig& c, double margin) {
  return {{"hidden", c.hidden},
          {"leaky_slope", c.leaky_slope},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"discriminator_steps", c.discriminator_steps},
          {"lr_generator", c.lr_generator},
          {"lr_discriminator", c.lr_discriminator},
          {"beta", c.beta},
          {"seed", c.seed},
          {"csls_k", c.csls_k},
          {"moment_init", c.moment_init},
          {"select_best", c.select_best},
          {"margin", margin}};
}

json fusion_json(const FusionConfig& c) {
  return {{"k", c.hops},
          {"alpha", c.anchor_weight},
          {"output", c.output_dim},
          {"activation", to_string(c.activation)},
          {"mode", to_string(c.mode)},
          {"lr", c.learning_rate},
          {"epochs", c.epochs},
          {"negatives", c.negatives},
          {"negative_exponent", c.negative_exponent},
          {"seed", c.seed}};
}

json eval_json(const PipelineConfig& c) {
  return {{"train_ratio", c.eval.train_ratio},
          {"seeds", c.eval.seeds},
          {"tree", c.tree.to_json()},
          {"logreg", c.logreg.to_json()}};
}

// Deletes every registered file unless the stage completed.
class OutputGuard {
 public:
  void add(const fs::path& p) { files_.push_back(p); }
  void commit() { committed_ = true; }
  ~OutputGuard() {
    if (committed_) return;
    for (const auto& p : files_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }

 private:
  std::vector<fs::path> files_;
  bool committed_ = false;
};

struct StagePlan {
  json prov;
  std::string key;
  StageResult result;
};

StagePlan plan_stage(const std::string& stage, const PipelineConfig& cfg,
                     const std::map<std::string, fs::path>& inputs, const json& stage_config) {
  std::map<std::string, std::string> digests;
  for (const auto& [name, path] : inputs) {
    if (!fs::exists(path)) throw io_error(stage + ": input '" + path.string() + "' does not exist");
    digests[name] = file_digest(path);
  }
  StagePlan plan;
  plan.prov = provenance(stage, cfg, digests, stage_config);
  plan.key = sha256_hex(plan.prov.dump()).substr(0, 16);
  return plan;
}

// Digest-named file in out_dir, or the explicit path / a sibling of it.
fs::path output_path(const PipelineConfig& cfg, const fs::path& explicit_out,
                     const std::string& digest_name, const std::string& sibling_suffix) {
  if (explicit_out.empty()) return cfg.out_dir / digest_name;
  if (sibling_suffix.empty()) return explicit_out;
  return explicit_out.parent_path() / (explicit_out.stem().string() + sibling_suffix);
}

bool try_reuse(const PipelineConfig& cfg, bool explicit_out, StageResult& r) {
  if (!cfg.reuse_outputs || explicit_out) return false;
  for (const auto& [name, p] : r.outputs)
    if (!fs::exists(p)) return false;
  r.reused = true;
  return true;
}

void write_json(const fs::path& path, const json& j) {
  write_file_atomic(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

void prepare_dirs(const StageResult& r) {
  for (const auto& [name, p] : r.outputs)
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : key_table()) {
    if (key == k.name) {
      k.set(*this, key, trim(value));
      return;
    }
  }
  throw usage_error("unknown config key '" + key + "'");
}

void PipelineConfig::propagate_seed() {
  embed.words.seed = seed;
  embed.encoder.seed = seed;
  walks.seed = seed;
  align.seed = seed;
  fuse.seed = seed;
  for (std::size_t i = 0; i < eval.seeds.size(); ++i) eval.seeds[i] = seed + i;
}

void PipelineConfig::validate() const {
  budget.validate();
  embed.words.validate();
  embed.encoder.validate();
  walks.validate();
  align.validate();
  fuse.validate();
  eval.validate();
  tree.validate();
  logreg.validate();
  for (const auto* list : {&sweep_eps_a, &sweep_eps_g, &sweep_eps_t})
    for (double e : *list)
      if (!(e > 0.0) || !std::isfinite(e)) throw usage_error("sweep budgets must be positive");
  if (sweep_jobs == 0) throw usage_error("sweep.jobs must be positive");
}

json PipelineConfig::to_json() const {
  json j = json::object();
  for (const auto& k : key_table()) j[k.name] = k.get(*this);
  return j;
}

std::vector<std::string> PipelineConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.emplace_back(k.name);
  return out;
}

void apply_config_text(PipelineConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw usage_error(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      cfg.set(trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.kind(), source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

PipelineConfig load_config(const fs::path& path) {
  PipelineConfig cfg;
  apply_config_text(cfg, read_file(path), path.string());
  return cfg;
}

std::vector<std::vector<std::string>> post_corpus(const HeteroGraph& g) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& tokens : g.post_tokens)
    if (!tokens.empty()) corpus.push_back(tokens);
  return corpus;
}

WordEmbeddingTable train_word_vectors(const HeteroGraph& g, const SkipGramConfig& cfg) {
  const auto corpus = post_corpus(g);
  if (corpus.empty())
    return WordEmbeddingTable({}, Matrix(0, static_cast<Eigen::Index>(cfg.dim)));
  return train_skipgram(corpus, cfg);
}

EmbedOutput embed_graph(const HeteroGraph& g, const EmbedConfig& cfg) {
  EmbedOutput out;
  out.words = train_word_vectors(g, cfg.words);
  const NodeFeatures feats = build_node_features(g, out.words);
  out.train = train_hetero(g, feats, cfg.encoder);
  return out;
}

json provenance(const std::string& stage, const PipelineConfig& cfg,
                const std::map<std::string, std::string>& input_digests,
                const json& stage_config) {
  return {{"tool", kToolName},
          {"version", kToolVersion},
          {"stage", stage},
          {"seed", cfg.seed},
          {"deterministic", cfg.deterministic},
          {"budget", budget_json(cfg.budget)},
          {"inputs", input_digests},
          {"config", stage_config}};
}

StageResult run_sanitize(const PipelineConfig& cfg, const fs::path& graph,
                         const fs::path& explicit_out) {
  cfg.budget.validate();
  auto plan = plan_stage("sanitize", cfg, {{"graph", graph}},
                         {{"words", skipgram_json(cfg.embed.words)}});
  auto& r = plan.result;
  r.outputs["graph"] = output_path(cfg, explicit_out, "sanitized-" + plan.key + ".jsonl", "");
  r.outputs["report"] =
      output_path(cfg, explicit_out, "sanitized-" + plan.key + ".report.json", ".report.json");
  if (try_reuse(cfg, !explicit_out.empty(), r)) return r;
  prepare_dirs(r);

  const HeteroGraph g = load_graph(graph);
  const WordEmbeddingTable words = train_word_vectors(g, cfg.embed.words);
  SanitizeReport report;
  const HeteroGraph out = sanitize_graph(g, cfg.budget, words, cfg.seed, &report);
  OutputGuard guard;
  guard.add(r.outputs["graph"]);
  save_graph(r.outputs["graph"], out, plan.prov);
  guard.add(r.outputs["report"]);
  write_json(r.outputs["report"], {{"provenance", plan.prov}, {"sanitize", report.to_json()}});
  guard.commit();
  return r;
}

StageResult run_embed(const PipelineConfig& cfg, const fs::path& graph,
                      const fs::path& explicit_out) {
  auto plan = plan_stage("embed", cfg, {{"graph", graph}},
                         {{"words", skipgram_json(cfg.embed.words)},
                          {"encoder", encoder_json(cfg.embed.encoder)}});
  auto& r = plan.result;
  r.outputs["embeddings"] = output_path(cfg, explicit_out, "embedding-" + plan.key + ".txt", "");
  r.outputs["checkpoint"] =
      output_path(cfg, explicit_out, "encoder-" + plan.key + ".dpft", ".encoder.dpft");
  r.outputs["manifest"] =
      output_path(cfg, explicit_out, "embed-" + plan.key + ".json", ".manifest.json");
  if (try_reuse(cfg, !explicit_out.empty(), r)) return r;
  prepare_dirs(r);

  const HeteroGraph g = load_graph(graph);
  const EmbedOutput e = embed_graph(g, cfg.embed);
  OutputGuard guard;
  for (const auto& [name, p] : r.outputs) guard.add(p);
  save_embeddings(r.outputs["embeddings"], e.train.users, plan.prov);
  save_checkpoint(r.outputs["checkpoint"], e.train.params.tensors(), plan.prov.dump());
  write_json(r.outputs["manifest"], {{"provenance", plan.prov},
                                     {"users", e.train.users.size()},
                                     {"dim", e.train.users.dim()},
                                     {"vocabulary", e.words.size()},
                                     {"epoch_losses", e.train.epoch_losses}});
  guard.commit();
  return r;
}

StageResult run_align(const PipelineConfig& cfg, const fs::path& z1, const fs::path& z2,
                      const fs::path& explicit_out) {
  auto plan = plan_stage("align", cfg, {{"z1", z1}, {"z2", z2}},
                         gan_json(cfg.align, cfg.anchor_margin));
  auto& r = plan.result;
  r.outputs["anchors"] = output_path(cfg, explicit_out, "anchors-" + plan.key + ".txt", "");
  r.outputs["checkpoint"] =
      output_path(cfg, explicit_out, "mapping-" + plan.key + ".dpft", ".mapping.dpft");
  r.outputs["manifest"] =
      output_path(cfg, explicit_out, "align-" + plan.key + ".json", ".manifest.json");
  if (try_reuse(cfg, !explicit_out.empty(), r)) return r;
  prepare_dirs(r);

  const EmbeddingTable t1 = load_embeddings(z1);
  const EmbeddingTable t2 = load_embeddings(z2);
  GanTrace trace;
  const AlignmentModel model = train_mapping(t1, t2, cfg.align, &trace);
  const AnchorSet anchors = predict_anchors(t1, t2, model, cfg.align.csls_k, cfg.anchor_margin);
  OutputGuard guard;
  for (const auto& [name, p] : r.outputs) guard.add(p);
  save_anchors(r.outputs["anchors"], anchors, plan.prov);
  save_checkpoint(r.outputs["checkpoint"], {{"w", model.w}}, plan.prov.dump());
  write_json(r.outputs["manifest"],
             {{"provenance", plan.prov},
              {"anchors", anchors.size()},
              {"orthogonality_error", orthogonality_error(model.w)},
              {"best_epoch", trace.best_epoch},
              {"criterion", trace.criterion},
              {"discriminator_loss", trace.discriminator_loss},
              {"generator_loss", trace.generator_loss}});
  guard.commit();
  return r;
}

StageResult run_fuse(const PipelineConfig& cfg, const fs::path& graph_a, const fs::path& graph_b,
                     const fs::path& z1, const fs::path& z2, const fs::path& anchors,
                     const fs::path& explicit_out_a, const fs::path& explicit_out_b) {
  auto plan = plan_stage(
      "fuse", cfg,
      {{"graph_a", graph_a}, {"graph_b", graph_b}, {"z1", z1}, {"z2", z2}, {"anchors", anchors}},
      fusion_json(cfg.fuse));
  auto& r = plan.result;
  const bool explicit_out = !explicit_out_a.empty() || !explicit_out_b.empty();
  if (explicit_out && (explicit_out_a.empty() || explicit_out_b.empty()))
    throw usage_error("fuse: give both output paths or neither");
  r.outputs["fused_a"] = output_path(cfg, explicit_out_a, "fused-a-" + plan.key + ".txt", "");
  r.outputs["fused_b"] = output_path(cfg, explicit_out_b, "fused-b-" + plan.key + ".txt", "");
  r.outputs["checkpoint"] =
      output_path(cfg, explicit_out_a, "fusion-" + plan.key + ".dpft", ".fusion.dpft");
  r.outputs["manifest"] =
      output_path(cfg, explicit_out_a, "fuse-" + plan.key + ".json", ".manifest.json");
  if (try_reuse(cfg, explicit_out, r)) return r;
  prepare_dirs(r);

  const HeteroGraph ga = load_graph(graph_a);
  const HeteroGraph gb = load_graph(graph_b);
  const FusionResult f = train_fusion(ga, gb, load_embeddings(z1), load_embeddings(z2),
                                      load_anchors(anchors), cfg.fuse);
  json losses = json::array();
  for (const auto& l : f.epoch_losses)
    losses.push_back({{"graph_a", l.graph[0]},
                      {"graph_b", l.graph[1]},
                      {"regularizer", l.regularizer},
                      {"total", l.total}});
  OutputGuard guard;
  for (const auto& [name, p] : r.outputs) guard.add(p);
  save_embeddings(r.outputs["fused_a"], f.o1, plan.prov);
  save_embeddings(r.outputs["fused_b"], f.o2, plan.prov);
  save_checkpoint(r.outputs["checkpoint"], f.params.tensors(), plan.prov.dump());
  write_json(r.outputs["manifest"], {{"provenance", plan.prov},
                                     {"params", fusion_json(cfg.fuse)},
                                     {"seed", cfg.fuse.seed},
                                     {"anchor_count", f.anchor_count},
                                     {"epoch_losses", losses}});
  guard.commit();
  return r;
}

StageResult run_eval(const PipelineConfig& cfg, const fs::path& graph, const fs::path& embeddings,
                     const fs::path& explicit_out) {
  auto plan = plan_stage("eval", cfg, {{"graph", graph}, {"embeddings", embeddings}},
                         eval_json(cfg));
  auto& r = plan.result;
  r.outputs["report"] = output_path(cfg, explicit_out, "eval-" + plan.key + ".json", "");
  if (try_reuse(cfg, !explicit_out.empty(), r)) return r;
  prepare_dirs(r);

  const HeteroGraph g = load_graph(graph);
  const EmbeddingTable emb = load_embeddings(embeddings);
  auto labelled = [](const auto& v) {
    return std::count_if(v.begin(), v.end(), [](const auto& x) { return x.has_value(); });
  };
  json reports = json::array();
  if (labelled(g.interests) >= 2)
    reports.push_back(predict_interests(emb, g, cfg.eval, cfg.tree).to_json());
  else
    warn("eval: fewer than two users carry interest labels; skipping interest prediction");
  if (labelled(g.gender) >= 2)
    reports.push_back(attack_gender(emb, g, cfg.eval, cfg.logreg).to_json());
  if (labelled(g.occupation) >= 2)
    reports.push_back(attack_occupation(emb, g, cfg.eval, cfg.tree).to_json());
  OutputGuard guard;
  guard.add(r.outputs["report"]);
  write_json(r.outputs["report"], {{"provenance", plan.prov}, {"reports", reports}});
  guard.commit();
  return r;
}

std::array<EmbeddingTable, 3> data_type_features(const HeteroGraph& g,
                                                 const PipelineConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(g.user_count());
  std::array<EmbeddingTable, 3> out;

  const auto width = static_cast<Eigen::Index>(g.schema.feature_width());
  Matrix attrs = Matrix::Zero(n, width);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto f = encode_features(g.schema, g.attrs[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < width; ++j) attrs(i, j) = f[static_cast<std::size_t>(j)];
  }
  out[0] = EmbeddingTable(g.user_ids, std::move(attrs));

  out[1] = node_embeddings(extract_user_graph(g), g.user_ids, cfg.walks, cfg.embed.words);

  const WordEmbeddingTable words = train_word_vectors(g, cfg.embed.words);
  Matrix posts = Matrix::Zero(n, static_cast<Eigen::Index>(words.dim()));
  std::vector<std::size_t> count(g.user_count(), 0);
  for (std::size_t p = 0; p < g.post_count(); ++p) {
    const auto u = static_cast<Eigen::Index>(g.post_author[p]);
    for (const auto& tok : g.post_tokens[p]) {
      if (const auto w = words.find(tok)) {
        posts.row(u) += words.row(*w);
        ++count[static_cast<std::size_t>(u)];
      }
    }
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (count[static_cast<std::size_t>(i)] > 0)
      posts.row(i) /= static_cast<double>(count[static_cast<std::size_t>(i)]);
  out[2] = EmbeddingTable(g.user_ids, std::move(posts));
  return out;
}

TmrReport measure_tmr(const HeteroGraph& g, const PipelineConfig& cfg) {
  const auto features = data_type_features(g, cfg);
  std::array<double, 3> task{}, gender{}, occupation{};
  for (std::size_t t = 0; t < 3; ++t) {
    task[t] = predict_interests(features[t], g, cfg.eval, cfg.tree).metrics.at("precision").mean;
    gender[t] = attack_gender(features[t], g, cfg.eval, cfg.logreg).metrics.at("precision").mean;
    occupation[t] =
        attack_occupation(features[t], g, cfg.eval, cfg.tree).metrics.at("precision").mean;
  }
  return compute_tmr(task, gender, occupation);
}

StageResult run_tmr(const PipelineConfig& cfg, const fs::path& graph, const fs::path& explicit_out) {
  json stage_config = eval_json(cfg);
  stage_config["words"] = skipgram_json(cfg.embed.words);
  stage_config["walks"] = walks_json(cfg.walks);
  auto plan = plan_stage("tmr", cfg, {{"graph", graph}}, stage_config);
  auto& r = plan.result;
  r.outputs["report"] = output_path(cfg, explicit_out, "tmr-" + plan.key + ".json", "");
  if (try_reuse(cfg, !explicit_out.empty(), r)) return r;
  prepare_dirs(r);

  const TmrReport tmr = measure_tmr(load_graph(graph), cfg);
  const double total = cfg.budget.eps_a + cfg.budget.eps_g + cfg.budget.eps_t;
  OutputGuard guard;
  guard.add(r.outputs["report"]);
  write_json(r.outputs["report"], {{"provenance", plan.prov},
                                   {"tmr", tmr.to_json()},
                                   {"total_budget", total},
                                   {"allocation", budget_json(allocate_budgets(tmr, total))}});
  guard.commit();
  return r;
}

PipelineRun run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  if (cfg.graph_a.empty() || cfg.graph_b.empty())
    throw usage_error("pipeline needs graph_a and graph_b");
  PipelineRun run;
  const auto sa = run_sanitize(cfg, cfg.graph_a);
  const auto sb = run_sanitize(cfg, cfg.graph_b);
  const auto ea = run_embed(cfg, sa.outputs.at("graph"));
  const auto eb = run_embed(cfg, sb.outputs.at("graph"));
  const auto al = run_align(cfg, ea.outputs.at("embeddings"), eb.outputs.at("embeddings"));
  const auto fu = run_fuse(cfg, sa.outputs.at("graph"), sb.outputs.at("graph"),
                           ea.outputs.at("embeddings"), eb.outputs.at("embeddings"),
                           al.outputs.at("anchors"));
  const auto ev = run_eval(cfg, sa.outputs.at("graph"), fu.outputs.at("fused_a"));
  for (const auto& [stage, res] :
       std::vector<std::pair<std::string, const StageResult*>>{
           {"sanitize_a", &sa}, {"sanitize_b", &sb}, {"embed_a", &ea}, {"embed_b", &eb},
           {"align", &al},      {"fuse", &fu},       {"eval", &ev}})
    for (const auto& [name, p] : res->outputs) run.outputs[stage + "." + name] = p;
  run.eval = json::parse(read_file(ev.outputs.at("report")));
  return run;
}

fs::path run_sweep(const PipelineConfig& cfg, const fs::path& explicit_out) {
  cfg.validate();
  struct Point {
    std::string parameter;
    double eps;
    json eval;
  };
  std::vector<Point> points;
  for (const auto& [name, list] : std::vector<std::pair<std::string, const std::vector<double>*>>{
           {"eps_a", &cfg.sweep_eps_a}, {"eps_g", &cfg.sweep_eps_g}, {"eps_t", &cfg.sweep_eps_t}})
    for (double e : *list) points.push_back({name, e, nullptr});
  if (points.empty()) throw usage_error("sweep: no grid values (set sweep.eps_a, sweep.eps_g or sweep.eps_t)");

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      try {
        PipelineConfig c = cfg;
        c.set(points[i].parameter, format_double(points[i].eps));
        points[i].eval = run_pipeline(c).eval;
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::min(cfg.sweep_jobs, points.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < jobs; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);

  json grid = {{"eps_a", cfg.sweep_eps_a}, {"eps_g", cfg.sweep_eps_g}, {"eps_t", cfg.sweep_eps_t}};
  std::map<std::string, std::string> digests;
  for (const auto& [name, p] : {std::pair{"graph_a", cfg.graph_a}, std::pair{"graph_b", cfg.graph_b}})
    digests[name] = file_digest(p);
  const json prov = provenance("sweep", cfg, digests, {{"grid", grid}, {"pipeline", cfg.to_json()}});
  const fs::path out = explicit_out.empty()
                           ? cfg.out_dir / ("sweep-" + sha256_hex(prov.dump()).substr(0, 16) + ".csv")
                           : explicit_out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());

  // Rows grouped by metric so each metric's curve is contiguous.
  std::vector<std::string> metrics;
  std::map<std::string, std::vector<std::string>> rows;
  for (const auto& pt : points) {
    for (const auto& rep : pt.eval.at("reports")) {
      const std::string task = rep.at("task");
      for (const auto& [m, s] : rep.at("metrics").items()) {
        const std::string name = task + "." + m;
        if (!rows.count(name)) metrics.push_back(name);
        rows[name].push_back(pt.parameter + "," + format_double(pt.eps) + "," + name + "," +
                             format_double(s.at("mean").get<double>()) + "," +
                             format_double(s.at("std").get<double>()));
      }
    }
  }
  write_file_atomic(out, [&](std::ostream& o) {
    o << "# " << prov.dump() << '\n';
    o << "parameter,epsilon,metric,mean,std\n";
    for (const auto& m : metrics)
      for (const auto& row : rows[m]) o << row << '\n';
  });
  return out;
}

}  // namespace dpfuse
