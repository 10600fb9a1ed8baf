#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpfuse/align.hpp"
#include "dpfuse/eval.hpp"
#include "dpfuse/fuse.hpp"
#include "dpfuse/hetero.hpp"
#include "dpfuse/mechanisms.hpp"
#include "dpfuse/skipgram.hpp"

namespace dpfuse {

inline constexpr const char* kToolName = "dpfuse";
inline constexpr const char* kToolVersion = "0.1.0";

struct EmbedConfig {
  SkipGramConfig words;
  TrainConfig encoder;
};

/// Every tunable of a pipeline run. Loaded from a flat "key = value" file;
/// keys are listed by PipelineConfig::keys().
struct PipelineConfig {
  std::filesystem::path graph_a;
  std::filesystem::path graph_b;
  std::filesystem::path out_dir = "out";
  PrivacyBudget budget;
  std::uint64_t seed = 1;
  bool deterministic = true;
  bool reuse_outputs = true;  // skip a stage whose digest-named output exists

  EmbedConfig embed;
  WalkConfig walks;  // node embeddings behind the friendship TMR
  GanConfig align;
  double anchor_margin = 0.0;
  FusionConfig fuse;
  EvalProtocol eval;
  TreeConfig tree;
  LogRegConfig logreg;

  // Sweep grid; empty lists keep the base budget for that type.
  std::vector<double> sweep_eps_a;
  std::vector<double> sweep_eps_g;
  std::vector<double> sweep_eps_t;
  std::size_t sweep_jobs = 1;

  /// Sets one key; unknown keys and malformed values throw usage errors.
  void set(const std::string& key, const std::string& value);
  /// Applies the master seed to every stage and the repeat seed list.
  void propagate_seed();
  void validate() const;
  nlohmann::json to_json() const;

  static std::vector<std::string> keys();
};

/// Parses "key = value" lines; '#' starts a comment line.
PipelineConfig load_config(const std::filesystem::path& path);
void apply_config_text(PipelineConfig& cfg, const std::string& text, const std::string& source);

// --- in-memory stages -------------------------------------------------------

std::vector<std::vector<std::string>> post_corpus(const HeteroGraph& g);
/// Skip-gram over post tokens; an empty table of the configured width when
/// the graph has no posts.
WordEmbeddingTable train_word_vectors(const HeteroGraph& g, const SkipGramConfig& cfg);

struct EmbedOutput {
  HeteroTrainResult train;
  WordEmbeddingTable words;
};
EmbedOutput embed_graph(const HeteroGraph& g, const EmbedConfig& cfg);

// --- file stages --------------------------------------------------------------

/// Provenance record carried by every output file.
nlohmann::json provenance(const std::string& stage, const PipelineConfig& cfg,
                          const std::map<std::string, std::string>& input_digests,
                          const nlohmann::json& stage_config);

struct StageResult {
  std::map<std::string, std::filesystem::path> outputs;
  bool reused = false;
};

/// Each stage writes into cfg.out_dir (or `explicit_out` when non-empty) and
/// names files by a digest of its inputs and configuration.
StageResult run_sanitize(const PipelineConfig& cfg, const std::filesystem::path& graph,
                         const std::filesystem::path& explicit_out = {});
StageResult run_embed(const PipelineConfig& cfg, const std::filesystem::path& graph,
                      const std::filesystem::path& explicit_out = {});
StageResult run_align(const PipelineConfig& cfg, const std::filesystem::path& z1,
                      const std::filesystem::path& z2,
                      const std::filesystem::path& explicit_out = {});
StageResult run_fuse(const PipelineConfig& cfg, const std::filesystem::path& graph_a,
                     const std::filesystem::path& graph_b, const std::filesystem::path& z1,
                     const std::filesystem::path& z2, const std::filesystem::path& anchors,
                     const std::filesystem::path& explicit_out_a = {},
                     const std::filesystem::path& explicit_out_b = {});
StageResult run_eval(const PipelineConfig& cfg, const std::filesystem::path& graph,
                     const std::filesystem::path& embeddings,
                     const std::filesystem::path& explicit_out = {});

/// Per-type user features used to measure TMR: encoded attributes,
/// random-walk node embeddings, and the mean word vector of each user's posts
/// (zero for users without in-vocabulary tokens).
std::array<EmbeddingTable, 3> data_type_features(const HeteroGraph& g, const PipelineConfig& cfg);
/// Interest precision against gender and occupation attack precision for
/// each data type.
TmrReport measure_tmr(const HeteroGraph& g, const PipelineConfig& cfg);

/// Measures TMR on graph A and writes it with the proportional allocation of
/// eps_a + eps_g + eps_t.
StageResult run_tmr(const PipelineConfig& cfg, const std::filesystem::path& graph,
                    const std::filesystem::path& explicit_out = {});

/// sanitize -> embed (both graphs) -> align -> fuse -> eval on network A.
struct PipelineRun {
  std::map<std::string, std::filesystem::path> outputs;
  nlohmann::json eval;  // report of the fused network-A embeddings
};
PipelineRun run_pipeline(const PipelineConfig& cfg);

/// Runs the pipeline for every grid point (one budget type varied at a time)
/// and writes "parameter,epsilon,metric,mean,std" rows.
std::filesystem::path run_sweep(const PipelineConfig& cfg,
                                const std::filesystem::path& explicit_out = {});

}  // namespace dpfuse
