#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cissl/clusterer.hpp"
#include "cissl/dataset.hpp"
#include "cissl/distiller.hpp"
#include "cissl/error.hpp"
#include "cissl/lineval.hpp"
#include "cissl/nn.hpp"
#include "cissl/trainer.hpp"

namespace cissl::harness {

// Full pipeline variants. The plain methods pre-train and probe; the +d
// variants append expert training and multi-teacher distillation, with the
// cluster stage in between for simsiam+c+d only.
enum class PipelineMethod { simclr, simsiam, simsiam_cd, simsiam_d };

PipelineMethod parse_pipeline_method(const std::string& name);
std::string to_string(PipelineMethod method);
bool uses_distill(PipelineMethod method);
bool uses_cluster(PipelineMethod method);

// Pipeline stages in execution order, plus the bookkeeping pseudo-stages that
// carry their own process exit codes.
enum class Stage {
  config,
  dataset,
  pretrain,
  extract,
  cluster,
  experts,
  distill,
  lineval,
  report,
};

std::string to_string(Stage stage);
int exit_code(Stage stage);  // nonzero, distinct per stage

// A pipeline failure tagged with the stage that raised it. Partial artifacts
// written before the failure stay on disk.
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& msg);
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

// Where the training subset comes from: a corpus directory on disk or the
// synthetic generator, optionally thinned by the exponential-decay profile or
// rescaled to a balanced subset of a fixed size.
struct DatasetSpec {
  std::string source = "synthetic";  // "synthetic" or a corpus directory
  int num_classes = 10;
  int height = 32;
  int width = 32;
  long per_class = 200;       // synthetic head-class train count
  long test_per_class = 20;   // synthetic test split
  std::uint64_t corpus_seed = 0;  // synthetic generator seed, subset-independent
  double imbalance_p = 1.0;   // > 1 keeps floor(n_c * p^(-c/(C-1))) per class
  long rescale_total = 0;     // > 0 selects a balanced subset of this size
  std::string label;          // result-row label; derived when empty

  std::string resolved_label() const;
  void validate() const;
};

struct EpochBudget {
  int base = 0;
  int expert = 0;
  int distill = 0;
  int total() const { return base + expert + distill; }
};

struct RunConfig {
  int schema_version = 1;
  std::uint64_t seed = 1;
  std::string outdir;
  PipelineMethod method = PipelineMethod::simsiam;
  DatasetSpec dataset;

  int epochs = 0;       // plain methods: total pre-training epochs
  EpochBudget split;    // +d methods: per-stage epochs
  int budget = 300;     // comparison budget the split must sum to
  int clusters = 3;     // K

  nn::BackboneConfig backbone{nn::BackboneFamily::tiny_conv, 64, true};
  augment::AugmentationPolicy policy;
  train::TrainSchedule pretrain;    // epochs/method/seed are filled per stage
  distill::DistillSchedule distill; // epochs/seed filled per stage
  cluster::KmeansOptions kmeans;
  lineval::EvalConfig lineval;

  void validate() const;
};

// JSON round trip. Parsing applies defaults and validates; the serialized
// form is the fully resolved config written to config.lock.
RunConfig run_config_from_json(const std::string& json_text);
std::string run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

// Applies dotted-path overrides ("pretrain.optimizer.lr=0.05") on top of a
// config's JSON form. Values parse as JSON scalars, falling back to strings.
std::string apply_overrides(const std::string& json_text,
                            const std::vector<std::string>& overrides);

struct ResultRow {
  std::string subset;
  long n = 0;
  std::string method;
  double accuracy = 0.0;  // percent, in [0, 100]
  std::uint64_t seed = 0;
  std::string started;    // ISO 8601 UTC
  std::string finished;
};

std::vector<ResultRow> read_result_rows(const std::filesystem::path& csv);
void write_result_rows(const std::vector<ResultRow>& rows,
                       const std::filesystem::path& csv);

struct RunOutcome {
  std::filesystem::path run_dir;
  std::optional<ResultRow> row;  // set when the probe stage ran
};

// Executes the pipeline for the configured method up to and including
// `until`, writing every artifact under the run directory:
//   config.lock  checkpoints/  logs/  cluster/  results.csv
// Stages whose artifacts already exist are skipped, so rerunning a finished
// config reproduces the stored result row. The directory is held exclusively
// via run.lock for the duration of the call.
RunOutcome run(const RunConfig& cfg, Stage until = Stage::lineval);

struct GridOutcome {
  std::vector<ResultRow> rows;
  std::vector<std::string> errors;  // "<run dir>: <message>" per failed run
  std::filesystem::path grid_dir;
};

// Sequential execution of several runs; failures are recorded and the grid
// moves on. Duplicate (subset, method, seed) triples are rejected up front.
GridOutcome run_grid(const std::vector<RunConfig>& configs,
                     const std::filesystem::path& grid_dir);

// Grid file: {"outdir": ..., "defaults": {...}, "runs": [{...}, ...]}. Each
// run entry is merged over the defaults; missing outdirs are derived from
// (label, method, seed) under the grid directory.
struct GridPlan {
  std::filesystem::path grid_dir;
  std::vector<RunConfig> configs;
};
GridPlan load_grid(const std::filesystem::path& path,
                   const std::vector<std::string>& overrides = {});

struct ReportResult {
  std::filesystem::path markdown;
  std::vector<std::filesystem::path> csvs;
  std::string table;  // the rendered markdown, also written to `markdown`
};

// Re-renders persisted results under `dir` (a run directory or a grid
// directory of run subdirectories): a markdown table plus per-plot CSVs,
// including the cluster-scatter CSV whenever a clustering stage ran.
ReportResult report(const std::filesystem::path& dir);

// Artifact root for relative output directories: the CISSL_ARTIFACT_ROOT
// environment variable when set, else the current working directory.
std::filesystem::path artifact_root();
std::filesystem::path resolve_run_dir(const std::string& outdir);

}  // namespace cissl::harness
