// Command-line front end for the imbalanced self-supervised training
// pipeline. Verbs either run the whole pipeline (`run`, `grid`) or stop after
// a named stage; `dataset build` and `report` are artifact utilities.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cissl/dataset.hpp"
#include "cissl/harness.hpp"

namespace fs = std::filesystem;
using namespace cissl;

namespace {

struct RunOpts {
  std::string config;
  std::string outdir;
  std::vector<std::string> sets;
  std::vector<std::string> flag_overrides;  // collected from mirror flags
};

// Mirror flags assemble the same dotted-path overrides --set takes, so a flag
// and a config key can never disagree about meaning.
void add_mirror_flags(CLI::App* cmd, RunOpts& opts) {
  auto mirror = [cmd, &opts](const std::string& flag, const std::string& path,
                             const std::string& help) {
    cmd->add_option_function<std::string>(
        flag,
        [&opts, path](const std::string& v) {
          opts.flag_overrides.push_back(path + "=" + v);
        },
        help);
  };
  mirror("--seed", "seed", "run seed");
  mirror("--method", "method",
         "simclr, simsiam, simsiam+c+d, or simsiam+d");
  mirror("--epochs", "epochs", "pre-training epochs (plain methods)");
  mirror("--epochs-base", "epochs.base", "base stage epochs (+d methods)");
  mirror("--epochs-expert", "epochs.expert", "expert stage epochs");
  mirror("--epochs-distill", "epochs.distill", "distillation stage epochs");
  mirror("--budget", "budget", "comparison epoch budget");
  mirror("--clusters", "clusters", "number of expert clusters (K)");
  mirror("--source", "dataset.source",
         "\"synthetic\" or a corpus directory");
  mirror("--label", "dataset.label", "result-row subset label");
  mirror("--imbalance-p", "dataset.imbalance_p", "imbalance factor p");
  mirror("--rescale-total", "dataset.rescale_total",
         "balanced subset size (exclusive with p)");
  mirror("--per-class", "dataset.per_class", "synthetic head-class count");
  mirror("--backbone", "model.backbone", "resnet-cifar or tiny-conv");
  mirror("--dim", "model.dim", "backbone output width");
  mirror("--batch-size", "pretrain.batch_size", "pre-training batch size");
  mirror("--lr", "pretrain.optimizer.lr", "pre-training base learning rate");
  mirror("--optimizer", "pretrain.optimizer.kind", "sgd or lars");
  mirror("--temperature", "pretrain.temperature", "contrastive temperature");
  mirror("--lineval-epochs", "lineval.epochs", "linear-probe epochs");
  cmd->add_option("--set", opts.sets,
                  "dotted-path override, e.g. pretrain.optimizer.lr=0.05");
  cmd->add_option("--outdir", opts.outdir, "run directory (overrides config)");
  cmd->add_option("--config,-c", opts.config, "run config JSON file");
}

harness::RunConfig resolve_config(const RunOpts& opts) {
  std::string text = "{}";
  if (!opts.config.empty()) {
    std::ifstream f(opts.config, std::ios::binary);
    if (!f) throw IoError("cannot read config file " + opts.config);
    std::ostringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  std::vector<std::string> overrides = opts.flag_overrides;
  if (!opts.outdir.empty()) overrides.push_back("outdir=" + opts.outdir);
  overrides.insert(overrides.end(), opts.sets.begin(), opts.sets.end());
  return harness::run_config_from_json(harness::apply_overrides(text, overrides));
}

void print_row(const harness::ResultRow& row) {
  std::printf("subset=%s n=%ld method=%s seed=%llu accuracy=%.2f%%\n",
              row.subset.c_str(), row.n, row.method.c_str(),
              (unsigned long long)row.seed, row.accuracy);
}

int do_stage_run(const RunOpts& opts, harness::Stage until) {
  harness::RunConfig cfg = resolve_config(opts);
  harness::RunOutcome out = harness::run(cfg, until);
  std::printf("run directory: %s\n", out.run_dir.c_str());
  if (out.row) print_row(*out.row);
  return 0;
}

int do_dataset_build(const std::string& out, int classes, int height,
                     int width, long per_class, long test_per_class,
                     std::uint64_t seed, double preview_p) {
  data::SyntheticSpec spec;
  spec.num_classes = classes;
  spec.height = height;
  spec.width = width;
  spec.train_per_class = per_class;
  spec.test_per_class = test_per_class;
  spec.seed = seed;
  data::Corpus corpus = data::make_synthetic_corpus(spec);
  fs::create_directories(out);
  data::save_corpus(corpus, out);
  std::printf("wrote corpus: %s (train %ld, test %ld)\n", out.c_str(),
              corpus.train.size(), corpus.test.size());
  if (preview_p > 1.0) {
    data::ImbalanceSpec im;
    im.p = preview_p;
    im.num_classes = classes;
    data::LabeledDataset sub = data::make_imbalanced(corpus.train, im, seed);
    fs::path csv = fs::path(out) / "distribution.csv";
    data::export_distribution(sub, csv);
    std::printf("imbalanced preview (p=%g): %ld records, histogram in %s\n",
                preview_p, sub.size(), csv.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"imbalance-aware self-supervised training pipeline"};
  app.require_subcommand(1);

  // dataset build
  auto* dataset_cmd = app.add_subcommand("dataset", "corpus utilities");
  dataset_cmd->require_subcommand(1);
  auto* build_cmd =
      dataset_cmd->add_subcommand("build", "write a synthetic corpus");
  std::string ds_out;
  int ds_classes = 10, ds_height = 32, ds_width = 32;
  long ds_per_class = 200, ds_test_per_class = 20;
  std::uint64_t ds_seed = 0;
  double ds_preview_p = 0.0;
  build_cmd->add_option("--out", ds_out, "output directory")->required();
  build_cmd->add_option("--classes", ds_classes, "number of classes");
  build_cmd->add_option("--height", ds_height, "image height");
  build_cmd->add_option("--width", ds_width, "image width");
  build_cmd->add_option("--per-class", ds_per_class, "train records per class");
  build_cmd->add_option("--test-per-class", ds_test_per_class,
                        "test records per class");
  build_cmd->add_option("--seed", ds_seed, "generator seed");
  build_cmd->add_option("--imbalance-p", ds_preview_p,
                        "also export the per-class histogram at this p");

  // pipeline verbs
  RunOpts opts;
  struct Verb {
    const char* name;
    const char* help;
    harness::Stage until;
  };
  const Verb verbs[] = {
      {"pretrain", "run through self-supervised pre-training",
       harness::Stage::pretrain},
      {"cluster", "run through feature extraction and k-means",
       harness::Stage::cluster},
      {"experts", "run through per-cluster expert training",
       harness::Stage::experts},
      {"distill", "run through multi-teacher distillation",
       harness::Stage::distill},
      {"lineval", "run through the linear probe", harness::Stage::lineval},
      {"run", "execute the full pipeline for one config",
       harness::Stage::lineval},
  };
  std::vector<CLI::App*> verb_cmds;
  for (const Verb& v : verbs) {
    CLI::App* cmd = app.add_subcommand(v.name, v.help);
    add_mirror_flags(cmd, opts);
    verb_cmds.push_back(cmd);
  }

  // grid
  auto* grid_cmd = app.add_subcommand("grid", "execute a grid of runs");
  std::string grid_config;
  std::vector<std::string> grid_sets;
  grid_cmd->add_option("--config,-c", grid_config, "grid JSON file")
      ->required();
  grid_cmd->add_option("--set", grid_sets,
                       "dotted-path override applied to every run");

  // report
  auto* report_cmd =
      app.add_subcommand("report", "re-render tables and plot data");
  std::string report_dir;
  report_cmd->add_option("--dir", report_dir, "run or grid directory")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (build_cmd->parsed())
      return do_dataset_build(ds_out, ds_classes, ds_height, ds_width,
                              ds_per_class, ds_test_per_class, ds_seed,
                              ds_preview_p);
    for (std::size_t i = 0; i < verb_cmds.size(); ++i)
      if (verb_cmds[i]->parsed()) return do_stage_run(opts, verbs[i].until);
    if (grid_cmd->parsed()) {
      harness::GridPlan plan = harness::load_grid(grid_config, grid_sets);
      harness::GridOutcome out = harness::run_grid(plan.configs, plan.grid_dir);
      std::printf("grid directory: %s (%zu rows, %zu failures)\n",
                  out.grid_dir.c_str(), out.rows.size(), out.errors.size());
      for (const std::string& e : out.errors)
        std::fprintf(stderr, "failed: %s\n", e.c_str());
      if (!out.rows.empty()) {
        harness::ReportResult rep = harness::report(out.grid_dir);
        std::printf("%s", rep.table.c_str());
      }
      return out.errors.empty() ? 0 : 1;
    }
    if (report_cmd->parsed()) {
      harness::ReportResult rep = harness::report(report_dir);
      std::printf("%s", rep.table.c_str());
      std::printf("report: %s\n", rep.markdown.c_str());
      return 0;
    }
  } catch (const harness::StageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return harness::exit_code(e.stage());
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return harness::exit_code(harness::Stage::config);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
