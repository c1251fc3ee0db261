#include "cissl/harness.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cissl/checkpoint.hpp"
#include "cissl/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cissl::harness {

namespace {

// ---- small file helpers ----------------------------------------------------

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << text;
    if (!f) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void save_checkpoint_atomic(const nn::ModelBundle& bundle, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  nn::save_checkpoint(bundle, tmp.string());
  fs::rename(tmp, path);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Data rows in a headered CSV.
long count_csv_rows(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::string line;
  long rows = -1;  // header
  while (std::getline(f, line)) {
    if (!line.empty() && line != "\r") ++rows;
  }
  return std::max(rows, 0L);
}

std::string now_utc_iso() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Exclusive ownership of a run directory for the lifetime of one run() call.
class RunLock {
 public:
  explicit RunLock(const fs::path& path) : path_(path) {
    int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw StageError(Stage::config,
                       "run directory is locked: " + path.string() +
                           " exists (concurrent run, or stale lock to delete)");
    std::string pid = std::to_string(::getpid()) + "\n";
    ssize_t n = ::write(fd, pid.data(), pid.size());
    (void)n;
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

template <typename F>
auto guard(Stage s, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(s, e.what());
  }
}

// ---- JSON <-> config -------------------------------------------------------

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key \"" + it.key() + "\" in " + where);
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key \"" + key + "\" has the wrong type");
  }
}

optim::OptimizerConfig optimizer_from_json(const json& j,
                                           const optim::OptimizerConfig& base,
                                           const std::string& where) {
  check_keys(j,
             {"kind", "lr", "momentum", "weight_decay", "trust_coefficient",
              "scale_lr_by_batch"},
             where);
  optim::OptimizerConfig out = base;
  if (j.contains("kind"))
    out.kind = optim::parse_optimizer_kind(j.at("kind").get<std::string>());
  out.base_lr = get_or(j, "lr", out.base_lr);
  out.momentum = get_or(j, "momentum", out.momentum);
  out.weight_decay = get_or(j, "weight_decay", out.weight_decay);
  out.trust_coefficient = get_or(j, "trust_coefficient", out.trust_coefficient);
  out.scale_lr_by_batch = get_or(j, "scale_lr_by_batch", out.scale_lr_by_batch);
  return out;
}

json optimizer_to_json(const optim::OptimizerConfig& c) {
  return json{{"kind", optim::to_string(c.kind)},
              {"lr", c.base_lr},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"trust_coefficient", c.trust_coefficient},
              {"scale_lr_by_batch", c.scale_lr_by_batch}};
}

augment::AugmentationPolicy policy_from_json(const json& j) {
  check_keys(j,
             {"crop_scale_min", "crop_scale_max", "flip_probability",
              "color_jitter_probability", "brightness", "contrast",
              "saturation", "hue", "grayscale_probability", "normalization"},
             "augment");
  augment::AugmentationPolicy p;
  p.crop_scale_min = get_or(j, "crop_scale_min", p.crop_scale_min);
  p.crop_scale_max = get_or(j, "crop_scale_max", p.crop_scale_max);
  p.flip_probability = get_or(j, "flip_probability", p.flip_probability);
  p.color_jitter_probability =
      get_or(j, "color_jitter_probability", p.color_jitter_probability);
  p.brightness = get_or(j, "brightness", p.brightness);
  p.contrast = get_or(j, "contrast", p.contrast);
  p.saturation = get_or(j, "saturation", p.saturation);
  p.hue = get_or(j, "hue", p.hue);
  p.grayscale_probability =
      get_or(j, "grayscale_probability", p.grayscale_probability);
  if (j.contains("normalization")) {
    const json& n = j.at("normalization");
    check_keys(n, {"mean", "std"}, "augment.normalization");
    auto mean = n.at("mean").get<std::vector<float>>();
    auto stdv = n.at("std").get<std::vector<float>>();
    if (mean.size() != 3 || stdv.size() != 3)
      throw ConfigError("augment.normalization mean/std need 3 entries each");
    std::copy(mean.begin(), mean.end(), p.normalization.mean.begin());
    std::copy(stdv.begin(), stdv.end(), p.normalization.std.begin());
  }
  return p;
}

json policy_to_json(const augment::AugmentationPolicy& p) {
  return json{
      {"crop_scale_min", p.crop_scale_min},
      {"crop_scale_max", p.crop_scale_max},
      {"flip_probability", p.flip_probability},
      {"color_jitter_probability", p.color_jitter_probability},
      {"brightness", p.brightness},
      {"contrast", p.contrast},
      {"saturation", p.saturation},
      {"hue", p.hue},
      {"grayscale_probability", p.grayscale_probability},
      {"normalization",
       {{"mean", std::vector<float>(p.normalization.mean.begin(),
                                    p.normalization.mean.end())},
        {"std", std::vector<float>(p.normalization.std.begin(),
                                   p.normalization.std.end())}}}};
}

std::string sanitize_name(const std::string& s) {
  std::string out;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
              (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
    out += ok ? c : '_';
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

// ---- enums and errors -------------------------------------------------------

PipelineMethod parse_pipeline_method(const std::string& name) {
  if (name == "simclr") return PipelineMethod::simclr;
  if (name == "simsiam") return PipelineMethod::simsiam;
  if (name == "simsiam+c+d") return PipelineMethod::simsiam_cd;
  if (name == "simsiam+d") return PipelineMethod::simsiam_d;
  throw ConfigError("unknown method \"" + name +
                    "\" (expected simclr, simsiam, simsiam+c+d, simsiam+d)");
}

std::string to_string(PipelineMethod method) {
  switch (method) {
    case PipelineMethod::simclr: return "simclr";
    case PipelineMethod::simsiam: return "simsiam";
    case PipelineMethod::simsiam_cd: return "simsiam+c+d";
    case PipelineMethod::simsiam_d: return "simsiam+d";
  }
  throw ConfigError("bad method enum");
}

bool uses_distill(PipelineMethod m) {
  return m == PipelineMethod::simsiam_cd || m == PipelineMethod::simsiam_d;
}

bool uses_cluster(PipelineMethod m) { return m == PipelineMethod::simsiam_cd; }

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::config: return "config";
    case Stage::dataset: return "dataset";
    case Stage::pretrain: return "pretrain";
    case Stage::extract: return "extract";
    case Stage::cluster: return "cluster";
    case Stage::experts: return "experts";
    case Stage::distill: return "distill";
    case Stage::lineval: return "lineval";
    case Stage::report: return "report";
  }
  return "unknown";
}

int exit_code(Stage stage) {
  switch (stage) {
    case Stage::config: return 2;
    case Stage::dataset: return 3;
    case Stage::pretrain: return 4;
    case Stage::extract: return 5;
    case Stage::cluster: return 6;
    case Stage::experts: return 7;
    case Stage::distill: return 8;
    case Stage::lineval: return 9;
    case Stage::report: return 10;
  }
  return 1;
}

StageError::StageError(Stage stage, const std::string& msg)
    : Error("[" + harness::to_string(stage) + "] " + msg), stage_(stage) {}

// ---- dataset spec ------------------------------------------------------------

std::string DatasetSpec::resolved_label() const {
  if (!label.empty()) return label;
  if (rescale_total > 0) return "balanced-" + std::to_string(rescale_total);
  if (imbalance_p > 1.0) return "p=" + format_g(imbalance_p);
  return "balanced";
}

void DatasetSpec::validate() const {
  if (source.empty()) throw ConfigError("dataset.source is empty");
  if (num_classes < 2) throw ConfigError("dataset.classes must be >= 2");
  if (height < 8 || width < 8)
    throw ConfigError("dataset images must be at least 8x8");
  if (source == "synthetic" && (per_class < 1 || test_per_class < 1))
    throw ConfigError("synthetic dataset needs positive per-class counts");
  if (imbalance_p < 1.0)
    throw ConfigError("dataset.imbalance_p must be >= 1");
  if (rescale_total < 0) throw ConfigError("dataset.rescale_total must be >= 0");
  if (imbalance_p > 1.0 && rescale_total > 0)
    throw ConfigError(
        "dataset.imbalance_p and dataset.rescale_total are exclusive");
}

// ---- run config ----------------------------------------------------------------

void RunConfig::validate() const {
  if (schema_version != 1)
    throw ConfigError("unsupported schema_version " +
                      std::to_string(schema_version) + " (this build reads 1)");
  dataset.validate();
  backbone.validate();
  policy.validate();
  if (budget < 1) throw ConfigError("budget must be >= 1");
  if (uses_distill(method)) {
    if (epochs != 0)
      throw ConfigError("method " + harness::to_string(method) +
                        " takes the {base, expert, distill} epoch split, not a "
                        "single epoch count");
    if (split.base < 1 || split.expert < 1 || split.distill < 1)
      throw ConfigError("epoch split needs all of base, expert, distill >= 1");
    if (split.total() != budget)
      throw ConfigError("epoch split {" + std::to_string(split.base) + ", " +
                        std::to_string(split.expert) + ", " +
                        std::to_string(split.distill) + "} sums to " +
                        std::to_string(split.total()) +
                        " but the comparison budget is " +
                        std::to_string(budget));
  } else {
    if (split.total() != 0)
      throw ConfigError("method " + harness::to_string(method) +
                        " takes a single epoch count, not a split");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
  }
  if (clusters < 1) throw ConfigError("clusters must be >= 1");
  if (uses_cluster(method) && clusters < 2)
    throw ConfigError("simsiam+c+d needs clusters >= 2 (use simsiam+d for the "
                      "single-expert ablation)");
  if (pretrain.batch_size < 1 || distill.batch_size < 1)
    throw ConfigError("batch sizes must be >= 1");
  if (pretrain.temperature <= 0)
    throw ConfigError("temperature must be positive");
  lineval.validate();
  if (kmeans.max_iters < 1 || kmeans.n_init < 1 || kmeans.empty_retries < 0 ||
      kmeans.tol < 0)
    throw ConfigError("bad cluster options");
}

RunConfig run_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"schema_version", "seed", "outdir", "method", "budget", "epochs",
              "clusters", "dataset", "model", "augment", "pretrain", "distill",
              "cluster", "lineval"},
             "config");
  RunConfig cfg;
  cfg.schema_version = get_or(j, "schema_version", 1);
  cfg.seed = get_or(j, "seed", std::uint64_t{1});
  cfg.outdir = get_or(j, "outdir", std::string{});
  if (j.contains("method"))
    cfg.method = parse_pipeline_method(j.at("method").get<std::string>());
  cfg.budget = get_or(j, "budget", 300);
  cfg.clusters = get_or(j, "clusters", 3);

  if (j.contains("epochs")) {
    const json& e = j.at("epochs");
    if (e.is_number_integer()) {
      cfg.epochs = e.get<int>();
    } else if (e.is_object()) {
      check_keys(e, {"base", "expert", "distill"}, "epochs");
      cfg.split.base = get_or(e, "base", 0);
      cfg.split.expert = get_or(e, "expert", 0);
      cfg.split.distill = get_or(e, "distill", 0);
    } else {
      throw ConfigError("epochs must be an integer or a {base, expert, "
                        "distill} object");
    }
  }

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d,
               {"source", "label", "classes", "height", "width", "per_class",
                "test_per_class", "corpus_seed", "imbalance_p",
                "rescale_total"},
               "dataset");
    cfg.dataset.source = get_or(d, "source", cfg.dataset.source);
    cfg.dataset.label = get_or(d, "label", cfg.dataset.label);
    cfg.dataset.num_classes = get_or(d, "classes", cfg.dataset.num_classes);
    cfg.dataset.height = get_or(d, "height", cfg.dataset.height);
    cfg.dataset.width = get_or(d, "width", cfg.dataset.width);
    cfg.dataset.per_class = get_or(d, "per_class", cfg.dataset.per_class);
    cfg.dataset.test_per_class =
        get_or(d, "test_per_class", cfg.dataset.test_per_class);
    cfg.dataset.corpus_seed = get_or(d, "corpus_seed", cfg.dataset.corpus_seed);
    cfg.dataset.imbalance_p = get_or(d, "imbalance_p", cfg.dataset.imbalance_p);
    cfg.dataset.rescale_total =
        get_or(d, "rescale_total", cfg.dataset.rescale_total);
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, {"backbone", "dim", "small_image_stem"}, "model");
    if (m.contains("backbone"))
      cfg.backbone.family =
          nn::parse_backbone_family(m.at("backbone").get<std::string>());
    cfg.backbone.output_dim = get_or(m, "dim", cfg.backbone.output_dim);
    cfg.backbone.small_image_stem =
        get_or(m, "small_image_stem", cfg.backbone.small_image_stem);
  }

  if (j.contains("augment")) cfg.policy = policy_from_json(j.at("augment"));

  optim::OptimizerConfig pre_opt;  // pre-training default
  pre_opt.kind = optim::OptimizerKind::sgd;
  pre_opt.base_lr = 0.05;
  pre_opt.momentum = 0.9;
  pre_opt.weight_decay = 5e-4;
  pre_opt.scale_lr_by_batch = true;

  cfg.pretrain.batch_size = 64;
  cfg.pretrain.temperature = 0.5;
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    check_keys(p, {"batch_size", "temperature", "optimizer"}, "pretrain");
    cfg.pretrain.batch_size = get_or(p, "batch_size", cfg.pretrain.batch_size);
    cfg.pretrain.temperature =
        get_or(p, "temperature", cfg.pretrain.temperature);
    if (p.contains("optimizer"))
      pre_opt = optimizer_from_json(p.at("optimizer"), pre_opt,
                                    "pretrain.optimizer");
  }
  cfg.pretrain.optimizer = pre_opt;

  cfg.distill.batch_size = cfg.pretrain.batch_size;
  cfg.distill.optimizer = pre_opt;  // inherits unless overridden
  if (j.contains("distill")) {
    const json& d = j.at("distill");
    check_keys(d, {"batch_size", "backbone_space", "optimizer"}, "distill");
    cfg.distill.batch_size = get_or(d, "batch_size", cfg.distill.batch_size);
    cfg.distill.backbone_space =
        get_or(d, "backbone_space", cfg.distill.backbone_space);
    if (d.contains("optimizer"))
      cfg.distill.optimizer = optimizer_from_json(
          d.at("optimizer"), cfg.distill.optimizer, "distill.optimizer");
  }

  if (j.contains("cluster")) {
    const json& c = j.at("cluster");
    check_keys(c, {"max_iters", "tol", "n_init", "empty_retries",
                   "normalize_rows"},
               "cluster");
    cfg.kmeans.max_iters = get_or(c, "max_iters", cfg.kmeans.max_iters);
    cfg.kmeans.tol = get_or(c, "tol", cfg.kmeans.tol);
    cfg.kmeans.n_init = get_or(c, "n_init", cfg.kmeans.n_init);
    cfg.kmeans.empty_retries =
        get_or(c, "empty_retries", cfg.kmeans.empty_retries);
    cfg.kmeans.normalize_rows =
        get_or(c, "normalize_rows", cfg.kmeans.normalize_rows);
  }

  cfg.lineval.epochs = 30;
  if (j.contains("lineval")) {
    const json& l = j.at("lineval");
    check_keys(l,
               {"epochs", "batch_size", "lr", "momentum", "weight_decay",
                "augment_train"},
               "lineval");
    cfg.lineval.epochs = get_or(l, "epochs", cfg.lineval.epochs);
    cfg.lineval.batch_size = get_or(l, "batch_size", cfg.lineval.batch_size);
    cfg.lineval.lr = get_or(l, "lr", cfg.lineval.lr);
    cfg.lineval.momentum = get_or(l, "momentum", cfg.lineval.momentum);
    cfg.lineval.weight_decay =
        get_or(l, "weight_decay", cfg.lineval.weight_decay);
    cfg.lineval.augment_train =
        get_or(l, "augment_train", cfg.lineval.augment_train);
  }

  cfg.validate();
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["schema_version"] = cfg.schema_version;
  j["seed"] = cfg.seed;
  j["outdir"] = cfg.outdir;
  j["method"] = harness::to_string(cfg.method);
  j["budget"] = cfg.budget;
  j["clusters"] = cfg.clusters;
  if (uses_distill(cfg.method)) {
    j["epochs"] = json{{"base", cfg.split.base},
                       {"expert", cfg.split.expert},
                       {"distill", cfg.split.distill}};
  } else {
    j["epochs"] = cfg.epochs;
  }
  j["dataset"] = json{{"source", cfg.dataset.source},
                      {"label", cfg.dataset.resolved_label()},
                      {"classes", cfg.dataset.num_classes},
                      {"height", cfg.dataset.height},
                      {"width", cfg.dataset.width},
                      {"per_class", cfg.dataset.per_class},
                      {"test_per_class", cfg.dataset.test_per_class},
                      {"corpus_seed", cfg.dataset.corpus_seed},
                      {"imbalance_p", cfg.dataset.imbalance_p},
                      {"rescale_total", cfg.dataset.rescale_total}};
  j["model"] = json{{"backbone", nn::to_string(cfg.backbone.family)},
                    {"dim", cfg.backbone.output_dim},
                    {"small_image_stem", cfg.backbone.small_image_stem}};
  j["augment"] = policy_to_json(cfg.policy);
  j["pretrain"] = json{{"batch_size", cfg.pretrain.batch_size},
                       {"temperature", cfg.pretrain.temperature},
                       {"optimizer", optimizer_to_json(cfg.pretrain.optimizer)}};
  j["distill"] = json{{"batch_size", cfg.distill.batch_size},
                      {"backbone_space", cfg.distill.backbone_space},
                      {"optimizer", optimizer_to_json(cfg.distill.optimizer)}};
  j["cluster"] = json{{"max_iters", cfg.kmeans.max_iters},
                      {"tol", cfg.kmeans.tol},
                      {"n_init", cfg.kmeans.n_init},
                      {"empty_retries", cfg.kmeans.empty_retries},
                      {"normalize_rows", cfg.kmeans.normalize_rows}};
  j["lineval"] = json{{"epochs", cfg.lineval.epochs},
                      {"batch_size", cfg.lineval.batch_size},
                      {"lr", cfg.lineval.lr},
                      {"momentum", cfg.lineval.momentum},
                      {"weight_decay", cfg.lineval.weight_decay},
                      {"augment_train", cfg.lineval.augment_train}};
  return j.dump(2) + "\n";
}

RunConfig load_run_config(const fs::path& path) {
  return run_config_from_json(read_text(path));
}

std::string apply_overrides(const std::string& json_text,
                            const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  for (const std::string& ov : overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override \"" + ov + "\" is not key.path=value");
    std::string path = ov.substr(0, eq);
    std::string raw = ov.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // bare strings stay strings

    json* node = &j;
    std::size_t start = 0;
    try {
      while (true) {
        auto dot = path.find('.', start);
        std::string key = path.substr(start, dot - start);
        if (key.empty())
          throw ConfigError("override path \"" + path + "\" has an empty key");
        if (dot == std::string::npos) {
          (*node)[key] = value;
          break;
        }
        node = &(*node)[key];
        start = dot + 1;
      }
    } catch (const json::exception& e) {
      throw ConfigError("override \"" + ov +
                        "\" does not fit the config shape: " + e.what());
    }
  }
  return j.dump(2) + "\n";
}

// ---- result rows ---------------------------------------------------------------

std::vector<ResultRow> read_result_rows(const fs::path& csv) {
  std::ifstream f(csv);
  if (!f) throw IoError("cannot read " + csv.string());
  std::string line;
  if (!std::getline(f, line)) throw IoError("empty results file " + csv.string());
  std::vector<ResultRow> rows;
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 7)
      throw IoError("malformed results row in " + csv.string());
    ResultRow r;
    r.subset = fields[0];
    r.n = std::strtol(fields[1].c_str(), nullptr, 10);
    r.method = fields[2];
    r.accuracy = std::strtod(fields[3].c_str(), nullptr);
    r.seed = std::strtoull(fields[4].c_str(), nullptr, 10);
    r.started = fields[5];
    r.finished = fields[6];
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_result_rows(const std::vector<ResultRow>& rows, const fs::path& csv) {
  std::ostringstream ss;
  ss << "subset,n,method,accuracy,seed,started,finished\n";
  for (const ResultRow& r : rows) {
    ss << r.subset << ',' << r.n << ',' << r.method << ','
       << format_double(r.accuracy) << ',' << r.seed << ',' << r.started << ','
       << r.finished << '\n';
  }
  write_text_atomic(csv, ss.str());
}

// ---- run ------------------------------------------------------------------------

std::filesystem::path artifact_root() {
  const char* env = std::getenv("CISSL_ARTIFACT_ROOT");
  if (env && *env) return fs::path(env);
  return fs::current_path();
}

std::filesystem::path resolve_run_dir(const std::string& outdir) {
  fs::path p(outdir);
  if (p.is_absolute()) return p;
  return artifact_root() / p;
}

namespace {

data::Corpus build_corpus(const DatasetSpec& spec) {
  if (spec.source == "synthetic") {
    data::SyntheticSpec s;
    s.num_classes = spec.num_classes;
    s.height = spec.height;
    s.width = spec.width;
    s.train_per_class = spec.per_class;
    s.test_per_class = spec.test_per_class;
    s.seed = spec.corpus_seed;
    return data::make_synthetic_corpus(s);
  }
  return data::load_corpus(spec.source, spec.num_classes, spec.height,
                           spec.width);
}

data::LabeledDataset select_subset(const data::LabeledDataset& train,
                                   const DatasetSpec& spec,
                                   std::uint64_t seed) {
  if (spec.rescale_total > 0)
    return data::make_balanced_rescaled(train, spec.rescale_total, seed);
  if (spec.imbalance_p > 1.0) {
    data::ImbalanceSpec im;
    im.p = spec.imbalance_p;
    im.num_classes = spec.num_classes;
    return data::make_imbalanced(train, im, seed);
  }
  return train;
}

std::vector<int> read_assignment_csv(const fs::path& path, long expect_n) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(f, line);  // header
  std::vector<int> out;
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 2)
      throw IoError("malformed assignment row in " + path.string());
    out.push_back(int(std::strtol(fields[1].c_str(), nullptr, 10)));
  }
  if (long(out.size()) != expect_n)
    throw IoError("assignment file " + path.string() + " covers " +
                  std::to_string(out.size()) + " records, dataset has " +
                  std::to_string(expect_n));
  return out;
}

void assert_epoch_budget(const RunConfig& cfg, const fs::path& dir, int k_eff) {
  long executed = count_csv_rows(dir / "logs" / "pretrain.csv");
  if (uses_distill(cfg.method)) {
    long expert_rows = -1;
    for (int k = 0; k < k_eff; ++k) {
      long rows = count_csv_rows(dir / "logs" /
                                 ("expert_" + std::to_string(k) + ".csv"));
      if (expert_rows < 0) expert_rows = rows;
      if (rows != expert_rows)
        throw StageError(Stage::config,
                         "epoch budget accounting failed: expert logs disagree "
                         "on executed epochs");
    }
    executed += std::max(expert_rows, 0L);
    executed += count_csv_rows(dir / "logs" / "distill.csv");
    if (executed != cfg.budget)
      throw StageError(Stage::config,
                       "epoch budget accounting failed: logs record " +
                           std::to_string(executed) +
                           " executed epochs, configured budget is " +
                           std::to_string(cfg.budget));
  } else {
    if (executed != cfg.epochs)
      throw StageError(Stage::config,
                       "epoch budget accounting failed: logs record " +
                           std::to_string(executed) +
                           " executed epochs, configured count is " +
                           std::to_string(cfg.epochs));
  }
}

}  // namespace

RunOutcome run(const RunConfig& cfg, Stage until) {
  guard(Stage::config, [&] { cfg.validate(); });
  if (cfg.outdir.empty())
    throw StageError(Stage::config, "outdir is empty; set it in the config or "
                                    "pass --outdir");
  const std::string started = now_utc_iso();
  fs::path dir = resolve_run_dir(cfg.outdir);
  guard(Stage::config, [&] {
    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "logs");
    if (uses_cluster(cfg.method)) fs::create_directories(dir / "cluster");
  });

  RunLock lock(dir / "run.lock");

  // The resolved config is pinned on first run; later invocations must match
  // it exactly to resume.
  const std::string resolved = run_config_to_json(cfg);
  const fs::path cfg_lock = dir / "config.lock";
  guard(Stage::config, [&] {
    if (fs::exists(cfg_lock)) {
      json held = json::parse(read_text(cfg_lock));
      if (held != json::parse(resolved))
        throw ConfigError("run directory " + dir.string() +
                          " holds a different config.lock; use a fresh outdir "
                          "or delete the old run");
    } else {
      write_text_atomic(cfg_lock, resolved);
    }
  });

  // Stage: dataset. Cheap and fully deterministic, so it re-runs on resume.
  data::Corpus corpus;
  data::LabeledDataset subset;
  guard(Stage::dataset, [&] {
    corpus = build_corpus(cfg.dataset);
    subset =
        select_subset(corpus.train, cfg.dataset, fork_seed(cfg.seed, "subset"));
    if (subset.size() < 1) throw PipelineError("training subset is empty");
    data::export_distribution(subset, dir / "logs" / "class_distribution.csv");
  });
  RunOutcome outcome{dir, std::nullopt};
  if (until == Stage::dataset) return outcome;

  // Stage: pretrain.
  const fs::path base_ckpt = dir / "checkpoints" / "base.ckpt";
  const fs::path pre_log = dir / "logs" / "pretrain.csv";
  const int pre_epochs =
      uses_distill(cfg.method) ? cfg.split.base : cfg.epochs;
  nn::ModelBundle base = guard(Stage::pretrain, [&] {
    if (fs::exists(base_ckpt) && fs::exists(pre_log))
      return nn::load_checkpoint(base_ckpt.string());
    nn::HeadConfig heads;
    heads.num_classes = cfg.dataset.num_classes;
    nn::ModelBundle bundle =
        nn::init_bundle(cfg.backbone, heads, fork_seed(cfg.seed, "model"));
    train::TrainSchedule sched = cfg.pretrain;
    sched.epochs = pre_epochs;
    sched.method = cfg.method == PipelineMethod::simclr
                       ? train::Method::simclr
                       : train::Method::simsiam;
    sched.policy = cfg.policy;
    sched.seed = fork_seed(cfg.seed, "pretrain");
    auto trace = train::pretrain(bundle, subset, sched);
    train::write_loss_csv(trace, pre_log);
    save_checkpoint_atomic(bundle, base_ckpt);
    return bundle;
  });
  if (until == Stage::pretrain) return outcome;
  auto stage_applies = [&](Stage s) {
    switch (s) {
      case Stage::extract:
      case Stage::cluster:
        return uses_cluster(cfg.method);
      case Stage::experts:
      case Stage::distill:
        return uses_distill(cfg.method);
      default:
        return true;
    }
  };
  if (!stage_applies(until))
    throw StageError(Stage::config,
                     "method " + harness::to_string(cfg.method) + " has no " +
                         harness::to_string(until) + " stage");

  const int k_eff = uses_cluster(cfg.method) ? cfg.clusters : 1;
  std::vector<int> assignments;
  if (uses_distill(cfg.method)) {
    if (uses_cluster(cfg.method)) {
      // Stages: extract + cluster. assignments.csv is the resume marker.
      const fs::path assign_csv = dir / "cluster" / "assignments.csv";
      if (fs::exists(assign_csv)) {
        assignments = guard(Stage::cluster, [&] {
          return read_assignment_csv(assign_csv, subset.size());
        });
      } else {
        cluster::FeatureMatrix feats = guard(Stage::extract, [&] {
          return cluster::extract_features(base, subset);
        });
        cluster::ClusterModel model = guard(Stage::cluster, [&] {
          return cluster::kmeans(feats, cfg.clusters,
                                 fork_seed(cfg.seed, "cluster"), cfg.kmeans);
        });
        guard(Stage::cluster, [&] {
          cluster::export_pca(feats, model, subset,
                              dir / "cluster" / "pca.csv");
          cluster::export_assignments(model, feats, assign_csv);
        });
        assignments = model.assignments;
      }
    } else {
      assignments.assign(std::size_t(subset.size()), 0);
    }
    if (until == Stage::extract || until == Stage::cluster) return outcome;

    // Stage: experts.
    std::vector<fs::path> expert_ckpts;
    for (int k = 0; k < k_eff; ++k)
      expert_ckpts.push_back(dir / "checkpoints" /
                             ("expert_" + std::to_string(k) + ".ckpt"));
    bool have_experts = std::all_of(
        expert_ckpts.begin(), expert_ckpts.end(),
        [](const fs::path& p) { return fs::exists(p); });
    std::vector<nn::ModelBundle> experts = guard(Stage::experts, [&] {
      std::vector<nn::ModelBundle> out;
      if (have_experts) {
        for (const fs::path& p : expert_ckpts)
          out.push_back(nn::load_checkpoint(p.string()));
        return out;
      }
      std::vector<data::LabeledDataset> parts;
      if (uses_cluster(cfg.method)) {
        parts = cluster::partition(subset, assignments, k_eff);
      } else {
        parts.push_back(subset);
      }
      train::TrainSchedule sched = cfg.pretrain;
      sched.epochs = cfg.split.expert;
      sched.method = train::Method::simsiam;
      sched.policy = cfg.policy;
      sched.seed = fork_seed(cfg.seed, "experts");
      std::vector<std::vector<train::EpochLoss>> traces;
      out = train::train_experts(base, parts, sched, &traces);
      for (int k = 0; k < k_eff; ++k) {
        train::write_loss_csv(
            traces[std::size_t(k)],
            dir / "logs" / ("expert_" + std::to_string(k) + ".csv"));
      }
      for (int k = 0; k < k_eff; ++k)
        save_checkpoint_atomic(out[std::size_t(k)], expert_ckpts[std::size_t(k)]);
      return out;
    });
    if (until == Stage::experts) return outcome;

    // Stage: distill.
    const fs::path student_ckpt = dir / "checkpoints" / "student.ckpt";
    const fs::path distill_log = dir / "logs" / "distill.csv";
    nn::ModelBundle student = guard(Stage::distill, [&] {
      if (fs::exists(student_ckpt) && fs::exists(distill_log))
        return nn::load_checkpoint(student_ckpt.string());
      distill::DistillSchedule sched = cfg.distill;
      sched.epochs = cfg.split.distill;
      sched.policy = cfg.policy;
      sched.seed = fork_seed(cfg.seed, "distill");
      distill::DistillOutcome out =
          distill::distill(base, experts, subset, assignments, sched);
      distill::write_distill_csv(out.trace, distill_log);
      save_checkpoint_atomic(out.student, student_ckpt);
      return std::move(out.student);
    });
    if (until == Stage::distill) return outcome;
    base = std::move(student);  // probe the distilled model
  }

  // Executed-epoch accounting, read back from the logs.
  assert_epoch_budget(cfg, dir, k_eff);

  // Stage: lineval.
  const fs::path results_csv = dir / "results.csv";
  ResultRow row = guard(Stage::lineval, [&] {
    if (fs::exists(results_csv)) {
      auto rows = read_result_rows(results_csv);
      if (!rows.empty()) return rows[0];
    }
    lineval::EvalConfig ec = cfg.lineval;
    ec.seed = fork_seed(cfg.seed, "lineval");
    std::vector<train::EpochLoss> trace;
    double acc = lineval::linear_eval(base, subset, corpus.test, ec, &trace);
    train::write_loss_csv(trace, dir / "logs" / "probe.csv");
    ResultRow r;
    r.subset = cfg.dataset.resolved_label();
    r.n = subset.size();
    r.method = harness::to_string(cfg.method);
    r.accuracy = acc;
    r.seed = cfg.seed;
    r.started = started;
    r.finished = now_utc_iso();
    write_result_rows({r}, results_csv);
    return r;
  });
  outcome.row = row;
  return outcome;
}

// ---- grid -------------------------------------------------------------------------

GridOutcome run_grid(const std::vector<RunConfig>& configs,
                     const fs::path& grid_dir) {
  if (configs.empty()) throw ConfigError("grid has no runs");
  std::set<std::string> seen;
  for (const RunConfig& cfg : configs) {
    std::string key = cfg.dataset.resolved_label() + "|" +
                      harness::to_string(cfg.method) + "|" +
                      std::to_string(cfg.seed);
    if (!seen.insert(key).second)
      throw ConfigError("duplicate grid entry (subset=" +
                        cfg.dataset.resolved_label() + ", method=" +
                        harness::to_string(cfg.method) + ", seed=" +
                        std::to_string(cfg.seed) + ")");
  }
  fs::create_directories(grid_dir);
  GridOutcome out;
  out.grid_dir = grid_dir;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    RunConfig cfg = configs[i];
    if (cfg.outdir.empty()) {
      std::string name = sanitize_name(cfg.dataset.resolved_label() + "-" +
                                       harness::to_string(cfg.method) + "-s" +
                                       std::to_string(cfg.seed));
      cfg.outdir = (grid_dir / name).string();
    }
    try {
      RunOutcome r = run(cfg);
      if (r.row) out.rows.push_back(*r.row);
    } catch (const std::exception& e) {
      out.errors.push_back(cfg.outdir + ": " + e.what());
    }
  }
  write_result_rows(out.rows, grid_dir / "results.csv");
  if (!out.errors.empty()) {
    std::ostringstream ss;
    for (const std::string& e : out.errors) ss << e << "\n";
    write_text_atomic(grid_dir / "errors.log", ss.str());
  }
  return out;
}

GridPlan load_grid(const fs::path& path,
                   const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid file is not valid JSON: ") + e.what());
  }
  check_keys(j, {"schema_version", "outdir", "defaults", "runs"}, "grid");
  if (!j.contains("runs") || !j.at("runs").is_array() || j.at("runs").empty())
    throw ConfigError("grid file needs a non-empty \"runs\" array");
  GridPlan plan;
  std::string outdir = get_or(j, "outdir", std::string{"grid"});
  plan.grid_dir = resolve_run_dir(outdir);
  json defaults = j.contains("defaults") ? j.at("defaults") : json::object();
  for (const json& entry : j.at("runs")) {
    json merged = defaults;
    merged.merge_patch(entry);
    merged["schema_version"] = get_or(j, "schema_version", 1);
    std::string text = apply_overrides(merged.dump(), overrides);
    RunConfig cfg = run_config_from_json(text);
    if (cfg.outdir.empty()) {
      std::string name = sanitize_name(cfg.dataset.resolved_label() + "-" +
                                       harness::to_string(cfg.method) + "-s" +
                                       std::to_string(cfg.seed));
      cfg.outdir = (plan.grid_dir / name).string();
    }
    plan.configs.push_back(std::move(cfg));
  }
  return plan;
}

// ---- report -----------------------------------------------------------------------

namespace {

struct RunArtifacts {
  std::string name;  // "." for the root directory
  fs::path dir;
};

void append_loss_csv(std::ostringstream& ss, const std::string& run,
                     const std::string& stage, const fs::path& csv) {
  if (!fs::exists(csv)) return;
  std::ifstream f(csv);
  std::string line;
  std::getline(f, line);  // header: epoch first, loss second, lr last
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() < 3) continue;
    ss << run << ',' << stage << ',' << fields[0] << ',' << fields[1] << ','
       << fields.back() << '\n';
  }
}

void append_plain_csv(std::ostringstream& ss, const std::string& run,
                      const fs::path& csv) {
  if (!fs::exists(csv)) return;
  std::ifstream f(csv);
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    ss << run << ',' << line << '\n';
  }
}

}  // namespace

ReportResult report(const fs::path& dir) {
  return guard(Stage::report, [&]() -> ReportResult {
    if (!fs::exists(dir))
      throw IoError("no run directory at " + dir.string());

    std::vector<RunArtifacts> runs;
    if (fs::exists(dir / "results.csv") || fs::exists(dir / "config.lock"))
      runs.push_back({".", dir});
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_directory()) subdirs.push_back(entry.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const fs::path& sub : subdirs)
      if (fs::exists(sub / "results.csv") || fs::exists(sub / "config.lock"))
        runs.push_back({sub.filename().string(), sub});

    std::vector<ResultRow> rows;
    if (fs::exists(dir / "results.csv")) {
      rows = read_result_rows(dir / "results.csv");
    } else {
      for (const RunArtifacts& r : runs)
        if (fs::exists(r.dir / "results.csv"))
          for (ResultRow& row : read_result_rows(r.dir / "results.csv"))
            rows.push_back(std::move(row));
    }
    if (rows.empty())
      throw IoError("no result rows found under " + dir.string() +
                    " (nothing to report)");

    fs::path report_dir = dir / "report";
    fs::create_directories(report_dir);

    std::ostringstream md;
    md << "# Results\n\n";
    md << "| subset | N | method | seed | accuracy (%) |\n";
    md << "|---|---:|---|---:|---:|\n";
    for (const ResultRow& r : rows)
      md << "| " << r.subset << " | " << r.n << " | " << r.method << " | "
         << r.seed << " | " << format_double(r.accuracy) << " |\n";

    // Seed-averaged summary keyed (subset, method).
    std::map<std::pair<std::string, std::string>, std::pair<double, long>> agg;
    std::map<std::pair<std::string, std::string>, long> ns;
    for (const ResultRow& r : rows) {
      auto key = std::make_pair(r.subset, r.method);
      agg[key].first += r.accuracy;
      agg[key].second += 1;
      ns[key] = r.n;
    }
    md << "\n## Seed averages\n\n";
    md << "| subset | N | method | seeds | mean accuracy (%) |\n";
    md << "|---|---:|---|---:|---:|\n";
    for (const auto& [key, acc] : agg)
      md << "| " << key.first << " | " << ns[key] << " | " << key.second
         << " | " << acc.second << " | " << format_double(acc.first / acc.second)
         << " |\n";

    ReportResult result;
    result.markdown = report_dir / "report.md";

    // Plot data: loss curves for every stage log, the class histogram, and
    // the cluster scatter whenever a clustering stage ran.
    std::ostringstream loss, dist, scatter;
    loss << "run,stage,epoch,loss,lr\n";
    dist << "run,class,count\n";
    scatter << "run,record_index,pc1,pc2,cluster,true_label\n";
    bool any_scatter = false;
    for (const RunArtifacts& r : runs) {
      append_loss_csv(loss, r.name, "pretrain", r.dir / "logs" / "pretrain.csv");
      for (int k = 0;; ++k) {
        fs::path p = r.dir / "logs" / ("expert_" + std::to_string(k) + ".csv");
        if (!fs::exists(p)) break;
        append_loss_csv(loss, r.name, "expert_" + std::to_string(k), p);
      }
      append_loss_csv(loss, r.name, "distill", r.dir / "logs" / "distill.csv");
      append_loss_csv(loss, r.name, "probe", r.dir / "logs" / "probe.csv");
      append_plain_csv(dist, r.name, r.dir / "logs" / "class_distribution.csv");
      if (fs::exists(r.dir / "cluster" / "pca.csv")) {
        append_plain_csv(scatter, r.name, r.dir / "cluster" / "pca.csv");
        any_scatter = true;
      }
    }
    write_text_atomic(report_dir / "loss_curves.csv", loss.str());
    result.csvs.push_back(report_dir / "loss_curves.csv");
    write_text_atomic(report_dir / "class_distribution.csv", dist.str());
    result.csvs.push_back(report_dir / "class_distribution.csv");
    if (any_scatter) {
      write_text_atomic(report_dir / "cluster_scatter.csv", scatter.str());
      result.csvs.push_back(report_dir / "cluster_scatter.csv");
    }

    md << "\nPlot data: ";
    for (std::size_t i = 0; i < result.csvs.size(); ++i)
      md << (i ? ", " : "") << result.csvs[i].filename().string();
    md << "\n";
    result.table = md.str();
    write_text_atomic(result.markdown, result.table);
    return result;
  });
}

}  // namespace cissl::harness
