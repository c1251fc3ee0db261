#include "cissl/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "cissl/error.hpp"

namespace cissl::nn {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'S', 'S', 'L', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

using nlohmann::json;

json spec_to_json(const MlpSpec& s) {
  return json{{"dims", s.dims}, {"hidden_bn", s.hidden_bn}};
}

MlpSpec spec_from_json(const json& j) {
  MlpSpec s;
  s.dims = j.at("dims").get<std::vector<int>>();
  s.hidden_bn = j.at("hidden_bn").get<bool>();
  return s;
}

json config_to_json(const ModelBundle& b) {
  return json{
      {"backbone",
       {{"family", to_string(b.backbone_cfg.family)},
        {"output_dim", b.backbone_cfg.output_dim},
        {"small_image_stem", b.backbone_cfg.small_image_stem}}},
      {"heads",
       {{"projector", spec_to_json(b.head_cfg.projector)},
        {"predictor", spec_to_json(b.head_cfg.predictor)},
        {"regression", spec_to_json(b.head_cfg.regression)},
        {"num_regression_heads", b.head_cfg.num_regression_heads},
        {"num_classes", b.head_cfg.num_classes}}},
      {"init_seed", b.init_seed},
      {"step", b.step}};
}

template <typename T>
void wr(std::ofstream& out, const T& x) {
  out.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

void wr_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

template <typename T>
T rd(std::ifstream& in) {
  T x;
  in.read(reinterpret_cast<char*>(&x), sizeof(T));
  if (!in) throw IoError("corrupt checkpoint: truncated file");
  return x;
}

void rd_bytes(std::ifstream& in, void* p, std::size_t n) {
  in.read(reinterpret_cast<char*>(p), std::streamsize(n));
  if (!in) throw IoError("corrupt checkpoint: truncated file");
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);

  wr_bytes(out, kMagic, sizeof(kMagic));
  wr(out, kVersion);

  const std::string cfg = config_to_json(bundle).dump();
  wr(out, std::uint64_t(cfg.size()));
  wr_bytes(out, cfg.data(), cfg.size());

  const auto params = bundle.params();
  wr(out, std::uint64_t(params.size()));
  for (const Param* p : params) {
    if (p->name.size() > 0xffff) throw IoError("parameter name too long");
    wr(out, std::uint16_t(p->name.size()));
    wr_bytes(out, p->name.data(), p->name.size());
    const std::uint8_t flags =
        std::uint8_t((p->norm_or_bias ? 1 : 0) | (p->trainable ? 2 : 0));
    wr(out, flags);
    wr(out, std::uint8_t(p->w.shape.size()));
    for (const int d : p->w.shape) wr(out, std::uint32_t(d));
    wr(out, std::uint64_t(p->w.v.size() * sizeof(float)));
    wr_bytes(out, p->w.v.data(), p->w.v.size() * sizeof(float));
  }
  out.flush();
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);

  char magic[8];
  rd_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint file: " + path);
  const auto version = rd<std::uint32_t>(in);
  if (version != kVersion)
    throw IoError("checkpoint version mismatch: found " + std::to_string(version));

  const auto cfg_len = rd<std::uint64_t>(in);
  if (cfg_len > (1u << 20)) throw IoError("corrupt checkpoint: config blob too large");
  std::string cfg_text(cfg_len, '\0');
  rd_bytes(in, cfg_text.data(), cfg_len);

  json cfg;
  try {
    cfg = json::parse(cfg_text);
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint: bad config blob: ") + e.what());
  }

  BackboneConfig bcfg;
  HeadConfig hcfg;
  std::uint64_t init_seed = 0;
  std::int64_t step = 0;
  try {
    const json& jb = cfg.at("backbone");
    bcfg.family = parse_backbone_family(jb.at("family").get<std::string>());
    bcfg.output_dim = jb.at("output_dim").get<int>();
    bcfg.small_image_stem = jb.at("small_image_stem").get<bool>();
    const json& jh = cfg.at("heads");
    hcfg.projector = spec_from_json(jh.at("projector"));
    hcfg.predictor = spec_from_json(jh.at("predictor"));
    hcfg.regression = spec_from_json(jh.at("regression"));
    hcfg.num_regression_heads = jh.at("num_regression_heads").get<int>();
    hcfg.num_classes = jh.at("num_classes").get<int>();
    init_seed = cfg.at("init_seed").get<std::uint64_t>();
    step = cfg.at("step").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint: missing config field: ") + e.what());
  }

  ModelBundle bundle = init_bundle(bcfg, hcfg, init_seed);
  bundle.step = step;

  std::unordered_map<std::string, Param*> by_name;
  for (Param* p : bundle.params()) by_name.emplace(p->name, p);

  const auto count = rd<std::uint64_t>(in);
  if (count != by_name.size())
    throw IoError("corrupt checkpoint: parameter count mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = rd<std::uint16_t>(in);
    std::string name(name_len, '\0');
    rd_bytes(in, name.data(), name_len);
    rd<std::uint8_t>(in);  // flags, derivable from the rebuilt bundle
    const auto rank = rd<std::uint8_t>(in);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = int(rd<std::uint32_t>(in));
    const auto nbytes = rd<std::uint64_t>(in);

    auto it = by_name.find(name);
    if (it == by_name.end())
      throw IoError("corrupt checkpoint: unknown parameter '" + name + "'");
    Param* p = it->second;
    if (p->w.shape != shape || nbytes != p->w.v.size() * sizeof(float))
      throw IoError("corrupt checkpoint: shape mismatch for '" + name + "'");
    rd_bytes(in, p->w.v.data(), nbytes);
  }
  return bundle;
}

}  // namespace cissl::nn
