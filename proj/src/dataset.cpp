#include "cissl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>

#include "cissl/rng.hpp"

namespace cissl::data {

namespace fs = std::filesystem;

bool LabeledDataset::balanced() const {
  const auto counts = class_histogram(*this);
  for (const long c : counts)
    if (c != counts[0]) return false;
  return true;
}

namespace {

using u128 = unsigned __int128;

std::optional<u128> checked_mul(u128 a, u128 b) {
  if (a != 0 && b > ~u128(0) / a) return std::nullopt;
  return a * b;
}

std::optional<u128> checked_pow(u128 base, int exp) {
  u128 acc = 1;
  for (int i = 0; i < exp; ++i) {
    const auto next = checked_mul(acc, base);
    if (!next) return std::nullopt;
    acc = *next;
  }
  return acc;
}

// Exact test of k <= n_c * p^(-c/e) for integer p, i.e. k^e * p^c <= n_c^e.
// Returns nullopt when the integer products overflow 128 bits.
std::optional<bool> le_exact(long k, long n_c, long p, int c, int e) {
  if (k <= 0) return true;
  const auto ke = checked_pow(u128(k), e);
  if (!ke) return std::nullopt;
  const auto pc = checked_pow(u128(p), c);
  if (!pc) return std::nullopt;
  const auto lhs = checked_mul(*ke, *pc);
  if (!lhs) return std::nullopt;
  const auto rhs = checked_pow(u128(n_c), e);
  if (!rhs) return std::nullopt;
  return *lhs <= *rhs;
}

}  // namespace

long decay_count(long n_c, double p, int c, int num_classes) {
  if (p < 1.0) throw ConfigError("imbalance factor p must be >= 1");
  if (c == 0 || p == 1.0) return n_c;
  const int e = num_classes - 1;
  const long double exact = n_c * std::pow(1.0L / (long double)p, (long double)c / e);
  long k = long(std::floor((double)exact));

  // Floating-point evaluation can land a hair on the wrong side when the true
  // value is an integer (e.g. p = 512, c = 1, e = 9). For integral p the floor
  // is verified against the exact integer inequality k^e * p^c <= n_c^e.
  const double pr = std::round(p);
  if (pr == p && pr >= 1.0 && pr < 9.0e15) {
    const long pi = long(pr);
    while (true) {
      const auto up = le_exact(k + 1, n_c, pi, c, e);
      if (up && *up) {
        ++k;
        continue;
      }
      const auto lo = le_exact(k, n_c, pi, c, e);
      if (lo && !*lo) {
        --k;
        continue;
      }
      break;
    }
  }
  return std::max(k, 0L);
}

namespace {

std::vector<ImageRecord> read_record_file(const fs::path& file, int num_classes, long rec_pixels) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + file.string());
  in.seekg(0, std::ios::end);
  const long long nbytes = in.tellg();
  in.seekg(0);
  const long long rec_len = 1 + rec_pixels;
  if (nbytes <= 0 || nbytes % rec_len != 0)
    throw CorpusError("malformed corpus file (size " + std::to_string(nbytes) +
                      " is not a multiple of the record length): " + file.string());
  const long long n = nbytes / rec_len;
  std::vector<ImageRecord> out(static_cast<std::size_t>(n));
  std::vector<char> buf(static_cast<std::size_t>(rec_len));
  for (long long i = 0; i < n; ++i) {
    if (!in.read(buf.data(), rec_len)) throw CorpusError("short read in " + file.string());
    const int label = int(static_cast<unsigned char>(buf[0]));
    if (label >= num_classes)
      throw CorpusError("corrupt record: label " + std::to_string(label) + " >= " +
                        std::to_string(num_classes) + " in " + file.string());
    out[std::size_t(i)].label = label;
    out[std::size_t(i)].pixels.assign(buf.begin() + 1, buf.end());
  }
  return out;
}

std::vector<fs::path> train_files_in(const fs::path& dir) {
  std::vector<fs::path> batches;
  for (int i = 1;; ++i) {
    const fs::path p = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (!fs::exists(p)) break;
    batches.push_back(p);
  }
  if (!batches.empty()) return batches;
  const fs::path single = dir / "train.bin";
  if (fs::exists(single)) return {single};
  throw IoError("no train split found in " + dir.string());
}

fs::path test_file_in(const fs::path& dir) {
  for (const char* name : {"test_batch.bin", "test.bin"}) {
    const fs::path p = dir / name;
    if (fs::exists(p)) return p;
  }
  throw IoError("no test split found in " + dir.string());
}

void write_record_file(const fs::path& file, const std::vector<ImageRecord>& records, long begin,
                       long end) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus file: " + file.string());
  for (long i = begin; i < end; ++i) {
    const auto& rec = records[std::size_t(i)];
    const char label = char(static_cast<unsigned char>(rec.label));
    out.write(&label, 1);
    out.write(reinterpret_cast<const char*>(rec.pixels.data()), long(rec.pixels.size()));
  }
  if (!out) throw IoError("write failed: " + file.string());
}

}  // namespace

Corpus load_corpus(const fs::path& dir, int num_classes, int height, int width) {
  const long rec_pixels = long(height) * width * 3;
  Corpus corpus;
  corpus.train.num_classes = corpus.test.num_classes = num_classes;
  corpus.train.height = corpus.test.height = height;
  corpus.train.width = corpus.test.width = width;
  for (const auto& file : train_files_in(dir)) {
    auto recs = read_record_file(file, num_classes, rec_pixels);
    corpus.train.records.insert(corpus.train.records.end(),
                                std::make_move_iterator(recs.begin()),
                                std::make_move_iterator(recs.end()));
  }
  corpus.test.records = read_record_file(test_file_in(dir), num_classes, rec_pixels);
  return corpus;
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  const long n = corpus.train.size();
  if (n == 50000) {
    for (int i = 0; i < 5; ++i)
      write_record_file(dir / ("data_batch_" + std::to_string(i + 1) + ".bin"),
                        corpus.train.records, i * 10000L, (i + 1) * 10000L);
  } else {
    write_record_file(dir / "train.bin", corpus.train.records, 0, n);
  }
  write_record_file(dir / "test_batch.bin", corpus.test.records, 0, corpus.test.size());
}

namespace {

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double t = v * (1.0 - (1.0 - f) * s);
  switch (int(i) % 6) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

ImageRecord synth_record(const SyntheticSpec& spec, int label, Rng& rng) {
  ImageRecord rec;
  rec.label = label;
  const int h = spec.height, w = spec.width;
  rec.pixels.resize(std::size_t(h) * w * 3);

  double base[3];
  hsv_to_rgb(0.6180339887 * label, 0.65, 0.85, base);
  const double theta = 3.14159265358979 * label / spec.num_classes;
  const double freq = 2.0 + 2.0 * (label % 3);
  const double phase = rng.uniform(0.0, 6.2831853);
  const double ct = std::cos(theta), st = std::sin(theta);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = (x * ct + y * st) / w;
      const double m = 0.62 + 0.38 * std::sin(6.2831853 * freq * u + phase);
      for (int c = 0; c < 3; ++c) {
        const double val = base[c] * m + rng.normal(0.0, 0.06);
        const double clamped = std::min(1.0, std::max(0.0, val));
        rec.pixels[std::size_t(c) * h * w + std::size_t(y) * w + x] =
            std::uint8_t(std::lround(clamped * 255.0));
      }
    }
  }
  return rec;
}

LabeledDataset synth_split(const SyntheticSpec& spec, long per_class, std::uint64_t split_seed) {
  LabeledDataset ds;
  ds.num_classes = spec.num_classes;
  ds.height = spec.height;
  ds.width = spec.width;
  const long n = per_class * spec.num_classes;
  ds.records.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    Rng rng(fork_seed(split_seed, "record", std::uint64_t(i)));
    ds.records.push_back(synth_record(spec, int(i % spec.num_classes), rng));
  }
  return ds;
}

}  // namespace

Corpus make_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.num_classes < 1 || spec.height < 1 || spec.width < 1 || spec.train_per_class < 0 ||
      spec.test_per_class < 0)
    throw ConfigError("invalid synthetic corpus spec");
  Corpus corpus;
  corpus.train = synth_split(spec, spec.train_per_class, fork_seed(spec.seed, "train"));
  corpus.test = synth_split(spec, spec.test_per_class, fork_seed(spec.seed, "test"));
  return corpus;
}

namespace {

LabeledDataset gather(const LabeledDataset& ds, std::vector<std::size_t>& indices) {
  std::sort(indices.begin(), indices.end());
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  out.height = ds.height;
  out.width = ds.width;
  out.records.reserve(indices.size());
  for (const std::size_t i : indices) out.records.push_back(ds.records[i]);
  return out;
}

std::vector<std::vector<std::size_t>> indices_by_class(const LabeledDataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    by_class[std::size_t(ds.records[i].label)].push_back(i);
  return by_class;
}

}  // namespace

LabeledDataset make_imbalanced(const LabeledDataset& ds, const ImbalanceSpec& spec,
                               std::uint64_t seed) {
  if (spec.p < 1.0) throw ConfigError("imbalance factor p must be >= 1");
  if (spec.num_classes != ds.num_classes)
    throw ConfigError("imbalance spec class count does not match dataset");
  const auto by_class = indices_by_class(ds);
  std::vector<std::size_t> selected;
  for (int c = 0; c < ds.num_classes; ++c) {
    const auto& pool = by_class[std::size_t(c)];
    const long keep = decay_count(long(pool.size()), spec.p, c, spec.num_classes);
    Rng rng(fork_seed(seed, "class", std::uint64_t(c)));
    for (const std::size_t local : rng.sample_indices(pool.size(), std::size_t(keep)))
      selected.push_back(pool[local]);
  }
  return gather(ds, selected);
}

LabeledDataset make_balanced_rescaled(const LabeledDataset& ds, long total, std::uint64_t seed) {
  if (total < 0 || total > ds.size())
    throw ConfigError("rescale total " + std::to_string(total) + " exceeds dataset size " +
                      std::to_string(ds.size()));
  const auto by_class = indices_by_class(ds);
  const long base = total / ds.num_classes;
  const long extra = total % ds.num_classes;
  std::vector<std::size_t> selected;
  for (int c = 0; c < ds.num_classes; ++c) {
    const long quota = base + (c < extra ? 1 : 0);
    const auto& pool = by_class[std::size_t(c)];
    if (quota > long(pool.size()))
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                        " records, need " + std::to_string(quota));
    Rng rng(fork_seed(seed, "class", std::uint64_t(c)));
    for (const std::size_t local : rng.sample_indices(pool.size(), std::size_t(quota)))
      selected.push_back(pool[local]);
  }
  return gather(ds, selected);
}

std::vector<long> class_histogram(const LabeledDataset& ds) {
  std::vector<long> counts(std::size_t(ds.num_classes), 0);
  for (const auto& rec : ds.records) ++counts[std::size_t(rec.label)];
  return counts;
}

void export_distribution(const LabeledDataset& ds, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write distribution file: " + path.string());
  out << "class,count\n";
  const auto counts = class_histogram(ds);
  for (std::size_t c = 0; c < counts.size(); ++c) out << c << "," << counts[c] << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace cissl::data
