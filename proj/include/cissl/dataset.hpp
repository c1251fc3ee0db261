#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cissl/error.hpp"

namespace cissl::data {

// One labeled image. Pixels are planar RGB bytes (all red rows, then green,
// then blue), matching the on-disk record layout.
struct ImageRecord {
  int label = 0;
  std::vector<std::uint8_t> pixels;
};

struct LabeledDataset {
  int num_classes = 10;
  int height = 32;
  int width = 32;
  std::vector<ImageRecord> records;

  long size() const { return long(records.size()); }
  long pixel_count() const { return long(height) * width * 3; }
  bool balanced() const;
};

struct Corpus {
  LabeledDataset train;
  LabeledDataset test;
};

struct ImbalanceSpec {
  double p = 10.0;     // imbalance factor, >= 1
  int num_classes = 10;
  // rounding is floor, fixed
};

struct SyntheticSpec {
  int num_classes = 10;
  int height = 32;
  int width = 32;
  long train_per_class = 200;
  long test_per_class = 20;
  std::uint64_t seed = 0;
};

// Number of records kept for class c under the exponential-decay profile:
// floor(n_c * p^(-c / (num_classes - 1))). Evaluated in extended precision
// with an exact integer refinement at floor boundaries for integral p.
long decay_count(long n_c, double p, int c, int num_classes);

// Reads a binary corpus from a directory. Accepts the five-file train split
// (data_batch_1..5.bin) plus test_batch.bin, or a train.bin/test.bin pair.
// Each record is 1 label byte followed by height*width*3 pixel bytes.
Corpus load_corpus(const std::filesystem::path& dir, int num_classes = 10, int height = 32,
                   int width = 32);

// Writes the same binary layout load_corpus reads. A 50,000-record train
// split goes out as five data_batch files; anything else as train.bin.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// Class-separable synthetic corpus (per-class color and stripe pattern plus
// noise). Record order interleaves classes round-robin.
Corpus make_synthetic_corpus(const SyntheticSpec& spec);

// Keeps decay_count(n_c, p, c, C) records per class, sampled uniformly
// without replacement. Output preserves source record order.
LabeledDataset make_imbalanced(const LabeledDataset& ds, const ImbalanceSpec& spec,
                               std::uint64_t seed);

// Uniformly rescaled balanced subset: floor(total/C) per class, the remainder
// distributed one extra record to classes 0,1,... in order.
LabeledDataset make_balanced_rescaled(const LabeledDataset& ds, long total, std::uint64_t seed);

std::vector<long> class_histogram(const LabeledDataset& ds);

// CSV with header `class,count`, one row per class.
void export_distribution(const LabeledDataset& ds, const std::filesystem::path& path);

}  // namespace cissl::data
