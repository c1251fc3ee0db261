#include <algorithm>
#include <cmath>
#include <vector>

#include "cissl/dataset.hpp"
#include "cissl/error.hpp"
#include "cissl/lineval.hpp"
#include "cissl/nn.hpp"
#include "cissl/rng.hpp"
#include "doctest.h"

using namespace cissl;
using namespace cissl::lineval;

namespace {

data::Corpus ten_class_corpus(long train_per_class, long test_per_class,
                              std::uint64_t seed = 80) {
  data::SyntheticSpec spec;
  spec.num_classes = 10;
  spec.train_per_class = train_per_class;
  spec.test_per_class = test_per_class;
  spec.height = 8;
  spec.width = 8;
  spec.seed = seed;
  return data::make_synthetic_corpus(spec);
}

nn::ModelBundle probe_bundle(std::uint64_t seed, int classes = 10) {
  nn::BackboneConfig cfg;
  cfg.family = nn::BackboneFamily::tiny_conv;
  cfg.output_dim = 8;
  nn::HeadConfig hc;
  hc.num_classes = classes;
  return nn::init_bundle(cfg, hc, seed);
}

void shuffle_labels(data::LabeledDataset& ds, std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(ds.records.size());
  for (const auto& r : ds.records) labels.push_back(r.label);
  Rng rng(seed);
  rng.shuffle(labels);
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    ds.records[i].label = labels[i];
}

EvalConfig quick_config(int epochs, std::uint64_t seed) {
  EvalConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 64;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_SUITE("lineval") {

TEST_CASE("config validation rejects bad settings") {
  EvalConfig cfg;
  cfg.validate();  // defaults are fine
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = EvalConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = EvalConfig{};
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lr = -3.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = EvalConfig{};
  cfg.momentum = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = EvalConfig{};
  cfg.weight_decay = -1e-4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("top-1 accuracy counts argmax hits, ties to the lowest class") {
  Tensor logits = Tensor::zeros({3, 3});
  // row 0: clear winner class 1
  logits.at(0, 1) = 5.0f;
  logits.at(0, 2) = 1.0f;
  // row 1: classes 0 and 1 tie at 2.0
  logits.at(1, 0) = 2.0f;
  logits.at(1, 1) = 2.0f;
  // row 2: clear winner class 2
  logits.at(2, 2) = 3.0f;
  logits.at(2, 0) = 1.0f;

  CHECK(top1_accuracy(logits, {1, 0, 2}) == 100.0);
  // the tie resolves to class 0, so labeling the tied row 1 misses
  CHECK(top1_accuracy(logits, {1, 1, 2}) == doctest::Approx(200.0 / 3.0));

  std::vector<int> short_labels = {0, 1};
  CHECK_THROWS_AS(top1_accuracy(logits, short_labels), ShapeError);
  Tensor flat({9});
  CHECK_THROWS_AS(top1_accuracy(flat, {0, 1, 2}), ShapeError);
}

TEST_CASE("a linear head separates linearly separable features") {
  const int per = 30;
  Tensor feats = Tensor::zeros({3 * per, 2});
  std::vector<int> labels(std::size_t(3 * per));
  const double centers[3][2] = {{0.0, 0.0}, {6.0, 0.0}, {0.0, 6.0}};
  Rng rng(12);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < per; ++i) {
      const int row = c * per + i;
      feats.at(row, 0) = float(centers[c][0] + rng.uniform(-0.5, 0.5));
      feats.at(row, 1) = float(centers[c][1] + rng.uniform(-0.5, 0.5));
      labels[std::size_t(row)] = c;
    }

  EvalConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 16;
  cfg.lr = 0.5;
  cfg.weight_decay = 0.0;
  cfg.seed = 4;
  LinearModel model = fit_linear(feats, labels, 3, cfg);

  REQUIRE(model.trace.size() == 60);
  CHECK(model.trace.back().loss < model.trace.front().loss);
  const double acc = top1_accuracy(linear_logits(feats, model), labels);
  CHECK(acc > 95.0);
}

TEST_CASE("fit_linear validates the feature table") {
  Tensor feats = Tensor::zeros({4, 2});
  std::vector<int> labels = {0, 1};  // wrong length
  CHECK_THROWS_AS(fit_linear(feats, labels, 2, EvalConfig{}), ShapeError);
  Tensor flat({8});
  CHECK_THROWS_AS(fit_linear(flat, {0, 0, 1, 1}, 2, EvalConfig{}), ShapeError);
  EvalConfig bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(fit_linear(feats, {0, 1, 0, 1}, 2, bad), ConfigError);
}

TEST_CASE("a probe on label-shuffled data scores at chance") {
  auto corpus = ten_class_corpus(12, 10, 81);
  shuffle_labels(corpus.train, 501);
  shuffle_labels(corpus.test, 502);

  double total = 0.0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    nn::ModelBundle bundle = probe_bundle(100 + seed);
    total += linear_eval(bundle, corpus.train, corpus.test, quick_config(6, seed));
  }
  const double mean = total / 3.0;
  // ten classes, no signal: chance is 10 percent
  CHECK(mean >= 5.0);
  CHECK(mean <= 20.0);
}

TEST_CASE("the backbone is frozen through evaluation") {
  auto corpus = ten_class_corpus(6, 4, 82);
  nn::ModelBundle bundle = probe_bundle(104);
  const auto backbone_before = nn::backbone_hash(bundle);
  const auto bundle_before = nn::bundle_hash(bundle);

  std::vector<train::EpochLoss> trace;
  const double acc =
      linear_eval(bundle, corpus.train, corpus.test, quick_config(4, 9), &trace);
  CHECK(acc >= 0.0);
  CHECK(acc <= 100.0);
  CHECK(nn::backbone_hash(bundle) == backbone_before);
  // the trained head is published on the bundle
  CHECK(nn::bundle_hash(bundle) != bundle_before);

  REQUIRE(trace.size() == 4);
  CHECK(trace[0].lr == 30.0);  // undamped absolute rate at epoch 0
  for (int e = 0; e < 4; ++e) {
    CHECK(trace[std::size_t(e)].epoch == e);
    CHECK(std::isfinite(trace[std::size_t(e)].loss));
    CHECK(trace[std::size_t(e)].lr == optim::cosine_lr({e, 4, 30.0}));
  }
}

TEST_CASE("evaluation is deterministic in the config seed") {
  auto corpus = ten_class_corpus(6, 4, 83);
  nn::ModelBundle bundle = probe_bundle(105);

  std::vector<train::EpochLoss> ta, tb;
  const double a =
      linear_eval(bundle, corpus.train, corpus.test, quick_config(4, 77), &ta);
  const double b =
      linear_eval(bundle, corpus.train, corpus.test, quick_config(4, 77), &tb);
  CHECK(a == b);
  REQUIRE(ta.size() == tb.size());
  for (std::size_t e = 0; e < ta.size(); ++e) CHECK(ta[e].loss == tb[e].loss);

  std::vector<train::EpochLoss> tc;
  linear_eval(bundle, corpus.train, corpus.test, quick_config(4, 78), &tc);
  CHECK(tc[0].loss != ta[0].loss);  // different probe seed, different start
}

TEST_CASE("training-time augmentation is available for the probe") {
  auto corpus = ten_class_corpus(6, 4, 84);
  nn::ModelBundle bundle = probe_bundle(106);
  const auto backbone_before = nn::backbone_hash(bundle);

  auto cfg = quick_config(3, 11);
  cfg.augment_train = true;
  const double a = linear_eval(bundle, corpus.train, corpus.test, cfg);
  CHECK(a >= 0.0);
  CHECK(a <= 100.0);
  CHECK(nn::backbone_hash(bundle) == backbone_before);
  // same seed reproduces the augmented run too
  const double b = linear_eval(bundle, corpus.train, corpus.test, cfg);
  CHECK(a == b);
}

TEST_CASE("evaluation validates datasets against the classifier head") {
  auto corpus = ten_class_corpus(6, 4, 85);
  nn::ModelBundle bundle = probe_bundle(107);

  data::LabeledDataset empty;
  CHECK_THROWS_AS(linear_eval(bundle, empty, corpus.test, quick_config(2, 0)),
                  PipelineError);
  CHECK_THROWS_AS(linear_eval(bundle, corpus.train, empty, quick_config(2, 0)),
                  PipelineError);

  nn::ModelBundle narrow = probe_bundle(108, 4);  // four-way head
  CHECK_THROWS_AS(
      linear_eval(narrow, corpus.train, corpus.test, quick_config(2, 0)),
      ConfigError);

  auto damaged = ten_class_corpus(6, 4, 86);
  damaged.train.records[0].label = 10;  // outside [0, 10)
  CHECK_THROWS_AS(
      linear_eval(bundle, damaged.train, damaged.test, quick_config(2, 0)),
      CorpusError);
}

}  // TEST_SUITE
