#pragma once

#include <cstdint>
#include <vector>

#include "cissl/dataset.hpp"
#include "cissl/nn.hpp"
#include "cissl/trainer.hpp"

namespace cissl::lineval {

struct EvalConfig {
  int epochs = 100;
  int batch_size = 256;
  double lr = 30.0;  // absolute, no batch scaling
  double momentum = 0.9;
  double weight_decay = 1e-5;
  bool augment_train = false;  // crop + flip when set
  std::uint64_t seed = 0;

  void validate() const;
};

// Frozen-backbone linear probe: the backbone runs in evaluation mode and is
// never updated; a freshly seeded linear head d -> C trains with SGD under a
// cosine schedule. Returns top-1 test accuracy in percent.
double linear_eval(nn::ModelBundle& bundle, const data::LabeledDataset& train_ds,
                   const data::LabeledDataset& test_ds, const EvalConfig& cfg,
                   std::vector<train::EpochLoss>* trace = nullptr);

// 100 * fraction of rows whose argmax matches the label; argmax ties resolve
// to the lowest class index.
double top1_accuracy(const Tensor& logits, const std::vector<int>& labels);

// Linear classifier trained on fixed feature rows. Backs the probe above and
// the separability checks in the test suite.
struct LinearModel {
  Tensor weight;  // (C, d)
  Tensor bias;    // (C)
  std::vector<train::EpochLoss> trace;
};
LinearModel fit_linear(const Tensor& features, const std::vector<int>& labels,
                       int num_classes, const EvalConfig& cfg);
Tensor linear_logits(const Tensor& features, const LinearModel& model);

}  // namespace cissl::lineval
