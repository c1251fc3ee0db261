#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cissl/augment.hpp"
#include "cissl/dataset.hpp"
#include "cissl/nn.hpp"
#include "cissl/optimizers.hpp"

namespace cissl::train {

enum class Method { simclr, simsiam };
Method parse_method(const std::string& name);
std::string to_string(Method method);

struct TrainSchedule {
  int epochs = 1;
  int batch_size = 128;
  Method method = Method::simsiam;
  optim::OptimizerConfig optimizer;
  double temperature = 0.5;  // contrastive objective only
  augment::AugmentationPolicy policy;
  std::uint64_t seed = 0;
  // Invoked after every epoch (checkpoint intervals, progress logs).
  std::function<void(int epoch, const nn::ModelBundle&)> epoch_hook;

  void validate() const;
};

struct EpochLoss {
  int epoch = 0;
  double loss = 0.0;  // mean over the epoch's batches
  double lr = 0.0;
};

// Self-supervised pre-training on two-view batches. Views of sample i sit at
// rows 2i and 2i+1 of the forward batch, so batch-norm sees both views
// jointly. Deterministic given (schedule.seed, dataset).
std::vector<EpochLoss> pretrain(nn::ModelBundle& bundle,
                                const data::LabeledDataset& ds,
                                const TrainSchedule& schedule);

// One expert per subset, each warm-started from `base` and pre-trained on its
// own partition under the same schedule. Per-expert loss traces land in
// `traces` when given.
std::vector<nn::ModelBundle> train_experts(
    const nn::ModelBundle& base,
    const std::vector<data::LabeledDataset>& partitions,
    const TrainSchedule& schedule,
    std::vector<std::vector<EpochLoss>>* traces = nullptr);

void write_loss_csv(const std::vector<EpochLoss>& trace,
                    const std::filesystem::path& path);

// Interleaves two augmented views per record into a (2B, 3, H, W) batch.
Tensor make_pair_batch(const data::LabeledDataset& ds,
                       const std::vector<long>& indices,
                       const augment::AugmentationPolicy& policy, Rng& rng);

// Single augmented view per record, (B, 3, H, W).
Tensor make_view_batch(const data::LabeledDataset& ds,
                       const std::vector<long>& indices,
                       const augment::AugmentationPolicy& policy, Rng& rng);

// Optimizer handles on every trainable parameter that pre-training updates
// (backbone, projector, predictor).
std::vector<optim::ParamRef> pretrain_param_refs(nn::ModelBundle& bundle);

}  // namespace cissl::train
