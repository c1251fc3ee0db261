#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "cissl/augment.hpp"
#include "cissl/dataset.hpp"
#include "cissl/nn.hpp"
#include "cissl/optimizers.hpp"
#include "cissl/trainer.hpp"

namespace cissl::distill {

struct DistillSchedule {
  int epochs = 1;
  int batch_size = 128;
  optim::OptimizerConfig optimizer;
  augment::AugmentationPolicy policy;
  std::uint64_t seed = 0;
  // Regress raw backbone features instead of projector outputs (ablation).
  bool backbone_space = false;
  std::function<void(int epoch, const nn::ModelBundle&)> epoch_hook;
  // Test instrumentation: receives (record indices, routed head indices) for
  // every batch. Head 0 is the base head; cluster k routes to head k+1.
  std::function<void(const std::vector<long>&, const std::vector<int>&)>
      routing_observer;

  void validate() const;
};

struct DistillEpoch {
  int epoch = 0;
  double loss = 0.0;
  double base_term = 0.0;
  double expert_term = 0.0;
  double lr = 0.0;
};

struct DistillOutcome {
  nn::ModelBundle student;
  std::vector<DistillEpoch> trace;
};

// Multi-teacher regression training (single-view batches). The student starts
// as a copy of the base teacher plus K+1 fresh regression heads; each sample's
// expert term is routed through the head and teacher matching its cluster
// assignment. Teachers run in evaluation mode and are never written to.
DistillOutcome distill(nn::ModelBundle& base_teacher,
                       std::vector<nn::ModelBundle>& expert_teachers,
                       const data::LabeledDataset& ds,
                       const std::vector<int>& assignments,
                       const DistillSchedule& schedule);

struct NoClusterOutcome {
  nn::ModelBundle student;
  std::vector<train::EpochLoss> expert_trace;
  std::vector<DistillEpoch> distill_trace;
};

// Ablation without the clustering stage: one expert trained on the whole
// dataset, then the same distillation with every sample assigned to it.
NoClusterOutcome distill_no_cluster(nn::ModelBundle& base_teacher,
                                    const data::LabeledDataset& ds,
                                    const train::TrainSchedule& expert_schedule,
                                    const DistillSchedule& distill_schedule);

void write_distill_csv(const std::vector<DistillEpoch>& trace,
                       const std::filesystem::path& path);

}  // namespace cissl::distill
