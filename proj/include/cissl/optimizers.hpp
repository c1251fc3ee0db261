#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cissl/tensor.hpp"

namespace cissl::optim {

enum class OptimizerKind { sgd, lars };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double base_lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double trust_coefficient = 1e-3;  // layer adaptation strength, lars only
  // Scale base_lr by batch_size / 256. On for pre-training recipes, off when
  // the configured rate is already absolute (linear probes use lr 30.0).
  bool scale_lr_by_batch = false;

  double effective_base_lr(int batch_size) const;
};

struct ScheduleState {
  std::int64_t current_step = 0;  // 0-based epoch index
  std::int64_t total_steps = 1;
  double base_lr = 0.0;
};

// Half-cosine decay from base_lr at step 0 toward 0 at total_steps.
double cosine_lr(const ScheduleState& s);

// One heavy-ball SGD update on a flat parameter block:
//   buf = momentum * buf + (g + weight_decay * w); w -= lr * buf
void sgd_step(float* w, const float* g, float* buf, std::int64_t n, double lr,
              double momentum, double weight_decay);

// LARS update for one layer. Non-excluded layers rescale lr by the trust
// ratio trust * ||w|| / (||g|| + weight_decay * ||w||) with zero guards on
// both norms; excluded layers (norms, biases) fall back to plain SGD with no
// weight decay. A layer whose trust ratio is exactly 1 takes the same code
// path as sgd_step and must match it bit for bit.
void lars_layer_step(float* w, const float* g, float* buf, std::int64_t n,
                     double lr, double momentum, double weight_decay,
                     double trust_coefficient, bool excluded);

// Trust ratio as used by lars_layer_step, exposed for inspection.
double lars_trust_ratio(const float* w, const float* g, std::int64_t n,
                        double weight_decay, double trust_coefficient);

// Stateful wrapper that owns one momentum buffer per parameter tensor.
// Parameters are matched positionally, so the caller must present the same
// list, in the same order, on every step.
struct ParamRef {
  Tensor* w = nullptr;
  const Tensor* g = nullptr;
  bool norm_or_bias = false;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  void step(const std::vector<ParamRef>& params, double lr);

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> buffers_;
};

}  // namespace cissl::optim
