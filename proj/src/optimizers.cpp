#include "cissl/optimizers.hpp"

#include <cmath>

#include "cissl/error.hpp"

namespace cissl::optim {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "lars") return OptimizerKind::lars;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or lars)");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "lars";
}

double OptimizerConfig::effective_base_lr(int batch_size) const {
  if (!scale_lr_by_batch) return base_lr;
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  return base_lr * static_cast<double>(batch_size) / 256.0;
}

double cosine_lr(const ScheduleState& s) {
  if (s.total_steps < 1) throw ConfigError("schedule needs total_steps >= 1");
  if (s.current_step < 0 || s.current_step > s.total_steps)
    throw ConfigError("schedule step out of range");
  const double frac = static_cast<double>(s.current_step) /
                      static_cast<double>(s.total_steps);
  return s.base_lr * 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846));
}

namespace {

// Shared inner update so the lars unit-trust path is literally the sgd path.
inline void heavy_ball(float* w, const float* g, float* buf, std::int64_t n,
                       double step_size, double momentum, double weight_decay) {
  const float m = static_cast<float>(momentum);
  const float wd = static_cast<float>(weight_decay);
  const float s = static_cast<float>(step_size);
  for (std::int64_t i = 0; i < n; ++i) {
    buf[i] = m * buf[i] + (g[i] + wd * w[i]);
    w[i] -= s * buf[i];
  }
}

}  // namespace

void sgd_step(float* w, const float* g, float* buf, std::int64_t n, double lr,
              double momentum, double weight_decay) {
  heavy_ball(w, g, buf, n, lr, momentum, weight_decay);
}

double lars_trust_ratio(const float* w, const float* g, std::int64_t n,
                        double weight_decay, double trust_coefficient) {
  double wn = 0.0, gn = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    wn += static_cast<double>(w[i]) * w[i];
    gn += static_cast<double>(g[i]) * g[i];
  }
  wn = std::sqrt(wn);
  gn = std::sqrt(gn);
  if (wn == 0.0) return 1.0;
  const double denom = gn + weight_decay * wn;
  if (denom == 0.0) return 1.0;
  return trust_coefficient * wn / denom;
}

void lars_layer_step(float* w, const float* g, float* buf, std::int64_t n,
                     double lr, double momentum, double weight_decay,
                     double trust_coefficient, bool excluded) {
  if (excluded) {
    heavy_ball(w, g, buf, n, lr, momentum, 0.0);
    return;
  }
  const double ratio = lars_trust_ratio(w, g, n, weight_decay, trust_coefficient);
  heavy_ball(w, g, buf, n, lr * ratio, momentum, weight_decay);
}

void Optimizer::step(const std::vector<ParamRef>& params, double lr) {
  if (buffers_.empty()) {
    buffers_.reserve(params.size());
    for (const auto& p : params) buffers_.push_back(Tensor::zeros(p.w->shape));
  }
  if (buffers_.size() != params.size())
    throw ConfigError("optimizer stepped with a different parameter list");
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor* w = params[i].w;
    const Tensor* g = params[i].g;
    Tensor& buf = buffers_[i];
    if (!w->same_shape(buf) || !g->same_shape(buf))
      throw ShapeError("optimizer parameter shape changed between steps");
    const std::int64_t n = static_cast<std::int64_t>(w->v.size());
    if (cfg_.kind == OptimizerKind::sgd) {
      sgd_step(w->v.data(), g->v.data(), buf.v.data(), n, lr, cfg_.momentum,
               cfg_.weight_decay);
    } else {
      lars_layer_step(w->v.data(), g->v.data(), buf.v.data(), n, lr,
                      cfg_.momentum, cfg_.weight_decay, cfg_.trust_coefficient,
                      params[i].norm_or_bias);
    }
  }
}

}  // namespace cissl::optim
