#pragma once

#include "cissl/tensor.hpp"

namespace cissl::objectives {

// Contrastive loss over an interleaved projection matrix z of shape (2B, d):
// rows 2i and 2i+1 are the two views of sample i. Every other row in the
// batch acts as a negative. Cosine similarities are scaled by `temperature`.
// All arithmetic is double precision. Throws NumericError on a zero-norm row,
// ShapeError on a malformed input, ConfigError on temperature <= 0.
double nt_xent(const DTensor& z, double temperature);

struct NtXentResult {
  double loss = 0.0;
  DTensor grad_z;  // (2B, d), d loss / d z
};
NtXentResult nt_xent_with_grad(const DTensor& z, double temperature);

// Negative-cosine loss with stop-gradient on the target branch:
//   0.5 * mean_i(-cos(p1_i, z2_i)) + 0.5 * mean_i(-cos(p2_i, z1_i))
// p* are predictor outputs, z* are projector outputs. z1/z2 are treated as
// constants: their returned gradients are exactly zero.
double siamese_loss(const DTensor& p1, const DTensor& p2, const DTensor& z1,
                    const DTensor& z2);

struct SiameseResult {
  double loss = 0.0;
  DTensor grad_p1, grad_p2;  // analytic
  DTensor grad_z1, grad_z2;  // exactly zero by construction
};
SiameseResult siamese_loss_with_grad(const DTensor& p1, const DTensor& p2,
                                     const DTensor& z1, const DTensor& z2);

// Multi-teacher regression loss. Both terms are mean squared error over all
// B*d elements, weighted 1/2 each:
//   0.5 * mse(base_out, base_target) + 0.5 * mse(expert_out, expert_target)
// Targets are teacher outputs and never receive gradient.
struct DistillResult {
  double loss = 0.0;
  double base_term = 0.0;    // unweighted mse against the base teacher
  double expert_term = 0.0;  // unweighted mse against the routed expert
  DTensor grad_base_out, grad_expert_out;
  DTensor grad_base_target, grad_expert_target;  // exactly zero
};
double distill_loss(const DTensor& base_out, const DTensor& expert_out,
                    const DTensor& base_target, const DTensor& expert_target);
DistillResult distill_loss_with_grad(const DTensor& base_out,
                                     const DTensor& expert_out,
                                     const DTensor& base_target,
                                     const DTensor& expert_target);

// Detach: returns a value copy that the caller treats as a constant.
DTensor stop_gradient(const DTensor& x);
Tensor stop_gradient(const Tensor& x);

}  // namespace cissl::objectives
