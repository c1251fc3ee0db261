#include "cissl/objectives.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cissl/error.hpp"
#include "cissl/kernels.hpp"

namespace cissl::objectives {

namespace {

void require_rows(const DTensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected a rank-2 tensor");
  if (t.shape[0] < 1 || t.shape[1] < 1)
    throw ShapeError(std::string(what) + ": empty tensor");
}

// Row L2 norms. Rejects rows that cannot be normalized.
std::vector<double> row_norms(const DTensor& t, const char* what) {
  const int rows = t.shape[0], d = t.shape[1];
  std::vector<double> out(static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    const double* v = t.v.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) s += v[j] * v[j];
    const double n = std::sqrt(s);
    if (!(n > 0.0) || !std::isfinite(n))
      throw NumericError(std::string(what) + ": zero-norm or non-finite row " +
                         std::to_string(i));
    out[static_cast<size_t>(i)] = n;
  }
  return out;
}

DTensor normalize_rows(const DTensor& t, const std::vector<double>& norms) {
  DTensor out = t;
  const int rows = t.shape[0], d = t.shape[1];
  for (int i = 0; i < rows; ++i) {
    double* v = out.v.data() + static_cast<size_t>(i) * d;
    const double inv = 1.0 / norms[static_cast<size_t>(i)];
    for (int j = 0; j < d; ++j) v[j] *= inv;
  }
  return out;
}

struct NtXentCore {
  double loss = 0.0;
  DTensor softmax;  // (2B, 2B), row i: P_ij over j != i, diag zero
};

NtXentCore nt_xent_core(const DTensor& sim) {
  const int n = sim.shape[0];
  NtXentCore core;
  core.softmax = DTensor::zeros({n, n});
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int pos = i ^ 1;
    const double* row = sim.v.data() + static_cast<size_t>(i) * n;
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k)
      if (k != i && row[k] > m) m = row[k];
    double denom = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) denom += std::exp(row[k] - m);
    total += -(row[pos] - m) + std::log(denom);
    double* prow = core.softmax.v.data() + static_cast<size_t>(i) * n;
    for (int k = 0; k < n; ++k)
      if (k != i) prow[k] = std::exp(row[k] - m) / denom;
  }
  core.loss = total / n;
  return core;
}

void validate_pair_batch(const DTensor& z, double temperature) {
  require_rows(z, "contrastive input");
  if (z.shape[0] % 2 != 0)
    throw ShapeError("contrastive input: row count must be even (interleaved views)");
  if (!(temperature > 0.0))
    throw ConfigError("contrastive temperature must be positive");
}

double mse(const DTensor& a, const DTensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = a.v[i] - b.v[i];
    s += d * d;
  }
  return s / static_cast<double>(a.v.size());
}

}  // namespace

double nt_xent(const DTensor& z, double temperature) {
  validate_pair_batch(z, temperature);
  const auto norms = row_norms(z, "contrastive input");
  const DTensor n = normalize_rows(z, norms);
  DTensor sim = kernels::gemm_nt(n, n);
  for (auto& s : sim.v) s /= temperature;
  return nt_xent_core(sim).loss;
}

NtXentResult nt_xent_with_grad(const DTensor& z, double temperature) {
  validate_pair_batch(z, temperature);
  const int rows = z.shape[0], d = z.shape[1];
  const auto norms = row_norms(z, "contrastive input");
  const DTensor n = normalize_rows(z, norms);
  DTensor sim = kernels::gemm_nt(n, n);
  for (auto& s : sim.v) s /= temperature;
  NtXentCore core = nt_xent_core(sim);

  // dL/dS_ij = (P_ij - [j == pos(i)]) / rows for j != i; loss depends on S
  // through both index orders, so fold in the transpose before the matmul.
  DTensor g = DTensor::zeros({rows, rows});
  const double inv_rows = 1.0 / rows;
  for (int i = 0; i < rows; ++i) {
    const int pos = i ^ 1;
    const double* prow = core.softmax.v.data() + static_cast<size_t>(i) * rows;
    double* grow = g.v.data() + static_cast<size_t>(i) * rows;
    for (int j = 0; j < rows; ++j) {
      if (j == i) continue;
      grow[j] = (prow[j] - (j == pos ? 1.0 : 0.0)) * inv_rows;
    }
  }
  DTensor gsym = DTensor::zeros({rows, rows});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < rows; ++j)
      gsym.at(i, j) = g.at(i, j) + g.at(j, i);

  DTensor dn = kernels::gemm_nn(gsym, n);
  for (auto& x : dn.v) x /= temperature;

  // Back through row normalization: dz = (dn - (n . dn) n) / ||z||.
  NtXentResult out;
  out.loss = core.loss;
  out.grad_z = DTensor::zeros({rows, d});
  for (int i = 0; i < rows; ++i) {
    const double* ni = n.v.data() + static_cast<size_t>(i) * d;
    const double* dni = dn.v.data() + static_cast<size_t>(i) * d;
    double* gz = out.grad_z.v.data() + static_cast<size_t>(i) * d;
    double dot = 0.0;
    for (int j = 0; j < d; ++j) dot += ni[j] * dni[j];
    const double inv = 1.0 / norms[static_cast<size_t>(i)];
    for (int j = 0; j < d; ++j) gz[j] = (dni[j] - dot * ni[j]) * inv;
  }
  return out;
}

namespace {

void validate_siamese(const DTensor& p1, const DTensor& p2, const DTensor& z1,
                      const DTensor& z2) {
  require_rows(p1, "siamese p1");
  if (!p1.same_shape(p2) || !p1.same_shape(z1) || !p1.same_shape(z2))
    throw ShapeError("siamese branches must share one (B, d) shape");
}

// Accumulates 0.5 * mean_i(-cos(p_i, t_i)) and, when grad != nullptr, the
// matching analytic gradient with respect to p. t is a constant.
double neg_cos_half(const DTensor& p, const DTensor& t, DTensor* grad) {
  const int b = p.shape[0], d = p.shape[1];
  const auto pn = row_norms(p, "siamese predictor branch");
  const auto tn = row_norms(t, "siamese target branch");
  double total = 0.0;
  const double w = 0.5 / b;
  for (int i = 0; i < b; ++i) {
    const double* pi = p.v.data() + static_cast<size_t>(i) * d;
    const double* ti = t.v.data() + static_cast<size_t>(i) * d;
    double dot = 0.0;
    for (int j = 0; j < d; ++j) dot += pi[j] * ti[j];
    const double c = dot / (pn[static_cast<size_t>(i)] * tn[static_cast<size_t>(i)]);
    total += -c;
    if (grad) {
      double* gi = grad->v.data() + static_cast<size_t>(i) * d;
      const double ip = 1.0 / pn[static_cast<size_t>(i)];
      const double it = 1.0 / tn[static_cast<size_t>(i)];
      for (int j = 0; j < d; ++j)
        gi[j] += -w * (ti[j] * it - c * pi[j] * ip) * ip;
    }
  }
  return 0.5 * total / b;
}

}  // namespace

double siamese_loss(const DTensor& p1, const DTensor& p2, const DTensor& z1,
                    const DTensor& z2) {
  validate_siamese(p1, p2, z1, z2);
  return neg_cos_half(p1, z2, nullptr) + neg_cos_half(p2, z1, nullptr);
}

SiameseResult siamese_loss_with_grad(const DTensor& p1, const DTensor& p2,
                                     const DTensor& z1, const DTensor& z2) {
  validate_siamese(p1, p2, z1, z2);
  SiameseResult out;
  out.grad_p1 = DTensor::zeros(p1.shape);
  out.grad_p2 = DTensor::zeros(p2.shape);
  out.grad_z1 = DTensor::zeros(z1.shape);
  out.grad_z2 = DTensor::zeros(z2.shape);
  out.loss = neg_cos_half(p1, z2, &out.grad_p1) + neg_cos_half(p2, z1, &out.grad_p2);
  return out;
}

namespace {

void validate_distill(const DTensor& base_out, const DTensor& expert_out,
                      const DTensor& base_target, const DTensor& expert_target) {
  require_rows(base_out, "distill base output");
  if (!base_out.same_shape(base_target))
    throw ShapeError("distill base output/target shapes differ");
  if (!expert_out.same_shape(expert_target))
    throw ShapeError("distill expert output/target shapes differ");
  if (base_out.shape[0] != expert_out.shape[0])
    throw ShapeError("distill base and expert batches differ");
}

}  // namespace

double distill_loss(const DTensor& base_out, const DTensor& expert_out,
                    const DTensor& base_target, const DTensor& expert_target) {
  validate_distill(base_out, expert_out, base_target, expert_target);
  return 0.5 * mse(base_out, base_target) + 0.5 * mse(expert_out, expert_target);
}

DistillResult distill_loss_with_grad(const DTensor& base_out,
                                     const DTensor& expert_out,
                                     const DTensor& base_target,
                                     const DTensor& expert_target) {
  validate_distill(base_out, expert_out, base_target, expert_target);
  DistillResult out;
  out.base_term = mse(base_out, base_target);
  out.expert_term = mse(expert_out, expert_target);
  out.loss = 0.5 * out.base_term + 0.5 * out.expert_term;
  out.grad_base_out = DTensor::zeros(base_out.shape);
  out.grad_expert_out = DTensor::zeros(expert_out.shape);
  out.grad_base_target = DTensor::zeros(base_target.shape);
  out.grad_expert_target = DTensor::zeros(expert_target.shape);
  const double sb = 1.0 / static_cast<double>(base_out.v.size());
  for (size_t i = 0; i < base_out.v.size(); ++i)
    out.grad_base_out.v[i] = (base_out.v[i] - base_target.v[i]) * sb;
  const double se = 1.0 / static_cast<double>(expert_out.v.size());
  for (size_t i = 0; i < expert_out.v.size(); ++i)
    out.grad_expert_out.v[i] = (expert_out.v[i] - expert_target.v[i]) * se;
  return out;
}

DTensor stop_gradient(const DTensor& x) { return x; }
Tensor stop_gradient(const Tensor& x) { return x; }

}  // namespace cissl::objectives
