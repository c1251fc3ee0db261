#include "cissl/distiller.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cissl/error.hpp"
#include "cissl/objectives.hpp"

namespace cissl::distill {

void DistillSchedule::validate() const {
  if (epochs < 1) throw ConfigError("distillation needs epochs >= 1");
  if (batch_size < 1) throw ConfigError("distillation needs batch_size >= 1");
  policy.validate();
}

namespace {

// Gathers the listed rows of a (B, ...) tensor into a contiguous sub-batch.
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  std::vector<int> shape = x.shape;
  shape[0] = int(rows.size());
  Tensor out = Tensor::zeros(shape);
  const std::size_t stride = x.v.size() / std::size_t(x.shape[0]);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(x.v.begin() + std::size_t(rows[r]) * stride, stride,
                out.v.begin() + r * stride);
  return out;
}

void scatter_rows(const Tensor& sub, const std::vector<int>& rows, Tensor& dst) {
  const std::size_t stride = dst.v.size() / std::size_t(dst.shape[0]);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(sub.v.begin() + r * stride, stride,
                dst.v.begin() + std::size_t(rows[r]) * stride);
}

void scatter_add_rows(const Tensor& sub, const std::vector<int>& rows, Tensor& dst) {
  const std::size_t stride = dst.v.size() / std::size_t(dst.shape[0]);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const float* s = sub.v.data() + r * stride;
    float* d = dst.v.data() + std::size_t(rows[r]) * stride;
    for (std::size_t i = 0; i < stride; ++i) d[i] += s[i];
  }
}

// Teacher output in the distillation space, evaluation mode.
Tensor teacher_output(nn::ModelBundle& teacher, const Tensor& views,
                      bool backbone_space) {
  const Tensor feats = teacher.backbone->forward(views, false);
  return backbone_space ? feats : teacher.projector.forward(feats, false);
}

std::vector<optim::ParamRef> student_param_refs(nn::ModelBundle& student,
                                                bool backbone_space) {
  std::vector<nn::Param*> params;
  student.backbone->collect(params);
  if (!backbone_space) student.projector.collect(params);
  for (auto& h : student.regression_heads) h.collect(params);
  std::vector<optim::ParamRef> refs;
  for (nn::Param* p : params)
    if (p->trainable) refs.push_back({&p->w, &p->g, p->norm_or_bias});
  return refs;
}

}  // namespace

DistillOutcome distill(nn::ModelBundle& base_teacher,
                       std::vector<nn::ModelBundle>& expert_teachers,
                       const data::LabeledDataset& ds,
                       const std::vector<int>& assignments,
                       const DistillSchedule& schedule) {
  schedule.validate();
  const long n = ds.size();
  if (n < 1) throw PipelineError("distillation on an empty dataset");
  if (long(assignments.size()) != n)
    throw ShapeError("assignments must cover the training dataset");
  const int k = int(expert_teachers.size());
  if (k < 1) throw PipelineError("distillation needs at least one expert teacher");
  for (const int a : assignments)
    if (a < 0 || a >= k)
      throw ShapeError("cluster assignment out of range for the expert set");
  for (const auto& t : expert_teachers)
    if (t.backbone_cfg.output_dim != base_teacher.backbone_cfg.output_dim)
      throw ConfigError("expert teacher architecture differs from the base teacher");

  DistillOutcome out;
  out.student = base_teacher.clone();
  nn::add_regression_heads(out.student, k + 1,
                           fork_seed(schedule.seed, "regression-heads"));
  nn::ModelBundle& student = out.student;

  const double base_lr = schedule.optimizer.effective_base_lr(schedule.batch_size);
  optim::Optimizer opt(schedule.optimizer);
  const auto refs = student_param_refs(student, schedule.backbone_space);

  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0L);

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = optim::cosine_lr({epoch, schedule.epochs, base_lr});
    Rng shuffle_rng(fork_seed(schedule.seed, "epoch-shuffle", std::uint64_t(epoch)));
    shuffle_rng.shuffle(order);
    Rng aug_rng(fork_seed(schedule.seed, "augment", std::uint64_t(epoch)));

    double loss_sum = 0.0, base_sum = 0.0, expert_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += std::size_t(schedule.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + std::size_t(schedule.batch_size));
      const std::vector<long> idx(order.begin() + long(start),
                                  order.begin() + long(stop));
      const int b = int(idx.size());
      const Tensor views =
          train::make_view_batch(ds, idx, schedule.policy, aug_rng);

      // Student pass, training mode.
      student.zero_grad();
      const Tensor feats_s = student.backbone->forward(views, true);
      const Tensor q_s = schedule.backbone_space
                             ? feats_s
                             : student.projector.forward(feats_s, true);
      const Tensor base_out = student.regression_heads[0].forward(q_s, true);

      // Teachers on the same views, evaluation mode.
      const Tensor q_base =
          teacher_output(base_teacher, views, schedule.backbone_space);

      std::vector<std::vector<int>> routed(static_cast<std::size_t>(k));
      for (int i = 0; i < b; ++i)
        routed[std::size_t(assignments[std::size_t(idx[std::size_t(i)])])]
            .push_back(i);

      Tensor expert_target = Tensor::zeros(q_base.shape);
      Tensor expert_out = Tensor::zeros(base_out.shape);
      for (int c = 0; c < k; ++c) {
        const auto& rows = routed[std::size_t(c)];
        if (rows.empty()) continue;
        const Tensor sub_views = gather_rows(views, rows);
        scatter_rows(teacher_output(expert_teachers[std::size_t(c)], sub_views,
                                    schedule.backbone_space),
                     rows, expert_target);
        const Tensor sub_q = gather_rows(q_s, rows);
        scatter_rows(
            student.regression_heads[std::size_t(c) + 1].forward(sub_q, true),
            rows, expert_out);
      }

      if (schedule.routing_observer) {
        std::vector<int> heads(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i)
          heads[std::size_t(i)] =
              assignments[std::size_t(idx[std::size_t(i)])] + 1;
        schedule.routing_observer(idx, heads);
      }

      const auto res = objectives::distill_loss_with_grad(
          cast_tensor<double>(base_out), cast_tensor<double>(expert_out),
          objectives::stop_gradient(cast_tensor<double>(q_base)),
          objectives::stop_gradient(cast_tensor<double>(expert_target)));
      if (!std::isfinite(res.loss))
        throw NumericError("non-finite distillation loss");

      // Backward: base head over the full batch, expert heads per route.
      Tensor d_qs =
          student.regression_heads[0].backward(cast_tensor<float>(res.grad_base_out));
      const Tensor grad_expert = cast_tensor<float>(res.grad_expert_out);
      for (int c = 0; c < k; ++c) {
        const auto& rows = routed[std::size_t(c)];
        if (rows.empty()) continue;
        const Tensor sub_grad = gather_rows(grad_expert, rows);
        const Tensor d_sub =
            student.regression_heads[std::size_t(c) + 1].backward(sub_grad);
        scatter_add_rows(d_sub, rows, d_qs);
      }
      const Tensor dfeats = schedule.backbone_space
                                ? d_qs
                                : student.projector.backward(d_qs);
      student.backbone->backward(dfeats);

      opt.step(refs, lr);
      ++student.step;
      loss_sum += res.loss;
      base_sum += res.base_term;
      expert_sum += res.expert_term;
      ++batches;
    }
    out.trace.push_back({epoch, loss_sum / double(batches),
                         base_sum / double(batches),
                         expert_sum / double(batches), lr});
    if (schedule.epoch_hook) schedule.epoch_hook(epoch, student);
  }
  return out;
}

NoClusterOutcome distill_no_cluster(nn::ModelBundle& base_teacher,
                                    const data::LabeledDataset& ds,
                                    const train::TrainSchedule& expert_schedule,
                                    const DistillSchedule& distill_schedule) {
  NoClusterOutcome out;
  nn::ModelBundle expert = base_teacher.clone();
  out.expert_trace = train::pretrain(expert, ds, expert_schedule);

  std::vector<nn::ModelBundle> experts;
  experts.push_back(std::move(expert));
  const std::vector<int> assignments(std::size_t(ds.size()), 0);
  auto distilled = distill(base_teacher, experts, ds, assignments, distill_schedule);
  out.student = std::move(distilled.student);
  out.distill_trace = std::move(distilled.trace);
  return out;
}

void write_distill_csv(const std::vector<DistillEpoch>& trace,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,loss,base_term,expert_term,lr\n";
  char buf[160];
  for (const auto& e : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g", e.epoch, e.loss,
                  e.base_term, e.expert_term, e.lr);
    out << buf << '\n';
  }
  if (!out.flush()) throw IoError("failed writing " + path.string());
}

}  // namespace cissl::distill
