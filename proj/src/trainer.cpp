#include "cissl/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cissl/error.hpp"
#include "cissl/objectives.hpp"

namespace cissl::train {

Method parse_method(const std::string& name) {
  if (name == "simclr") return Method::simclr;
  if (name == "simsiam") return Method::simsiam;
  throw ConfigError("unknown method '" + name + "' (expected simclr or simsiam)");
}

std::string to_string(Method method) {
  return method == Method::simclr ? "simclr" : "simsiam";
}

void TrainSchedule::validate() const {
  if (epochs < 1) throw ConfigError("schedule needs epochs >= 1");
  if (batch_size < 1) throw ConfigError("schedule needs batch_size >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  policy.validate();
}

namespace {

void copy_view(const Tensor& view, Tensor& batch, int row) {
  const std::size_t plane = view.v.size();
  std::copy(view.v.begin(), view.v.end(),
            batch.v.begin() + std::size_t(row) * plane);
}

}  // namespace

Tensor make_pair_batch(const data::LabeledDataset& ds,
                       const std::vector<long>& indices,
                       const augment::AugmentationPolicy& policy, Rng& rng) {
  const int b = int(indices.size());
  Tensor batch = Tensor::zeros({2 * b, 3, ds.height, ds.width});
  for (int i = 0; i < b; ++i) {
    const auto views = augment::two_view(ds.records[std::size_t(indices[std::size_t(i)])],
                                         ds.height, ds.width, policy, rng);
    copy_view(views.v, batch, 2 * i);
    copy_view(views.v_prime, batch, 2 * i + 1);
  }
  return batch;
}

Tensor make_view_batch(const data::LabeledDataset& ds,
                       const std::vector<long>& indices,
                       const augment::AugmentationPolicy& policy, Rng& rng) {
  const int b = int(indices.size());
  Tensor batch = Tensor::zeros({b, 3, ds.height, ds.width});
  for (int i = 0; i < b; ++i) {
    const Tensor view = augment::single_view(
        ds.records[std::size_t(indices[std::size_t(i)])], ds.height, ds.width,
        policy, rng);
    copy_view(view, batch, i);
  }
  return batch;
}

std::vector<optim::ParamRef> pretrain_param_refs(nn::ModelBundle& bundle) {
  std::vector<nn::Param*> params;
  bundle.backbone->collect(params);
  bundle.projector.collect(params);
  bundle.predictor.collect(params);
  std::vector<optim::ParamRef> refs;
  refs.reserve(params.size());
  for (nn::Param* p : params)
    if (p->trainable) refs.push_back({&p->w, &p->g, p->norm_or_bias});
  return refs;
}

namespace {

// Rows 2i / 2i+1 -> (even, odd) halves as doubles.
void split_pairs(const Tensor& x, DTensor& even, DTensor& odd) {
  const int b = x.shape[0] / 2, d = x.shape[1];
  even = DTensor::zeros({b, d});
  odd = DTensor::zeros({b, d});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < d; ++j) {
      even.at(i, j) = double(x.at(2 * i, j));
      odd.at(i, j) = double(x.at(2 * i + 1, j));
    }
}

Tensor interleave_pairs(const DTensor& even, const DTensor& odd) {
  const int b = even.shape[0], d = even.shape[1];
  Tensor out = Tensor::zeros({2 * b, d});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < d; ++j) {
      out.at(2 * i, j) = float(even.at(i, j));
      out.at(2 * i + 1, j) = float(odd.at(i, j));
    }
  return out;
}

double train_step(nn::ModelBundle& bundle, const Tensor& batch,
                  const TrainSchedule& schedule) {
  bundle.zero_grad();
  const Tensor feats = bundle.backbone->forward(batch, true);
  const Tensor z = bundle.projector.forward(feats, true);
  if (!z.finite()) throw NumericError("non-finite projections during pre-training");

  double loss;
  Tensor dz;
  if (schedule.method == Method::simclr) {
    const auto res = objectives::nt_xent_with_grad(cast_tensor<double>(z),
                                                   schedule.temperature);
    loss = res.loss;
    dz = cast_tensor<float>(res.grad_z);
  } else {
    const Tensor p = bundle.predictor.forward(z, true);
    DTensor p1, p2, z1, z2;
    split_pairs(p, p1, p2);
    split_pairs(z, z1, z2);
    // z-halves enter the objective behind stop-gradient: their analytic
    // gradients are exactly zero, so the only path into the encoder is the
    // predictor branch.
    const auto res = objectives::siamese_loss_with_grad(
        p1, p2, objectives::stop_gradient(z1), objectives::stop_gradient(z2));
    loss = res.loss;
    const Tensor dp = interleave_pairs(res.grad_p1, res.grad_p2);
    dz = bundle.predictor.backward(dp);
  }
  const Tensor dfeats = bundle.projector.backward(dz);
  bundle.backbone->backward(dfeats);
  return loss;
}

}  // namespace

std::vector<EpochLoss> pretrain(nn::ModelBundle& bundle,
                                const data::LabeledDataset& ds,
                                const TrainSchedule& schedule) {
  schedule.validate();
  if (ds.size() < 1) throw PipelineError("pre-training on an empty dataset");
  if (bundle.projector.empty() ||
      (schedule.method == Method::simsiam && bundle.predictor.empty()))
    throw ConfigError("bundle lacks the heads this method trains");

  const double base_lr = schedule.optimizer.effective_base_lr(schedule.batch_size);
  optim::Optimizer opt(schedule.optimizer);
  const auto refs = pretrain_param_refs(bundle);

  std::vector<long> order(static_cast<std::size_t>(ds.size()));
  std::iota(order.begin(), order.end(), 0L);

  std::vector<EpochLoss> trace;
  trace.reserve(static_cast<std::size_t>(schedule.epochs));
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = optim::cosine_lr({epoch, schedule.epochs, base_lr});
    Rng shuffle_rng(fork_seed(schedule.seed, "epoch-shuffle", std::uint64_t(epoch)));
    shuffle_rng.shuffle(order);
    Rng aug_rng(fork_seed(schedule.seed, "augment", std::uint64_t(epoch)));

    double loss_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += std::size_t(schedule.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + std::size_t(schedule.batch_size));
      const std::vector<long> idx(order.begin() + long(start),
                                  order.begin() + long(stop));
      const Tensor batch = make_pair_batch(ds, idx, schedule.policy, aug_rng);
      const double loss = train_step(bundle, batch, schedule);
      if (!std::isfinite(loss)) throw NumericError("non-finite pre-training loss");
      opt.step(refs, lr);
      ++bundle.step;
      loss_sum += loss;
      ++batches;
    }
    trace.push_back({epoch, loss_sum / double(batches), lr});
    if (schedule.epoch_hook) schedule.epoch_hook(epoch, bundle);
  }
  return trace;
}

std::vector<nn::ModelBundle> train_experts(
    const nn::ModelBundle& base,
    const std::vector<data::LabeledDataset>& partitions,
    const TrainSchedule& schedule,
    std::vector<std::vector<EpochLoss>>* traces) {
  if (partitions.empty()) throw PipelineError("no partitions to train experts on");
  if (traces) traces->clear();
  std::vector<nn::ModelBundle> experts;
  experts.reserve(partitions.size());
  for (std::size_t k = 0; k < partitions.size(); ++k) {
    if (partitions[k].size() < 1)
      throw PipelineError("partition " + std::to_string(k) +
                          " is empty; experts cannot train");
    nn::ModelBundle expert = base.clone();
    TrainSchedule sched = schedule;
    sched.seed = fork_seed(schedule.seed, "expert", std::uint64_t(k));
    auto trace = pretrain(expert, partitions[k], sched);
    if (traces) traces->push_back(std::move(trace));
    experts.push_back(std::move(expert));
  }
  return experts;
}

void write_loss_csv(const std::vector<EpochLoss>& trace,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,loss,lr\n";
  char buf[96];
  for (const auto& e : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g", e.epoch, e.loss, e.lr);
    out << buf << '\n';
  }
  if (!out.flush()) throw IoError("failed writing " + path.string());
}

}  // namespace cissl::train
