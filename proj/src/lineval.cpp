#include "cissl/lineval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>

#include "cissl/augment.hpp"
#include "cissl/error.hpp"
#include "cissl/kernels.hpp"
#include "cissl/optimizers.hpp"

namespace cissl::lineval {

void EvalConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("eval schedule must be positive");
  if (!(lr > 0.0)) throw ConfigError("eval lr must be positive");
  if (momentum < 0.0 || weight_decay < 0.0)
    throw ConfigError("eval momentum/weight decay must be nonnegative");
}

namespace {

long count_correct(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || std::size_t(logits.shape[0]) != labels.size())
    throw ShapeError("top1_accuracy: one label per logits row required");
  const int b = logits.shape[0], c = logits.shape[1];
  long correct = 0;
  for (int i = 0; i < b; ++i) {
    int arg = 0;
    float best = logits.at(i, 0);
    for (int j = 1; j < c; ++j)
      if (logits.at(i, j) > best) {
        best = logits.at(i, j);
        arg = j;
      }
    if (arg == labels[std::size_t(i)]) ++correct;
  }
  return correct;
}

}  // namespace

double top1_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  return 100.0 * double(count_correct(logits, labels)) / double(logits.shape[0]);
}

namespace {

constexpr int kEncodeChunk = 256;

// Softmax cross-entropy over double-precision logits. Returns the mean loss
// and writes the per-logit gradient (already divided by B).
double ce_loss_grad(const Tensor& logits, const std::vector<int>& labels,
                    Tensor& grad) {
  const int b = logits.shape[0], c = logits.shape[1];
  grad = Tensor::zeros({b, c});
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    double m = logits.at(i, 0);
    for (int j = 1; j < c; ++j) m = std::max(m, double(logits.at(i, j)));
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(double(logits.at(i, j)) - m);
    const int y = labels[std::size_t(i)];
    total += m + std::log(denom) - double(logits.at(i, y));
    for (int j = 0; j < c; ++j) {
      const double p = std::exp(double(logits.at(i, j)) - m) / denom;
      grad.at(i, j) = float((p - (j == y ? 1.0 : 0.0)) / b);
    }
  }
  return total / b;
}

using FeatureProvider = std::function<Tensor(const std::vector<long>&, int epoch)>;

LinearModel run_probe(const FeatureProvider& features, long n,
                      const std::vector<int>& labels, int num_classes, int d,
                      const EvalConfig& cfg) {
  LinearModel model;
  Rng rng(fork_seed(cfg.seed, "linear-probe"));
  model.weight = Tensor::zeros({num_classes, d});
  model.bias = Tensor::zeros({num_classes});
  const double bound = 1.0 / std::sqrt(double(d));
  for (auto& w : model.weight.v) w = float(rng.uniform(-bound, bound));
  for (auto& b : model.bias.v) b = float(rng.uniform(-bound, bound));

  Tensor buf_w = Tensor::zeros({num_classes, d});
  Tensor buf_b = Tensor::zeros({num_classes});

  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0L);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = optim::cosine_lr({epoch, cfg.epochs, cfg.lr});
    Rng shuffle_rng(fork_seed(cfg.seed, "probe-shuffle", std::uint64_t(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += std::size_t(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + std::size_t(cfg.batch_size));
      const std::vector<long> idx(order.begin() + long(start),
                                  order.begin() + long(stop));
      const Tensor x = features(idx, epoch);
      std::vector<int> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        y[i] = labels[std::size_t(idx[i])];

      Tensor logits = kernels::gemm_nt(x, model.weight);
      for (int i = 0; i < logits.shape[0]; ++i)
        for (int j = 0; j < num_classes; ++j) logits.at(i, j) += model.bias.at(j);

      Tensor grad;
      const double loss = ce_loss_grad(logits, y, grad);
      if (!std::isfinite(loss)) throw NumericError("non-finite probe loss");

      Tensor dw = kernels::gemm_tn(grad, x);
      Tensor db = Tensor::zeros({num_classes});
      for (int i = 0; i < grad.shape[0]; ++i)
        for (int j = 0; j < num_classes; ++j) db.at(j) += grad.at(i, j);

      optim::sgd_step(model.weight.v.data(), dw.v.data(), buf_w.v.data(),
                      std::int64_t(model.weight.v.size()), lr, cfg.momentum,
                      cfg.weight_decay);
      optim::sgd_step(model.bias.v.data(), db.v.data(), buf_b.v.data(),
                      std::int64_t(model.bias.v.size()), lr, cfg.momentum,
                      cfg.weight_decay);
      loss_sum += loss;
      ++batches;
    }
    model.trace.push_back({epoch, loss_sum / double(batches), lr});
  }
  return model;
}

Tensor encode_records(nn::ModelBundle& bundle, const data::LabeledDataset& ds,
                      const std::vector<long>& indices) {
  const augment::Normalization norm{};
  const int b = int(indices.size());
  Tensor batch = Tensor::zeros({b, 3, ds.height, ds.width});
  const std::size_t plane = std::size_t(3) * ds.height * ds.width;
  for (int i = 0; i < b; ++i) {
    const Tensor view = augment::eval_view(
        ds.records[std::size_t(indices[std::size_t(i)])], ds.height, ds.width, norm);
    std::copy(view.v.begin(), view.v.end(), batch.v.begin() + i * plane);
  }
  return nn::encode(bundle, batch, false);
}

std::vector<int> checked_labels(const data::LabeledDataset& ds, int num_classes) {
  std::vector<int> labels(static_cast<std::size_t>(ds.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = ds.records[i].label;
    if (y < 0 || y >= num_classes)
      throw CorpusError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    labels[i] = y;
  }
  return labels;
}

augment::AugmentationPolicy crop_flip_policy() {
  augment::AugmentationPolicy p;
  p.color_jitter_probability = 0.0f;
  p.grayscale_probability = 0.0f;
  return p;
}

}  // namespace

LinearModel fit_linear(const Tensor& features, const std::vector<int>& labels,
                       int num_classes, const EvalConfig& cfg) {
  cfg.validate();
  if (features.rank() != 2 || std::size_t(features.shape[0]) != labels.size())
    throw ShapeError("fit_linear: one label per feature row required");
  const FeatureProvider provider = [&](const std::vector<long>& idx, int) {
    Tensor x = Tensor::zeros({int(idx.size()), features.shape[1]});
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < features.shape[1]; ++j)
        x.at(int(i), j) = features.at(int(idx[i]), j);
    return x;
  };
  return run_probe(provider, features.shape[0], labels, num_classes,
                   features.shape[1], cfg);
}

Tensor linear_logits(const Tensor& features, const LinearModel& model) {
  Tensor logits = kernels::gemm_nt(features, model.weight);
  for (int i = 0; i < logits.shape[0]; ++i)
    for (int j = 0; j < model.bias.shape[0]; ++j)
      logits.at(i, j) += model.bias.at(j);
  return logits;
}

double linear_eval(nn::ModelBundle& bundle, const data::LabeledDataset& train_ds,
                   const data::LabeledDataset& test_ds, const EvalConfig& cfg,
                   std::vector<train::EpochLoss>* trace) {
  cfg.validate();
  if (train_ds.size() < 1 || test_ds.size() < 1)
    throw PipelineError("linear evaluation needs nonempty train and test sets");
  const int num_classes = bundle.head_cfg.num_classes;
  if (train_ds.num_classes != num_classes || test_ds.num_classes != num_classes)
    throw ConfigError("dataset class count does not match the classifier head");
  const auto labels = checked_labels(train_ds, num_classes);
  const auto test_labels = checked_labels(test_ds, num_classes);
  const int d = bundle.backbone_cfg.output_dim;
  const long n = train_ds.size();

  LinearModel model;
  if (cfg.augment_train) {
    const auto policy = crop_flip_policy();
    // One augmentation stream per epoch; batches consume it in order.
    std::vector<std::unique_ptr<Rng>> epoch_rngs;
    const FeatureProvider provider = [&](const std::vector<long>& idx, int epoch) {
      while (int(epoch_rngs.size()) <= epoch)
        epoch_rngs.push_back(std::make_unique<Rng>(
            fork_seed(cfg.seed, "probe-augment", epoch_rngs.size())));
      const Tensor batch =
          train::make_view_batch(train_ds, idx, policy, *epoch_rngs[std::size_t(epoch)]);
      return bundle.backbone->forward(batch, false);
    };
    model = run_probe(provider, n, labels, num_classes, d, cfg);
  } else {
    Tensor feats = Tensor::zeros({int(n), d});
    for (long start = 0; start < n; start += kEncodeChunk) {
      const long stop = std::min(n, start + kEncodeChunk);
      std::vector<long> idx(std::size_t(stop - start));
      std::iota(idx.begin(), idx.end(), start);
      const Tensor chunk = encode_records(bundle, train_ds, idx);
      for (int i = 0; i < chunk.shape[0]; ++i)
        for (int j = 0; j < d; ++j) feats.at(int(start) + i, j) = chunk.at(i, j);
    }
    model = fit_linear(feats, labels, num_classes, cfg);
  }

  // Publish the trained head on the bundle so checkpoints carry it.
  std::vector<nn::Param*> cls;
  bundle.classifier.collect(cls);
  cls[0]->w = model.weight;
  cls[1]->w = model.bias;

  long correct_total = 0;
  const long tn = test_ds.size();
  for (long start = 0; start < tn; start += kEncodeChunk) {
    const long stop = std::min(tn, start + kEncodeChunk);
    std::vector<long> idx(std::size_t(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor feats = encode_records(bundle, test_ds, idx);
    const Tensor logits = linear_logits(feats, model);
    const std::vector<int> batch_labels(test_labels.begin() + start,
                                        test_labels.begin() + stop);
    correct_total += count_correct(logits, batch_labels);
  }
  if (trace) *trace = model.trace;
  return 100.0 * double(correct_total) / double(tn);
}

}  // namespace cissl::lineval
