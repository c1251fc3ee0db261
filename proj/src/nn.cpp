#include "cissl/nn.hpp"

#include <cmath>
#include <cstring>
#include <utility>

#include "cissl/error.hpp"
#include "cissl/kernels.hpp"

namespace cissl::nn {

namespace {

Param make_param(std::string name, std::vector<int> shape, bool norm_or_bias,
                 bool trainable = true) {
  Param p;
  p.name = std::move(name);
  p.w = Tensor::zeros(shape);
  p.g = Tensor::zeros(std::move(shape));
  p.norm_or_bias = norm_or_bias;
  p.trainable = trainable;
  return p;
}

void add_into(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) throw ShapeError("residual add: shape mismatch");
  for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

// (B,C,H,W) -> (B,C,S) view dims, with S=1 for rank-2 input.
struct NormDims {
  int b = 0, c = 0, s = 0;
};

NormDims norm_dims(const Tensor& x, int channels) {
  NormDims d;
  if (x.rank() == 4) {
    d.b = x.shape[0];
    d.c = x.shape[1];
    d.s = x.shape[2] * x.shape[3];
  } else if (x.rank() == 2) {
    d.b = x.shape[0];
    d.c = x.shape[1];
    d.s = 1;
  } else {
    throw ShapeError("batch-norm input must be rank 2 or 4");
  }
  if (d.c != channels) throw ShapeError("batch-norm channel count mismatch");
  if (d.b < 1) throw ShapeError("batch-norm needs a nonempty batch");
  return d;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

void Conv2d::init(int in_ch, int out_ch, int ksize, int stride, int pad,
                  const std::string& name, Rng& rng) {
  in_ch_ = in_ch;
  out_ch_ = out_ch;
  ksize_ = ksize;
  stride_ = stride;
  pad_ = pad;
  const int fan_in = in_ch * ksize * ksize;
  weight_ = make_param(name + ".w", {out_ch, fan_in}, false);
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& w : weight_.w.v) w = float(rng.normal(0.0, stddev));
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.rank() != 4 || x.shape[1] != in_ch_)
    throw ShapeError("conv input mismatch for " + weight_.name);
  const int b = x.shape[0], h = x.shape[2], w = x.shape[3];
  const int ho = kernels::conv_out_extent(h, ksize_, stride_, pad_);
  const int wo = kernels::conv_out_extent(w, ksize_, stride_, pad_);
  if (ho < 1 || wo < 1) throw ShapeError("conv output collapsed to zero extent");
  const int p = ho * wo;
  const int ckk = in_ch_ * ksize_ * ksize_;

  Tensor cols = Tensor::zeros({ckk, b * p});
  kernels::im2col_batch(x.data(), b, in_ch_, h, w, ksize_, stride_, pad_, cols.data());
  Tensor ymat = kernels::gemm_nn(weight_.w, cols);

  Tensor y = Tensor::zeros({b, out_ch_, ho, wo});
  for (int bi = 0; bi < b; ++bi)
    for (int o = 0; o < out_ch_; ++o) {
      const float* src = ymat.data() + std::size_t(o) * (b * p) + std::size_t(bi) * p;
      float* dst = y.data() + (std::size_t(bi) * out_ch_ + o) * p;
      std::memcpy(dst, src, std::size_t(p) * sizeof(float));
    }
  x_cache_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  if (x.numel() == 0) throw Error("conv backward before forward");
  const int b = x.shape[0], h = x.shape[2], w = x.shape[3];
  const int ho = dy.shape[2], wo = dy.shape[3];
  const int p = ho * wo;
  const int ckk = in_ch_ * ksize_ * ksize_;

  Tensor dymat = Tensor::zeros({out_ch_, b * p});
  for (int bi = 0; bi < b; ++bi)
    for (int o = 0; o < out_ch_; ++o) {
      const float* src = dy.data() + (std::size_t(bi) * out_ch_ + o) * p;
      float* dst = dymat.data() + std::size_t(o) * (b * p) + std::size_t(bi) * p;
      std::memcpy(dst, src, std::size_t(p) * sizeof(float));
    }

  Tensor cols = Tensor::zeros({ckk, b * p});
  kernels::im2col_batch(x.data(), b, in_ch_, h, w, ksize_, stride_, pad_, cols.data());

  Tensor dw = kernels::gemm_nt(dymat, cols);
  add_into(weight_.g, dw);

  Tensor dcols = kernels::gemm_tn(weight_.w, dymat);
  Tensor dx = Tensor::zeros({b, in_ch_, h, w});
  kernels::col2im_batch(dcols.data(), b, in_ch_, h, w, ksize_, stride_, pad_, dx.data());
  return dx;
}

// ------------------------------------------------------------- BatchNorm

void BatchNorm::init(int channels, const std::string& name) {
  channels_ = channels;
  gamma_ = make_param(name + ".gamma", {channels}, true);
  beta_ = make_param(name + ".beta", {channels}, true);
  running_mean_ = make_param(name + ".running_mean", {channels}, true, false);
  running_var_ = make_param(name + ".running_var", {channels}, true, false);
  gamma_.w.fill(1.0f);
  running_var_.w.fill(1.0f);
}

Tensor BatchNorm::forward(const Tensor& x, bool train) {
  const NormDims d = norm_dims(x, channels_);
  const std::size_t stride_c = std::size_t(d.s);
  const std::size_t stride_b = std::size_t(d.c) * d.s;

  Tensor y = Tensor::zeros(x.shape);
  xhat_cache_ = Tensor::zeros(x.shape);
  inv_cache_.assign(std::size_t(d.c), 0.0);
  cached_dims_ = x.shape;
  cached_train_ = train;

  const double m = double(d.b) * d.s;
  for (int c = 0; c < d.c; ++c) {
    double mean, inv;
    if (train) {
      double sum = 0.0;
      for (int b = 0; b < d.b; ++b) {
        const float* xc = x.data() + b * stride_b + c * stride_c;
        for (int s = 0; s < d.s; ++s) sum += xc[s];
      }
      mean = sum / m;
      double varsum = 0.0;
      for (int b = 0; b < d.b; ++b) {
        const float* xc = x.data() + b * stride_b + c * stride_c;
        for (int s = 0; s < d.s; ++s) {
          const double dv = xc[s] - mean;
          varsum += dv * dv;
        }
      }
      const double var = varsum / m;
      inv = 1.0 / std::sqrt(var + kEps);
      const double unbiased = m > 1.0 ? varsum / (m - 1.0) : var;
      running_mean_.w.at(c) =
          float((1.0 - kMomentum) * running_mean_.w.at(c) + kMomentum * mean);
      running_var_.w.at(c) =
          float((1.0 - kMomentum) * running_var_.w.at(c) + kMomentum * unbiased);
    } else {
      mean = running_mean_.w.at(c);
      inv = 1.0 / std::sqrt(double(running_var_.w.at(c)) + kEps);
    }
    inv_cache_[std::size_t(c)] = inv;
    const double g = gamma_.w.at(c), bta = beta_.w.at(c);
    for (int b = 0; b < d.b; ++b) {
      const float* xc = x.data() + b * stride_b + c * stride_c;
      float* hc = xhat_cache_.data() + b * stride_b + c * stride_c;
      float* yc = y.data() + b * stride_b + c * stride_c;
      for (int s = 0; s < d.s; ++s) {
        const double xh = (xc[s] - mean) * inv;
        hc[s] = float(xh);
        yc[s] = float(g * xh + bta);
      }
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  if (cached_dims_.empty()) throw Error("batch-norm backward before forward");
  if (dy.shape != cached_dims_) throw ShapeError("batch-norm backward shape mismatch");
  const NormDims d = norm_dims(dy, channels_);
  const std::size_t stride_c = std::size_t(d.s);
  const std::size_t stride_b = std::size_t(d.c) * d.s;
  const double m = double(d.b) * d.s;

  Tensor dx = Tensor::zeros(dy.shape);
  for (int c = 0; c < d.c; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < d.b; ++b) {
      const float* dc = dy.data() + b * stride_b + c * stride_c;
      const float* hc = xhat_cache_.data() + b * stride_b + c * stride_c;
      for (int s = 0; s < d.s; ++s) {
        sum_dy += dc[s];
        sum_dy_xhat += double(dc[s]) * hc[s];
      }
    }
    gamma_.g.at(c) += float(sum_dy_xhat);
    beta_.g.at(c) += float(sum_dy);

    const double g = gamma_.w.at(c);
    const double inv = inv_cache_[std::size_t(c)];
    if (cached_train_) {
      const double k = g * inv / m;
      for (int b = 0; b < d.b; ++b) {
        const float* dc = dy.data() + b * stride_b + c * stride_c;
        const float* hc = xhat_cache_.data() + b * stride_b + c * stride_c;
        float* xc = dx.data() + b * stride_b + c * stride_c;
        for (int s = 0; s < d.s; ++s)
          xc[s] = float(k * (m * dc[s] - sum_dy - double(hc[s]) * sum_dy_xhat));
      }
    } else {
      const double k = g * inv;
      for (int b = 0; b < d.b; ++b) {
        const float* dc = dy.data() + b * stride_b + c * stride_c;
        float* xc = dx.data() + b * stride_b + c * stride_c;
        for (int s = 0; s < d.s; ++s) xc[s] = float(k * dc[s]);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

void Linear::init(int in_dim, int out_dim, const std::string& name, Rng& rng) {
  in_dim_ = in_dim;
  out_dim_ = out_dim;
  weight_ = make_param(name + ".w", {out_dim, in_dim}, false);
  bias_ = make_param(name + ".b", {out_dim}, true);
  const double bound = 1.0 / std::sqrt(double(in_dim));
  for (auto& w : weight_.w.v) w = float(rng.uniform(-bound, bound));
  for (auto& b : bias_.w.v) b = float(rng.uniform(-bound, bound));
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() != 2 || x.shape[1] != in_dim_)
    throw ShapeError("linear input mismatch for " + weight_.name);
  Tensor y = kernels::gemm_nt(x, weight_.w);
  for (int i = 0; i < y.shape[0]; ++i)
    for (int j = 0; j < out_dim_; ++j) y.at(i, j) += bias_.w.at(j);
  x_cache_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  if (x_cache_.numel() == 0) throw Error("linear backward before forward");
  Tensor dw = kernels::gemm_tn(dy, x_cache_);
  add_into(weight_.g, dw);
  for (int i = 0; i < dy.shape[0]; ++i)
    for (int j = 0; j < out_dim_; ++j) bias_.g.at(j) += dy.at(i, j);
  return kernels::gemm_nn(dy, weight_.w);
}

// ------------------------------------------------------------------ Relu

Tensor Relu::forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.v) v = v > 0.0f ? v : 0.0f;
  y_cache_ = y;
  return y;
}

Tensor Relu::backward(const Tensor& dy) {
  if (!dy.same_shape(y_cache_)) throw ShapeError("relu backward shape mismatch");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i)
    if (y_cache_.v[i] <= 0.0f) dx.v[i] = 0.0f;
  return dx;
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global average pool expects rank-4 input");
  const int b = x.shape[0], c = x.shape[1], s = x.shape[2] * x.shape[3];
  cached_dims_ = x.shape;
  Tensor y = Tensor::zeros({b, c});
  const double inv = 1.0 / s;
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      const float* xc = x.data() + (std::size_t(bi) * c + ci) * s;
      double sum = 0.0;
      for (int si = 0; si < s; ++si) sum += xc[si];
      y.at(bi, ci) = float(sum * inv);
    }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  if (cached_dims_.empty()) throw Error("pool backward before forward");
  const int b = cached_dims_[0], c = cached_dims_[1];
  const int s = cached_dims_[2] * cached_dims_[3];
  Tensor dx = Tensor::zeros(cached_dims_);
  const double inv = 1.0 / s;
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      const float dv = float(dy.at(bi, ci) * inv);
      float* xc = dx.data() + (std::size_t(bi) * c + ci) * s;
      for (int si = 0; si < s; ++si) xc[si] = dv;
    }
  return dx;
}

// ------------------------------------------------------------ BasicBlock

void BasicBlock::init(int in_ch, int out_ch, int stride, const std::string& name,
                      Rng& rng) {
  conv1_.init(in_ch, out_ch, 3, stride, 1, name + ".conv1", rng);
  bn1_.init(out_ch, name + ".bn1");
  conv2_.init(out_ch, out_ch, 3, 1, 1, name + ".conv2", rng);
  bn2_.init(out_ch, name + ".bn2");
  has_projection_ = stride != 1 || in_ch != out_ch;
  if (has_projection_) {
    proj_conv_.init(in_ch, out_ch, 1, stride, 0, name + ".proj", rng);
    proj_bn_.init(out_ch, name + ".proj_bn");
  }
}

Tensor BasicBlock::forward(const Tensor& x, bool train) {
  Tensor t = relu1_.forward(bn1_.forward(conv1_.forward(x), train));
  t = bn2_.forward(conv2_.forward(t), train);
  Tensor shortcut = has_projection_
                        ? proj_bn_.forward(proj_conv_.forward(x), train)
                        : x;
  add_into(t, shortcut);
  return relu2_.forward(t);
}

Tensor BasicBlock::backward(const Tensor& dy) {
  Tensor d = relu2_.backward(dy);
  Tensor dmain = conv1_.backward(
      bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(d)))));
  if (has_projection_) {
    Tensor dskip = proj_conv_.backward(proj_bn_.backward(d));
    add_into(dmain, dskip);
  } else {
    add_into(dmain, d);
  }
  return dmain;
}

void BasicBlock::collect(std::vector<Param*>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  if (has_projection_) {
    proj_conv_.collect(out);
    proj_bn_.collect(out);
  }
}

// ------------------------------------------------------------- Backbones

BackboneFamily parse_backbone_family(const std::string& name) {
  if (name == "resnet-cifar-18-variant" || name == "resnet19" ||
      name == "resnet-cifar")
    return BackboneFamily::resnet_cifar;
  if (name == "tiny-conv") return BackboneFamily::tiny_conv;
  throw ConfigError("unknown backbone family '" + name + "'");
}

std::string to_string(BackboneFamily family) {
  return family == BackboneFamily::resnet_cifar ? "resnet-cifar-18-variant"
                                                : "tiny-conv";
}

void BackboneConfig::validate() const {
  if (output_dim < 1) throw ConfigError("backbone output_dim must be positive");
  if (!small_image_stem)
    throw ConfigError("only the small-image stem (3x3 conv, no max-pool) is implemented");
  if (family == BackboneFamily::resnet_cifar && output_dim % 8 != 0)
    throw ConfigError("residual backbone needs output_dim divisible by 8");
  if (family == BackboneFamily::tiny_conv && output_dim % 4 != 0)
    throw ConfigError("tiny-conv backbone needs output_dim divisible by 4");
}

namespace {

class ResNetCifar final : public Backbone {
 public:
  ResNetCifar(int d, Rng& rng) {
    const int w0 = d / 8, w1 = d / 4, w2 = d / 2, w3 = d;
    stem_.init(3, w0, 3, 1, 1, "backbone.stem", rng);
    stem_bn_.init(w0, "backbone.stem_bn");
    const int in[8] = {w0, w0, w0, w1, w1, w2, w2, w3};
    const int out[8] = {w0, w0, w1, w1, w2, w2, w3, w3};
    const int stride[8] = {1, 1, 2, 1, 2, 1, 2, 1};
    blocks_.resize(8);
    for (int i = 0; i < 8; ++i)
      blocks_[std::size_t(i)].init(in[i], out[i], stride[i],
                                   "backbone.block" + std::to_string(i), rng);
  }

  Tensor forward(const Tensor& x, bool train) override {
    Tensor h = stem_relu_.forward(stem_bn_.forward(stem_.forward(x), train));
    for (auto& b : blocks_) h = b.forward(h, train);
    return gap_.forward(h);
  }

  Tensor backward(const Tensor& dy) override {
    Tensor d = gap_.backward(dy);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it)
      d = it->backward(d);
    return stem_.backward(stem_bn_.backward(stem_relu_.backward(d)));
  }

  void collect(std::vector<Param*>& out) override {
    stem_.collect(out);
    stem_bn_.collect(out);
    for (auto& b : blocks_) b.collect(out);
  }

  std::unique_ptr<Backbone> clone() const override {
    return std::make_unique<ResNetCifar>(*this);
  }

 private:
  Conv2d stem_;
  BatchNorm stem_bn_;
  Relu stem_relu_;
  std::vector<BasicBlock> blocks_;
  GlobalAvgPool gap_;
};

class TinyConv final : public Backbone {
 public:
  TinyConv(int d, Rng& rng) {
    const int w1 = d / 4, w2 = d / 2;
    c1_.init(3, w1, 3, 2, 1, "backbone.conv1", rng);
    b1_.init(w1, "backbone.bn1");
    c2_.init(w1, w2, 3, 2, 1, "backbone.conv2", rng);
    b2_.init(w2, "backbone.bn2");
    c3_.init(w2, d, 3, 2, 1, "backbone.conv3", rng);
    b3_.init(d, "backbone.bn3");
  }

  Tensor forward(const Tensor& x, bool train) override {
    Tensor h = r1_.forward(b1_.forward(c1_.forward(x), train));
    h = r2_.forward(b2_.forward(c2_.forward(h), train));
    h = r3_.forward(b3_.forward(c3_.forward(h), train));
    return gap_.forward(h);
  }

  Tensor backward(const Tensor& dy) override {
    Tensor d = gap_.backward(dy);
    d = c3_.backward(b3_.backward(r3_.backward(d)));
    d = c2_.backward(b2_.backward(r2_.backward(d)));
    return c1_.backward(b1_.backward(r1_.backward(d)));
  }

  void collect(std::vector<Param*>& out) override {
    c1_.collect(out);
    b1_.collect(out);
    c2_.collect(out);
    b2_.collect(out);
    c3_.collect(out);
    b3_.collect(out);
  }

  std::unique_ptr<Backbone> clone() const override {
    return std::make_unique<TinyConv>(*this);
  }

 private:
  Conv2d c1_, c2_, c3_;
  BatchNorm b1_, b2_, b3_;
  Relu r1_, r2_, r3_;
  GlobalAvgPool gap_;
};

}  // namespace

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.family == BackboneFamily::resnet_cifar)
    return std::make_unique<ResNetCifar>(cfg.output_dim, rng);
  return std::make_unique<TinyConv>(cfg.output_dim, rng);
}

// --------------------------------------------------------------- MlpHead

void MlpHead::init(int in_dim, const MlpSpec& spec, const std::string& name,
                   Rng& rng) {
  if (spec.dims.empty()) throw ConfigError("mlp head needs at least one layer");
  stages_.clear();
  stages_.resize(spec.dims.size());
  int prev = in_dim;
  for (std::size_t i = 0; i < spec.dims.size(); ++i) {
    const int size = spec.dims[i];
    if (size < 1) throw ConfigError("mlp layer size must be positive");
    Stage& st = stages_[i];
    const std::string stage_name = name + "." + std::to_string(i);
    st.lin.init(prev, size, stage_name + ".lin", rng);
    st.norm_act = i + 1 < spec.dims.size();
    st.has_bn = st.norm_act && spec.hidden_bn;
    if (st.has_bn) st.bn.init(size, stage_name + ".bn");
    prev = size;
  }
}

Tensor MlpHead::forward(const Tensor& x, bool train) {
  Tensor h = x;
  for (auto& st : stages_) {
    h = st.lin.forward(h);
    if (st.norm_act) {
      if (st.has_bn) h = st.bn.forward(h, train);
      h = st.relu.forward(h);
    }
  }
  return h;
}

Tensor MlpHead::backward(const Tensor& dy) {
  Tensor d = dy;
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
    if (it->norm_act) {
      d = it->relu.backward(d);
      if (it->has_bn) d = it->bn.backward(d);
    }
    d = it->lin.backward(d);
  }
  return d;
}

void MlpHead::collect(std::vector<Param*>& out) {
  for (auto& st : stages_) {
    st.lin.collect(out);
    if (st.has_bn) st.bn.collect(out);
  }
}

int MlpHead::out_dim() const {
  if (stages_.empty()) throw Error("mlp head not initialized");
  return stages_.back().lin.out_dim();
}

// ------------------------------------------------------------ HeadConfig

void HeadConfig::resolve(int d) {
  if (projector.dims.empty()) {
    projector.dims = {d, d};
    projector.hidden_bn = true;
  }
  if (predictor.dims.empty()) {
    predictor.dims = {std::max(d / 4, 1), d};
    predictor.hidden_bn = true;
  }
  if (regression.dims.empty()) {
    regression.dims = {d, d};
    regression.hidden_bn = false;  // heads must accept any per-route batch size
  }
  if (projector.dims.back() != d)
    throw ConfigError("projector output dim must equal backbone output dim");
  if (predictor.dims.back() != d)
    throw ConfigError("predictor output dim must equal backbone output dim");
  if (regression.dims.back() != d)
    throw ConfigError("regression head output dim must equal backbone output dim");
  if (num_regression_heads < 0)
    throw ConfigError("num_regression_heads must be nonnegative");
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
}

// ----------------------------------------------------------- ModelBundle

ModelBundle ModelBundle::clone() const {
  ModelBundle out;
  out.backbone_cfg = backbone_cfg;
  out.head_cfg = head_cfg;
  out.init_seed = init_seed;
  out.step = step;
  out.backbone = backbone ? backbone->clone() : nullptr;
  out.projector = projector;
  out.predictor = predictor;
  out.regression_heads = regression_heads;
  out.classifier = classifier;
  return out;
}

std::vector<Param*> ModelBundle::params() {
  std::vector<Param*> out;
  if (backbone) backbone->collect(out);
  projector.collect(out);
  predictor.collect(out);
  for (auto& h : regression_heads) h.collect(out);
  classifier.collect(out);
  return out;
}

std::vector<const Param*> ModelBundle::params() const {
  auto mut = const_cast<ModelBundle*>(this)->params();
  return {mut.begin(), mut.end()};
}

void ModelBundle::zero_grad() {
  for (Param* p : params()) p->g.zero();
}

ModelBundle init_bundle(const BackboneConfig& backbone_cfg, HeadConfig head_cfg,
                        std::uint64_t seed) {
  backbone_cfg.validate();
  const int d = backbone_cfg.output_dim;
  head_cfg.resolve(d);

  ModelBundle b;
  b.backbone_cfg = backbone_cfg;
  b.head_cfg = head_cfg;
  b.init_seed = seed;

  Rng backbone_rng(fork_seed(seed, "backbone"));
  b.backbone = make_backbone(backbone_cfg, backbone_rng);

  Rng proj_rng(fork_seed(seed, "projector"));
  b.projector.init(d, head_cfg.projector, "projector", proj_rng);

  Rng pred_rng(fork_seed(seed, "predictor"));
  b.predictor.init(d, head_cfg.predictor, "predictor", pred_rng);

  b.regression_heads.resize(static_cast<std::size_t>(head_cfg.num_regression_heads));
  for (int k = 0; k < head_cfg.num_regression_heads; ++k) {
    Rng head_rng(fork_seed(seed, "regression", std::uint64_t(k)));
    b.regression_heads[std::size_t(k)].init(
        d, head_cfg.regression, "regression." + std::to_string(k), head_rng);
  }

  Rng cls_rng(fork_seed(seed, "classifier"));
  b.classifier.init(d, head_cfg.num_classes, "classifier", cls_rng);
  return b;
}

void add_regression_heads(ModelBundle& bundle, int count, std::uint64_t seed) {
  const int have = int(bundle.regression_heads.size());
  if (count < have)
    throw ConfigError("cannot shrink the regression head set");
  const int d = bundle.backbone_cfg.output_dim;
  bundle.regression_heads.resize(static_cast<std::size_t>(count));
  for (int k = have; k < count; ++k) {
    Rng head_rng(fork_seed(seed, "regression", std::uint64_t(k)));
    bundle.regression_heads[std::size_t(k)].init(
        d, bundle.head_cfg.regression, "regression." + std::to_string(k), head_rng);
  }
  bundle.head_cfg.num_regression_heads = count;
}

void reset_classifier(ModelBundle& bundle, std::uint64_t seed) {
  Rng cls_rng(fork_seed(seed, "classifier"));
  bundle.classifier.init(bundle.backbone_cfg.output_dim,
                         bundle.head_cfg.num_classes, "classifier", cls_rng);
}

namespace {

Tensor checked(Tensor t, const char* what) {
  if (!t.finite()) throw NumericError(std::string(what) + ": non-finite output");
  return t;
}

}  // namespace

Tensor encode(ModelBundle& bundle, const Tensor& batch, bool train) {
  if (batch.rank() != 4 || batch.shape[1] != 3)
    throw ShapeError("encode expects a (B, 3, H, W) batch");
  return checked(bundle.backbone->forward(batch, train), "encode");
}

Tensor project(ModelBundle& bundle, const Tensor& features, bool train) {
  return checked(bundle.projector.forward(features, train), "project");
}

Tensor predict(ModelBundle& bundle, const Tensor& projections, bool train) {
  return checked(bundle.predictor.forward(projections, train), "predict");
}

Tensor regress(ModelBundle& bundle, int head_index, const Tensor& projections,
               bool train) {
  if (head_index < 0 || head_index >= int(bundle.regression_heads.size()))
    throw ShapeError("unknown regression head index " + std::to_string(head_index));
  return checked(
      bundle.regression_heads[std::size_t(head_index)].forward(projections, train),
      "regress");
}

Tensor classify(ModelBundle& bundle, const Tensor& features) {
  return checked(bundle.classifier.forward(features), "classify");
}

namespace {

std::uint64_t hash_params(const std::vector<const Param*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Param* p : params) {
    h = fnv1a64(p->name.data(), p->name.size(), h);
    for (const int d : p->w.shape) h = fnv1a64(&d, sizeof(d), h);
    h = fnv1a64(p->w.v.data(), p->w.v.size() * sizeof(float), h);
  }
  return h;
}

}  // namespace

std::uint64_t bundle_hash(const ModelBundle& bundle) {
  return hash_params(bundle.params());
}

std::uint64_t backbone_hash(const ModelBundle& bundle) {
  std::vector<const Param*> sel;
  for (const Param* p : bundle.params())
    if (p->name.rfind("backbone.", 0) == 0) sel.push_back(p);
  return hash_params(sel);
}

}  // namespace cissl::nn
