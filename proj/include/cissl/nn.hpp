#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cissl/rng.hpp"
#include "cissl/tensor.hpp"

namespace cissl::nn {

// One named parameter tensor. `trainable` is false for tracked state that the
// optimizer must skip (batch-norm running statistics); such entries still
// participate in checkpoints and hashes.
struct Param {
  std::string name;
  Tensor w;
  Tensor g;
  bool norm_or_bias = false;
  bool trainable = true;
};

// Layers follow one convention: forward(x, train) caches whatever backward
// needs (one slot; a second forward overwrites it), backward(dy) accumulates
// into Param::g and returns d loss / d input.

class Conv2d {
 public:
  void init(int in_ch, int out_ch, int ksize, int stride, int pad,
            const std::string& name, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(std::vector<Param*>& out) { out.push_back(&weight_); }

  int in_ch() const { return in_ch_; }
  int out_ch() const { return out_ch_; }

 private:
  int in_ch_ = 0, out_ch_ = 0, ksize_ = 0, stride_ = 1, pad_ = 0;
  Param weight_;  // (out_ch, in_ch * k * k)
  Tensor x_cache_;
};

// Batch normalization over the channel axis of (B, C, H, W) or (B, C) input.
class BatchNorm {
 public:
  void init(int channels, const std::string& name);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  void collect(std::vector<Param*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  int channels_ = 0;
  Param gamma_, beta_;
  Param running_mean_, running_var_;  // trainable = false
  // backward cache
  bool cached_train_ = false;
  Tensor xhat_cache_;
  std::vector<double> inv_cache_;  // per channel 1/sqrt(var + eps)
  std::vector<int> cached_dims_;
};

class Linear {
 public:
  void init(int in_dim, int out_dim, const std::string& name, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(std::vector<Param*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }

 private:
  int in_dim_ = 0, out_dim_ = 0;
  Param weight_;  // (out, in)
  Param bias_;    // (out)
  Tensor x_cache_;
};

class Relu {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  Tensor y_cache_;
};

class GlobalAvgPool {
 public:
  Tensor forward(const Tensor& x);  // (B,C,H,W) -> (B,C)
  Tensor backward(const Tensor& dy);

 private:
  std::vector<int> cached_dims_;
};

// Two 3x3 convolutions with a residual connection; 1x1 projection shortcut
// when stride or width changes.
class BasicBlock {
 public:
  void init(int in_ch, int out_ch, int stride, const std::string& name, Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  void collect(std::vector<Param*>& out);

 private:
  bool has_projection_ = false;
  Conv2d conv1_, conv2_, proj_conv_;
  BatchNorm bn1_, bn2_, proj_bn_;
  Relu relu1_, relu2_;
};

enum class BackboneFamily { resnet_cifar, tiny_conv };
BackboneFamily parse_backbone_family(const std::string& name);
std::string to_string(BackboneFamily family);

struct BackboneConfig {
  BackboneFamily family = BackboneFamily::resnet_cifar;
  int output_dim = 512;
  bool small_image_stem = true;  // 3x3 stem, no initial max-pool
  void validate() const;
};

class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect(std::vector<Param*>& out) = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;
};

// Small-image residual network: 3x3 stem, four stages of two basic blocks,
// global average pool. Widths are {d/8, d/4, d/2, d}.
std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, Rng& rng);

// MLP head: Linear stages with optional batch-norm + ReLU between them.
struct MlpSpec {
  std::vector<int> dims;  // layer output sizes, last is the head output dim
  bool hidden_bn = true;
};

class MlpHead {
 public:
  void init(int in_dim, const MlpSpec& spec, const std::string& name, Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  void collect(std::vector<Param*>& out);
  int out_dim() const;
  bool empty() const { return stages_.empty(); }

 private:
  struct Stage {
    Linear lin;
    bool norm_act = false;
    BatchNorm bn;
    bool has_bn = false;
    Relu relu;
  };
  std::vector<Stage> stages_;
};

struct HeadConfig {
  MlpSpec projector;              // default d -> d -> d, bn+relu hidden
  MlpSpec predictor;              // default d -> d/4 -> d, bn+relu hidden
  MlpSpec regression;             // default d -> d -> d, relu-only hidden
  int num_regression_heads = 0;   // K + 1 when distilling, 0 otherwise
  int num_classes = 10;           // linear classifier width
  // Fills empty specs from the backbone width and checks the d contracts.
  void resolve(int d);
};

struct ModelBundle {
  BackboneConfig backbone_cfg;
  HeadConfig head_cfg;
  std::uint64_t init_seed = 0;
  std::int64_t step = 0;

  std::unique_ptr<Backbone> backbone;
  MlpHead projector;
  MlpHead predictor;
  std::vector<MlpHead> regression_heads;
  Linear classifier;

  ModelBundle() = default;
  ModelBundle(ModelBundle&&) = default;
  ModelBundle& operator=(ModelBundle&&) = default;
  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;

  ModelBundle clone() const;
  std::vector<Param*> params();              // stable order, all tracked state
  std::vector<const Param*> params() const;
  void zero_grad();
};

ModelBundle init_bundle(const BackboneConfig& backbone_cfg, HeadConfig head_cfg,
                        std::uint64_t seed);

// Grows the bundle to `count` regression heads with freshly seeded parameters.
void add_regression_heads(ModelBundle& bundle, int count, std::uint64_t seed);

// Re-seeds the linear classifier (linear evaluation trains it from scratch).
void reset_classifier(ModelBundle& bundle, std::uint64_t seed);

// Bundle-level forward ops. Defaults are evaluation mode, where outputs are
// deterministic and row-independent. Train-mode calls cache activations; the
// caller drives backward through the member layers.
Tensor encode(ModelBundle& bundle, const Tensor& batch, bool train = false);
Tensor project(ModelBundle& bundle, const Tensor& features, bool train = false);
Tensor predict(ModelBundle& bundle, const Tensor& projections, bool train = false);
Tensor regress(ModelBundle& bundle, int head_index, const Tensor& projections,
               bool train = false);
Tensor classify(ModelBundle& bundle, const Tensor& features);

std::uint64_t bundle_hash(const ModelBundle& bundle);
std::uint64_t backbone_hash(const ModelBundle& bundle);

}  // namespace cissl::nn
