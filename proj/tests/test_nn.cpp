#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cissl/checkpoint.hpp"
#include "cissl/error.hpp"
#include "cissl/nn.hpp"
#include "cissl/rng.hpp"
#include "cissl/tensor.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace cissl::nn;
using cissl::Rng;
using cissl::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.v) x = float(scale * rng.normal());
  return t;
}

std::vector<double> random_direction(std::size_t n, Rng& rng) {
  std::vector<double> r(n);
  for (auto& x : r) x = rng.normal();
  return r;
}

double weighted(const Tensor& y, const std::vector<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.v.size(); ++i) s += double(y.v[i]) * r[i];
  return s;
}

Tensor direction_tensor(const std::vector<int>& shape, const std::vector<double>& r) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.v.size(); ++i) t.v[i] = float(r[i]);
  return t;
}

// Central finite differences through a float32 forward pass. The step and the
// tolerance are coarse on purpose: single precision limits how well the two
// sides can agree.
constexpr double kLayerFdStep = 1e-2;
constexpr double kLayerFdTol = 2e-2;

bool grad_close(double fd, double analytic, double scale) {
  const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-4 * scale, 1e-6});
  return std::abs(fd - analytic) / denom < kLayerFdTol;
}

double grad_scale(const Tensor& g) {
  double m = 0.0;
  for (const float x : g.v) m = std::max(m, double(std::abs(x)));
  return m;
}

fs::path scratch_file(const std::string& name) {
  return fs::temp_directory_path() / name;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("linear layer gradients agree with finite differences") {
  Rng rng(41);
  Linear lin;
  lin.init(5, 4, "t", rng);
  Tensor x = random_tensor({3, 5}, rng);
  const auto r = random_direction(std::size_t(3 * 4), rng);

  Tensor y = lin.forward(x);
  REQUIRE(y.shape == std::vector<int>({3, 4}));
  std::vector<Param*> params;
  lin.collect(params);
  for (Param* p : params) p->g.zero();
  Tensor dx = lin.backward(direction_tensor(y.shape, r));

  // input gradient
  const double sx = grad_scale(dx);
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const float keep = x.v[i];
    x.v[i] = float(keep + kLayerFdStep);
    const double up = weighted(lin.forward(x), r);
    x.v[i] = float(keep - kLayerFdStep);
    const double dn = weighted(lin.forward(x), r);
    x.v[i] = keep;
    CHECK(grad_close((up - dn) / (2 * kLayerFdStep), dx.v[i], sx));
  }
  // parameter gradients (weight then bias)
  for (Param* p : params) {
    const double sp = grad_scale(p->g);
    for (std::size_t i = 0; i < p->w.v.size(); ++i) {
      const float keep = p->w.v[i];
      p->w.v[i] = float(keep + kLayerFdStep);
      const double up = weighted(lin.forward(x), r);
      p->w.v[i] = float(keep - kLayerFdStep);
      const double dn = weighted(lin.forward(x), r);
      p->w.v[i] = keep;
      CHECK(grad_close((up - dn) / (2 * kLayerFdStep), p->g.v[i], sp));
    }
  }
}

TEST_CASE("conv layer gradients agree with finite differences") {
  for (const int stride : {1, 2}) {
    CAPTURE(stride);
    Rng rng(42);
    Conv2d conv;
    conv.init(2, 3, 3, stride, 1, "t", rng);
    Tensor x = random_tensor({2, 2, 5, 5}, rng);
    Tensor y = conv.forward(x);
    const auto r = random_direction(y.v.size(), rng);

    std::vector<Param*> params;
    conv.collect(params);
    for (Param* p : params) p->g.zero();
    conv.forward(x);  // refresh the cache after collecting
    Tensor dx = conv.backward(direction_tensor(y.shape, r));

    const double sx = grad_scale(dx);
    for (std::size_t i = 0; i < x.v.size(); i += 7) {  // spot sample
      const float keep = x.v[i];
      x.v[i] = float(keep + kLayerFdStep);
      const double up = weighted(conv.forward(x), r);
      x.v[i] = float(keep - kLayerFdStep);
      const double dn = weighted(conv.forward(x), r);
      x.v[i] = keep;
      CHECK(grad_close((up - dn) / (2 * kLayerFdStep), dx.v[i], sx));
    }
    Param* w = params[0];
    const double sw = grad_scale(w->g);
    for (std::size_t i = 0; i < w->w.v.size(); i += 5) {
      const float keep = w->w.v[i];
      w->w.v[i] = float(keep + kLayerFdStep);
      const double up = weighted(conv.forward(x), r);
      w->w.v[i] = float(keep - kLayerFdStep);
      const double dn = weighted(conv.forward(x), r);
      w->w.v[i] = keep;
      CHECK(grad_close((up - dn) / (2 * kLayerFdStep), w->g.v[i], sw));
    }
  }
}

TEST_CASE("batch-norm training gradients agree with finite differences") {
  Rng rng(43);
  BatchNorm bn;
  bn.init(3, "t");
  std::vector<Param*> params;
  bn.collect(params);
  // give gamma/beta nontrivial values
  params[0]->w.at(0) = 1.3f;
  params[0]->w.at(1) = 0.7f;
  params[0]->w.at(2) = -0.9f;
  params[1]->w.at(0) = 0.2f;
  params[1]->w.at(1) = -0.1f;
  params[1]->w.at(2) = 0.05f;

  Tensor x = random_tensor({4, 3, 2, 2}, rng);
  Tensor y = bn.forward(x, true);
  const auto r = random_direction(y.v.size(), rng);
  for (Param* p : params) p->g.zero();
  bn.forward(x, true);
  Tensor dx = bn.backward(direction_tensor(y.shape, r));

  const double sx = grad_scale(dx);
  for (std::size_t i = 0; i < x.v.size(); i += 3) {
    const float keep = x.v[i];
    x.v[i] = float(keep + kLayerFdStep);
    const double up = weighted(bn.forward(x, true), r);
    x.v[i] = float(keep - kLayerFdStep);
    const double dn = weighted(bn.forward(x, true), r);
    x.v[i] = keep;
    CHECK(grad_close((up - dn) / (2 * kLayerFdStep), dx.v[i], sx));
  }
  for (int pi = 0; pi < 2; ++pi) {  // gamma, beta only; running stats skipped
    Param* p = params[std::size_t(pi)];
    const double sp = grad_scale(p->g);
    for (std::size_t i = 0; i < p->w.v.size(); ++i) {
      const float keep = p->w.v[i];
      p->w.v[i] = float(keep + kLayerFdStep);
      const double up = weighted(bn.forward(x, true), r);
      p->w.v[i] = float(keep - kLayerFdStep);
      const double dn = weighted(bn.forward(x, true), r);
      p->w.v[i] = keep;
      CHECK(grad_close((up - dn) / (2 * kLayerFdStep), p->g.v[i], sp));
    }
  }
}

TEST_CASE("batch-norm running statistics follow the update rule") {
  BatchNorm bn;
  bn.init(1, "t");
  std::vector<Param*> params;
  bn.collect(params);
  Param* rm = params[2];
  Param* rv = params[3];
  REQUIRE(rm->name == "t.running_mean");
  REQUIRE(rv->name == "t.running_var");
  CHECK(rm->trainable == false);
  CHECK(rv->trainable == false);
  CHECK(rm->w.at(0) == 0.0f);
  CHECK(rv->w.at(0) == 1.0f);

  Tensor x({2, 1});
  x.at(0, 0) = 1.0f;
  x.at(1, 0) = 3.0f;  // mean 2, biased var 1, unbiased var 2
  bn.forward(x, true);
  CHECK(rm->w.at(0) == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
  CHECK(rv->w.at(0) == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));

  // eval mode must not touch them
  bn.forward(x, false);
  CHECK(rm->w.at(0) == doctest::Approx(0.2));
  CHECK(rv->w.at(0) == doctest::Approx(1.1));
}

TEST_CASE("batch-norm eval output is a per-element affine map") {
  BatchNorm bn;
  bn.init(2, "t");
  Tensor x({3, 2});
  for (int i = 0; i < 6; ++i) x.v[std::size_t(i)] = float(i) - 2.5f;
  // fresh stats: mean 0, var 1 -> y = x / sqrt(1 + eps)
  Tensor y = bn.forward(x, false);
  const float scale = float(1.0 / std::sqrt(1.0 + BatchNorm::kEps));
  for (int i = 0; i < 6; ++i)
    CHECK(y.v[std::size_t(i)] == doctest::Approx(x.v[std::size_t(i)] * scale));

  // eval rows are independent: a different companion row changes nothing
  Tensor solo({1, 2});
  solo.at(0, 0) = x.at(1, 0);
  solo.at(0, 1) = x.at(1, 1);
  Tensor ysolo = bn.forward(solo, false);
  CHECK(ysolo.at(0, 0) == y.at(1, 0));
  CHECK(ysolo.at(0, 1) == y.at(1, 1));
}

TEST_CASE("batch-norm input validation") {
  BatchNorm bn;
  bn.init(3, "t");
  Tensor wrong({2, 4});
  CHECK_THROWS_AS(bn.forward(wrong, true), cissl::ShapeError);
  Tensor rank3({2, 3, 4});
  CHECK_THROWS_AS(bn.forward(rank3, true), cissl::ShapeError);
  Tensor ok({2, 3});
  bn.forward(ok, true);
  Tensor badback({3, 3});
  CHECK_THROWS_AS(bn.backward(badback), cissl::ShapeError);
}

TEST_CASE("residual block gradients agree with finite differences") {
  for (const int stride : {1, 2}) {
    CAPTURE(stride);
    Rng rng(44);
    BasicBlock block;
    const int in_ch = 4, out_ch = stride == 1 ? 4 : 8;
    block.init(in_ch, out_ch, stride, "blk", rng);

    std::vector<Param*> params;
    block.collect(params);
    if (stride == 2) {
      // push every pre-activation deep into the active relu region: finite
      // differences are only valid away from the kinks, and the batch-stat
      // coupling of train-mode norm layers otherwise walks a handful of
      // activations across zero during probing
      for (Param* p : params)
        if (p->name.find(".beta") != std::string::npos) p->w.fill(3.0f);
    }

    Tensor x = random_tensor({2, in_ch, 6, 6}, rng);
    Tensor y = block.forward(x, true);
    const auto r = random_direction(y.v.size(), rng);

    for (Param* p : params) p->g.zero();
    block.forward(x, true);
    Tensor dx = block.backward(direction_tensor(y.shape, r));

    // norm-level comparison over the sampled coordinates: single tiny
    // components sit below the float32 rounding floor of the probe, while a
    // structural backward error would blow up the whole-vector ratio
    double diff_sq = 0.0, ref_sq = 0.0;
    for (std::size_t i = 0; i < x.v.size(); i += 17) {
      const float keep = x.v[i];
      x.v[i] = float(keep + kLayerFdStep);
      const double up = weighted(block.forward(x, true), r);
      x.v[i] = float(keep - kLayerFdStep);
      const double dn = weighted(block.forward(x, true), r);
      x.v[i] = keep;
      const double fd = (up - dn) / (2 * kLayerFdStep);
      diff_sq += (fd - dx.v[i]) * (fd - dx.v[i]);
      ref_sq += double(dx.v[i]) * dx.v[i];
    }
    REQUIRE(ref_sq > 0.0);
    CHECK(std::sqrt(diff_sq / ref_sq) < kLayerFdTol);
  }
}

TEST_CASE("relu forward clamps and backward masks by output sign") {
  Relu relu;
  Tensor x({1, 4});
  x.at(0, 0) = -2.0f;
  x.at(0, 1) = -0.5f;
  x.at(0, 2) = 0.0f;
  x.at(0, 3) = 1.5f;
  Tensor y = relu.forward(x);
  CHECK(y.at(0, 0) == 0.0f);
  CHECK(y.at(0, 1) == 0.0f);
  CHECK(y.at(0, 2) == 0.0f);
  CHECK(y.at(0, 3) == 1.5f);

  Tensor dy({1, 4});
  dy.fill(1.0f);
  Tensor dx = relu.backward(dy);
  CHECK(dx.at(0, 0) == 0.0f);
  CHECK(dx.at(0, 1) == 0.0f);
  CHECK(dx.at(0, 2) == 0.0f);
  CHECK(dx.at(0, 3) == 1.0f);
}

TEST_CASE("backbones produce (B, d) features of the configured width") {
  Rng rng(45);
  BackboneConfig tiny;
  tiny.family = BackboneFamily::tiny_conv;
  tiny.output_dim = 64;
  auto tb = make_backbone(tiny, rng);
  Tensor x = random_tensor({2, 3, 32, 32}, rng, 0.5);
  Tensor f = tb->forward(x, false);
  CHECK(f.shape == std::vector<int>({2, 64}));

  BackboneConfig res;
  res.family = BackboneFamily::resnet_cifar;
  res.output_dim = 64;
  auto rb = make_backbone(res, rng);
  Tensor g = rb->forward(x, false);
  CHECK(g.shape == std::vector<int>({2, 64}));
}

TEST_CASE("eval-mode encoding is deterministic and differs from train mode") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 16;
  HeadConfig heads;
  ModelBundle bundle = init_bundle(cfg, heads, 77);

  Rng rng(46);
  Tensor x = random_tensor({3, 3, 16, 16}, rng, 0.5);
  Tensor a = encode(bundle, x, false);
  Tensor b = encode(bundle, x, false);
  CHECK(a.v == b.v);

  Tensor t = encode(bundle, x, true);
  CHECK(a.v != t.v);  // train mode normalizes with batch statistics
}

TEST_CASE("eval-mode rows do not depend on their batch companions") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 16;
  ModelBundle bundle = init_bundle(cfg, HeadConfig{}, 78);

  Rng rng(47);
  Tensor pair = random_tensor({2, 3, 12, 12}, rng, 0.5);
  Tensor both = encode(bundle, pair, false);

  Tensor second({1, 3, 12, 12});
  for (int i = 0; i < second.numel(); ++i)
    second.v[std::size_t(i)] = pair.v[std::size_t(i + second.numel())];
  Tensor alone = encode(bundle, second, false);
  for (int j = 0; j < 16; ++j) CHECK(alone.at(0, j) == both.at(1, j));
}

TEST_CASE("backbone config validation") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::resnet_cifar;
  cfg.output_dim = 60;  // not divisible by 8
  CHECK_THROWS_AS(cfg.validate(), cissl::ConfigError);
  cfg.output_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), cissl::ConfigError);
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 18;  // not divisible by 4
  CHECK_THROWS_AS(cfg.validate(), cissl::ConfigError);
  cfg.output_dim = 64;
  cfg.small_image_stem = false;
  CHECK_THROWS_AS(cfg.validate(), cissl::ConfigError);
  cfg.small_image_stem = true;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("backbone family names parse with their aliases") {
  CHECK(parse_backbone_family("resnet-cifar-18-variant") == BackboneFamily::resnet_cifar);
  CHECK(parse_backbone_family("resnet19") == BackboneFamily::resnet_cifar);
  CHECK(parse_backbone_family("resnet-cifar") == BackboneFamily::resnet_cifar);
  CHECK(parse_backbone_family("tiny-conv") == BackboneFamily::tiny_conv);
  CHECK_THROWS_AS(parse_backbone_family("vgg"), cissl::ConfigError);
  CHECK(parse_backbone_family(to_string(BackboneFamily::tiny_conv)) ==
        BackboneFamily::tiny_conv);
  CHECK(parse_backbone_family(to_string(BackboneFamily::resnet_cifar)) ==
        BackboneFamily::resnet_cifar);
}

TEST_CASE("head config resolves defaults against the backbone width") {
  HeadConfig h;
  h.resolve(64);
  CHECK(h.projector.dims == std::vector<int>({64, 64}));
  CHECK(h.projector.hidden_bn);
  CHECK(h.predictor.dims == std::vector<int>({16, 64}));
  CHECK(h.predictor.hidden_bn);
  CHECK(h.regression.dims == std::vector<int>({64, 64}));
  CHECK_FALSE(h.regression.hidden_bn);  // routed batches can be size 1

  HeadConfig bad;
  bad.projector.dims = {32, 32};  // output must match d
  CHECK_THROWS_AS(bad.resolve(64), cissl::ConfigError);

  HeadConfig neg;
  neg.num_regression_heads = -1;
  CHECK_THROWS_AS(neg.resolve(64), cissl::ConfigError);
}

TEST_CASE("regression heads accept single-row batches in train mode") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 16;
  HeadConfig heads;
  heads.num_regression_heads = 2;
  ModelBundle bundle = init_bundle(cfg, heads, 5);

  Rng rng(48);
  Tensor one = random_tensor({1, 16}, rng);
  // hidden_bn=false means no batch statistics, so B=1 works in train mode
  Tensor out = regress(bundle, 0, one, true);
  CHECK(out.shape == std::vector<int>({1, 16}));

  // and each row is processed independently of its companions
  Tensor two({2, 16});
  for (int j = 0; j < 16; ++j) {
    two.at(0, j) = one.at(0, j);
    two.at(1, j) = float(rng.normal());
  }
  Tensor both = regress(bundle, 0, two, true);
  for (int j = 0; j < 16; ++j) CHECK(both.at(0, j) == out.at(0, j));
}

TEST_CASE("bundle parameter list has stable names and order") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 8;
  HeadConfig heads;
  heads.num_regression_heads = 1;
  heads.num_classes = 4;
  ModelBundle bundle = init_bundle(cfg, heads, 9);

  auto params = bundle.params();
  REQUIRE(!params.empty());
  CHECK(params.front()->name == "backbone.conv1.w");
  CHECK(params.back()->name == "classifier.b");

  // same construction, same order
  ModelBundle again = init_bundle(cfg, heads, 9);
  auto params2 = again.params();
  REQUIRE(params2.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i]->name == params2[i]->name);
    CHECK(params[i]->w.v == params2[i]->w.v);
  }

  // flags: conv weights adapt, biases/norms are excluded, running stats frozen
  for (const Param* p : params) {
    if (p->name.ends_with(".w") && p->name.find("conv") != std::string::npos)
      CHECK_FALSE(p->norm_or_bias);
    if (p->name.ends_with(".b") || p->name.find("gamma") != std::string::npos)
      CHECK(p->norm_or_bias);
    if (p->name.find("running_") != std::string::npos) CHECK_FALSE(p->trainable);
  }
}

TEST_CASE("init_bundle is seed deterministic") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 8;
  ModelBundle a = init_bundle(cfg, HeadConfig{}, 123);
  ModelBundle b = init_bundle(cfg, HeadConfig{}, 123);
  ModelBundle c = init_bundle(cfg, HeadConfig{}, 124);
  CHECK(bundle_hash(a) == bundle_hash(b));
  CHECK(bundle_hash(a) != bundle_hash(c));
}

TEST_CASE("clone is a deep copy") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 8;
  ModelBundle a = init_bundle(cfg, HeadConfig{}, 11);
  ModelBundle b = a.clone();
  CHECK(bundle_hash(a) == bundle_hash(b));

  auto params = b.params();
  params[0]->w.v[0] += 1.0f;
  CHECK(bundle_hash(a) != bundle_hash(b));
  // the original is untouched
  ModelBundle fresh = init_bundle(cfg, HeadConfig{}, 11);
  CHECK(bundle_hash(a) == bundle_hash(fresh));
}

TEST_CASE("regression heads grow without disturbing existing ones") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 8;
  ModelBundle bundle = init_bundle(cfg, HeadConfig{}, 13);
  CHECK(bundle.regression_heads.empty());

  add_regression_heads(bundle, 2, 99);
  REQUIRE(bundle.regression_heads.size() == 2);
  CHECK(bundle.head_cfg.num_regression_heads == 2);

  std::vector<Param*> before;
  bundle.regression_heads[0].collect(before);
  std::vector<std::vector<float>> kept;
  for (Param* p : before) kept.push_back(p->w.v);

  add_regression_heads(bundle, 4, 99);
  REQUIRE(bundle.regression_heads.size() == 4);
  std::vector<Param*> after;
  bundle.regression_heads[0].collect(after);
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i]->w.v == kept[i]);

  CHECK_THROWS_AS(add_regression_heads(bundle, 1, 99), cissl::ConfigError);
}

TEST_CASE("reset_classifier reseeds only the classifier") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 8;
  ModelBundle bundle = init_bundle(cfg, HeadConfig{}, 21);
  const auto backbone_before = backbone_hash(bundle);
  const auto bundle_before = bundle_hash(bundle);

  reset_classifier(bundle, 555);
  CHECK(backbone_hash(bundle) == backbone_before);
  CHECK(bundle_hash(bundle) != bundle_before);
}

TEST_CASE("encode validates its input") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 8;
  ModelBundle bundle = init_bundle(cfg, HeadConfig{}, 31);

  Tensor rank3({3, 16, 16});
  CHECK_THROWS_AS(encode(bundle, rank3, false), cissl::ShapeError);
  Tensor wrong_ch({1, 4, 16, 16});
  CHECK_THROWS_AS(encode(bundle, wrong_ch, false), cissl::ShapeError);

  // a NaN feature survives the matrix product untouched, so the non-finite
  // output guard on bundle ops fires (relu layers would absorb a NaN pixel)
  Tensor poisoned({1, 8});
  poisoned.v[3] = std::nanf("");
  CHECK_THROWS_AS(classify(bundle, poisoned), cissl::NumericError);
}

TEST_CASE("regress rejects unknown head indices") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 8;
  HeadConfig heads;
  heads.num_regression_heads = 2;
  ModelBundle bundle = init_bundle(cfg, heads, 32);
  Rng rng(49);
  Tensor x = random_tensor({1, 8}, rng);
  CHECK_THROWS_AS(regress(bundle, 2, x, false), cissl::ShapeError);
  CHECK_THROWS_AS(regress(bundle, -1, x, false), cissl::ShapeError);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 8;
  HeadConfig heads;
  heads.num_regression_heads = 3;
  heads.num_classes = 7;
  ModelBundle bundle = init_bundle(cfg, heads, 71);
  bundle.step = 1234;

  const fs::path path = scratch_file("cissl_ckpt_roundtrip.ckpt");
  save_checkpoint(bundle, path.string());
  ModelBundle back = load_checkpoint(path.string());

  CHECK(bundle_hash(back) == bundle_hash(bundle));
  CHECK(backbone_hash(back) == backbone_hash(bundle));
  CHECK(back.step == 1234);
  CHECK(back.init_seed == 71);
  CHECK(back.backbone_cfg.output_dim == 8);
  CHECK(back.backbone_cfg.family == BackboneFamily::tiny_conv);
  CHECK(back.head_cfg.num_regression_heads == 3);
  CHECK(back.head_cfg.num_classes == 7);
  REQUIRE(back.regression_heads.size() == 3);

  // the reloaded bundle still runs
  Rng rng(50);
  Tensor x = random_tensor({2, 3, 16, 16}, rng, 0.5);
  Tensor f = encode(back, x, false);
  CHECK(f.shape == std::vector<int>({2, 8}));
  fs::remove(path);
}

TEST_CASE("checkpoint loader rejects damaged files") {
  BackboneConfig cfg;
  cfg.family = BackboneFamily::tiny_conv;
  cfg.output_dim = 8;
  ModelBundle bundle = init_bundle(cfg, HeadConfig{}, 72);
  const fs::path path = scratch_file("cissl_ckpt_damage.ckpt");
  save_checkpoint(bundle, path.string());

  SUBCASE("truncation") {
    fs::resize_file(path, fs::file_size(path) - 64);
    CHECK_THROWS_AS(load_checkpoint(path.string()), cissl::IoError);
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("NOTACKPT", 8);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path.string()), cissl::IoError);
  }
  SUBCASE("unsupported version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t bad = 999;
    f.write(reinterpret_cast<const char*>(&bad), 4);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path.string()), cissl::IoError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint((path.string() + ".nope")), cissl::IoError);
  }
  fs::remove(path);
}

TEST_CASE("mlp head stage count and output dim follow the spec") {
  Rng rng(51);
  MlpHead head;
  MlpSpec spec;
  spec.dims = {12, 5};
  spec.hidden_bn = true;
  head.init(8, spec, "h", rng);
  CHECK(head.out_dim() == 5);
  CHECK_FALSE(head.empty());

  Tensor x = random_tensor({3, 8}, rng);
  Tensor y = head.forward(x, false);
  CHECK(y.shape == std::vector<int>({3, 5}));

  MlpHead broken;
  MlpSpec empty_spec;
  CHECK_THROWS_AS(broken.init(8, empty_spec, "h", rng), cissl::ConfigError);
  MlpSpec zero_spec;
  zero_spec.dims = {0};
  CHECK_THROWS_AS(broken.init(8, zero_spec, "h", rng), cissl::ConfigError);
}

}  // TEST_SUITE
