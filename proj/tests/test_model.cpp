#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <set>

#include "adk/model.hpp"
#include "adk/resample.hpp"
#include "golden_forward.hpp"
#include "oracles.hpp"

using adk::Shape;
using adk::Tensor;
using adk::model::ModelConfig;
using adk::model::NormMode;
using adk::model::Variant;
namespace ad = adk::ad;
namespace model = adk::model;

namespace {

ModelConfig tiny(Variant v = Variant::full, std::uint32_t scale = 2, std::uint64_t seed = 3) {
  ModelConfig c;
  c.scale = scale;
  c.features = 4;
  c.backbone_blocks = 1;
  c.trunk_blocks = 1;
  c.branch_blocks = 1;
  c.variant = v;
  c.seed = seed;
  return c;
}

std::size_t generator_count(const model::ModelParams<float>& p) { return p.count("generator."); }

template <class T>
Tensor<T> raw_kernels(const model::ModelParams<T>& p, const Tensor<T>& hr, std::size_t channel) {
  ad::Tape<T> tape;
  model::Binding<T> b(tape, p, false);
  auto f = model::downsample_features(b, model::extract_features(b, tape.reference(hr)));
  return model::generate_raw_kernels(b, f, channel).value();
}

}  // namespace

TEST(ModelConfig, DefaultKernelSize) {
  ModelConfig c;
  for (std::uint32_t s : {2u, 3u, 4u}) {
    c.scale = s;
    EXPECT_EQ(c.k(), 2 * s + 1);
  }
  c.kernel_size = 7;
  EXPECT_EQ(c.k(), 7u);
}

TEST(ModelConfig, InvalidConfigs) {
  ModelConfig c;
  c.kernel_size = 4;
  EXPECT_THROW(c.validate(), adk::ConfigError);
  c.kernel_size = 1;
  EXPECT_THROW(c.validate(), adk::ConfigError);
  c = ModelConfig{};
  c.scale = 1;
  EXPECT_THROW(model::build(c), adk::ConfigError);
  EXPECT_THROW(model::parse_variant("dual"), adk::ConfigError);
  EXPECT_THROW(model::parse_norm_mode("softmax"), adk::ConfigError);
  EXPECT_EQ(model::parse_variant("shared_trunk"), Variant::shared_trunk);
  EXPECT_EQ(model::parse_norm_mode("minmax_only"), NormMode::minmax_only);
}

TEST(Build, EqualSeedsGiveIdenticalParameters) {
  const auto a = model::build(tiny());
  const auto b = model::build(tiny());
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(a.params[i].name, b.params[i].name);
    EXPECT_EQ(a.params[i].value, b.params[i].value);
  }
  const auto c = model::build(tiny(Variant::full, 2, 4));
  EXPECT_NE(a.get("extractor.head.weight"), c.get("extractor.head.weight"));
}

TEST(Build, InitializationBoundsAndZeroBias) {
  const auto p = model::build(tiny());
  for (const auto& prm : p.params) {
    if (prm.name.ends_with(".bias")) {
      for (float v : prm.value.values()) EXPECT_EQ(v, 0.0f) << prm.name;
    } else {
      const double fan_in = static_cast<double>(prm.value.extent(1) * prm.value.extent(2) * prm.value.extent(3));
      const double bound = std::sqrt(6.0 / fan_in);
      for (float v : prm.value.values()) EXPECT_LE(std::abs(v), bound) << prm.name;
    }
  }
}

TEST(Build, VariantParameterCounts) {
  const auto full = model::build(tiny(Variant::full));
  const auto shared = model::build(tiny(Variant::shared_trunk));
  const auto single = model::build(tiny(Variant::single_stream));
  const auto simple = model::build(tiny(Variant::simple_gen));
  const std::size_t trunk = full.count("generator.r.trunk"), branch = full.count("generator.r.branch");
  EXPECT_EQ(generator_count(full), 3 * generator_count(single));
  EXPECT_EQ(generator_count(single), trunk + branch);
  EXPECT_EQ(generator_count(shared), trunk + 3 * branch);
  EXPECT_EQ(generator_count(simple), generator_count(full));
  EXPECT_EQ(full.count("extractor."), single.count("extractor."));
  EXPECT_TRUE(simple.contains("generator.g.trunk.layer1.weight"));
  EXPECT_FALSE(simple.contains("generator.g.trunk.layer2.weight"));
  EXPECT_FALSE(single.contains("generator.r.trunk.out.weight"));
}

TEST(Build, FullStreamsShareNoParameters) {
  const auto p = model::build(tiny(Variant::full));
  std::array<std::set<std::string>, 3> names;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto layout = model::stream_layout(p.config, c);
    for (const auto& prm : p.params)
      if (prm.name.starts_with(layout.trunk) || prm.name.starts_with(layout.branch)) names[c].insert(prm.name);
    EXPECT_FALSE(names[c].empty());
  }
  for (const auto& n : names[0]) {
    EXPECT_EQ(names[1].count(n), 0u);
    EXPECT_EQ(names[2].count(n), 0u);
  }
}

TEST(Build, DefaultScaleFourBranchOutputs81) {
  ModelConfig c;
  c.scale = 4;
  const auto p = model::build(c);
  EXPECT_EQ(p.get("generator.r.branch.out.weight").extent(0), 81u);
  EXPECT_EQ(p.get("generator.b.branch.out.bias").extent(0), 81u);
}

TEST(Build, DownsampleInputChannels) {
  ModelConfig c;
  c.scale = 2;
  EXPECT_EQ(model::build(c).get("downsample.weight").extent(1), 256u);
}

TEST(ExtractFeatures, DefaultWidthShape) {
  const auto p = model::build(ModelConfig{});
  const auto img = oracle::random_tensor<float>({10, 12, 3}, 1, 0.0, 1.0);
  ad::Tape<float> tape;
  model::Binding<float> b(tape, p, false);
  EXPECT_EQ(model::extract_features(b, tape.reference(img)).shape(), (Shape{10, 12, 64}));
}

TEST(ExtractFeatures, ZeroTailGivesZeroFeatures) {
  auto p = model::build(tiny());
  p.get("extractor.tail.weight").fill(0.0f);
  p.get("extractor.tail.bias").fill(0.0f);
  const auto img = oracle::random_tensor<float>({8, 8, 3}, 2, 0.0, 1.0);
  ad::Tape<float> tape;
  model::Binding<float> b(tape, p, false);
  const auto f = model::extract_features(b, tape.reference(img)).value();
  for (float v : f.values()) EXPECT_EQ(v, 0.0f);
}

TEST(ExtractFeatures, ConstantInputGivesSpatiallyConstantFeatures) {
  auto p = model::build<double>(tiny());
  for (auto& prm : p.params)
    if (prm.name.ends_with(".bias"))
      for (auto& v : prm.value.values()) v = 0.1;
  ad::Tape<double> tape;
  model::Binding<double> b(tape, p, false);
  const auto f = model::extract_features(b, tape.reference(Tensor<double>(Shape{9, 7, 3}, 0.6))).value();
  const std::size_t c = f.extent(2);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], f[i % c], 1e-12);
}

TEST(ExtractFeatures, InputSmallerThanKernel) {
  const auto p = model::build(tiny(Variant::full, 3));
  ad::Tape<float> tape;
  model::Binding<float> b(tape, p, false);
  EXPECT_THROW(model::extract_features(b, tape.reference(Tensor<float>(Shape{6, 6, 3}))), adk::DimensionError);
}

TEST(DownsampleFeatures, ShapeAtScaleThree) {
  ModelConfig c;
  c.scale = 3;
  const auto p = model::build(c);
  ad::Tape<float> tape;
  model::Binding<float> b(tape, p, false);
  const Tensor<float> zero(Shape{192, 192, 64});
  const auto f = model::downsample_features(b, tape.reference(zero)).value();
  EXPECT_EQ(f.shape(), (Shape{64, 64, 64}));
  for (float v : f.values()) EXPECT_EQ(v, 0.0f);
}

TEST(DownsampleFeatures, NonDivisible) {
  const auto p = model::build(tiny(Variant::full, 3));
  ad::Tape<float> tape;
  model::Binding<float> b(tape, p, false);
  EXPECT_THROW(model::downsample_features(b, tape.reference(Tensor<float>(Shape{10, 9, 4}))), adk::ShapeError);
}

TEST(GenerateRawKernels, Shape) {
  for (std::uint32_t s : {2u, 3u}) {
    const auto p = model::build(tiny(Variant::full, s));
    const auto img = oracle::random_tensor<float>({6 * s, 4 * s, 3}, s, 0.0, 1.0);
    const std::size_t k = 2 * s + 1;
    EXPECT_EQ(raw_kernels(p, img, 1).shape(), (Shape{6, 4, k * k}));
  }
  const auto p = model::build(tiny());
  EXPECT_THROW(raw_kernels(p, Tensor<float>(Shape{8, 8, 3}), 3), adk::UsageError);
}

TEST(GenerateRawKernels, FullStreamsAreIndependent) {
  const auto base = model::build(tiny(Variant::full));
  auto perturbed = base;
  for (auto& prm : perturbed.params)
    if (prm.name.starts_with("generator.r."))
      for (auto& v : prm.value.values()) v += 0.05f;
  const auto img = oracle::random_tensor<float>({8, 8, 3}, 9, 0.0, 1.0);
  EXPECT_NE(raw_kernels(base, img, 0), raw_kernels(perturbed, img, 0));
  EXPECT_EQ(raw_kernels(base, img, 1), raw_kernels(perturbed, img, 1));
  EXPECT_EQ(raw_kernels(base, img, 2), raw_kernels(perturbed, img, 2));
}

TEST(GenerateRawKernels, SharedTrunkAffectsAllChannels) {
  const auto base = model::build(tiny(Variant::shared_trunk));
  auto perturbed = base;
  for (auto& prm : perturbed.params)
    if (prm.name.starts_with("generator.shared.trunk"))
      for (auto& v : prm.value.values()) v += 0.05f;
  const auto img = oracle::random_tensor<float>({8, 8, 3}, 10, 0.0, 1.0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NE(raw_kernels(base, img, c), raw_kernels(perturbed, img, c));
}

TEST(NormalizeKernels, ExactArithmetic) {
  const Tensor<double> raw(Shape{1, 4}, std::vector<double>{2, 4, 6, 8});
  const auto scaled = model::normalize_kernels(raw, NormMode::minmax_only);
  const double s[4] = {0, 1.0 / 3, 2.0 / 3, 1};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(scaled[i], s[i], 1e-8);
  const auto k = model::normalize_kernels(raw, NormMode::minmax_sum);
  const double e[4] = {0, 1.0 / 6, 1.0 / 3, 0.5};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(k[i], e[i], 1e-8);
  const auto so = model::normalize_kernels(raw, NormMode::sum_only);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(so[i], raw[i] / 20.0, 1e-8);
}

TEST(NormalizeKernels, DegenerateSlicesBecomeUniform) {
  const Tensor<float> raw(Shape{2, 9}, 0.7f);
  for (auto mode : {NormMode::minmax_sum, NormMode::minmax_only}) {
    const auto out = model::normalize_kernels(raw, mode);
    for (float v : out.values()) EXPECT_FLOAT_EQ(v, 1.0f / 9.0f);
  }
  Tensor<double> cancel(Shape{1, 4}, std::vector<double>{1, -1, 2, -2});
  const auto uniform = model::normalize_kernels(cancel, NormMode::sum_only);
  for (double v : uniform.values()) EXPECT_EQ(v, 0.25);
}

TEST(NormalizeKernels, NonFiniteInput) {
  Tensor<float> raw(Shape{1, 4});
  raw[2] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(model::normalize_kernels(raw, NormMode::minmax_sum), adk::NumericError);
}

TEST(NormalizeKernelsProperty, MinMaxSumSlicesAreValid) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 3 + 2 * (gen() % 4);
    const double spread = std::pow(10.0, static_cast<double>(gen() % 7) - 3.0);
    const auto raw = oracle::random_tensor<float>({3, k * k}, gen(), -spread, spread);
    const auto out = model::normalize_kernels(raw, NormMode::minmax_sum);
    for (std::size_t s = 0; s < 3; ++s) {
      double sum = 0.0;
      float lo = 1.0f;
      for (std::size_t i = 0; i < k * k; ++i) {
        const float v = out[s * k * k + i];
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
        lo = std::min(lo, v);
        sum += v;
      }
      EXPECT_EQ(lo, 0.0f);
      EXPECT_NEAR(sum, 1.0, 1e-5);
    }
  }
}

TEST(NormalizeKernelsProperty, GradientsMatchFiniteDifferences) {
  for (auto mode : {NormMode::minmax_sum, NormMode::sum_only, NormMode::minmax_only}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto raw = oracle::random_tensor<double>({3, 9}, seed, mode == NormMode::sum_only ? 0.2 : -1.0, 1.0);
      const auto r = oracle::random_tensor<double>({3, 9}, seed + 40);
      const double err = oracle::gradient_check({raw}, [&](auto& t, const auto& v) {
        return ad::sum(ad::mul(ad::normalize_kernels(v[0], mode), t.constant(r)));
      });
      EXPECT_LT(err, 1e-3) << model::to_string(mode) << " seed " << seed;
    }
  }
}

TEST(Forward, OutputShapeAndKernelField) {
  const auto p = model::build(tiny(Variant::full, 3));
  const auto img = oracle::random_tensor<float>({12, 9, 3}, 1, 0.0, 1.0);
  const auto pred = model::predict(p, img);
  EXPECT_EQ(pred.image.shape(), (Shape{4, 3, 3}));
  EXPECT_EQ(pred.kernels.shape(), (Shape{4, 3, 3, 7, 7}));
}

TEST(Forward, ConstantGrayStaysConstant) {
  for (auto v : {Variant::full, Variant::shared_trunk, Variant::single_stream, Variant::simple_gen}) {
    const auto p = model::build(tiny(v));
    const auto pred = model::predict(p, Tensor<float>(Shape{10, 10, 3}, 0.42f));
    for (float x : pred.image.values()) EXPECT_NEAR(x, 0.42f, 1e-5);
  }
}

TEST(Forward, SingleStreamUsesOneKernelForAllChannels) {
  const auto p = model::build(tiny(Variant::single_stream));
  const auto pred = model::predict(p, oracle::random_tensor<float>({8, 8, 3}, 4, 0.0, 1.0));
  const std::size_t kk = 25;
  for (std::size_t px = 0; px < 16; ++px)
    for (std::size_t j = 0; j < kk; ++j) {
      EXPECT_EQ(pred.kernels[(px * 3 + 0) * kk + j], pred.kernels[(px * 3 + 1) * kk + j]);
      EXPECT_EQ(pred.kernels[(px * 3 + 0) * kk + j], pred.kernels[(px * 3 + 2) * kk + j]);
    }
}

TEST(Forward, NonDivisibleInput) {
  const auto p = model::build(tiny());
  EXPECT_THROW(model::predict(p, Tensor<float>(Shape{9, 10, 3})), adk::ShapeError);
}

TEST(Forward, MatchesGoldenTensor) {
  auto cfg = tiny(Variant::full, 2, 1234);
  const auto p = model::build<double>(cfg);
  const auto out = model::predict(p, golden::input()).image;
  ASSERT_EQ(out.shape(), (Shape{6, 6, 3}));
  ASSERT_EQ(golden::kForward.size(), out.size());
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], golden::kForward[i], 1e-6) << i;
}

TEST(ForwardProperty, KernelsValidAndOutputWithinPatchRange) {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 12; ++trial) {
    const std::uint32_t s = 2 + static_cast<std::uint32_t>(gen() % 3);
    const auto p = model::build(tiny(Variant::full, s, gen()));
    const std::size_t k = 2 * s + 1;
    const auto img = oracle::random_tensor<float>({3 * s, 4 * s, 3}, gen(), 0.0, 1.0);
    const auto pred = model::predict(p, img);
    const std::size_t kk = k * k;
    for (std::size_t sl = 0; sl < pred.kernels.size() / kk; ++sl) {
      double sum = 0.0;
      for (std::size_t j = 0; j < kk; ++j) {
        const float v = pred.kernels[sl * kk + j];
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-5);
    }
    float lo = 1, hi = 0;
    for (float v : img.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (float v : pred.image.values()) {
      EXPECT_GE(v, lo - 1e-6f);
      EXPECT_LE(v, hi + 1e-6f);
    }
  }
}

TEST(ForwardProperty, RedChannelLossLeavesOtherStreamsWithoutGradient) {
  const auto p = model::build<double>(tiny());
  const auto img = oracle::random_tensor<double>({8, 8, 3}, 3, 0.0, 1.0);
  Tensor<double> mask(Shape{4, 4, 3});
  for (std::size_t i = 0; i < mask.size(); i += 3) mask[i] = 1.0;
  ad::Tape<double> tape;
  model::Binding<double> b(tape, p);
  auto out = model::forward(b, tape.reference(img));
  auto gm = tape.backward(ad::sum(ad::mul(out.image, tape.constant(mask))));
  const auto grads = b.gradients(gm);
  bool red_moved = false;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& name = p.params[i].name;
    double norm = 0.0;
    for (double g : grads[i].values()) norm += std::abs(g);
    if (name.starts_with("generator.g.") || name.starts_with("generator.b.")) EXPECT_EQ(norm, 0.0) << name;
    if (name.starts_with("generator.r.") && norm > 0.0) red_moved = true;
  }
  EXPECT_TRUE(red_moved);
}

TEST(ForwardProperty, EndToEndGradientSpotCheck) {
  auto cfg = tiny();
  cfg.seed = 77;
  const auto p = model::build<double>(cfg);
  const auto img = oracle::random_tensor<double>({8, 8, 3}, 8, 0.0, 1.0);
  const auto target = oracle::random_tensor<double>({4, 4, 3}, 9, 0.0, 1.0);
  auto loss_of = [&](const model::ModelParams<double>& q) {
    ad::Tape<double> tape;
    model::Binding<double> b(tape, q, false);
    auto out = model::forward(b, tape.reference(img));
    return ad::sum(ad::square(ad::sub(out.image, tape.constant(target)))).value().item();
  };
  ad::Tape<double> tape;
  model::Binding<double> b(tape, p);
  auto out = model::forward(b, tape.reference(img));
  auto gm = tape.backward(ad::sum(ad::square(ad::sub(out.image, tape.constant(target)))));
  const auto grads = b.gradients(gm);
  for (const char* name : {"extractor.head.weight", "downsample.weight", "generator.g.branch.out.bias"}) {
    const std::size_t idx = p.index_of(name);
    auto q = p;
    const double h = 1e-5;
    q.params[idx].value[0] += h;
    const double up = loss_of(q);
    q.params[idx].value[0] -= 2 * h;
    const double down = loss_of(q);
    EXPECT_LT(oracle::relative_error(grads[idx][0], (up - down) / (2 * h)), 1e-3) << name;
  }
}
