#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adk/autodiff.hpp"
#include "adk/error.hpp"
#include "adk/ops.hpp"
#include "adk/resample.hpp"
#include "adk/rng.hpp"
#include "adk/tensor.hpp"

namespace adk::model {

using adk::to_string;

enum class Variant : std::uint32_t { full = 0, shared_trunk = 1, single_stream = 2, simple_gen = 3 };
enum class NormMode : std::uint32_t { minmax_sum = 0, sum_only = 1, minmax_only = 2 };

inline Variant parse_variant(std::string_view s) {
  if (s == "full") return Variant::full;
  if (s == "shared_trunk") return Variant::shared_trunk;
  if (s == "single_stream") return Variant::single_stream;
  if (s == "simple_gen") return Variant::simple_gen;
  throw ConfigError("unknown variant '" + std::string(s) + "' (full, shared_trunk, single_stream, simple_gen)");
}

inline NormMode parse_norm_mode(std::string_view s) {
  if (s == "minmax_sum") return NormMode::minmax_sum;
  if (s == "sum_only") return NormMode::sum_only;
  if (s == "minmax_only") return NormMode::minmax_only;
  throw ConfigError("unknown norm mode '" + std::string(s) + "' (minmax_sum, sum_only, minmax_only)");
}

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::shared_trunk: return "shared_trunk";
    case Variant::single_stream: return "single_stream";
    case Variant::simple_gen: return "simple_gen";
  }
  return "?";
}

inline std::string_view to_string(NormMode m) {
  switch (m) {
    case NormMode::minmax_sum: return "minmax_sum";
    case NormMode::sum_only: return "sum_only";
    case NormMode::minmax_only: return "minmax_only";
  }
  return "?";
}

/// Everything that determines the network graph.
struct ModelConfig {
  std::uint32_t scale = 2;
  std::uint32_t features = 64;
  std::uint32_t kernel_size = 0;  // 0 selects 2 * scale + 1
  std::uint32_t backbone_blocks = 4;
  std::uint32_t trunk_blocks = 3;
  std::uint32_t branch_blocks = 2;
  Variant variant = Variant::full;
  NormMode norm_mode = NormMode::minmax_sum;
  std::uint32_t channels = 3;
  std::uint64_t seed = 0;

  std::uint32_t k() const { return kernel_size ? kernel_size : 2 * scale + 1; }

  void validate() const {
    if (scale < 2) throw ConfigError("scale must be an integer >= 2, got " + std::to_string(scale));
    if (features == 0) throw ConfigError("feature width must be positive");
    if (k() < 3 || k() % 2 == 0) throw ConfigError("kernel size must be odd and >= 3, got " + std::to_string(k()));
    if (channels != 3) throw ConfigError("only 3-channel (RGB) models are supported");
    if (static_cast<std::uint32_t>(variant) > 3) throw ConfigError("invalid variant");
    if (static_cast<std::uint32_t>(norm_mode) > 2) throw ConfigError("invalid norm mode");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

/// Named parameter tensors (theta) plus the configuration that produced them.
template <class T>
class ModelParams {
 public:
  ModelConfig config;
  std::vector<Parameter<T>> params;

  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw UsageError("duplicate parameter " + name);
    index_.emplace(name, params.size());
    params.push_back({std::move(name), std::move(value)});
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw UsageError("unknown parameter " + std::string(name));
    return it->second;
  }

  const Tensor<T>& get(std::string_view name) const { return params[index_of(name)].value; }
  Tensor<T>& get(std::string_view name) { return params[index_of(name)].value; }

  /// Total element count of parameters whose name starts with `prefix`.
  std::size_t count(std::string_view prefix = {}) const {
    std::size_t n = 0;
    for (const auto& p : params)
      if (std::string_view(p.name).starts_with(prefix)) n += p.value.size();
    return n;
  }

  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out;
    for (auto& p : params) out.push_back(&p.value);
    return out;
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    for (const auto& p : params) out.add(p.name, p.value.template cast<U>());
    return out;
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameter-name prefixes of the trunk and branch feeding colour channel c.
struct StreamLayout {
  std::string trunk;
  std::string branch;
};

inline constexpr std::array<std::string_view, 3> kChannelNames{"r", "g", "b"};

inline StreamLayout stream_layout(const ModelConfig& cfg, std::size_t channel) {
  if (channel >= 3) throw UsageError("unknown colour channel " + std::to_string(channel));
  const std::string own = "generator." + std::string(kChannelNames[channel]);
  switch (cfg.variant) {
    case Variant::full:
    case Variant::simple_gen: return {own + ".trunk", own + ".branch"};
    case Variant::shared_trunk: return {"generator.shared.trunk", own + ".branch"};
    case Variant::single_stream: return {"generator.single.trunk", "generator.single.branch"};
  }
  throw ConfigError("invalid variant");
}

namespace detail {

template <class T>
void add_conv(ModelParams<T>& p, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
              std::uint64_t seed) {
  // He/Kaiming uniform over fan-in; stream seeded by (seed, name) so equal names get equal weights.
  Rng rng(mix_seed(seed, fnv1a(name)));
  const double bound = std::sqrt(6.0 / static_cast<double>(cin * k * k));
  Tensor<T> w(Shape{cout, cin, k, k});
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  p.add(name + ".weight", std::move(w));
  p.add(name + ".bias", Tensor<T>(Shape{cout}));
}

template <class T>
void add_stack(ModelParams<T>& p, const ModelConfig& cfg, const std::string& prefix, std::size_t blocks) {
  const std::size_t c = cfg.features;
  if (cfg.variant == Variant::simple_gen && prefix.starts_with("generator.")) {
    for (std::size_t i = 0; i < 2 * blocks; ++i)
      add_conv(p, prefix + ".layer" + std::to_string(i), c, c, 3, cfg.seed);
  } else {
    for (std::size_t i = 0; i < blocks; ++i) {
      const std::string b = prefix + ".block" + std::to_string(i);
      add_conv(p, b + ".conv1", c, c, 3, cfg.seed);
      add_conv(p, b + ".conv2", c, c, 3, cfg.seed);
    }
  }
}

template <class T>
void add_trunk(ModelParams<T>& p, const ModelConfig& cfg, const std::string& prefix) {
  add_stack(p, cfg, prefix, cfg.trunk_blocks);
  add_conv(p, prefix + ".out", cfg.features, cfg.features, 3, cfg.seed);
}

template <class T>
void add_branch(ModelParams<T>& p, const ModelConfig& cfg, const std::string& prefix) {
  add_stack(p, cfg, prefix, cfg.branch_blocks);
  add_conv(p, prefix + ".out", cfg.features, static_cast<std::size_t>(cfg.k()) * cfg.k(), 3, cfg.seed);
}

}  // namespace detail

/// Allocates and initializes theta: He-uniform weights, zero biases, deterministic in cfg.seed.
template <class T = float>
ModelParams<T> build(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> p;
  p.config = cfg;
  const std::size_t c = cfg.features;
  detail::add_conv(p, "extractor.head", cfg.channels, c, 3, cfg.seed);
  for (std::size_t i = 0; i < cfg.backbone_blocks; ++i) {
    const std::string b = "extractor.block" + std::to_string(i);
    detail::add_conv(p, b + ".conv1", c, c, 3, cfg.seed);
    detail::add_conv(p, b + ".conv2", c, c, 3, cfg.seed);
  }
  detail::add_conv(p, "extractor.tail", c, c, 3, cfg.seed);
  detail::add_conv(p, "downsample", c * cfg.scale * cfg.scale, c, 3, cfg.seed);

  std::vector<std::string> trunks, branches;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto layout = stream_layout(cfg, ch);
    if (std::find(trunks.begin(), trunks.end(), layout.trunk) == trunks.end()) trunks.push_back(layout.trunk);
    if (std::find(branches.begin(), branches.end(), layout.branch) == branches.end())
      branches.push_back(layout.branch);
  }
  for (const auto& t : trunks) detail::add_trunk(p, cfg, t);
  for (const auto& b : branches) detail::add_branch(p, cfg, b);
  return p;
}

/// Puts every parameter on a tape, tracked (training) or by reference only (inference).
template <class T>
class Binding {
 public:
  Binding(ad::Tape<T>& tape, const ModelParams<T>& params, bool track_gradients = true)
      : tape_(&tape), params_(&params) {
    vars_.reserve(params.params.size());
    for (const auto& p : params.params)
      vars_.push_back(track_gradients ? tape.watch(p.value) : tape.reference(p.value));
  }

  ad::Var<T> var(std::string_view name) const { return vars_[params_->index_of(name)]; }
  const std::vector<ad::Var<T>>& vars() const { return vars_; }
  ad::Tape<T>& tape() const { return *tape_; }
  const ModelParams<T>& params() const { return *params_; }
  const ModelConfig& config() const { return params_->config; }

  /// Gradients aligned with params().params.
  std::vector<Tensor<T>> gradients(ad::GradientMap<T>& grads) const {
    std::vector<Tensor<T>> out;
    out.reserve(vars_.size());
    for (const auto& v : vars_) out.push_back(grads.take(v));
    return out;
  }

 private:
  ad::Tape<T>* tape_;
  const ModelParams<T>* params_;
  std::vector<ad::Var<T>> vars_;
};

namespace detail {

template <class T>
ad::Var<T> conv(const Binding<T>& b, const ad::Var<T>& x, const std::string& layer) {
  return ad::conv2d(x, b.var(layer + ".weight"), b.var(layer + ".bias"), Padding::reflect);
}

// x + conv2(relu(conv1(x)))
template <class T>
ad::Var<T> residual_block(const Binding<T>& b, const ad::Var<T>& x, const std::string& prefix) {
  auto h = ad::relu(conv(b, x, prefix + ".conv1"));
  return ad::add(x, conv(b, h, prefix + ".conv2"));
}

template <class T>
ad::Var<T> block_stack(const Binding<T>& b, ad::Var<T> x, const std::string& prefix, std::size_t blocks) {
  if (b.config().variant == Variant::simple_gen && prefix.starts_with("generator.")) {
    for (std::size_t i = 0; i < 2 * blocks; ++i) x = ad::relu(conv(b, x, prefix + ".layer" + std::to_string(i)));
    return x;
  }
  for (std::size_t i = 0; i < blocks; ++i) x = residual_block(b, x, prefix + ".block" + std::to_string(i));
  return x;
}

template <class T>
ad::Var<T> trunk(const Binding<T>& b, const ad::Var<T>& features, const std::string& prefix) {
  return conv(b, block_stack(b, features, prefix, b.config().trunk_blocks), prefix + ".out");
}

template <class T>
ad::Var<T> branch(const Binding<T>& b, const ad::Var<T>& embedding, const std::string& prefix) {
  return conv(b, block_stack(b, embedding, prefix, b.config().branch_blocks), prefix + ".out");
}

}  // namespace detail

/// F_HR = tail(backbone(head(I_HR))); spatial extents preserved.
template <class T>
ad::Var<T> extract_features(const Binding<T>& b, const ad::Var<T>& image) {
  const auto& cfg = b.config();
  const auto& shape = image.shape();
  if (shape.size() != 3 || shape[2] != cfg.channels) {
    throw ShapeError("extract_features: expected H x W x " + std::to_string(cfg.channels) + " input, got " +
                     to_string(shape));
  }
  if (shape[0] < cfg.k() || shape[1] < cfg.k()) {
    throw DimensionError("extract_features: input " + to_string(shape) + " smaller than kernel size " +
                         std::to_string(cfg.k()));
  }
  auto x = detail::conv(b, image, "extractor.head");
  for (std::size_t i = 0; i < cfg.backbone_blocks; ++i)
    x = detail::residual_block(b, x, "extractor.block" + std::to_string(i));
  return detail::conv(b, x, "extractor.tail");
}

/// F_LR = Conv(PixelUnshuffle(F_HR)).
template <class T>
ad::Var<T> downsample_features(const Binding<T>& b, const ad::Var<T>& features) {
  return detail::conv(b, ad::pixel_unshuffle(features, b.config().scale), "downsample");
}

/// Raw kernels K'_c (h x w x k^2) for colour channel c.
template <class T>
ad::Var<T> generate_raw_kernels(const Binding<T>& b, const ad::Var<T>& lr_features, std::size_t channel) {
  const auto layout = stream_layout(b.config(), channel);
  return detail::branch(b, detail::trunk(b, lr_features, layout.trunk), layout.branch);
}

// ---------------------------------------------------------------------------
// Kernel normalization

inline constexpr double kNormEps = 1e-8;
inline constexpr double kDegenerateRange = 1e-12;
inline constexpr double kSumGuard = 1e-6;

namespace detail {

template <class T>
struct SliceStats {
  std::size_t imin = 0, imax = 0;
  bool degenerate = false;
  T denom{1};  // max - min + eps (min-max stage)
  T total{1};  // sum + eps (sum stage)
};

template <class T>
SliceStats<T> normalize_slice(const T* raw, T* out, std::size_t n, NormMode mode) {
  SliceStats<T> st;
  const T uniform = T{1} / static_cast<T>(n);
  const T eps = static_cast<T>(kNormEps);
  if (mode == NormMode::sum_only) {
    T sum{0};
    for (std::size_t i = 0; i < n; ++i) sum += raw[i];
    if (std::abs(static_cast<double>(sum)) < kSumGuard) {
      st.degenerate = true;
      std::fill(out, out + n, uniform);
      return st;
    }
    st.total = sum + eps;
    for (std::size_t i = 0; i < n; ++i) out[i] = raw[i] / st.total;
    return st;
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (raw[i] < raw[st.imin]) st.imin = i;
    if (raw[i] > raw[st.imax]) st.imax = i;
  }
  const T lo = raw[st.imin];
  if (static_cast<double>(raw[st.imax]) - static_cast<double>(lo) < kDegenerateRange) {
    st.degenerate = true;
    std::fill(out, out + n, uniform);
    return st;
  }
  st.denom = raw[st.imax] - lo + eps;
  for (std::size_t i = 0; i < n; ++i) out[i] = (raw[i] - lo) / st.denom;
  if (mode == NormMode::minmax_sum) {
    T sum{0};
    for (std::size_t i = 0; i < n; ++i) sum += out[i];
    st.total = sum + eps;
    for (std::size_t i = 0; i < n; ++i) out[i] /= st.total;
  }
  return st;
}

}  // namespace detail

/// Normalizes every slice along the last axis: min-max scaling to [0, 1], then
/// division by the sum (each stage optional per mode). Slices whose range is
/// below 1e-12 (or, for sum_only, whose |sum| is below 1e-6) become uniform.
template <class T>
Tensor<T> normalize_kernels(const Tensor<T>& raw, NormMode mode) {
  if (!raw.all_finite()) throw NumericError("normalize_kernels: non-finite raw kernel");
  const std::size_t n = raw.shape().back();
  Tensor<T> out(raw.shape());
  for (std::size_t s = 0; s < raw.size() / n; ++s)
    detail::normalize_slice(raw.data() + s * n, out.data() + s * n, n, mode);
  return out;
}

}  // namespace adk::model

namespace adk::ad {

template <class T>
Var<T> normalize_kernels(const Var<T>& raw, model::NormMode mode) {
  const Tensor<T>& rv = raw.value();
  if (!rv.all_finite()) throw NumericError("normalize_kernels: non-finite raw kernel");
  const std::size_t n = rv.shape().back();
  const std::size_t slices = rv.size() / n;
  Tensor<T> out(rv.shape());
  std::vector<model::detail::SliceStats<T>> stats(slices);
  for (std::size_t s = 0; s < slices; ++s)
    stats[s] = model::detail::normalize_slice(rv.data() + s * n, out.data() + s * n, n, mode);
  Tensor<T> saved = out;
  return raw.tape().record(
      std::move(out), {raw},
      [raw, mode, n, stats = std::move(stats), k = std::move(saved)](Tape<T>& tape, const Tensor<T>& g) {
        const Tensor<T>& rv = raw.value();
        Tensor<T>& gr = tape.grad_buffer(raw);
        std::vector<T> ga(n);
        for (std::size_t s = 0; s < stats.size(); ++s) {
          const auto& st = stats[s];
          if (st.degenerate) continue;
          const std::size_t base = s * n;
          const T* gs = g.data() + base;
          const T* ks = k.data() + base;
          T* out = gr.data() + base;
          if (mode == model::NormMode::sum_only) {
            T dot{0};
            for (std::size_t i = 0; i < n; ++i) dot += gs[i] * ks[i];
            for (std::size_t i = 0; i < n; ++i) out[i] += (gs[i] - dot) / st.total;
            continue;
          }
          // Gradient with respect to the min-max scaled values a_i.
          if (mode == model::NormMode::minmax_sum) {
            T dot{0};
            for (std::size_t i = 0; i < n; ++i) dot += gs[i] * ks[i];
            for (std::size_t i = 0; i < n; ++i) ga[i] = (gs[i] - dot) / st.total;
          } else {
            std::copy(gs, gs + n, ga.begin());
          }
          const T lo = rv[base + st.imin];
          T gmin{0}, gmax{0};
          for (std::size_t i = 0; i < n; ++i) {
            const T a = (rv[base + i] - lo) / st.denom;
            out[i] += ga[i] / st.denom;
            gmin += ga[i] * (a - T{1}) / st.denom;
            gmax -= ga[i] * a / st.denom;
          }
          out[st.imin] += gmin;
          out[st.imax] += gmax;
        }
      },
      "normalize_kernels");
}

/// Stacks per-channel kernel maps (h x w x k^2 each) into an h x w x C x k x k field.
/// The same Var may appear several times; its gradient accumulates.
template <class T>
Var<T> stack_kernels(const std::vector<Var<T>>& per_channel, std::size_t k) {
  if (per_channel.empty()) throw UsageError("stack_kernels: no channels");
  const Shape& s0 = per_channel[0].shape();
  if (s0.size() != 3 || s0[2] != k * k) {
    throw ShapeError("stack_kernels: expected h x w x " + std::to_string(k * k) + ", got " + to_string(s0));
  }
  for (const auto& v : per_channel)
    if (v.shape() != s0) throw ShapeError("stack_kernels: channel kernel maps differ in shape");
  const std::size_t h = s0[0], w = s0[1], kk = k * k, nc = per_channel.size();
  Tensor<T> out(Shape{h, w, nc, k, k});
  for (std::size_t c = 0; c < nc; ++c) {
    const Tensor<T>& src = per_channel[c].value();
    for (std::size_t p = 0; p < h * w; ++p)
      std::copy_n(src.data() + p * kk, kk, out.data() + (p * nc + c) * kk);
  }
  return per_channel[0].tape().record(
      std::move(out), per_channel,
      [per_channel, kk, nc](Tape<T>& tape, const Tensor<T>& g) {
        for (std::size_t c = 0; c < nc; ++c) {
          if (!tape.requires_grad(per_channel[c])) continue;
          Tensor<T>& gc = tape.grad_buffer(per_channel[c]);
          const std::size_t pixels = gc.size() / kk;
          for (std::size_t p = 0; p < pixels; ++p)
            for (std::size_t j = 0; j < kk; ++j) gc[p * kk + j] += g[(p * nc + c) * kk + j];
        }
      },
      "stack_kernels");
}

}  // namespace adk::ad

namespace adk::model {

template <class T>
struct ForwardResult {
  ad::Var<T> image;    // h x w x 3
  ad::Var<T> kernels;  // h x w x 3 x k x k
};

/// extract -> downsample -> per-channel generate -> normalize -> apply.
template <class T>
ForwardResult<T> forward(const Binding<T>& b, const ad::Var<T>& hr) {
  const auto& cfg = b.config();
  const auto& shape = hr.shape();
  if (shape.size() != 3 || shape[0] % cfg.scale || shape[1] % cfg.scale) {
    throw ShapeError("forward: scale " + std::to_string(cfg.scale) + " does not divide input " + to_string(shape));
  }
  auto lr_features = downsample_features(b, extract_features(b, hr));

  std::vector<ad::Var<T>> per_channel;
  switch (cfg.variant) {
    case Variant::single_stream: {
      auto k = ad::normalize_kernels(generate_raw_kernels(b, lr_features, 0), cfg.norm_mode);
      per_channel.assign(3, k);
      break;
    }
    case Variant::shared_trunk: {
      auto embedding = detail::trunk(b, lr_features, stream_layout(cfg, 0).trunk);
      for (std::size_t c = 0; c < 3; ++c)
        per_channel.push_back(
            ad::normalize_kernels(detail::branch(b, embedding, stream_layout(cfg, c).branch), cfg.norm_mode));
      break;
    }
    default:
      for (std::size_t c = 0; c < 3; ++c)
        per_channel.push_back(ad::normalize_kernels(generate_raw_kernels(b, lr_features, c), cfg.norm_mode));
  }
  auto kernels = ad::stack_kernels(per_channel, cfg.k());
  return {ad::apply_kernels(hr, kernels, cfg.scale), kernels};
}

template <class T>
struct Prediction {
  Tensor<T> image;
  Tensor<T> kernels;
};

/// Gradient-free forward pass on a plain tensor.
template <class T>
Prediction<T> predict(const ModelParams<T>& params, const Tensor<T>& hr) {
  ad::Tape<T> tape;
  Binding<T> b(tape, params, false);
  auto out = forward(b, tape.reference(hr));
  return {out.image.value(), out.kernels.value()};
}

}  // namespace adk::model
