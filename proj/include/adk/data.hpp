#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "adk/config.hpp"
#include "adk/error.hpp"
#include "adk/image_io.hpp"
#include "adk/resample.hpp"
#include "adk/rng.hpp"
#include "adk/tensor.hpp"

namespace adk::data {

namespace fs = std::filesystem;

/// Aligned HR/LR pair; hr extents are exactly scale x the lr extents.
struct PairedSample {
  Tensor<float> hr;
  Tensor<float> lr;
  std::string id;
};

/// Plain-text manifest: hr_dir, lr_dir, scale, split. Relative directories
/// resolve against the manifest's own directory.
struct DatasetManifest {
  fs::path hr_dir;
  fs::path lr_dir;
  std::uint32_t scale = 2;
  std::string split = "train";

  static DatasetManifest load(const fs::path& path) {
    DatasetManifest m;
    bool have_hr = false, have_lr = false, have_scale = false;
    const fs::path base = path.parent_path();
    for (const auto& [key, value] : read_key_values(path)) {
      if (key == "hr_dir") {
        m.hr_dir = fs::path(value).is_absolute() ? fs::path(value) : base / value;
        have_hr = true;
      } else if (key == "lr_dir") {
        m.lr_dir = fs::path(value).is_absolute() ? fs::path(value) : base / value;
        have_lr = true;
      } else if (key == "scale") {
        try {
          m.scale = static_cast<std::uint32_t>(std::stoul(value));
        } catch (const std::exception&) {
          throw ConfigError(path.string() + ": scale '" + value + "' is not an integer");
        }
        have_scale = true;
      } else if (key == "split") {
        m.split = value;
      } else {
        throw ConfigError(path.string() + ": unknown manifest key '" + key + "'");
      }
    }
    if (!have_hr || !have_lr || !have_scale) {
      throw ConfigError(path.string() + ": manifest needs hr_dir, lr_dir and scale");
    }
    return m;
  }
};

struct LoadReport {
  std::vector<PairedSample> samples;
  std::vector<std::string> rejected;  // one message per rejected file or pair
  std::vector<std::string> warnings;
};

inline std::map<std::string, fs::path> list_pngs(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}

/// Pairs HR and LR PNGs by shared basename and validates the extent ratio.
/// With strict set, the first rejected pair raises DataError instead of being reported.
inline LoadReport load_pairs(const DatasetManifest& m, bool strict = false) {
  for (const auto& dir : {m.hr_dir, m.lr_dir}) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory does not exist: " + dir.string());
  }
  LoadReport report;
  auto reject = [&](std::string msg) {
    if (strict) throw DataError(msg);
    report.rejected.push_back(std::move(msg));
  };
  const auto hr_files = list_pngs(m.hr_dir);
  const auto lr_files = list_pngs(m.lr_dir);
  if (hr_files.empty() && lr_files.empty()) {
    report.warnings.push_back("no PNG files in " + m.hr_dir.string() + " or " + m.lr_dir.string());
    return report;
  }
  for (const auto& [stem, path] : lr_files) {
    if (!hr_files.count(stem)) reject("LR file " + path.string() + " has no HR partner");
  }
  for (const auto& [stem, hr_path] : hr_files) {
    auto it = lr_files.find(stem);
    if (it == lr_files.end()) {
      reject("HR file " + hr_path.string() + " has no LR partner in " + m.lr_dir.string());
      continue;
    }
    PairedSample s;
    s.id = stem;
    try {
      s.hr = io::read_png(hr_path);
    } catch (const IoError& e) {
      reject(e.what());
      continue;
    }
    try {
      s.lr = io::read_png(it->second);
    } catch (const IoError& e) {
      reject(e.what());
      continue;
    }
    if (s.hr.extent(0) != m.scale * s.lr.extent(0) || s.hr.extent(1) != m.scale * s.lr.extent(1)) {
      reject("extent ratio mismatch at scale " + std::to_string(m.scale) + ": " + hr_path.string() + " is " +
             std::to_string(s.hr.extent(1)) + "x" + std::to_string(s.hr.extent(0)) + ", " + it->second.string() +
             " is " + std::to_string(s.lr.extent(1)) + "x" + std::to_string(s.lr.extent(0)));
      continue;
    }
    report.samples.push_back(std::move(s));
  }
  return report;
}

inline Tensor<float> crop(const Tensor<float>& t, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const std::size_t c = t.extent(2);
  Tensor<float> out(Shape{h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    std::copy_n(&t(y0 + y, x0, 0), w * c, &out(y, 0, 0));
  return out;
}

/// Crops an HR patch at (hr_y, hr_x) and the LR patch at (hr_y / s, hr_x / s).
inline PairedSample crop_pair_at(const PairedSample& s, std::size_t patch, std::size_t hr_y, std::size_t hr_x) {
  const std::size_t scale = s.hr.extent(0) / s.lr.extent(0);
  if (patch == 0 || patch % scale) {
    throw UsageError("crop_pair: patch " + std::to_string(patch) + " not divisible by scale " + std::to_string(scale));
  }
  if (patch > std::min(s.hr.extent(0), s.hr.extent(1))) {
    throw DimensionError("crop_pair: patch " + std::to_string(patch) + " larger than image " +
                         to_string(s.hr.shape()));
  }
  if (hr_y % scale || hr_x % scale || hr_y + patch > s.hr.extent(0) || hr_x + patch > s.hr.extent(1)) {
    throw UsageError("crop_pair: origin not on the scale grid or outside the image");
  }
  const std::size_t lp = patch / scale;
  return {crop(s.hr, hr_y, hr_x, patch, patch), crop(s.lr, hr_y / scale, hr_x / scale, lp, lp), s.id};
}

/// Uniformly random aligned crop; the HR origin lies on multiples of the scale.
inline PairedSample crop_pair(const PairedSample& s, std::size_t patch, Rng& rng) {
  const std::size_t scale = s.hr.extent(0) / s.lr.extent(0);
  if (patch == 0 || patch % scale) {
    throw UsageError("crop_pair: patch " + std::to_string(patch) + " not divisible by scale " + std::to_string(scale));
  }
  if (patch > std::min(s.hr.extent(0), s.hr.extent(1))) {
    throw DimensionError("crop_pair: patch " + std::to_string(patch) + " larger than image " +
                         to_string(s.hr.shape()));
  }
  const std::size_t ny = (s.hr.extent(0) - patch) / scale + 1;
  const std::size_t nx = (s.hr.extent(1) - patch) / scale + 1;
  const std::size_t oy = rng.below(ny) * scale;
  const std::size_t ox = rng.below(nx) * scale;
  return crop_pair_at(s, patch, oy, ox);
}

/// Horizontal flip first, then counter-clockwise rotation by `quarter_turns` x 90 degrees.
struct AugmentOp {
  bool flip = false;
  unsigned quarter_turns = 0;

  static AugmentOp random(Rng& rng) {
    AugmentOp op;
    op.flip = rng.below(2) == 1;
    op.quarter_turns = static_cast<unsigned>(rng.below(4));
    return op;
  }
};

inline Tensor<float> flip_horizontal(const Tensor<float>& t) {
  const std::size_t h = t.extent(0), w = t.extent(1), c = t.extent(2);
  Tensor<float> out(t.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) std::copy_n(&t(y, w - 1 - x, 0), c, &out(y, x, 0));
  return out;
}

// One counter-clockwise quarter turn: out(i, j) = in(j, W - 1 - i).
inline Tensor<float> rotate90(const Tensor<float>& t) {
  const std::size_t h = t.extent(0), w = t.extent(1), c = t.extent(2);
  Tensor<float> out(Shape{w, h, c});
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h; ++j) std::copy_n(&t(j, w - 1 - i, 0), c, &out(i, j, 0));
  return out;
}

inline Tensor<float> transform(const Tensor<float>& t, const AugmentOp& op) {
  Tensor<float> out = op.flip ? flip_horizontal(t) : t;
  for (unsigned i = 0; i < op.quarter_turns % 4; ++i) out = rotate90(out);
  return out;
}

inline Tensor<float> inverse_transform(const Tensor<float>& t, const AugmentOp& op) {
  Tensor<float> out = t;
  for (unsigned i = 0; i < (4 - op.quarter_turns % 4) % 4; ++i) out = rotate90(out);
  return op.flip ? flip_horizontal(out) : out;
}

inline PairedSample augment(const PairedSample& s, const AugmentOp& op) {
  return {transform(s.hr, op), transform(s.lr, op), s.id};
}

/// Seeded procedural RGB texture in [0, 1]: a linear gradient, a checkerboard and
/// band-limited noise (a few random sinusoids), mixed with random weights.
inline Tensor<float> synth_texture(std::size_t size, Rng& rng) {
  Tensor<float> img(Shape{size, size, 3});
  const double n = static_cast<double>(size);
  const double two_pi = 2.0 * std::numbers::pi;

  double base[3], gx[3], gy[3], tint[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.25, 0.75);
    gx[c] = rng.uniform(-0.3, 0.3);
    gy[c] = rng.uniform(-0.3, 0.3);
    tint[c] = rng.uniform(-0.2, 0.2);
  }
  const auto period = static_cast<std::size_t>(2 + rng.below(11));
  const std::size_t phase_x = rng.below(period), phase_y = rng.below(period);
  const double checker_weight = rng.uniform(0.0, 1.0);

  struct Wave {
    double fx, fy, phase, amp[3];
  };
  std::vector<Wave> waves(6);
  for (auto& wv : waves) {
    const double cycles = rng.uniform(1.0, n / 4.0);
    const double angle = rng.uniform(0.0, two_pi);
    wv.fx = cycles * std::cos(angle) / n;
    wv.fy = cycles * std::sin(angle) / n;
    wv.phase = rng.uniform(0.0, two_pi);
    for (double& a : wv.amp) a = rng.uniform(0.0, 0.08);
  }

  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const bool on = (((x + phase_x) / period) + ((y + phase_y) / period)) % 2 == 1;
      for (int c = 0; c < 3; ++c) {
        double v = base[c] + gx[c] * (static_cast<double>(x) / n - 0.5) + gy[c] * (static_cast<double>(y) / n - 0.5);
        v += checker_weight * (on ? tint[c] : -tint[c]);
        for (const auto& wv : waves)
          v += wv.amp[c] * std::sin(two_pi * (wv.fx * static_cast<double>(x) + wv.fy * static_cast<double>(y)) +
                                    wv.phase);
        img(y, x, static_cast<std::size_t>(c)) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

/// Synthetic supervision pairs: procedural HR textures and their classical downscale.
inline std::vector<PairedSample> synth_pairs(std::size_t count, std::size_t hr_size, std::size_t scale,
                                             resample::Method generator, std::uint64_t seed) {
  if (scale == 0 || hr_size % scale) {
    throw UsageError("synth_pairs: hr_size " + std::to_string(hr_size) + " not divisible by scale " +
                     std::to_string(scale));
  }
  std::vector<PairedSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, i));
    PairedSample s;
    s.hr = synth_texture(hr_size, rng);
    s.lr = resample::classic_downscale(s.hr, scale, generator);
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", i);
    s.id = id;
    out.push_back(std::move(s));
  }
  return out;
}

/// Deterministic hold-out: the round(fraction * n) samples with the smallest id hash
/// (at least one when n >= 2) form the validation split; order is otherwise preserved.
inline std::pair<std::vector<PairedSample>, std::vector<PairedSample>> split_train_val(
    std::vector<PairedSample> samples, double fraction) {
  const std::size_t n = samples.size();
  std::size_t n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n >= 2) n_val = std::max<std::size_t>(n_val, 1);
  n_val = std::min(n_val, n > 0 ? n - 1 : 0);
  std::vector<std::pair<std::uint64_t, std::size_t>> order;
  for (std::size_t i = 0; i < n; ++i) order.emplace_back(fnv1a(samples[i].id), i);
  std::sort(order.begin(), order.end());
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i].second] = true;
  std::vector<PairedSample> train, val;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? val : train).push_back(std::move(samples[i]));
  return {std::move(train), std::move(val)};
}

}  // namespace adk::data
