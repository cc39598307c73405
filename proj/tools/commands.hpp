#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "adk/model.hpp"
#include "adk/trainer.hpp"

namespace adknet {

namespace fs = std::filesystem;

/// Where training pairs come from: a manifest, or a generated set.
struct DataOptions {
  fs::path manifest;
  std::string synth;  // classic method name; empty when a manifest is used
  std::uint32_t hr_size = 96;
  std::uint32_t synth_count = 32;
  std::uint64_t synth_seed = 42;
  double val_fraction = 0.1;
  bool strict = false;
};

struct TrainOptions {
  DataOptions data;
  adk::model::ModelConfig model;
  adk::train::TrainConfig train;
  fs::path out;
};

struct DownscaleOptions {
  fs::path ckpt;
  fs::path in;
  fs::path out;
  fs::path dump_kernels;
  std::uint32_t scale = 0;  // 0: take from the checkpoint
};

struct EvalOptions {
  fs::path ckpt;
  fs::path manifest;
  fs::path pred_dir;
  fs::path gt_dir;
  fs::path hr_dir;
  bool roundtrip = false;
  fs::path json;
};

struct AblateOptions {
  DataOptions data;
  adk::model::ModelConfig model;
  adk::train::TrainConfig train;
  std::uint64_t budget = 500;
  fs::path json;
};

struct BenchOptions {
  fs::path ckpt;
  std::vector<std::uint32_t> sizes{128};
  std::uint32_t iters = 10;
  std::uint64_t seed = 0;
  fs::path json;
};

void cmd_train(const TrainOptions& o, std::ostream& out);
void cmd_downscale(const DownscaleOptions& o, std::ostream& out);
void cmd_eval(const EvalOptions& o, std::ostream& out);
void cmd_ablate(const AblateOptions& o, std::ostream& out);
void cmd_bench(const BenchOptions& o, std::ostream& out);

/// Formats a PSNR value; the infinite sentinel prints as "inf".
std::string format_psnr(double v);

}  // namespace adknet
