#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "adk/config.hpp"
#include "commands.hpp"

namespace {

using adknet::fs::path;

const std::vector<std::string> kVariants{"full", "shared_trunk", "single_stream", "simple_gen"};
const std::vector<std::string> kNormModes{"minmax_sum", "sum_only", "minmax_only"};
const std::vector<std::string> kMethods{"nearest", "box", "bicubic", "lanczos3"};

/// Applies key=value lines from --config to options not given on the command line.
/// Keys are the long flag names without the leading dashes.
void merge_config(CLI::App& cmd, const path& file) {
  for (const auto& [key, value] : adk::read_key_values(file)) {
    CLI::Option* opt = key == "config" || key == "help" ? nullptr : cmd.get_option_no_throw("--" + key);
    if (!opt) throw adk::ConfigError(file.string() + ": unknown key '" + key + "' for " + cmd.get_name());
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

struct ModelFlags {
  std::string variant = "full";
  std::string norm = "minmax_sum";
};

void add_data_flags(CLI::App& cmd, adknet::DataOptions& d) {
  cmd.add_option("--manifest", d.manifest, "Dataset manifest (hr_dir, lr_dir, scale)");
  cmd.add_option("--synth", d.synth, "Generate synthetic pairs with this classical downscaler")->check(CLI::IsMember(kMethods));
  cmd.add_option("--hr-size", d.hr_size, "Synthetic HR side length")->capture_default_str();
  cmd.add_option("--synth-count", d.synth_count, "Number of synthetic pairs")->capture_default_str();
  cmd.add_option("--synth-seed", d.synth_seed, "Seed for synthetic content")->capture_default_str();
  cmd.add_option("--val-fraction", d.val_fraction, "Fraction of pairs held out for validation")
      ->check(CLI::Range(0.0, 0.9))
      ->capture_default_str();
  cmd.add_flag("--strict", d.strict, "Fail on any rejected pair instead of skipping it");
}

void add_model_flags(CLI::App& cmd, adk::model::ModelConfig& m, ModelFlags& f) {
  m.scale = 0;
  cmd.add_option("--scale", m.scale, "Downscaling factor (default: manifest scale, else 2)");
  cmd.add_option("--variant", f.variant, "Generator variant")->check(CLI::IsMember(kVariants))->capture_default_str();
  cmd.add_option("--norm-mode", f.norm, "Kernel normalization")->check(CLI::IsMember(kNormModes))->capture_default_str();
  cmd.add_option("--features", m.features, "Feature width C")->capture_default_str();
  cmd.add_option("--kernel-size", m.kernel_size, "Kernel side k (0: 2s+1)")->capture_default_str();
  cmd.add_option("--backbone-blocks", m.backbone_blocks, "Residual blocks in the feature extractor")->capture_default_str();
  cmd.add_option("--trunk-blocks", m.trunk_blocks, "Residual blocks per channel trunk")->capture_default_str();
  cmd.add_option("--branch-blocks", m.branch_blocks, "Residual blocks per channel branch")->capture_default_str();
}

void add_train_flags(CLI::App& cmd, adk::train::TrainConfig& t, bool& no_augment) {
  cmd.add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
  cmd.add_option("--lr", t.lr0, "Initial learning rate")->capture_default_str();
  cmd.add_option("--min-lr", t.min_lr, "Learning-rate floor")->capture_default_str();
  cmd.add_option("--patience", t.plateau_patience, "Validation rounds without improvement before halving")
      ->capture_default_str();
  cmd.add_option("--batch", t.batch, "Pairs per optimizer step")->capture_default_str();
  cmd.add_option("--patch", t.patch, "HR crop side (0: whole images)")->capture_default_str();
  cmd.add_option("--seed", t.seed, "Seed for initialization, sampling and augmentation")->capture_default_str();
  cmd.add_option("--eval-every", t.eval_every, "Epochs between validations")->capture_default_str();
  cmd.add_option("--max-steps", t.max_steps, "Stop after this many steps (0: no limit)")->capture_default_str();
  cmd.add_flag("--no-augment", no_augment, "Disable flip/rotation augmentation");
}

void finish_model(adk::model::ModelConfig& m, const ModelFlags& f, std::uint64_t seed) {
  m.variant = adk::model::parse_variant(f.variant);
  m.norm_mode = adk::model::parse_norm_mode(f.norm);
  m.seed = seed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Learned content-adaptive image downscaling");
  app.require_subcommand(1);
  app.fallthrough(false);

  adknet::TrainOptions train;
  ModelFlags train_model;
  bool train_no_augment = false;
  path train_config;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write best.adkn, last.adkn and train_log.jsonl");
  add_data_flags(*train_cmd, train.data);
  add_model_flags(*train_cmd, train.model, train_model);
  add_train_flags(*train_cmd, train.train, train_no_augment);
  train_cmd->add_option("--out", train.out, "Output directory");
  train_cmd->add_option("--config", train_config, "key=value file of flag values; flags given on the command line win");

  adknet::DownscaleOptions down;
  auto* down_cmd = app.add_subcommand("downscale", "Downscale one PNG with a trained checkpoint");
  down_cmd->add_option("--ckpt", down.ckpt, "Checkpoint file")->required();
  down_cmd->add_option("--in", down.in, "Input HR PNG")->required();
  down_cmd->add_option("--out", down.out, "Output LR PNG")->required();
  down_cmd->add_option("--dump-kernels", down.dump_kernels, "Write spatially averaged kernels to this directory");
  down_cmd->add_option("--scale", down.scale, "Expected scale; must match the checkpoint");

  adknet::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM report against ground-truth LR images");
  eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint to evaluate on --manifest");
  eval_cmd->add_option("--manifest", eval.manifest, "Dataset manifest");
  eval_cmd->add_option("--pred-dir", eval.pred_dir, "Directory of predicted LR PNGs");
  eval_cmd->add_option("--gt-dir", eval.gt_dir, "Directory of ground-truth LR PNGs");
  eval_cmd->add_option("--hr-dir", eval.hr_dir, "Directory of HR PNGs (enables baselines and --roundtrip)");
  eval_cmd->add_flag("--roundtrip", eval.roundtrip, "Score bicubic upscales of each downscale against HR");
  eval_cmd->add_option("--json", eval.json, "Write one JSON record per row to this file");

  adknet::AblateOptions ablate;
  ModelFlags ablate_model;
  bool ablate_no_augment = false;
  path ablate_config;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train all six variants under one budget and seed");
  add_data_flags(*ablate_cmd, ablate.data);
  add_model_flags(*ablate_cmd, ablate.model, ablate_model);
  add_train_flags(*ablate_cmd, ablate.train, ablate_no_augment);
  ablate_cmd->add_option("--budget", ablate.budget, "Optimizer steps per run")->capture_default_str();
  ablate_cmd->add_option("--json", ablate.json, "Write one JSON record per row to this file");
  ablate_cmd->add_option("--config", ablate_config, "key=value file of flag values; flags given on the command line win");

  adknet::BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time the forward pass and kernel application");
  bench_cmd->add_option("--ckpt", bench.ckpt, "Checkpoint file")->required();
  bench_cmd->add_option("--size", bench.sizes, "HR side lengths")->capture_default_str();
  bench_cmd->add_option("--iters", bench.iters, "Timed iterations per size")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Seed for the random input")->capture_default_str();
  bench_cmd->add_option("--json", bench.json, "Write one JSON record per size to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (train_cmd->parsed()) {
      if (!train_config.empty()) merge_config(*train_cmd, train_config);
      finish_model(train.model, train_model, train.train.seed);
      train.train.augment = !train_no_augment;
      adknet::cmd_train(train, std::cout);
    } else if (down_cmd->parsed()) {
      adknet::cmd_downscale(down, std::cout);
    } else if (eval_cmd->parsed()) {
      adknet::cmd_eval(eval, std::cout);
    } else if (ablate_cmd->parsed()) {
      if (!ablate_config.empty()) merge_config(*ablate_cmd, ablate_config);
      finish_model(ablate.model, ablate_model, ablate.train.seed);
      ablate.train.augment = !ablate_no_augment;
      adknet::cmd_ablate(ablate, std::cout);
    } else if (bench_cmd->parsed()) {
      adknet::cmd_bench(bench, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
