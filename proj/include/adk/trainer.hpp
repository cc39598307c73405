#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "adk/autodiff.hpp"
#include "adk/checkpoint.hpp"
#include "adk/data.hpp"
#include "adk/metrics.hpp"
#include "adk/model.hpp"
#include "adk/optim.hpp"
#include "json.hpp"

namespace adk::train {

/// Mean absolute error over every element (pixels x channels).
template <class T>
ad::Var<T> l1_loss(const ad::Var<T>& pred, const ad::Var<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  }
  return ad::mean(ad::abs(ad::sub(pred, target)));
}

template <class T>
double l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "l1_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    acc += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
  return acc / static_cast<double>(pred.size());
}

struct TrainConfig {
  double lr0 = 1e-4;
  std::uint32_t plateau_patience = 10;
  double plateau_factor = 0.5;
  double min_lr = 1e-6;
  std::uint32_t epochs = 100;
  std::uint32_t batch = 4;
  std::uint32_t patch = 192;  // HR patch side; 0 trains on whole images
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints or log written
  std::uint32_t eval_every = 1;
  bool augment = true;
  std::uint64_t max_steps = 0;  // 0: bounded by epochs only

  void validate() const {
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau_factor must lie in (0, 1)");
    if (!(lr0 >= min_lr && min_lr >= 0.0)) throw ConfigError("lr0 must be at least min_lr, and min_lr non-negative");
    if (batch == 0) throw ConfigError("batch must be positive");
    if (eval_every == 0) throw ConfigError("eval_every must be positive");
  }
};

/// Halves (by `factor`) the learning rate after `patience` consecutive
/// validation rounds without a strict improvement, never going below min_lr.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr0, std::uint32_t patience, double factor, double min_lr)
      : lr_(lr0), patience_(patience), factor_(factor), min_lr_(min_lr) {}

  /// Returns true when this observation reduced the learning rate.
  bool observe(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      since_ = 0;
      return false;
    }
    if (++since_ < patience_) return false;
    since_ = 0;
    const double next = std::max(lr_ * factor_, min_lr_);
    const bool reduced = next < lr_;
    lr_ = next;
    return reduced;
  }

  void restore(double lr, double best, std::uint32_t since) {
    lr_ = lr;
    best_ = best;
    since_ = since;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }
  std::uint32_t since() const { return since_; }

 private:
  double lr_;
  std::uint32_t patience_;
  double factor_;
  double min_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  std::uint32_t since_ = 0;
};

struct EpochRecord {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_psnr = 0.0;
  double lr = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},      {"step", r.step},         {"train_loss", r.train_loss},
          {"val_loss", r.val_loss}, {"val_psnr", r.val_psnr}, {"lr", r.lr}};
}

inline EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::uint64_t>();
  r.step = j.at("step").get<std::uint64_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_loss = j.at("val_loss").get<double>();
  r.val_psnr = j.at("val_psnr").is_null() ? metrics::kInfinitePsnr : j.at("val_psnr").get<double>();
  r.lr = j.at("lr").get<double>();
  return r;
}

struct Validation {
  double l1 = 0.0;
  double psnr = 0.0;
};

/// Mean L1 and PSNR of whole-image predictions against their LR targets.
inline Validation evaluate(const model::ModelParams<float>& params, const std::vector<data::PairedSample>& samples) {
  Validation v;
  if (samples.empty()) return v;
  for (const auto& s : samples) {
    const auto pred = model::predict(params, s.hr);
    v.l1 += l1_loss(pred.image, s.lr);
    v.psnr += metrics::psnr(pred.image, s.lr);
  }
  v.l1 /= static_cast<double>(samples.size());
  v.psnr /= static_cast<double>(samples.size());
  return v;
}

/// Supervised training loop. One epoch is one pass over the training pairs with a
/// single random crop per pair. All randomness is derived from (seed, step) and
/// (seed, epoch), so a run resumed from a checkpoint continues identically.
class Trainer {
 public:
  Trainer(model::ModelParams<float> params, TrainConfig cfg, std::vector<data::PairedSample> train,
          std::vector<data::PairedSample> val)
      : cfg_(std::move(cfg)),
        train_(std::move(train)),
        val_(std::move(val)),
        schedule_(cfg_.lr0, cfg_.plateau_patience, cfg_.plateau_factor, cfg_.min_lr) {
    cfg_.validate();
    if (train_.empty()) throw UsageError("train: empty training set");
    const auto s = params.config.scale;
    for (const auto* set : {&train_, &val_}) {
      for (const auto& p : *set) {
        if (p.hr.extent(0) != s * p.lr.extent(0) || p.hr.extent(1) != s * p.lr.extent(1)) {
          throw UsageError("train: sample " + p.id + " does not match model scale " + std::to_string(s));
        }
      }
    }
    state_.params = std::move(params);
    std::vector<const Tensor<float>*> ptrs;
    for (const auto& p : state_.params.params) ptrs.push_back(&p.value);
    state_.adam = optim::AdamState<float>::zeros_like(ptrs);
    state_.has_optimizer = true;
    state_.lr = cfg_.lr0;
    state_.seed = cfg_.seed;
  }

  /// Continues from a checkpoint that carries trainer state; cfg must match the original run.
  static Trainer resume(TrainState state, TrainConfig cfg, std::vector<data::PairedSample> train,
                        std::vector<data::PairedSample> val) {
    if (!state.has_optimizer) throw UsageError("resume: checkpoint has no optimizer state");
    cfg.seed = state.seed;
    Trainer t(state.params, std::move(cfg), std::move(train), std::move(val));
    t.schedule_.restore(state.lr, state.best_val, state.epochs_since_improvement);
    t.state_ = std::move(state);
    return t;
  }

  std::size_t steps_per_epoch() const { return (train_.size() + cfg_.batch - 1) / cfg_.batch; }

  /// One optimizer step; returns the batch-mean L1 loss. Runs validation,
  /// the schedule and checkpointing when the step completes an epoch.
  double step() {
    const std::uint64_t t = state_.step;
    const std::size_t spe = steps_per_epoch();
    const auto order = epoch_order(t / spe);
    const std::size_t first = (t % spe) * cfg_.batch;
    const std::size_t last = std::min(first + cfg_.batch, order.size());
    const float inv_batch = 1.0f / static_cast<float>(last - first);

    auto& ps = state_.params.params;
    std::vector<Tensor<float>> grads;
    for (const auto& p : ps) grads.emplace_back(p.value.shape());
    double loss_sum = 0.0;
    for (std::size_t q = first; q < last; ++q) {
      const auto sample = make_sample(train_[order[q]], t, q - first);
      ad::Tape<float> tape;
      model::Binding<float> bind(tape, state_.params);
      auto out = model::forward(bind, tape.reference(sample.hr));
      auto loss = l1_loss(out.image, tape.reference(sample.lr));
      const double l = loss.value().item();
      if (!std::isfinite(l)) throw NumericError("training diverged: non-finite loss at step " + std::to_string(t));
      loss_sum += l;
      auto gm = tape.backward(ad::mul_scalar(loss, inv_batch));
      auto g = bind.gradients(gm);
      for (std::size_t i = 0; i < grads.size(); ++i)
        for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += g[i][j];
    }
    auto tensors = state_.params.tensors();
    optim::adam_step<float>(tensors, grads, state_.adam, state_.lr);

    const double batch_loss = loss_sum / static_cast<double>(last - first);
    state_.epoch_loss_sum += batch_loss;
    ++state_.epoch_batches;
    ++state_.step;
    if (state_.step % spe == 0) end_epoch();
    return batch_loss;
  }

  /// Runs until cfg.epochs epochs or cfg.max_steps steps, whichever comes first.
  std::vector<EpochRecord> train(const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    on_epoch_ = on_epoch;
    while (state_.epoch < cfg_.epochs && (cfg_.max_steps == 0 || state_.step < cfg_.max_steps)) step();
    on_epoch_ = nullptr;
    return history_;
  }

  Validation validate() const { return evaluate(state_.params, val_.empty() ? train_ : val_); }

  const TrainState& state() const { return state_; }
  const model::ModelParams<float>& params() const { return state_.params; }
  const std::vector<EpochRecord>& history() const { return history_; }
  double lr() const { return state_.lr; }

  void save(const std::filesystem::path& path) const { save_checkpoint(state_, path); }

 private:
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) {
    if (cached_epoch_ != epoch || order_.size() != train_.size()) {
      order_.resize(train_.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
      Rng rng(mix_seed(state_.seed, 0x0e90c400ULL + epoch));
      rng.shuffle(order_.begin(), order_.end());
      cached_epoch_ = epoch;
    }
    return order_;
  }

  data::PairedSample make_sample(const data::PairedSample& src, std::uint64_t step, std::size_t slot) const {
    Rng rng(mix_seed(mix_seed(state_.seed, step), 0x51a7ULL + slot));
    data::PairedSample s;
    if (cfg_.patch == 0) {
      s = src;
    } else {
      const std::size_t scale = state_.params.config.scale;
      const std::size_t fit = std::min(src.hr.extent(0), src.hr.extent(1)) / scale * scale;
      s = data::crop_pair(src, std::min<std::size_t>(cfg_.patch, fit), rng);
    }
    if (cfg_.augment) s = data::augment(s, data::AugmentOp::random(rng));
    return s;
  }

  void end_epoch() {
    EpochRecord rec;
    rec.epoch = state_.epoch;
    rec.step = state_.step;
    rec.train_loss = state_.epoch_batches ? state_.epoch_loss_sum / static_cast<double>(state_.epoch_batches) : 0.0;
    state_.epoch_loss_sum = 0.0;
    state_.epoch_batches = 0;
    ++state_.epoch;
    if (state_.epoch % cfg_.eval_every != 0) return;

    const auto v = validate();
    rec.val_loss = v.l1;
    rec.val_psnr = v.psnr;
    const bool improved = v.l1 < schedule_.best();
    schedule_.observe(v.l1);
    state_.lr = schedule_.lr();
    state_.best_val = schedule_.best();
    state_.epochs_since_improvement = schedule_.since();
    rec.lr = state_.lr;
    history_.push_back(rec);

    if (!cfg_.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg_.checkpoint_dir);
      save(cfg_.checkpoint_dir / "last.adkn");
      if (improved) save(cfg_.checkpoint_dir / "best.adkn");
      std::ofstream log(cfg_.checkpoint_dir / "train_log.jsonl", std::ios::app);
      log << to_json(rec).dump() << '\n';
    }
    if (on_epoch_) on_epoch_(rec);
  }

  TrainConfig cfg_;
  std::vector<data::PairedSample> train_;
  std::vector<data::PairedSample> val_;
  PlateauSchedule schedule_;
  TrainState state_;
  std::vector<EpochRecord> history_;
  std::function<void(const EpochRecord&)> on_epoch_;
  std::vector<std::size_t> order_;
  std::uint64_t cached_epoch_ = std::numeric_limits<std::uint64_t>::max();
};

}  // namespace adk::train
