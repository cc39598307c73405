#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "adk/adk.hpp"
#include "json.hpp"

namespace adknet {

using adk::Shape;
using adk::Tensor;
using nlohmann::json;
namespace data = adk::data;
namespace model = adk::model;
namespace resample = adk::resample;
namespace metrics = adk::metrics;
namespace train = adk::train;

std::string format_psnr(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string extent_text(const Tensor<float>& t) {
  return std::to_string(t.extent(1)) + "x" + std::to_string(t.extent(0));
}

/// Resolves the model scale against the data source; 0 means "not given".
std::uint32_t resolve_scale(std::uint32_t requested, const DataOptions& d) {
  if (d.manifest.empty()) return requested ? requested : 2;
  const auto m = data::DatasetManifest::load(d.manifest);
  if (requested && requested != m.scale) {
    throw adk::UsageError("--scale " + std::to_string(requested) + " conflicts with manifest scale " +
                          std::to_string(m.scale));
  }
  return m.scale;
}

std::pair<std::vector<data::PairedSample>, std::vector<data::PairedSample>> load_split(const DataOptions& d,
                                                                                       std::uint32_t scale,
                                                                                       std::ostream& out) {
  std::vector<data::PairedSample> samples;
  if (!d.manifest.empty() && !d.synth.empty()) throw adk::UsageError("give either --manifest or --synth, not both");
  if (!d.manifest.empty()) {
    auto report = data::load_pairs(data::DatasetManifest::load(d.manifest), d.strict);
    for (const auto& w : report.warnings) out << "warning: " << w << '\n';
    for (const auto& r : report.rejected) out << "rejected: " << r << '\n';
    samples = std::move(report.samples);
  } else if (!d.synth.empty()) {
    samples = data::synth_pairs(d.synth_count, d.hr_size, scale, resample::parse_method(d.synth), d.synth_seed);
  } else {
    throw adk::UsageError("no training data: give --manifest or --synth");
  }
  if (samples.empty()) throw adk::DataError("no usable training pairs");
  auto split = data::split_train_val(std::move(samples), d.val_fraction);
  out << "data: " << split.first.size() << " train / " << split.second.size() << " val pairs at x" << scale << '\n';
  if (split.second.empty()) out << "note: no validation split, validating on the training set\n";
  return split;
}

void write_jsonl(const fs::path& path, const std::vector<json>& records) {
  if (path.empty()) return;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw adk::IoError("cannot write " + path.string());
  for (const auto& r : records) f << r.dump() << '\n';
}

json psnr_json(double v) { return std::isinf(v) ? json(nullptr) : json(v); }

}  // namespace

void cmd_train(const TrainOptions& o, std::ostream& out) {
  if (o.out.empty()) throw adk::UsageError("train: --out is required");
  auto mc = o.model;
  mc.scale = resolve_scale(mc.scale, o.data);
  mc.validate();
  auto [train_set, val_set] = load_split(o.data, mc.scale, out);

  auto tc = o.train;
  tc.checkpoint_dir = o.out;
  fs::create_directories(o.out);
  fs::remove(o.out / "train_log.jsonl");
  fs::remove(o.out / "best.adkn");

  out << "model: " << model::to_string(mc.variant) << ", " << model::to_string(mc.norm_mode) << ", C=" << mc.features
      << ", k=" << mc.k() << ", blocks " << mc.backbone_blocks << "/" << mc.trunk_blocks << "/" << mc.branch_blocks
      << '\n';
  auto params = model::build<float>(mc);
  out << "parameters: " << params.count() << '\n';
  train::Trainer t(std::move(params), tc, std::move(train_set), std::move(val_set));
  t.train([&](const train::EpochRecord& r) {
    out << "epoch " << r.epoch + 1 << "  step " << r.step << "  train_l1 " << fixed(r.train_loss, 6) << "  val_l1 "
        << fixed(r.val_loss, 6) << "  val_psnr " << format_psnr(r.val_psnr) << "  lr " << r.lr << std::endl;
  });
  t.save(o.out / "last.adkn");
  if (!fs::exists(o.out / "best.adkn")) t.save(o.out / "best.adkn");
  out << "done after " << t.state().step << " steps; best val_l1 " << fixed(t.state().best_val, 6) << "; wrote "
      << (o.out / "best.adkn").string() << '\n';
}

void cmd_downscale(const DownscaleOptions& o, std::ostream& out) {
  if (o.ckpt.empty() || o.in.empty() || o.out.empty()) throw adk::UsageError("downscale: --ckpt, --in and --out are required");
  const auto state = adk::load_checkpoint(o.ckpt);
  const auto& params = state.params;
  const std::size_t s = params.config.scale;
  if (o.scale && o.scale != s) {
    throw adk::UsageError("checkpoint " + o.ckpt.string() + " is for scale " + std::to_string(s) +
                          ", requested scale " + std::to_string(o.scale));
  }
  auto img = adk::io::read_png(o.in);
  const std::size_t h = img.extent(0) / s * s, w = img.extent(1) / s * s;
  if (h == 0 || w == 0) throw adk::DimensionError("input " + extent_text(img) + " is smaller than the scale factor");
  if (h != img.extent(0) || w != img.extent(1)) {
    out << "auto-cropped " << extent_text(img) << " to " << w << "x" << h << " (divisible by " << s << ")\n";
    img = data::crop(img, 0, 0, h, w);
  }
  const auto pred = model::predict(params, img);
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  adk::io::write_png(o.out, pred.image);
  out << "wrote " << o.out.string() << " (" << extent_text(pred.image) << ")\n";

  if (o.dump_kernels.empty()) return;
  fs::create_directories(o.dump_kernels);
  const auto& K = pred.kernels;
  const std::size_t lh = K.extent(0), lw = K.extent(1), ch = K.extent(2), k = K.extent(3), kk = k * k;
  const char* names[] = {"r", "g", "b"};
  json raw{{"scale", s}, {"k", k}, {"lr_height", lh}, {"lr_width", lw}, {"channels", json::object()}};
  for (std::size_t c = 0; c < ch; ++c) {
    std::vector<double> avg(kk, 0.0);
    for (std::size_t y = 0; y < lh; ++y)
      for (std::size_t x = 0; x < lw; ++x)
        for (std::size_t i = 0; i < kk; ++i) avg[i] += K.data()[((y * lw + x) * ch + c) * kk + i];
    for (auto& v : avg) v /= static_cast<double>(lh * lw);
    const auto [lo, hi] = std::minmax_element(avg.begin(), avg.end());
    const double range = *hi - *lo;
    Tensor<float> vis(Shape{k, k, 1});
    for (std::size_t i = 0; i < kk; ++i) vis[i] = range > 0.0 ? static_cast<float>((avg[i] - *lo) / range) : 1.0f;
    const std::string name = names[c];
    adk::io::write_png(o.dump_kernels / ("kernel_" + name + ".png"), vis);
    json rows = json::array();
    for (std::size_t a = 0; a < k; ++a) rows.push_back(std::vector<double>(avg.begin() + a * k, avg.begin() + (a + 1) * k));
    raw["channels"][name] = rows;
  }
  std::ofstream f(o.dump_kernels / "kernels.json");
  if (!f) throw adk::IoError("cannot write " + (o.dump_kernels / "kernels.json").string());
  f << raw.dump(2) << '\n';
  out << "wrote averaged kernels to " << o.dump_kernels.string() << '\n';
}

namespace {

struct EvalRow {
  std::string method;
  std::string image;
  metrics::MetricReport report;
};

struct EvalItem {
  std::string id;
  Tensor<float> candidate;     // downscaled prediction
  Tensor<float> target;        // LR ground truth
  std::optional<Tensor<float>> hr;
};

void print_eval_table(const std::vector<EvalRow>& rows, bool roundtrip, std::ostream& out) {
  out << (roundtrip ? "round-trip (bicubic upscale vs HR)\n" : "downscaled vs LR ground truth\n");
  out << pad("method", 10) << pad("image", 22) << pad("PSNR", 9) << pad("SSIM", 9) << pad("PSNR-Y", 9) << "SSIM-Y\n";
  for (const auto& r : rows) {
    out << pad(r.method, 10) << pad(r.image, 22) << pad(format_psnr(r.report.psnr_rgb), 9)
        << pad(fixed(r.report.ssim_rgb, 4), 9) << pad(format_psnr(r.report.psnr_y), 9) << fixed(r.report.ssim_y, 4)
        << '\n';
  }
}

}  // namespace

void cmd_eval(const EvalOptions& o, std::ostream& out) {
  const bool ckpt_mode = !o.ckpt.empty();
  if (ckpt_mode == !o.pred_dir.empty()) throw adk::UsageError("eval: give either --ckpt with --manifest, or --pred-dir with --gt-dir");
  std::vector<EvalItem> items;
  std::string method;
  std::size_t s = 0;
  if (ckpt_mode) {
    if (o.manifest.empty()) throw adk::UsageError("eval: --ckpt needs --manifest");
    const auto params = adk::load_checkpoint(o.ckpt).params;
    const auto manifest = data::DatasetManifest::load(o.manifest);
    s = params.config.scale;
    if (manifest.scale != s) {
      throw adk::UsageError("checkpoint scale " + std::to_string(s) + " vs manifest scale " + std::to_string(manifest.scale));
    }
    auto report = data::load_pairs(manifest);
    for (const auto& r : report.rejected) out << "rejected: " << r << '\n';
    for (auto& p : report.samples) items.push_back({p.id, model::predict(params, p.hr).image, p.lr, p.hr});
    method = "adknet";
  } else {
    if (o.gt_dir.empty()) throw adk::UsageError("eval: --pred-dir needs --gt-dir");
    for (const auto& dir : {o.pred_dir, o.gt_dir}) {
      if (!fs::is_directory(dir)) throw adk::DataError("not a directory: " + dir.string());
    }
    const auto preds = data::list_pngs(o.pred_dir);
    std::map<std::string, fs::path> hrs;
    if (!o.hr_dir.empty()) hrs = data::list_pngs(o.hr_dir);
    for (const auto& [stem, gt_path] : data::list_pngs(o.gt_dir)) {
      auto it = preds.find(stem);
      if (it == preds.end()) {
        out << "rejected: no prediction for " << gt_path.string() << '\n';
        continue;
      }
      EvalItem item{stem, adk::io::read_png(it->second), adk::io::read_png(gt_path), std::nullopt};
      if (!o.hr_dir.empty()) {
        auto h = hrs.find(stem);
        if (h == hrs.end()) {
          out << "rejected: no HR image for " << gt_path.string() << '\n';
          continue;
        }
        auto hr = adk::io::read_png(h->second);
        const std::size_t lh = item.target.extent(0), lw = item.target.extent(1);
        const std::size_t sh = hr.extent(0) / lh;
        if (sh < 2 || hr.extent(0) != sh * lh || hr.extent(1) != sh * lw) {
          throw adk::DataError("HR " + h->second.string() + " is not an integer multiple of " + gt_path.string());
        }
        if (s && s != sh) throw adk::DataError("inconsistent scale across HR images at " + h->second.string());
        s = sh;
        item.hr = std::move(hr);
      }
      items.push_back(std::move(item));
    }
    method = "pred";
  }
  if (items.empty()) throw adk::DataError("eval: nothing to evaluate");
  const bool have_hr = items.front().hr.has_value();
  if (o.roundtrip && !have_hr) throw adk::UsageError("eval: --roundtrip needs HR images (--hr-dir or a manifest)");
  if (!have_hr) out << "note: no HR images, classical baseline rows omitted\n";

  std::vector<std::pair<std::string, std::function<Tensor<float>(const EvalItem&)>>> methods;
  methods.emplace_back(method, [](const EvalItem& it) { return it.candidate; });
  if (have_hr) {
    for (auto m : {resample::Method::nearest, resample::Method::box, resample::Method::bicubic, resample::Method::lanczos3}) {
      methods.emplace_back(std::string(resample::method_name(m)),
                           [m, s](const EvalItem& it) { return resample::classic_downscale(*it.hr, s, m); });
    }
  }

  std::vector<EvalRow> rows, means;
  std::vector<json> records;
  for (const auto& [name, make] : methods) {
    std::vector<metrics::MetricReport> per_image;
    for (const auto& it : items) {
      auto cand = make(it);
      if (cand.shape() != it.target.shape()) {
        throw adk::ShapeError(name + " output for " + it.id + " is " + extent_text(cand) + ", ground truth is " +
                              extent_text(it.target));
      }
      const auto r = o.roundtrip ? metrics::evaluate(resample::bicubic_upscale(cand, s), *it.hr)
                                 : metrics::evaluate(cand, it.target);
      per_image.push_back(r);
      rows.push_back({name, it.id, r});
    }
    means.push_back({name, "mean", metrics::mean(per_image)});
  }
  rows.insert(rows.end(), means.begin(), means.end());
  for (const auto& r : rows) {
    records.push_back({{"method", r.method},
                       {"image", r.image},
                       {"roundtrip", o.roundtrip},
                       {"psnr_rgb", psnr_json(r.report.psnr_rgb)},
                       {"ssim_rgb", r.report.ssim_rgb},
                       {"psnr_y", psnr_json(r.report.psnr_y)},
                       {"ssim_y", r.report.ssim_y}});
  }
  print_eval_table(rows, o.roundtrip, out);
  write_jsonl(o.json, records);
}

void cmd_ablate(const AblateOptions& o, std::ostream& out) {
  if (o.budget == 0) throw adk::UsageError("ablate: --budget must be positive");
  auto base = o.model;
  base.scale = resolve_scale(base.scale, o.data);
  base.validate();
  const auto [train_set, val_set] = load_split(o.data, base.scale, out);

  struct Run {
    const char* name;
    model::Variant variant;
    model::NormMode norm;
  };
  const Run runs[] = {{"full", model::Variant::full, model::NormMode::minmax_sum},
                      {"shared_trunk", model::Variant::shared_trunk, model::NormMode::minmax_sum},
                      {"single_stream", model::Variant::single_stream, model::NormMode::minmax_sum},
                      {"simple_gen", model::Variant::simple_gen, model::NormMode::minmax_sum},
                      {"sum_only", model::Variant::full, model::NormMode::sum_only},
                      {"minmax_only", model::Variant::full, model::NormMode::minmax_only}};

  out << "budget " << o.budget << " steps, seed " << o.train.seed << '\n';
  out << pad("run", 15) << pad("variant", 15) << pad("norm", 12) << pad("params", 10) << pad("steps", 8)
      << pad("val_l1", 11) << "val_psnr\n";
  std::vector<json> records;
  double full_l1 = 0.0, single_l1 = 0.0;
  for (const auto& run : runs) {
    auto mc = base;
    mc.variant = run.variant;
    mc.norm_mode = run.norm;
    auto tc = o.train;
    tc.max_steps = o.budget;
    tc.epochs = std::numeric_limits<std::uint32_t>::max();
    tc.checkpoint_dir.clear();
    auto params = model::build<float>(mc);
    const auto n_params = params.count();
    train::Trainer t(std::move(params), tc, train_set, val_set);
    t.train();
    const auto v = t.validate();
    if (std::string_view(run.name) == "full") full_l1 = v.l1;
    if (std::string_view(run.name) == "single_stream") single_l1 = v.l1;
    out << pad(run.name, 15) << pad(std::string(model::to_string(run.variant)), 15)
        << pad(std::string(model::to_string(run.norm)), 12) << pad(std::to_string(n_params), 10)
        << pad(std::to_string(t.state().step), 8) << pad(fixed(v.l1, 6), 11) << format_psnr(v.psnr) << std::endl;
    records.push_back({{"run", run.name},
                       {"variant", model::to_string(run.variant)},
                       {"norm_mode", model::to_string(run.norm)},
                       {"parameters", n_params},
                       {"steps", t.state().step},
                       {"seed", o.train.seed},
                       {"val_l1", v.l1},
                       {"val_psnr", psnr_json(v.psnr)}});
  }
  const bool holds = full_l1 <= single_l1;
  out << "observation: full val_l1 " << fixed(full_l1, 6) << (holds ? " <= " : " > ") << "single_stream val_l1 "
      << fixed(single_l1, 6) << (holds ? " (expected direction)" : " (direction reversed on this data)") << '\n';
  records.push_back({{"observation", "full_vs_single_stream"},
                     {"full_val_l1", full_l1},
                     {"single_stream_val_l1", single_l1},
                     {"holds", holds}});
  write_jsonl(o.json, records);
}

namespace {

struct Timing {
  double median = 0.0;
  double p95 = 0.0;
  std::vector<double> samples;
};

Timing summarize(std::vector<double> samples) {
  Timing t;
  t.samples = samples;
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  t.median = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  t.p95 = samples[static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1];
  return t;
}

template <class F>
double time_ms(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void cmd_bench(const BenchOptions& o, std::ostream& out) {
  if (o.ckpt.empty()) throw adk::UsageError("bench: --ckpt is required");
  if (o.iters == 0) throw adk::UsageError("bench: --iters must be positive");
  const auto params = adk::load_checkpoint(o.ckpt).params;
  const std::size_t s = params.config.scale, k = params.config.k();
  out << "scale " << s << ", k " << k << ", " << o.iters << " iterations\n";
  out << pad("size", 11) << pad("forward median", 16) << pad("forward p95", 13) << pad("apply median", 14)
      << "apply p95 (ms)\n";
  std::vector<json> records;
  for (const auto size : o.sizes) {
    if (size == 0 || size % s) {
      throw adk::UsageError("bench: size " + std::to_string(size) + " is not a positive multiple of " + std::to_string(s));
    }
    adk::Rng rng(adk::mix_seed(o.seed, size));
    Tensor<float> img(Shape{size, size, 3});
    for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
    std::vector<double> fwd, app;
    model::Prediction<float> pred;
    for (std::uint32_t i = 0; i < o.iters; ++i) fwd.push_back(time_ms([&] { pred = model::predict(params, img); }));
    Tensor<float> sink;
    for (std::uint32_t i = 0; i < o.iters; ++i)
      app.push_back(time_ms([&] { sink = resample::apply_kernels(img, pred.kernels, s); }));
    const auto f = summarize(fwd), a = summarize(app);
    out << pad(std::to_string(size) + "x" + std::to_string(size), 11) << pad(fixed(f.median, 3), 16)
        << pad(fixed(f.p95, 3), 13) << pad(fixed(a.median, 3), 14) << fixed(a.p95, 3) << '\n';
    records.push_back({{"size", size},
                       {"scale", s},
                       {"k", k},
                       {"iters", o.iters},
                       {"forward_ms", {{"median", f.median}, {"p95", f.p95}, {"samples", f.samples}}},
                       {"apply_kernels_ms", {{"median", a.median}, {"p95", a.p95}, {"samples", a.samples}}}});
  }
  write_jsonl(o.json, records);
}

}  // namespace adknet
