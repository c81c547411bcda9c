// Command-line front end: synthetic dataset generation, cross-validated
// training, single-image measurement, and metrics reporting.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 unmeasurable image.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#if defined(__x86_64__) && defined(__linux__)
#include <unistd.h>
extern "C" char* openblas_get_corename(void);
#endif

#include "tra/config.hpp"
#include "tra/data.hpp"
#include "tra/metrics.hpp"
#include "tra/trainer.hpp"

namespace fs = std::filesystem;
using namespace tra;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitUnmeasurable = 3;

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  int folds = 10;
  int jobs = 1;

  KeyValueConfig echo() const {
    KeyValueConfig kv;
    kv.set("model.height", std::to_string(model.height));
    kv.set("model.width", std::to_string(model.width));
    kv.set("model.encoder_channels",
           std::to_string(model.encoder_channels[0]) + "," +
               std::to_string(model.encoder_channels[1]) + "," +
               std::to_string(model.encoder_channels[2]));
    kv.set("model.num_classes", std::to_string(model.num_classes));
    kv.set("model.dropout_rate", std::to_string(model.dropout_rate));
    kv.set("model.seed", std::to_string(model.seed));
    kv.set("train.epochs", std::to_string(train.epochs));
    kv.set("train.lr0", std::to_string(train.lr0));
    kv.set("train.lr_decay", std::to_string(train.lr_decay));
    kv.set("train.lr_step", std::to_string(train.lr_step));
    kv.set("train.adam_beta1", std::to_string(train.adam_beta1));
    kv.set("train.adam_beta2", std::to_string(train.adam_beta2));
    kv.set("train.adam_epsilon", std::to_string(train.adam_epsilon));
    kv.set("train.clip_norm", std::to_string(train.clip_norm));
    kv.set("train.seed", std::to_string(train.seed));
    kv.set("run.folds", std::to_string(folds));
    kv.set("run.jobs", std::to_string(jobs));
    return kv;
  }

  void apply_file(const KeyValueConfig& kv) {
    model.height = static_cast<int>(kv.get_int("model.height", model.height));
    model.width = static_cast<int>(kv.get_int("model.width", model.width));
    if (kv.has("model.encoder_channels")) {
      const auto chans = parse_int_list(*kv.get("model.encoder_channels"));
      if (chans.size() != 3)
        throw std::invalid_argument(
            "config: model.encoder_channels needs exactly 3 entries");
      for (int i = 0; i < 3; ++i) model.encoder_channels[i] = chans[i];
    }
    model.num_classes =
        static_cast<int>(kv.get_int("model.num_classes", model.num_classes));
    model.dropout_rate = kv.get_double("model.dropout_rate", model.dropout_rate);
    model.seed = static_cast<uint64_t>(kv.get_int("model.seed", model.seed));
    train.epochs = static_cast<int>(kv.get_int("train.epochs", train.epochs));
    train.lr0 = kv.get_double("train.lr0", train.lr0);
    train.lr_decay = kv.get_double("train.lr_decay", train.lr_decay);
    train.lr_step = static_cast<int>(kv.get_int("train.lr_step", train.lr_step));
    train.adam_beta1 = kv.get_double("train.adam_beta1", train.adam_beta1);
    train.adam_beta2 = kv.get_double("train.adam_beta2", train.adam_beta2);
    train.adam_epsilon = kv.get_double("train.adam_epsilon", train.adam_epsilon);
    train.clip_norm = kv.get_double("train.clip_norm", train.clip_norm);
    train.seed = static_cast<uint64_t>(kv.get_int("train.seed", train.seed));
    folds = static_cast<int>(kv.get_int("run.folds", folds));
    jobs = static_cast<int>(kv.get_int("run.jobs", jobs));
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_predictions_csv(const std::string& path,
                           const CrossValResult& cv) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "id,fold,pred_top_row,pred_top_col,pred_bottom_row,pred_bottom_col,"
        "true_top_row,true_top_col,true_bottom_row,true_bottom_col,"
        "mwa_pct,status\n";
  for (const auto& eval : cv.evals) {
    for (const auto& r : eval.rows) {
      os << r.id << "," << r.fold << ",";
      if (r.ok)
        os << fmt(r.predicted.top_row) << "," << fmt(r.predicted.top_col)
           << "," << fmt(r.predicted.bottom_row) << ","
           << fmt(r.predicted.bottom_col) << ",";
      else
        os << "nan,nan,nan,nan,";
      os << fmt(r.truth.top_row) << "," << fmt(r.truth.top_col) << ","
         << fmt(r.truth.bottom_row) << "," << fmt(r.truth.bottom_col) << ",";
      if (r.ok)
        os << fmt(r.mwa_pct) << ",ok\n";
      else
        os << "nan,degenerate\n";
    }
  }
}

void write_train_log(const std::string& path,
                     const std::vector<EpochLog>& log) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "epoch,mean_train_loss,L_I,L_P,L_S,L_F,val_mwa_mean,val_mae,lr\n";
  for (const auto& e : log)
    os << e.epoch << "," << fmt(e.mean_train_loss) << "," << fmt(e.li) << ","
       << fmt(e.lp) << "," << fmt(e.ls) << "," << fmt(e.lf) << ","
       << fmt(e.val_mwa_mean) << "," << fmt(e.val_mae) << "," << fmt(e.lr)
       << "\n";
}

int cmd_synth(int count, int h, int w, uint64_t seed, const std::string& out) {
  std::mt19937_64 rng(seed);
  const auto samples = synth_generate(count, h, w, rng);
  fs::create_directories(out);
  save_dataset(out, samples);
  {
    std::ofstream os(fs::path(out) / "dataset.toml");
    os << "[dataset]\ntarget_h = " << h << "\ntarget_w = " << w << "\n";
  }
  double mn = 1e9, mx = 0.0, mean = 0.0;
  for (const auto& s : samples) {
    const double t = std::hypot(double(s.bottom.row - s.top.row),
                                double(s.bottom.col - s.top.col)) *
                     s.mm_per_pixel;
    mn = std::min(mn, t);
    mx = std::max(mx, t);
    mean += t;
  }
  mean /= static_cast<double>(samples.size());
  std::cout << "generated " << samples.size() << " samples under " << out
            << "\nthickness_mm: min " << mn << " mean " << mean << " max "
            << mx << "\n";
  return kExitOk;
}

int cmd_crossval(const std::string& data, const std::string& config_file,
                 const std::string& out, RunConfig run,
                 const std::map<std::string, std::string>& overrides) {
  if (!config_file.empty())
    run.apply_file(KeyValueConfig::parse_file(config_file));
  for (const auto& [k, v] : overrides) {
    KeyValueConfig kv;
    kv.set(k, v);
    run.apply_file(kv);
  }
  run.model.validate();

  const auto dataset = load_dataset(data);
  if (static_cast<int>(dataset.size()) < run.folds)
    throw std::invalid_argument("dataset (" + std::to_string(dataset.size()) +
                                " samples) smaller than --folds (" +
                                std::to_string(run.folds) + ")");

  fs::create_directories(out);
  {
    std::ofstream os(fs::path(out) / "config_effective.toml");
    os << run.echo().dump();
  }

  std::cerr << "cross-validating " << dataset.size() << " samples, "
            << run.folds << " folds, " << run.train.epochs << " epochs\n";
  const auto cv = cross_validate(dataset, run.folds, run.model, run.train,
                                 run.jobs);

  std::ofstream metrics_csv(fs::path(out) / "metrics.csv");
  metrics_csv << MetricsReport::csv_header() << "\n";
  for (int f = 0; f < run.folds; ++f) {
    const std::string label = "fold_" + std::to_string(f);
    metrics_csv << cv.evals[f].report.to_csv_row(label) << "\n";
    std::ofstream os(fs::path(out) / (label + "_metrics.txt"));
    os << cv.evals[f].report.to_key_value();
    os << "degenerate_count=" << cv.evals[f].degenerate_count << "\n";
    write_train_log((fs::path(out) / ("train_log_" + label + ".csv")).string(),
                    cv.folds[f].log);
    save_checkpoint((fs::path(out) / ("checkpoint_" + label + ".bin")).string(),
                    cv.folds[f].model);
  }
  metrics_csv << cv.pooled.to_csv_row("pooled") << "\n";
  {
    std::ofstream os(fs::path(out) / "pooled_metrics.txt");
    os << cv.pooled.to_key_value();
    os << "degenerate_count=" << cv.total_degenerate << "\n"
       << "degenerate_rate=" << fmt(cv.degenerate_rate) << "\n";
  }
  write_predictions_csv((fs::path(out) / "predictions.csv").string(), cv);

  std::cout << "pooled: n=" << cv.pooled.n << " mae=" << cv.pooled.mae
            << " mwa_mean=" << cv.pooled.mwa_mean
            << " mwa_p50=" << cv.pooled.mwa_p50
            << " degenerate_rate=" << cv.degenerate_rate << "\n";
  return kExitOk;
}

int cmd_measure(const std::string& checkpoint, const std::string& image_path,
                double mm_per_pixel, const std::string& overlay_out) {
  const Model model = load_checkpoint(checkpoint);
  const GrayImage img = read_png_gray(image_path);
  const int H = model.config.height, W = model.config.width;
  const auto resized = resize_bilinear(img.px, img.h, img.w, H, W);
  Tensor input({H, W, 1});
  for (int64_t i = 0; i < input.size(); ++i)
    input[i] = normalize_intensity(resized[i]);

  std::optional<double> scale;
  if (mm_per_pixel > 0.0) {
    const double mm_y = mm_per_pixel * img.h / H;
    const double mm_x = mm_per_pixel * img.w / W;
    scale = std::sqrt(mm_y * mm_x);
  }

  const auto probs = model.predict_probs(input);
  const auto res = measure(probs, scale);
  if (res.status != MeasureStatus::kOk) {
    std::cerr << "unmeasurable: " << res.blob_count << " blobs found\n";
    return kExitUnmeasurable;
  }
  std::cout << "top: (" << res.line.top_row << ", " << res.line.top_col
            << ")\nbottom: (" << res.line.bottom_row << ", "
            << res.line.bottom_col << ")\nlength_px: " << res.line.length_px
            << "\n";
  if (res.line.length_mm)
    std::cout << "length_mm: " << *res.line.length_mm << "\n";
  std::cout << "blob_count: " << res.blob_count
            << "\nconfidence: " << res.confidence << "\n";
  if (!overlay_out.empty())
    render_overlay(overlay_out, resized, H, W, res.line, nullptr);
  return kExitOk;
}

int cmd_report(const std::string& predictions, const std::string& out) {
  std::ifstream is(predictions);
  if (!is) throw std::runtime_error("cannot open " + predictions);
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("empty predictions file");
  std::vector<EvalPair> pairs;
  std::map<int, std::vector<EvalPair>> by_fold;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) cols.push_back(item);
    if (cols.size() != 12)
      throw std::runtime_error("malformed predictions row at line " +
                               std::to_string(lineno));
    if (cols[11] != "ok") continue;
    try {
      EvalPair p;
      p.image_id = cols[0];
      const int fold = std::stoi(cols[1]);
      p.predicted = make_line(std::stod(cols[2]), std::stod(cols[3]),
                              std::stod(cols[4]), std::stod(cols[5]));
      p.truth = make_line(std::stod(cols[6]), std::stod(cols[7]),
                          std::stod(cols[8]), std::stod(cols[9]));
      by_fold[fold].push_back(p);
      pairs.push_back(std::move(p));
    } catch (const std::exception&) {
      throw std::runtime_error("malformed predictions row at line " +
                               std::to_string(lineno));
    }
  }
  if (pairs.empty()) throw std::runtime_error("no usable predictions rows");

  std::vector<double> fold_maes;
  for (const auto& [fold, fp] : by_fold) fold_maes.push_back(mae(fp));
  const auto report = build_report(pairs, fold_maes);

  fs::create_directories(out);
  {
    std::ofstream os(fs::path(out) / "report.txt");
    os << report.to_key_value();
  }
  {
    std::ofstream os(fs::path(out) / "report.csv");
    os << MetricsReport::csv_header() << "\n"
       << report.to_csv_row("aggregate") << "\n";
  }
  std::cout << report.to_key_value();
  if (!report.t_test_valid)
    std::cout << "t_test: identical distributions (zero variance of "
                 "differences)\n";
  return kExitOk;
}

// Hypervisors often report a blank CPU model, which makes OpenBLAS fall
// back to its generic (pre-AVX) kernels even on AVX-capable hardware. The
// core type can only be chosen at library load, so when that happens pick a
// matching type via OPENBLAS_CORETYPE and re-exec once. Roughly a 5x speedup
// on the training GEMMs when it applies.
void retune_blas_and_reexec(char** argv) {
#if defined(__x86_64__) && defined(__linux__)
  if (std::getenv("OPENBLAS_CORETYPE")) return;
  const std::string core = openblas_get_corename();
  if (core != "Prescott" && core != "Northwood" && core != "generic") return;
  const char* target = nullptr;
  if (__builtin_cpu_supports("avx512f"))
    target = "SKYLAKEX";
  else if (__builtin_cpu_supports("avx2"))
    target = "HASWELL";
  if (!target) return;
  setenv("OPENBLAS_CORETYPE", target, 1);
  execv("/proc/self/exe", argv);
  // If the re-exec fails we simply continue with the generic kernels.
#else
  (void)argv;
#endif
}

}  // namespace

int main(int argc, char** argv) {
  retune_blas_and_reexec(argv);
  CLI::App app{"Point-supervised caliper-endpoint localization toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int count = 0;
  std::vector<int> size = {128, 128};
  uint64_t seed = 1;
  std::string out_dir;
  synth->add_option("--count", count, "number of samples")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "image size: height width")
      ->expected(2);
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--out", out_dir, "output directory")->required();

  // crossval
  auto* crossval = app.add_subcommand("crossval", "k-fold train + evaluate");
  std::string data_dir, config_file, cv_out;
  RunConfig run;
  std::map<std::string, std::string> overrides;
  std::string epochs_s, train_seed_s, model_seed_s, lr0_s, dropout_s;
  crossval->add_option("--data", data_dir, "dataset directory")->required();
  crossval->add_option("--folds", run.folds, "number of folds");
  crossval->add_option("--config", config_file, "key-value config file");
  crossval->add_option("--out", cv_out, "output directory")->required();
  crossval->add_option("--jobs", run.jobs, "parallel fold workers");
  crossval->add_option("--epochs", epochs_s, "override train.epochs");
  crossval->add_option("--seed", train_seed_s, "override train.seed");
  crossval->add_option("--model-seed", model_seed_s, "override model.seed");
  crossval->add_option("--lr0", lr0_s, "override train.lr0");
  crossval->add_option("--dropout", dropout_s, "override model.dropout_rate");

  // measure
  auto* meas = app.add_subcommand("measure", "measure one image");
  std::string checkpoint, image_path, overlay_out;
  double mm_per_pixel = 0.0;
  meas->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  meas->add_option("--image", image_path, "input PNG")->required();
  meas->add_option("--mm-per-pixel", mm_per_pixel,
                   "scale of the original image");
  meas->add_option("--overlay-out", overlay_out, "overlay PNG path");

  // report
  auto* rep = app.add_subcommand("report", "recompute metrics from a CSV");
  std::string predictions, rep_out;
  rep->add_option("--predictions", predictions, "predictions CSV")->required();
  rep->add_option("--out", rep_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(count, size[0], size[1], seed, out_dir);
    if (*crossval) {
      if (!epochs_s.empty()) overrides["train.epochs"] = epochs_s;
      if (!train_seed_s.empty()) overrides["train.seed"] = train_seed_s;
      if (!model_seed_s.empty()) overrides["model.seed"] = model_seed_s;
      if (!lr0_s.empty()) overrides["train.lr0"] = lr0_s;
      if (!dropout_s.empty()) overrides["model.dropout_rate"] = dropout_s;
      return cmd_crossval(data_dir, config_file, cv_out, run, overrides);
    }
    if (*meas)
      return cmd_measure(checkpoint, image_path, mm_per_pixel, overlay_out);
    if (*rep) return cmd_report(predictions, rep_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
