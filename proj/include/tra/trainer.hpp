#pragma once

#include "tra/data.hpp"
#include "tra/metrics.hpp"
#include "tra/model.hpp"

namespace tra {

struct TrainConfig {
  int epochs = 100;
  static constexpr int batch_size = 1;  // the loss machinery is per-image
  double lr0 = 1e-4;
  double lr_decay = 0.1;
  int lr_step = 30;  // epochs between decays
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 10.0;  // global-norm gradient clip; 0 disables
  uint64_t seed = 0;
  int report_interval = 1;  // epochs between progress lines on stderr
};

struct OptimizerState {
  std::vector<Tensor> m, v;  // first/second moment accumulators
  int64_t t = 0;

  static OptimizerState init(const std::vector<Tensor>& params);
};

// Standard Adam update with bias correction; reads each param's grad.
void adam_step(std::vector<Tensor>& params, OptimizerState& state, double lr,
               const TrainConfig& cfg);

// lr0 * decay^floor(epoch / step).
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  double mean_train_loss = 0.0;
  double li = 0.0, lp = 0.0, ls = 0.0, lf = 0.0;
  double val_mwa_mean = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
};

struct FoldResult {
  Model model;  // checkpoint with best validation MWA mean
  std::vector<EpochLog> log;
};

struct PredictionRow {
  std::string id;
  int fold = 0;
  bool ok = false;
  MeasurementLine predicted, truth;
  double mwa_pct = 0.0;
};

struct FoldEval {
  std::vector<EvalPair> pairs;       // non-degenerate samples only
  std::vector<PredictionRow> rows;   // every sample, including degenerates
  int degenerate_count = 0;
  MetricsReport report;
};

// Per-epoch: seeded shuffle, per-sample preprocess -> augment -> forward ->
// lcfcn loss -> backward -> adam step; validation (no augmentation) after
// each epoch. Throws with a sub-loss breakdown on a non-finite loss.
FoldResult train_fold(Model model, const std::vector<const Sample*>& train,
                      const std::vector<const Sample*>& val,
                      const TrainConfig& cfg);

FoldEval evaluate_fold(const Model& model,
                       const std::vector<const Sample*>& test, int fold);

struct CrossValResult {
  FoldPlan plan;
  std::vector<FoldResult> folds;
  std::vector<FoldEval> evals;
  MetricsReport pooled;
  int total_degenerate = 0;
  double degenerate_rate = 0.0;
};

// Full k-fold driver. Distinct folds may run on up to `jobs` threads; the
// result is independent of the schedule.
CrossValResult cross_validate(const std::vector<Sample>& dataset, int k,
                              const ModelConfig& model_cfg,
                              const TrainConfig& train_cfg, int jobs = 1);

}  // namespace tra
