#include "tra/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

namespace tra {

OptimizerState OptimizerState::init(const std::vector<Tensor>& params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, OptimizerState& state, double lr,
               const TrainConfig& cfg) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state/parameter count mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, state.t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, state.t);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (p.shape() != state.m[i].shape())
      throw std::invalid_argument("adam_step: moment shape mismatch");
    const double* g = p.grad();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    double* pv = p.data();
    for (int64_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g[j];
      v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      pv[j] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
    }
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  return cfg.lr0 * std::pow(cfg.lr_decay, epoch / cfg.lr_step);
}

namespace {

void clip_gradients(std::vector<Tensor>& params, double clip_norm) {
  if (clip_norm <= 0.0) return;
  double sq = 0.0;
  for (auto& p : params) {
    const double* g = p.grad();
    for (int64_t j = 0; j < p.size(); ++j) sq += g[j] * g[j];
  }
  const double norm = std::sqrt(sq);
  if (norm <= clip_norm) return;
  const double scale = clip_norm / norm;
  for (auto& p : params) {
    double* g = p.grad();
    for (int64_t j = 0; j < p.size(); ++j) g[j] *= scale;
  }
}

MeasurementLine truth_line(const Preprocessed& pre) {
  return make_line(pre.top_row, pre.top_col, pre.bottom_row, pre.bottom_col);
}

// Validation MWA mean and MAE over non-degenerate samples. Checkpoint
// selection prefers fewer degenerate samples before a lower MWA mean, so an
// epoch that measures one sample well cannot beat one that measures all.
struct ValScore {
  double mwa_mean = std::numeric_limits<double>::infinity();
  double mae_val = std::numeric_limits<double>::infinity();
  int degenerate = std::numeric_limits<int>::max();

  bool better_than(const ValScore& o) const {
    if (degenerate != o.degenerate) return degenerate < o.degenerate;
    return mwa_mean < o.mwa_mean;
  }
};

ValScore validate(const Model& model, const std::vector<const Sample*>& val) {
  std::vector<EvalPair> pairs;
  int degen = 0;
  for (const Sample* s : val) {
    const auto pre = preprocess(*s, model.config.height, model.config.width);
    const auto probs = model.predict_probs(pre.input);
    const auto res = measure(probs, std::nullopt);
    if (res.status != MeasureStatus::kOk) {
      ++degen;
      continue;
    }
    EvalPair p;
    p.image_id = s->id;
    p.predicted = res.line;
    p.truth = truth_line(pre);
    pairs.push_back(std::move(p));
  }
  ValScore score;
  score.degenerate = degen;
  if (pairs.empty()) return score;
  const auto errors = mwa_errors(pairs);
  double mean = 0.0;
  for (double e : errors) mean += e;
  score.mwa_mean = mean / static_cast<double>(errors.size());
  score.mae_val = mae(pairs);
  return score;
}

}  // namespace

FoldResult train_fold(Model model, const std::vector<const Sample*>& train,
                      const std::vector<const Sample*>& val,
                      const TrainConfig& cfg) {
  if (train.empty())
    throw std::invalid_argument("train_fold: empty training set");
  FoldResult result;
  if (cfg.epochs == 0) {
    result.model = std::move(model);
    return result;
  }

  const int H = model.config.height, W = model.config.width;
  std::mt19937_64 rng(cfg.seed);
  OptimizerState opt = OptimizerState::init(model.params);
  Model best = model.clone();
  ValScore best_score;
  bool have_best = false;

  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, li = 0.0, lp = 0.0, ls = 0.0, lf = 0.0;

    for (int idx : order) {
      const Sample& s = *train[idx];
      const auto pre = preprocess(s, H, W);
      const auto aug = augment(pre.resized01, rng);
      Tensor input({H, W, 1});
      for (int64_t i = 0; i < input.size(); ++i)
        input[i] = normalize_intensity(aug[i]);

      Tape tape;
      Tensor logits = model.forward(&tape, input, true, &rng);
      ProbabilityMap probs = softmax_channels(&tape, logits);
      LossBreakdown bd;
      Tensor loss = lcfcn_loss(&tape, probs, pre.ann, &bd);
      if (!std::isfinite(bd.total)) {
        std::ostringstream os;
        os << "train_fold: non-finite loss at epoch " << epoch << ", sample "
           << s.id << " (L_I=" << bd.image << " L_P=" << bd.point
           << " L_S=" << bd.split << " L_F=" << bd.false_positive << ")";
        throw std::runtime_error(os.str());
      }
      for (auto& p : model.params) p.zero_grad();
      tape.backward(loss);
      clip_gradients(model.params, cfg.clip_norm);
      adam_step(model.params, opt, lr, cfg);

      loss_sum += bd.total;
      li += bd.image;
      lp += bd.point;
      ls += bd.split;
      lf += bd.false_positive;
    }

    const double n = static_cast<double>(train.size());
    const ValScore vs = validate(model, val);
    EpochLog log;
    log.epoch = epoch;
    log.mean_train_loss = loss_sum / n;
    log.li = li / n;
    log.lp = lp / n;
    log.ls = ls / n;
    log.lf = lf / n;
    log.val_mwa_mean = vs.mwa_mean;
    log.val_mae = vs.mae_val;
    log.lr = lr;
    result.log.push_back(log);

    if (!std::isinf(vs.mwa_mean) && vs.better_than(best_score)) {
      best_score = vs;
      have_best = true;
      best = model.clone();
    }
    if (cfg.report_interval > 0 && epoch % cfg.report_interval == 0) {
      std::cerr << "epoch " << epoch << " loss " << log.mean_train_loss
                << " val_mwa " << vs.mwa_mean << "\n";
    }
  }

  // Fall back to the final weights when no epoch produced a measurable
  // validation set.
  result.model = have_best ? std::move(best) : std::move(model);
  return result;
}

FoldEval evaluate_fold(const Model& model,
                       const std::vector<const Sample*>& test, int fold) {
  if (test.empty())
    throw std::invalid_argument("evaluate_fold: empty test set");
  FoldEval eval;
  for (const Sample* s : test) {
    const auto pre = preprocess(*s, model.config.height, model.config.width);
    const auto probs = model.predict_probs(pre.input);
    const auto res = measure(probs, std::nullopt);
    PredictionRow row;
    row.id = s->id;
    row.fold = fold;
    row.truth = truth_line(pre);
    if (res.status == MeasureStatus::kOk) {
      row.ok = true;
      row.predicted = res.line;
      row.mwa_pct = std::fabs((row.truth.length_px - res.line.length_px) /
                              row.truth.length_px) *
                    100.0;
      EvalPair p;
      p.image_id = s->id;
      p.predicted = res.line;
      p.truth = row.truth;
      eval.pairs.push_back(std::move(p));
    } else {
      ++eval.degenerate_count;
    }
    eval.rows.push_back(std::move(row));
  }
  eval.report = build_report(eval.pairs, {});
  return eval;
}

CrossValResult cross_validate(const std::vector<Sample>& dataset, int k,
                              const ModelConfig& model_cfg,
                              const TrainConfig& train_cfg, int jobs) {
  if (static_cast<int>(dataset.size()) < k)
    throw std::invalid_argument("cross_validate: dataset smaller than k");

  std::map<std::string, const Sample*> by_id;
  std::vector<std::string> ids;
  for (const auto& s : dataset) {
    if (!by_id.emplace(s.id, &s).second)
      throw std::invalid_argument("cross_validate: duplicate id " + s.id);
    ids.push_back(s.id);
  }
  std::sort(ids.begin(), ids.end());

  CrossValResult result;
  std::mt19937_64 split_rng(train_cfg.seed);
  result.plan = kfold_split(ids, k, split_rng);
  result.folds.resize(k);
  result.evals.resize(k);

  auto run_fold = [&](int f) {
    auto lookup = [&](const std::vector<std::string>& fold_ids) {
      std::vector<const Sample*> out;
      for (const auto& id : fold_ids) out.push_back(by_id.at(id));
      return out;
    };
    ModelConfig mc = model_cfg;
    mc.seed = model_cfg.seed + static_cast<uint64_t>(f);
    TrainConfig tc = train_cfg;
    tc.seed = train_cfg.seed + static_cast<uint64_t>(f);
    std::mt19937_64 model_rng(mc.seed);
    Model model = build_model(mc, model_rng);
    result.folds[f] = train_fold(std::move(model),
                                 lookup(result.plan.train_ids[f]),
                                 lookup(result.plan.val_ids[f]), tc);
    result.evals[f] =
        evaluate_fold(result.folds[f].model, lookup(result.plan.test_ids[f]), f);
  };

  jobs = std::max(1, jobs);
  if (jobs == 1) {
    for (int f = 0; f < k; ++f) run_fold(f);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
    for (int t = 0; t < jobs; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (int f = next.fetch_add(1); f < k; f = next.fetch_add(1))
            run_fold(f);
        } catch (...) {
          errors[static_cast<size_t>(t)] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<EvalPair> pooled_pairs;
  std::vector<double> fold_maes;
  for (int f = 0; f < k; ++f) {
    pooled_pairs.insert(pooled_pairs.end(), result.evals[f].pairs.begin(),
                        result.evals[f].pairs.end());
    if (!result.evals[f].pairs.empty())
      fold_maes.push_back(result.evals[f].report.mae);
    result.total_degenerate += result.evals[f].degenerate_count;
  }
  result.pooled = build_report(pooled_pairs, fold_maes);
  result.degenerate_rate =
      static_cast<double>(result.total_degenerate) /
      static_cast<double>(dataset.size());
  return result;
}

}  // namespace tra
