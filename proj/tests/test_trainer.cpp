#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tra/trainer.hpp"

using namespace tra;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  cfg.encoder_channels = {4, 6, 8};
  cfg.dropout_rate = 0.0;  // keep the smoke tests noise-free
  cfg.seed = 3;
  return cfg;
}

std::vector<Sample> tiny_dataset(int count, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return synth_generate(count, 64, 64, rng);
}

std::vector<const Sample*> ptrs(const std::vector<Sample>& v) {
  std::vector<const Sample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

}  // namespace

TEST_CASE("adam matches a scalar reference implementation") {
  TrainConfig cfg;
  cfg.lr0 = 0.1;
  std::vector<Tensor> params = {Tensor::from({1}, {1.0}, true)};
  OptimizerState state = OptimizerState::init(params);

  // Hand-rolled scalar Adam tracking the same gradient sequence.
  double theta = 1.0, m = 0.0, v = 0.0;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2, eps = cfg.adam_epsilon;
  const std::vector<double> grads = {0.5, -0.3, 0.9, 0.0, -1.7};
  for (size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    params[0].zero_grad();
    params[0].grad()[0] = g;
    adam_step(params, state, 0.1, cfg);

    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    theta -= 0.1 * mhat / (std::sqrt(vhat) + eps);
    CHECK(std::fabs(params[0][0] - theta) < 1e-12);
  }
}

TEST_CASE("adam_step validates state shape") {
  TrainConfig cfg;
  std::vector<Tensor> params = {Tensor::zeros({2}, true)};
  auto state = OptimizerState::init(params);
  std::vector<Tensor> other = {Tensor::zeros({3}, true),
                               Tensor::zeros({1}, true)};
  CHECK_THROWS(adam_step(other, state, 0.1, cfg));
}

TEST_CASE("learning rate schedule steps by decade") {
  TrainConfig cfg;  // lr0 1e-4, decay 0.1, step 30
  CHECK(lr_at(0, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(29, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(30, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(lr_at(59, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(lr_at(60, cfg) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK_THROWS(lr_at(-1, cfg));
}

TEST_CASE("zero epochs leave the model untouched") {
  std::mt19937_64 rng(61);
  Model m = build_model(tiny_model(), rng);
  const double w0 = m.params[0][0];
  const auto data = tiny_dataset(2, 5);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto result = train_fold(m.clone(), ptrs(data), ptrs(data), cfg);
  CHECK(result.model.params[0][0] == w0);
  CHECK(result.log.empty());
}

TEST_CASE("train_fold rejects an empty training set") {
  std::mt19937_64 rng(62);
  Model m = build_model(tiny_model(), rng);
  const auto data = tiny_dataset(2, 5);
  TrainConfig cfg;
  CHECK_THROWS(train_fold(std::move(m), {}, ptrs(data), cfg));
}

TEST_CASE("two-sample overfit smoke test") {
  // A model trained on two fixed synthetic images must localize their own
  // endpoints to under 5% thickness error within 200 optimization steps.
  ModelConfig mc;
  mc.height = 128;
  mc.width = 128;
  mc.encoder_channels = {8, 12, 16};
  mc.dropout_rate = 0.0;
  std::mt19937_64 rng(63);
  Model m = build_model(mc, rng);
  std::mt19937_64 drng(21);
  const auto data = synth_generate(2, 128, 128, drng);
  TrainConfig cfg;
  cfg.epochs = 100;  // 2 samples per epoch -> 200 steps
  cfg.lr0 = 1e-3;
  cfg.lr_step = 1000;
  cfg.seed = 1;
  cfg.report_interval = 0;
  const auto result = train_fold(m.clone(), ptrs(data), ptrs(data), cfg);
  const auto eval = evaluate_fold(result.model, ptrs(data), 0);
  REQUIRE(eval.degenerate_count == 0);
  REQUIRE(eval.pairs.size() == 2);
  const auto errors = mwa_errors(eval.pairs);
  for (double e : errors) CHECK(e < 5.0);
}

TEST_CASE("training is bit-deterministic") {
  const auto data = tiny_dataset(2, 77);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 9;
  cfg.report_interval = 0;

  auto run = [&] {
    std::mt19937_64 rng(64);
    Model m = build_model(tiny_model(), rng);
    return train_fold(std::move(m), ptrs(data), ptrs(data), cfg);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].mean_train_loss == b.log[i].mean_train_loss);
    CHECK(a.log[i].li == b.log[i].li);
    CHECK(a.log[i].lp == b.log[i].lp);
    CHECK(a.log[i].ls == b.log[i].ls);
    CHECK(a.log[i].lf == b.log[i].lf);
    CHECK(a.log[i].val_mwa_mean == b.log[i].val_mwa_mean);
  }
  for (size_t i = 0; i < a.model.params.size(); ++i)
    for (int64_t j = 0; j < a.model.params[i].size(); ++j)
      CHECK(a.model.params[i][j] == b.model.params[i][j]);
}

TEST_CASE("cross_validate wires folds together") {
  const auto data = tiny_dataset(6, 31);
  ModelConfig mc = tiny_model();
  TrainConfig tc;
  tc.epochs = 1;
  tc.seed = 2;
  tc.report_interval = 0;
  const auto cv = cross_validate(data, 3, mc, tc, 1);
  CHECK(cv.plan.k == 3);
  REQUIRE(cv.folds.size() == 3);
  REQUIRE(cv.evals.size() == 3);
  int rows = 0;
  for (const auto& e : cv.evals) rows += static_cast<int>(e.rows.size());
  CHECK(rows == 6);
  CHECK(cv.pooled.n + cv.total_degenerate == 6);
  CHECK(cv.degenerate_rate ==
        doctest::Approx(cv.total_degenerate / 6.0).epsilon(1e-12));
}

TEST_CASE("cross_validate is schedule-independent across jobs") {
  const auto data = tiny_dataset(6, 31);
  ModelConfig mc = tiny_model();
  TrainConfig tc;
  tc.epochs = 1;
  tc.seed = 2;
  tc.report_interval = 0;
  const auto serial = cross_validate(data, 3, mc, tc, 1);
  const auto threaded = cross_validate(data, 3, mc, tc, 3);
  for (int f = 0; f < 3; ++f) {
    REQUIRE(serial.folds[f].log.size() == threaded.folds[f].log.size());
    CHECK(serial.folds[f].log[0].mean_train_loss ==
          threaded.folds[f].log[0].mean_train_loss);
    CHECK(serial.evals[f].report.mae == threaded.evals[f].report.mae);
  }
  CHECK(serial.pooled.mwa_mean == threaded.pooled.mwa_mean);
}

TEST_CASE("cross_validate rejects duplicate ids and tiny datasets") {
  auto data = tiny_dataset(4, 31);
  ModelConfig mc = tiny_model();
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS(cross_validate(data, 5, mc, tc, 1));
  data.push_back(data[0]);
  CHECK_THROWS(cross_validate(data, 2, mc, tc, 1));
}
