#pragma once

#include <string>
#include <vector>

#include "tra/measure.hpp"

namespace tra {

struct EvalPair {
  std::string image_id;
  MeasurementLine predicted;
  MeasurementLine truth;  // truth.length_px must be > 0
};

struct MetricsReport {
  int64_t n = 0;
  double mae = 0.0;
  double sigma = 0.0;  // population std of per-fold MAEs (0 for one fold)
  double mwa_mean = 0.0;
  double mwa_p50 = 0.0, mwa_p75 = 0.0, mwa_p95 = 0.0;
  double t_score = 0.0;
  double degrees_of_freedom = 0.0;
  double p_value = 0.0;
  double mean_difference = 0.0;
  bool t_test_valid = false;  // false when differences have zero variance

  // Flat key-value serialization; fixed field names.
  std::string to_key_value() const;
  static std::string csv_header();
  std::string to_csv_row(const std::string& label) const;
};

// Mean Euclidean endpoint deviation over all 2N endpoints (top matched to
// top, bottom to bottom), in pixels. Throws on an empty list.
double mae(const std::vector<EvalPair>& pairs);

// Population standard deviation of per-fold MAE values; needs >= 2 folds.
double sigma(const std::vector<double>& fold_maes);

// Per-pair relative length errors in percent:
// |(len(truth) - len(pred)) / len(truth)| * 100.
std::vector<double> mwa_errors(const std::vector<EvalPair>& pairs);

// Linear interpolation between closest ranks on sorted values.
double percentile(std::vector<double> values, double q);

struct TTestResult {
  double t_score = 0.0;
  double df = 0.0;
  double p_value = 0.0;
  double mean_difference = 0.0;
};

// Paired two-tailed Student t-test of a vs b. Throws on length mismatch,
// n < 2, or zero variance of the differences.
TTestResult paired_t_test(const std::vector<double>& a,
                          const std::vector<double>& b);

// Two-tailed p-value for a given t and df, via the regularized incomplete
// beta function.
double student_t_two_tailed_p(double t, double df);

// Assembles a report from pooled pairs plus per-fold MAEs (for sigma) and
// paired thickness lists (for the t-test; skipped when degenerate).
MetricsReport build_report(const std::vector<EvalPair>& pairs,
                           const std::vector<double>& fold_maes);

}  // namespace tra
