#include "tra/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tra {

double mae(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("mae: empty pair list");
  double acc = 0.0;
  for (const auto& p : pairs) {
    acc += std::hypot(p.predicted.top_row - p.truth.top_row,
                      p.predicted.top_col - p.truth.top_col);
    acc += std::hypot(p.predicted.bottom_row - p.truth.bottom_row,
                      p.predicted.bottom_col - p.truth.bottom_col);
  }
  return acc / (2.0 * static_cast<double>(pairs.size()));
}

double sigma(const std::vector<double>& fold_maes) {
  if (fold_maes.size() < 2)
    throw std::invalid_argument("sigma: needs at least 2 folds");
  double mean = 0.0;
  for (double v : fold_maes) mean += v;
  mean /= static_cast<double>(fold_maes.size());
  double var = 0.0;
  for (double v : fold_maes) var += (v - mean) * (v - mean);
  var /= static_cast<double>(fold_maes.size());
  return std::sqrt(var);
}

std::vector<double> mwa_errors(const std::vector<EvalPair>& pairs) {
  std::vector<double> errors;
  errors.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.truth.length_px <= 0.0)
      throw std::invalid_argument("mwa: zero truth length for image " +
                                  p.image_id);
    errors.push_back(
        std::fabs((p.truth.length_px - p.predicted.length_px) /
                  p.truth.length_px) *
        100.0);
  }
  return errors;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty list");
  if (q < 0.0 || q > 100.0)
    throw std::invalid_argument("percentile: q must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<size_t>(rank);
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

namespace {

// Continued fraction for the regularized incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_two_tailed_p(double t, double df) {
  if (df <= 0.0) throw std::invalid_argument("t-test: df must be positive");
  return reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult paired_t_test(const std::vector<double>& a,
                          const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_t_test: length mismatch");
  const size_t n = a.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: needs n >= 2");
  double mean_d = 0.0;
  for (size_t i = 0; i < n; ++i) mean_d += a[i] - b[i];
  mean_d /= static_cast<double>(n);
  double var = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean_d;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);  // sample variance
  if (var == 0.0)
    throw std::invalid_argument("paired_t_test: zero variance of differences");
  TTestResult res;
  res.mean_difference = mean_d;
  res.df = static_cast<double>(n - 1);
  res.t_score = mean_d / std::sqrt(var / static_cast<double>(n));
  res.p_value = student_t_two_tailed_p(res.t_score, res.df);
  return res;
}

MetricsReport build_report(const std::vector<EvalPair>& pairs,
                           const std::vector<double>& fold_maes) {
  MetricsReport r;
  r.n = static_cast<int64_t>(pairs.size());
  if (pairs.empty()) return r;
  r.mae = mae(pairs);
  r.sigma = fold_maes.size() >= 2 ? sigma(fold_maes) : 0.0;
  const auto errors = mwa_errors(pairs);
  double mean = 0.0;
  for (double e : errors) mean += e;
  r.mwa_mean = mean / static_cast<double>(errors.size());
  r.mwa_p50 = percentile(errors, 50.0);
  r.mwa_p75 = percentile(errors, 75.0);
  r.mwa_p95 = percentile(errors, 95.0);

  std::vector<double> pred_len, true_len;
  for (const auto& p : pairs) {
    pred_len.push_back(p.predicted.length_px);
    true_len.push_back(p.truth.length_px);
  }
  try {
    const auto tt = paired_t_test(pred_len, true_len);
    r.t_score = tt.t_score;
    r.degrees_of_freedom = tt.df;
    r.p_value = tt.p_value;
    r.mean_difference = tt.mean_difference;
    r.t_test_valid = true;
  } catch (const std::invalid_argument&) {
    r.t_test_valid = false;
  }
  return r;
}

std::string MetricsReport::to_key_value() const {
  std::ostringstream os;
  os.precision(17);
  os << "n=" << n << "\n"
     << "mae=" << mae << "\n"
     << "sigma=" << sigma << "\n"
     << "mwa_mean=" << mwa_mean << "\n"
     << "mwa_p50=" << mwa_p50 << "\n"
     << "mwa_p75=" << mwa_p75 << "\n"
     << "mwa_p95=" << mwa_p95 << "\n";
  if (t_test_valid) {
    os << "t_score=" << t_score << "\n"
       << "df=" << degrees_of_freedom << "\n"
       << "p_value=" << p_value << "\n"
       << "mean_diff=" << mean_difference << "\n";
  } else {
    os << "t_score=identical distributions\n"
       << "df=" << degrees_of_freedom << "\n"
       << "p_value=identical distributions\n"
       << "mean_diff=" << mean_difference << "\n";
  }
  return os.str();
}

std::string MetricsReport::csv_header() {
  return "label,n,mae,sigma,mwa_mean,mwa_p50,mwa_p75,mwa_p95,t_score,df,"
         "p_value,mean_diff";
}

std::string MetricsReport::to_csv_row(const std::string& label) const {
  std::ostringstream os;
  os.precision(17);
  os << label << "," << n << "," << mae << "," << sigma << "," << mwa_mean
     << "," << mwa_p50 << "," << mwa_p75 << "," << mwa_p95 << ",";
  if (t_test_valid)
    os << t_score << "," << degrees_of_freedom << "," << p_value << ","
       << mean_difference;
  else
    os << "nan," << degrees_of_freedom << ",nan," << mean_difference;
  return os.str();
}

}  // namespace tra
