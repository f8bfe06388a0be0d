#include "imgconf/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "imgconf/errors.hpp"

namespace imgconf {

namespace {

void check_lengths(std::size_t n, std::size_t m, const char* what) {
  if (n != m) {
    throw InvalidArgument(std::string(what) + ": length mismatch (" + std::to_string(n) +
                          " vs " + std::to_string(m) + ")");
  }
}

void check_binary(std::span<const int> t, const char* what) {
  for (int v : t)
    if (v != 0 && v != 1) throw InvalidArgument(std::string(what) + ": treatment must be 0 or 1");
}

void check_propensities(std::span<const double> pi, const char* what) {
  for (double p : pi)
    if (!(p >= 0.0 && p <= 1.0)) {
      throw InvalidArgument(std::string(what) + ": propensity outside [0, 1]");
    }
}

}  // namespace

void Clip::validate() const {
  if (!(lo > 0.0 && lo < hi && hi < 1.0)) {
    throw InvalidArgument("clip: need 0 < lo < hi < 1, got [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
  }
}

double diff_in_means(std::span<const int> t, std::span<const double> y) {
  check_lengths(t.size(), y.size(), "diff_in_means");
  check_binary(t, "diff_in_means");
  double s1 = 0.0, s0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == 1) {
      s1 += y[i];
      ++n1;
    } else {
      s0 += y[i];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) throw DegenerateData("diff_in_means: empty treatment group");
  return s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0);
}

double ipw_ht(std::span<const int> t, std::span<const double> y, std::span<const double> pi_hat,
              const Clip& clip) {
  check_lengths(t.size(), y.size(), "ipw_ht");
  check_lengths(t.size(), pi_hat.size(), "ipw_ht");
  check_binary(t, "ipw_ht");
  check_propensities(pi_hat, "ipw_ht");
  clip.validate();
  if (t.empty()) throw InvalidArgument("ipw_ht: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double p = std::clamp(pi_hat[i], clip.lo, clip.hi);
    sum += t[i] == 1 ? y[i] / p : -y[i] / (1.0 - p);
  }
  return sum / static_cast<double>(t.size());
}

double ipw_hajek(std::span<const int> t, std::span<const double> y,
                 std::span<const double> pi_hat, const Clip& clip) {
  check_lengths(t.size(), y.size(), "ipw_hajek");
  check_lengths(t.size(), pi_hat.size(), "ipw_hajek");
  check_binary(t, "ipw_hajek");
  check_propensities(pi_hat, "ipw_hajek");
  clip.validate();
  double num1 = 0.0, den1 = 0.0, num0 = 0.0, den0 = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double p = std::clamp(pi_hat[i], clip.lo, clip.hi);
    if (t[i] == 1) {
      num1 += y[i] / p;
      den1 += 1.0 / p;
    } else {
      num0 += y[i] / (1.0 - p);
      den0 += 1.0 / (1.0 - p);
    }
  }
  if (den1 == 0.0 || den0 == 0.0) throw DegenerateData("ipw_hajek: empty treatment group");
  return num1 / den1 - num0 / den0;
}

Balance balance_diagnostics(std::span<const int> t,
                            std::span<const std::vector<double>> covariates,
                            std::span<const double> pi_hat, const Clip& clip) {
  check_lengths(t.size(), covariates.size(), "balance_diagnostics");
  check_lengths(t.size(), pi_hat.size(), "balance_diagnostics");
  check_binary(t, "balance_diagnostics");
  check_propensities(pi_hat, "balance_diagnostics");
  clip.validate();
  if (t.empty()) throw InvalidArgument("balance_diagnostics: empty input");
  const std::size_t k = covariates[0].size();
  for (const auto& row : covariates) check_lengths(k, row.size(), "balance_diagnostics row");

  std::vector<double> raw1(k, 0.0), raw0(k, 0.0), w1(k, 0.0), w0(k, 0.0);
  double n1 = 0.0, n0 = 0.0, sw1 = 0.0, sw0 = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double p = std::clamp(pi_hat[i], clip.lo, clip.hi);
    const bool treated = t[i] == 1;
    const double w = treated ? 1.0 / p : 1.0 / (1.0 - p);
    auto& raw = treated ? raw1 : raw0;
    auto& wsum = treated ? w1 : w0;
    (treated ? n1 : n0) += 1.0;
    (treated ? sw1 : sw0) += w;
    for (std::size_t j = 0; j < k; ++j) {
      raw[j] += covariates[i][j];
      wsum[j] += w * covariates[i][j];
    }
  }
  if (n1 == 0.0 || n0 == 0.0) throw DegenerateData("balance_diagnostics: empty treatment group");
  Balance b;
  b.raw_diff.resize(k);
  b.weighted_diff.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    b.raw_diff[j] = raw1[j] / n1 - raw0[j] / n0;
    b.weighted_diff[j] = w1[j] / sw1 - w0[j] / sw0;
  }
  return b;
}

}  // namespace imgconf
