#pragma once

#include <span>
#include <vector>

namespace imgconf {

// Propensities are clamped into [lo, hi] before weighting.
struct Clip {
  double lo = 0.01;
  double hi = 0.99;

  void validate() const;
};

// mean(y | t = 1) - mean(y | t = 0). Throws DegenerateData if a group is empty.
double diff_in_means(std::span<const int> t, std::span<const double> y);

// Horvitz-Thompson: (1/n) sum[t y / pi - (1 - t) y / (1 - pi)].
double ipw_ht(std::span<const int> t, std::span<const double> y, std::span<const double> pi_hat,
              const Clip& clip = {});

// Hajek: the same weights normalised to sum to one within each group.
double ipw_hajek(std::span<const int> t, std::span<const double> y,
                 std::span<const double> pi_hat, const Clip& clip = {});

struct Balance {
  std::vector<double> raw_diff;
  std::vector<double> weighted_diff;
};

// Per-covariate treated-minus-control mean differences, unweighted and with
// Hajek-normalised inverse propensity weights. covariates[i] is the row of
// unit i.
Balance balance_diagnostics(std::span<const int> t,
                            std::span<const std::vector<double>> covariates,
                            std::span<const double> pi_hat, const Clip& clip = {});

}  // namespace imgconf
