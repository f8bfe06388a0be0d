#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "imgconf/confounder.hpp"
#include "imgconf/dgp.hpp"
#include "imgconf/estimators.hpp"
#include "imgconf/propensity.hpp"
#include "imgconf/raster.hpp"

namespace imgconf {

struct Metrics {
  double abs_bias = 0.0;
  double rmse = 0.0;
  double rel_abs_bias = 0.0;
  double rel_rmse = 0.0;
  double mc_se = 0.0;  // sample sd / sqrt(R); 0 when R = 1
};

// Monte Carlo accuracy of `estimates` for target tau, relative to the same
// replicates of a baseline estimator. Throws DegenerateData when the
// baseline's absolute bias or RMSE is exactly zero.
Metrics metrics(std::span<const double> estimates, double tau,
                std::span<const double> baseline_estimates);

struct GridSpec {
  SynthParams synth;  // scene generator; synth.seed is ignored
  KernelFilter true_filter = KernelFilter::diagonal(9);
  std::vector<std::size_t> est_kernel_widths{5, 7, 9, 11, 13};
  std::vector<double> resolution_factors{1.0, 0.5, 0.25, 0.12};
  std::vector<double> noise_sigmas{0.0};
  int replicates = 200;
  std::size_t scenes_per_replicate = 500;
  DGPConfig dgp;    // dgp.seed is ignored
  TrainConfig train;  // train.seed is ignored
  Clip clip;
  std::uint64_t master_seed = 1;

  void validate() const;
};

struct EvalRow {
  std::size_t kernel_width = 0;
  double resolution_factor = 1.0;
  double noise_sigma = 0.0;
  std::string estimator;  // dim, ht, hajek, oracle_hajek
  Metrics m;
  int n_reps = 0;
};

struct SkippedCell {
  std::size_t kernel_width = 0;
  double resolution_factor = 1.0;
  std::string reason;
};

// A replicate dropped from one cell, with the reason.
struct ReplicateFailure {
  std::size_t kernel_width = 0;
  double resolution_factor = 1.0;
  double noise_sigma = 0.0;
  int replicate = 0;
  std::string reason;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<SkippedCell> skipped;
  std::vector<ReplicateFailure> failures;

  // nullptr if the row is absent.
  const EvalRow* find(std::size_t kernel_width, double resolution_factor, double noise_sigma,
                      const std::string& estimator) const;
};

// Called after every finished (replicate, noise level) work item.
using GridProgress = std::function<void(std::size_t done, std::size_t total)>;

// Monte Carlo over every (noise, factor, width) cell. Replicate r generates
// its scenes, confounders, treatments and outcomes once from streams derived
// from (master_seed, r); every cell reuses them, and each cell's propensity
// fit draws from its own stream. The report depends only on the spec, not
// on `jobs`.
EvalReport run_grid(const GridSpec& spec, std::size_t jobs = 1,
                    const GridProgress& progress = {});

// kernel_width,resolution_factor,noise_sigma,estimator,abs_bias,rmse,
// rel_abs_bias,rel_rmse,n_reps,mc_se
void write_report(std::ostream& out, const EvalReport& report);
void write_skipped(std::ostream& out, const EvalReport& report);
void write_failures(std::ostream& out, const EvalReport& report);

}  // namespace imgconf
