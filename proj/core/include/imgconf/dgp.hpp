#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "imgconf/confounder.hpp"
#include "imgconf/raster.hpp"
#include "imgconf/rng.hpp"

namespace imgconf {

// Scene-level treatment and outcome model:
//   Pr(T = 1 | U) = logistic(beta * U + eps_w),  eps_w ~ N(0, sigma_w^2)
//   Y = gamma * U + tau * T + eps_y,             eps_y ~ N(0, sigma_y^2)
// The defaults are illustrative simulation constants, not estimates.
struct DGPConfig {
  double beta = 1.0;
  double gamma = 2.0;
  double tau = 1.0;
  double sigma_w = 0.1;
  double sigma_y = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SceneRecord {
  std::int64_t scene_id = 0;
  std::string raster_path;
  double u_true = 0.0;
  double p_true = 0.5;
  int t = 0;
  double y = 0.0;
  std::vector<double> covariates;
};

struct Assignment {
  double p_true;
  int t;
};

double logistic(double z) noexcept;

Assignment assign_treatment(double u, const DGPConfig& cfg, Philox& rng);
double generate_outcome(double u, int t, const DGPConfig& cfg, Philox& rng);

// Confounders from scene_confounders, then per-scene treatment, outcome and
// two uniform covariates. Scene s draws from its own stream keyed by
// (cfg.seed, s), so records do not depend on generation order.
std::vector<SceneRecord> generate_dataset(std::span<const Raster> rasters,
                                          const ConfounderSpec& conf_spec,
                                          const DGPConfig& cfg);

// Same as generate_dataset but with precomputed confounders.
std::vector<SceneRecord> assemble_records(std::span<const double> confounders,
                                          const DGPConfig& cfg);

// Manifest CSV: scene_id,raster_path,t,y,u_true,p_true,cov1,cov2 plus an
// optional trailing pi_hat column.
void write_manifest(std::ostream& out, std::span<const SceneRecord> records,
                    std::span<const double> pi_hat = {});
struct Manifest {
  std::vector<SceneRecord> records;
  std::vector<double> pi_hat;  // empty when the column is absent
};
Manifest read_manifest(std::istream& in);
Manifest load_manifest(const std::filesystem::path& path);

}  // namespace imgconf
