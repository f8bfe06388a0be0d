#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "imgconf/confounder.hpp"
#include "imgconf/dgp.hpp"
#include "imgconf/errors.hpp"
#include "imgconf/estimators.hpp"
#include "imgconf/evaluation.hpp"
#include "imgconf/propensity.hpp"
#include "imgconf/raster.hpp"

namespace imgconf::cli {

// Flat key=value run configuration. One `seed` drives every component;
// the components separate their streams internally.
struct RunConfig {
  std::uint64_t seed = 1;

  SynthParams synth;
  std::size_t confounder_kernel_width = 9;  // true diagonal filter
  double confounder_noise_sigma = 0.0;
  DGPConfig dgp;
  std::size_t scenes = 0;

  std::string model_preset = "simulation";  // or "application"
  std::size_t model_kernel_width = 9;
  double resolution_factor = 1.0;  // applied to images before train/estimate/salience
  TrainConfig train;

  Clip clip;
  bool salience_normalize = false;

  std::vector<std::size_t> grid_widths{5, 7, 9, 11, 13};
  std::vector<double> grid_factors{1.0, 0.5, 0.25, 0.12};
  std::vector<double> grid_noise_sigmas{0.0};
  int grid_replicates = 200;
  std::size_t grid_scenes = 500;

  // Keys that appeared in the file.
  std::set<std::string> given;

  ConfounderSpec confounder_spec() const;
  ConvNetSpec convnet_spec() const;
  TrainConfig train_config() const;  // train with seed applied
  GridSpec grid_spec() const;
};

// What a command needs beyond the always-valid defaults.
enum class Requirement { simulate, train, estimate, salience, grid };

// Parses `text`; unknown or duplicate keys, unparsable values, missing
// required keys and invariant violations are all collected into one
// ConfigError.
RunConfig parse_config(std::string_view text, Requirement req);
RunConfig load_config(const std::filesystem::path& path, Requirement req);
// Defaults only, still validated (for commands run without --config).
RunConfig default_config(Requirement req);

// Re-validates after flag overrides.
void validate(const RunConfig& cfg, Requirement req);

// Every key with its resolved value, sorted, one `key=value` per line.
std::string canonical_text(const RunConfig& cfg);
// FNV-1a 64 of canonical_text, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

std::vector<std::string> known_keys();

}  // namespace imgconf::cli
