#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "imgconf_cli/config.hpp"

namespace imgconf::cli {

namespace fs = std::filesystem;

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kDataError = 3;
inline constexpr int kDivergence = 4;

// out/manifest.csv, out/rasters/scene_NNNNN.rst, out/groundtruth.txt
void cmd_simulate(const RunConfig& cfg, const fs::path& out);
// out/model.ckpt, out/loss_trace.csv and out/manifest.csv with pi_hat
void cmd_train(const RunConfig& cfg, const fs::path& manifest, const fs::path& out);
// out/estimates.csv (dim, ht, hajek) and out/balance.csv. Uses the
// manifest's pi_hat column unless a model is given.
void cmd_estimate(const RunConfig& cfg, const fs::path& manifest,
                  const std::optional<fs::path>& model, const fs::path& out);
// out/salience/scene_N.rst and scene_N.csv per scene
void cmd_salience(const RunConfig& cfg, const fs::path& manifest, const fs::path& model,
                  const fs::path& out);
// out/report.csv, out/skipped_cells.csv, out/replicate_failures.csv.
// Progress lines go to `progress` when given.
void cmd_grid(const RunConfig& cfg, std::size_t jobs, const fs::path& out,
              std::ostream* progress = nullptr);

// Full command line, in process. Returns the exit code; diagnostics go to
// `err`, progress and summaries to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace imgconf::cli
