#include "imgconf/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "imgconf/csv.hpp"
#include "imgconf/errors.hpp"

namespace imgconf {

namespace {

constexpr const char* kManifestHeader = "scene_id,raster_path,t,y,u_true,p_true,cov1,cov2";
constexpr const char* kManifestHeaderPi = "scene_id,raster_path,t,y,u_true,p_true,cov1,cov2,pi_hat";

}  // namespace

void DGPConfig::validate() const {
  if (!std::isfinite(beta) || !std::isfinite(gamma) || !std::isfinite(tau)) {
    throw InvalidArgument("dgp: beta, gamma and tau must be finite");
  }
  if (!(sigma_w >= 0.0) || !(sigma_y >= 0.0) || !std::isfinite(sigma_w) ||
      !std::isfinite(sigma_y)) {
    throw InvalidArgument("dgp: sigma_w and sigma_y must be finite and >= 0");
  }
}

double logistic(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Assignment assign_treatment(double u, const DGPConfig& cfg, Philox& rng) {
  const double eps_w = cfg.sigma_w * rng.normal();
  double p = logistic(cfg.beta * u + eps_w);
  // Keep p strictly inside (0, 1) when the logit saturates.
  p = std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
  const int t = rng.uniform() < p ? 1 : 0;
  return {p, t};
}

double generate_outcome(double u, int t, const DGPConfig& cfg, Philox& rng) {
  return cfg.gamma * u + cfg.tau * static_cast<double>(t) + cfg.sigma_y * rng.normal();
}

std::vector<SceneRecord> assemble_records(std::span<const double> confounders,
                                          const DGPConfig& cfg) {
  cfg.validate();
  const std::uint64_t treat_key = derive_key(cfg.seed, {stream_tag::kTreatment});
  const std::uint64_t cov_key = derive_key(cfg.seed, {stream_tag::kCovariates});
  std::vector<SceneRecord> records(confounders.size());
  for (std::size_t s = 0; s < confounders.size(); ++s) {
    SceneRecord& rec = records[s];
    rec.scene_id = static_cast<std::int64_t>(s);
    rec.u_true = confounders[s];
    Philox rng(treat_key, s);
    const Assignment a = assign_treatment(rec.u_true, cfg, rng);
    rec.p_true = a.p_true;
    rec.t = a.t;
    rec.y = generate_outcome(rec.u_true, rec.t, cfg, rng);
    Philox cov_rng(cov_key, s);
    rec.covariates = {cov_rng.uniform(), cov_rng.uniform()};
  }
  return records;
}

std::vector<SceneRecord> generate_dataset(std::span<const Raster> rasters,
                                          const ConfounderSpec& conf_spec,
                                          const DGPConfig& cfg) {
  cfg.validate();
  const std::vector<double> u = scene_confounders(rasters, conf_spec);
  return assemble_records(u, cfg);
}

void write_manifest(std::ostream& out, std::span<const SceneRecord> records,
                    std::span<const double> pi_hat) {
  if (!pi_hat.empty() && pi_hat.size() != records.size()) {
    throw InvalidArgument("manifest: pi_hat length does not match records");
  }
  out << (pi_hat.empty() ? kManifestHeader : kManifestHeaderPi) << '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SceneRecord& r = records[i];
    if (r.raster_path.find_first_of(",\n\r") != std::string::npos) {
      throw InvalidArgument("manifest: raster path contains a delimiter: " + r.raster_path);
    }
    out << r.scene_id << ',' << r.raster_path << ',' << r.t << ',' << csv::format_double(r.y)
        << ',' << csv::format_double(r.u_true) << ',' << csv::format_double(r.p_true);
    for (std::size_t c = 0; c < 2; ++c) {
      out << ',';
      if (c < r.covariates.size()) out << csv::format_double(r.covariates[c]);
    }
    if (!pi_hat.empty()) out << ',' << csv::format_double(pi_hat[i]);
    out << '\n';
  }
}

Manifest read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  bool has_pi = false;
  if (line == kManifestHeaderPi) {
    has_pi = true;
  } else if (line != kManifestHeader) {
    throw FormatError("manifest: unexpected header '" + line + "'");
  }
  const std::size_t ncol = has_pi ? 9 : 8;
  Manifest m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = csv::split(line);
    const std::string where = "manifest line " + std::to_string(lineno);
    if (f.size() != ncol) {
      throw FormatError(where + ": expected " + std::to_string(ncol) + " fields, got " +
                        std::to_string(f.size()));
    }
    SceneRecord r;
    r.scene_id = csv::parse_int(f[0], where + " scene_id");
    r.raster_path = f[1];
    const long long t = csv::parse_int(f[2], where + " t");
    if (t != 0 && t != 1) throw FormatError(where + " t: must be 0 or 1");
    r.t = static_cast<int>(t);
    r.y = csv::parse_double(f[3], where + " y");
    r.u_true = csv::parse_double(f[4], where + " u_true");
    r.p_true = csv::parse_double(f[5], where + " p_true");
    if (!(r.p_true > 0.0 && r.p_true < 1.0)) {
      throw FormatError(where + " p_true: must lie in (0, 1)");
    }
    if (f[6].empty() != f[7].empty()) {
      throw FormatError(where + " cov1/cov2: both or neither must be present");
    }
    if (!f[6].empty()) {
      r.covariates = {csv::parse_double(f[6], where + " cov1"),
                      csv::parse_double(f[7], where + " cov2")};
    }
    if (has_pi) {
      const double p = csv::parse_double(f[8], where + " pi_hat");
      if (!(p > 0.0 && p < 1.0)) throw FormatError(where + " pi_hat: must lie in (0, 1)");
      m.pi_hat.push_back(p);
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("manifest: cannot open '" + path.string() + "'");
  return read_manifest(in);
}

}  // namespace imgconf
