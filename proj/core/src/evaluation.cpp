#include "imgconf/evaluation.hpp"

#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>

#include "imgconf/csv.hpp"
#include "imgconf/errors.hpp"
#include "imgconf/rng.hpp"

namespace imgconf {

Metrics metrics(std::span<const double> estimates, double tau,
                std::span<const double> baseline_estimates) {
  if (estimates.empty() || baseline_estimates.empty()) {
    throw InvalidArgument("metrics: empty estimate vector");
  }
  auto summarize = [tau](std::span<const double> v, double& abs_bias, double& rmse) {
    double sum = 0.0, sq = 0.0;
    for (double e : v) {
      sum += e;
      sq += (e - tau) * (e - tau);
    }
    const double n = static_cast<double>(v.size());
    abs_bias = std::abs(sum / n - tau);
    rmse = std::sqrt(sq / n);
    return sum / n;
  };
  Metrics m;
  const double mean = summarize(estimates, m.abs_bias, m.rmse);
  double base_bias = 0.0, base_rmse = 0.0;
  summarize(baseline_estimates, base_bias, base_rmse);
  if (base_bias == 0.0 || base_rmse == 0.0) {
    throw DegenerateData("metrics: degenerate baseline (zero absolute bias or RMSE)");
  }
  m.rel_abs_bias = m.abs_bias / base_bias;
  m.rel_rmse = m.rmse / base_rmse;
  if (estimates.size() > 1) {
    double ss = 0.0;
    for (double e : estimates) ss += (e - mean) * (e - mean);
    const double n = static_cast<double>(estimates.size());
    m.mc_se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return m;
}

void GridSpec::validate() const {
  synth.validate();
  dgp.validate();
  train.validate();
  clip.validate();
  if (est_kernel_widths.empty() || resolution_factors.empty() || noise_sigmas.empty()) {
    throw InvalidArgument("grid: kernel widths, resolution factors and noise levels must be nonempty");
  }
  for (std::size_t k : est_kernel_widths)
    if (k == 0 || k % 2 == 0) {
      throw InvalidArgument("grid: kernel width must be odd, got " + std::to_string(k));
    }
  for (double f : resolution_factors)
    if (!(f > 0.0 && f <= 1.0)) {
      throw InvalidArgument("grid: resolution factor must lie in (0, 1], got " + std::to_string(f));
    }
  for (double s : noise_sigmas)
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw InvalidArgument("grid: noise sigma must be finite and >= 0");
    }
  if (replicates < 1) throw InvalidArgument("grid: replicates must be >= 1");
  if (scenes_per_replicate < 2) throw InvalidArgument("grid: need at least 2 scenes per replicate");
  if (true_filter.channels() != synth.channels) {
    throw InvalidArgument("grid: true filter has " + std::to_string(true_filter.channels()) +
                          " channels, scenes have " + std::to_string(synth.channels));
  }
  if (true_filter.width() > synth.height || true_filter.width() > synth.width) {
    throw InvalidArgument("grid: true filter wider than the scenes");
  }
}

const EvalRow* EvalReport::find(std::size_t kernel_width, double resolution_factor,
                                double noise_sigma, const std::string& estimator) const {
  for (const auto& r : rows)
    if (r.kernel_width == kernel_width && r.resolution_factor == resolution_factor &&
        r.noise_sigma == noise_sigma && r.estimator == estimator) {
      return &r;
    }
  return nullptr;
}

namespace {

constexpr std::array<const char*, 4> kEstimators{"dim", "ht", "hajek", "oracle_hajek"};

struct Cell {
  std::size_t noise_index;
  std::size_t factor_index;
  std::size_t kernel_width;
};

struct Outcome {
  std::optional<std::array<double, 4>> estimates;
  std::string failure;
};

// One replicate at one noise level, across every cell of that noise level.
void run_item(const GridSpec& spec, const std::vector<Cell>& cells, int r, std::size_t q,
              std::vector<Outcome>& out) {
  const auto rep = static_cast<std::uint64_t>(r);
  auto fail_all = [&](const std::string& why) {
    for (std::size_t c = 0; c < cells.size(); ++c)
      if (cells[c].noise_index == q) out[c].failure = why;
  };

  SynthParams synth = spec.synth;
  synth.seed = derive_key(spec.master_seed, {stream_tag::kGrid, stream_tag::kScene, rep});
  std::vector<Raster> scenes;
  scenes.reserve(spec.scenes_per_replicate);
  for (std::size_t i = 0; i < spec.scenes_per_replicate; ++i) scenes.push_back(synth_scene(synth, i));

  // The noise stream does not depend on the noise level, so levels differ
  // only in scale.
  ConfounderSpec conf{spec.true_filter, spec.noise_sigmas[q],
                      derive_key(spec.master_seed, {stream_tag::kGrid, stream_tag::kConfounderNoise, rep})};
  DGPConfig dgp = spec.dgp;
  dgp.seed = derive_key(spec.master_seed, {stream_tag::kGrid, stream_tag::kTreatment, rep});
  std::vector<SceneRecord> records;
  try {
    records = generate_dataset(scenes, conf, dgp);
  } catch (const DegenerateData& e) {
    fail_all(std::string("degenerate data: ") + e.what());
    return;
  }
  std::vector<int> t;
  std::vector<double> y, p_true;
  for (const auto& rec : records) {
    t.push_back(rec.t);
    y.push_back(rec.y);
    p_true.push_back(rec.p_true);
  }

  std::optional<double> dim, oracle;
  try {
    dim = diff_in_means(t, y);
    oracle = ipw_hajek(t, y, p_true, spec.clip);
  } catch (const DegenerateData& e) {
    fail_all(std::string("degenerate data: ") + e.what());
    return;
  }

  std::size_t cached_factor = spec.resolution_factors.size();
  std::vector<Raster> images;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const Cell& cell = cells[c];
    if (cell.noise_index != q) continue;
    const double factor = spec.resolution_factors[cell.factor_index];
    if (cell.factor_index != cached_factor) {
      images.clear();
      for (const Raster& s : scenes) images.push_back(downsample(s, factor));
      cached_factor = cell.factor_index;
    }
    TrainConfig tc = spec.train;
    tc.seed = derive_key(spec.master_seed,
                         {stream_tag::kGrid, stream_tag::kInit, rep, q, cell.kernel_width,
                          std::bit_cast<std::uint64_t>(factor)});
    try {
      const TrainResult fit = train(images, t, ConvNetSpec::simulation(cell.kernel_width), tc);
      const std::vector<double> pi_hat = predict_batch(fit.model, images);
      out[c].estimates = std::array<double, 4>{*dim, ipw_ht(t, y, pi_hat, spec.clip),
                                               ipw_hajek(t, y, pi_hat, spec.clip), *oracle};
    } catch (const DivergenceError& e) {
      out[c].failure = "divergence at epoch " + std::to_string(e.epoch());
    } catch (const DegenerateData& e) {
      out[c].failure = std::string("degenerate data: ") + e.what();
    }
  }
}

}  // namespace

EvalReport run_grid(const GridSpec& spec, std::size_t jobs, const GridProgress& progress) {
  spec.validate();
  EvalReport report;

  std::vector<Cell> cells;
  for (std::size_t q = 0; q < spec.noise_sigmas.size(); ++q)
    for (std::size_t f = 0; f < spec.resolution_factors.size(); ++f)
      for (std::size_t k : spec.est_kernel_widths) {
        const double factor = spec.resolution_factors[f];
        const Shape shape{downsampled_extent(spec.synth.height, factor),
                          downsampled_extent(spec.synth.width, factor), spec.synth.channels};
        if (!ConvNetSpec::simulation(k).fits(shape)) {
          if (q == 0) {
            report.skipped.push_back(
                {k, factor,
                 "kernel width " + std::to_string(k) + " exceeds " + std::to_string(shape.height) +
                     "x" + std::to_string(shape.width) + " downsampled image"});
          }
          continue;
        }
        cells.push_back({q, f, k});
      }

  const std::size_t R = static_cast<std::size_t>(spec.replicates);
  const std::size_t Q = spec.noise_sigmas.size();
  const std::size_t total = R * Q;
  std::vector<std::vector<Outcome>> results(R, std::vector<Outcome>(cells.size()));

  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex mu;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t item = next.fetch_add(1);
      if (item >= total) return;
      {
        std::lock_guard lock(mu);
        if (error) return;
      }
      const std::size_t r = item / Q, q = item % Q;
      try {
        run_item(spec, cells, static_cast<int>(r), q, results[r]);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        return;
      }
      std::lock_guard lock(mu);
      ++done;
      if (progress) progress(done, total);
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, total));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  for (std::size_t c = 0; c < cells.size(); ++c) {
    const Cell& cell = cells[c];
    const double factor = spec.resolution_factors[cell.factor_index];
    const double sigma = spec.noise_sigmas[cell.noise_index];
    std::array<std::vector<double>, 4> est;
    for (std::size_t r = 0; r < R; ++r) {
      const Outcome& o = results[r][c];
      if (o.estimates) {
        for (std::size_t e = 0; e < 4; ++e) est[e].push_back((*o.estimates)[e]);
      } else {
        report.failures.push_back({cell.kernel_width, factor, sigma, static_cast<int>(r), o.failure});
      }
    }
    if (est[0].empty()) {
      report.skipped.push_back({cell.kernel_width, factor,
                                "every replicate failed at noise_sigma " + csv::format_double(sigma)});
      continue;
    }
    for (std::size_t e = 0; e < 4; ++e) {
      report.rows.push_back({cell.kernel_width, factor, sigma, kEstimators[e],
                             metrics(est[e], spec.dgp.tau, est[0]),
                             static_cast<int>(est[e].size())});
    }
  }
  return report;
}

void write_report(std::ostream& out, const EvalReport& report) {
  out << "kernel_width,resolution_factor,noise_sigma,estimator,abs_bias,rmse,rel_abs_bias,"
         "rel_rmse,n_reps,mc_se\n";
  for (const auto& r : report.rows) {
    out << r.kernel_width << ',' << csv::format_double(r.resolution_factor) << ','
        << csv::format_double(r.noise_sigma) << ',' << r.estimator << ','
        << csv::format_double(r.m.abs_bias) << ',' << csv::format_double(r.m.rmse) << ','
        << csv::format_double(r.m.rel_abs_bias) << ',' << csv::format_double(r.m.rel_rmse) << ','
        << r.n_reps << ',' << csv::format_double(r.m.mc_se) << '\n';
  }
}

void write_skipped(std::ostream& out, const EvalReport& report) {
  out << "kernel_width,resolution_factor,reason\n";
  for (const auto& s : report.skipped) {
    out << s.kernel_width << ',' << csv::format_double(s.resolution_factor) << ',' << s.reason
        << '\n';
  }
}

void write_failures(std::ostream& out, const EvalReport& report) {
  out << "kernel_width,resolution_factor,noise_sigma,replicate,reason\n";
  for (const auto& f : report.failures) {
    out << f.kernel_width << ',' << csv::format_double(f.resolution_factor) << ','
        << csv::format_double(f.noise_sigma) << ',' << f.replicate << ',' << f.reason << '\n';
  }
}

}  // namespace imgconf
