#include "imgconf_cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <system_error>
#include <thread>

#include "imgconf/csv.hpp"
#include "imgconf/errors.hpp"
#include "imgconf/salience.hpp"

namespace imgconf::cli {

namespace {

// Tracks what a command writes so a failed run leaves nothing behind.
class OutputGuard {
 public:
  explicit OutputGuard(const fs::path& dir) : dir_(dir) {
    created_dir_ = !fs::exists(dir_);
    fs::create_directories(dir_);
  }
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    if (created_dir_) {
      fs::remove_all(dir_, ec);
      return;
    }
    for (auto it = written_.rbegin(); it != written_.rend(); ++it) fs::remove_all(*it, ec);
  }

  fs::path path(const fs::path& rel) {
    const fs::path p = dir_ / rel;
    written_.push_back(p);
    return p;
  }
  fs::path subdir(const fs::path& rel) {
    const fs::path p = path(rel);
    fs::create_directories(p);
    return p;
  }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  bool created_dir_ = false;
  bool committed_ = false;
  std::vector<fs::path> written_;
};

void write_file(const fs::path& p, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
  body(out);
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

void write_run_meta(OutputGuard& guard, const char* command, const RunConfig& cfg) {
  write_file(guard.path("run_meta"), [&](std::ostream& o) {
    o << "command=" << command << "\nconfig_hash=" << config_hash(cfg) << "\nseed=" << cfg.seed
      << '\n';
  });
  write_file(guard.path("config.resolved"), [&](std::ostream& o) { o << canonical_text(cfg); });
}

std::string scene_name(std::int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05lld", static_cast<long long>(id));
  return buf;
}

struct LoadedData {
  Manifest manifest;
  std::vector<fs::path> raster_files;  // absolute
  std::vector<Raster> images;          // after resolution scaling
};

LoadedData load_data(const RunConfig& cfg, const fs::path& manifest_path) {
  LoadedData d;
  d.manifest = load_manifest(manifest_path);
  if (d.manifest.records.empty()) throw DegenerateData("manifest has no rows: " + manifest_path.string());
  const fs::path base = fs::absolute(manifest_path).parent_path();
  for (const auto& r : d.manifest.records) {
    fs::path p(r.raster_path);
    if (p.is_relative()) p = base / p;
    d.raster_files.push_back(p.lexically_normal());
    Raster img = load_raster(d.raster_files.back());
    d.images.push_back(cfg.resolution_factor < 1.0 ? downsample(img, cfg.resolution_factor)
                                                   : std::move(img));
  }
  return d;
}

std::vector<int> treatments(const Manifest& m) {
  std::vector<int> t;
  for (const auto& r : m.records) t.push_back(r.t);
  return t;
}

}  // namespace

void cmd_simulate(const RunConfig& cfg, const fs::path& out) {
  validate(cfg, Requirement::simulate);
  OutputGuard guard(out);
  SynthParams sp = cfg.synth;
  sp.seed = cfg.seed;
  DGPConfig dgp = cfg.dgp;
  dgp.seed = cfg.seed;
  const fs::path raster_dir = guard.subdir("rasters");
  std::vector<Raster> scenes;
  scenes.reserve(cfg.scenes);
  for (std::size_t s = 0; s < cfg.scenes; ++s) scenes.push_back(synth_scene(sp, s));
  std::vector<SceneRecord> records = generate_dataset(scenes, cfg.confounder_spec(), dgp);
  for (std::size_t s = 0; s < records.size(); ++s) {
    const std::string name = scene_name(records[s].scene_id) + ".rst";
    save_raster(scenes[s], raster_dir / name);
    records[s].raster_path = "rasters/" + name;
  }
  write_file(guard.path("manifest.csv"), [&](std::ostream& o) { write_manifest(o, records); });
  std::size_t treated = 0;
  for (const auto& r : records) treated += static_cast<std::size_t>(r.t);
  write_file(guard.path("groundtruth.txt"), [&](std::ostream& o) {
    o << "tau=" << csv::format_double(cfg.dgp.tau) << "\nbeta=" << csv::format_double(cfg.dgp.beta)
      << "\ngamma=" << csv::format_double(cfg.dgp.gamma) << "\nconfounder.kernel_width="
      << cfg.confounder_kernel_width << "\nconfounder.noise_sigma="
      << csv::format_double(cfg.confounder_noise_sigma) << "\nscenes=" << records.size()
      << "\ntreated=" << treated << "\nseed=" << cfg.seed << '\n';
  });
  write_run_meta(guard, "simulate", cfg);
  guard.commit();
}

void cmd_train(const RunConfig& cfg, const fs::path& manifest, const fs::path& out) {
  validate(cfg, Requirement::train);
  const LoadedData d = load_data(cfg, manifest);
  OutputGuard guard(out);
  const TrainResult fit = train(d.images, treatments(d.manifest), cfg.convnet_spec(), cfg.train_config());
  const fs::path ckpt = guard.path("model.ckpt");
  save_model(fit.model, ckpt);
  // Predict with the checkpoint as stored (float32) so that a later
  // `estimate --model` reproduces these propensities exactly.
  const PropensityModel stored = load_model(ckpt);
  write_file(guard.path("loss_trace.csv"), [&](std::ostream& o) {
    o << "epoch,loss\n";
    for (std::size_t e = 0; e < fit.loss_trace.size(); ++e) {
      o << e + 1 << ',' << csv::format_double(fit.loss_trace[e]) << '\n';
    }
  });
  const std::vector<double> pi_hat = predict_batch(stored, d.images);
  std::vector<SceneRecord> records = d.manifest.records;
  const fs::path out_abs = fs::absolute(out);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].raster_path = d.raster_files[i].lexically_relative(out_abs).generic_string();
  }
  write_file(guard.path("manifest.csv"), [&](std::ostream& o) { write_manifest(o, records, pi_hat); });
  write_run_meta(guard, "train", cfg);
  guard.commit();
}

void cmd_estimate(const RunConfig& cfg, const fs::path& manifest, const std::optional<fs::path>& model,
                  const fs::path& out) {
  validate(cfg, Requirement::estimate);
  Manifest m;
  std::vector<double> pi_hat;
  if (model) {
    const PropensityModel pm = load_model(*model);
    LoadedData d = load_data(cfg, manifest);
    pi_hat = predict_batch(pm, d.images);
    m = std::move(d.manifest);
  } else {
    m = load_manifest(manifest);
    if (m.pi_hat.empty()) {
      throw InvalidArgument("manifest " + manifest.string() + " has no pi_hat column; pass --model");
    }
    pi_hat = m.pi_hat;
  }
  const std::vector<int> t = treatments(m);
  std::vector<double> y;
  std::vector<std::vector<double>> covariates;
  for (const auto& r : m.records) {
    y.push_back(r.y);
    covariates.push_back(r.covariates);
  }
  const double dim = diff_in_means(t, y);
  const double ht = ipw_ht(t, y, pi_hat, cfg.clip);
  const double hajek = ipw_hajek(t, y, pi_hat, cfg.clip);
  const Balance b = balance_diagnostics(t, covariates, pi_hat, cfg.clip);

  OutputGuard guard(out);
  write_file(guard.path("estimates.csv"), [&](std::ostream& o) {
    o << "estimator,estimate\ndim," << csv::format_double(dim) << "\nht," << csv::format_double(ht)
      << "\nhajek," << csv::format_double(hajek) << '\n';
  });
  write_file(guard.path("balance.csv"), [&](std::ostream& o) {
    o << "covariate,raw_diff,weighted_diff\n";
    for (std::size_t j = 0; j < b.raw_diff.size(); ++j) {
      o << "cov" << j + 1 << ',' << csv::format_double(b.raw_diff[j]) << ','
        << csv::format_double(b.weighted_diff[j]) << '\n';
    }
  });
  write_run_meta(guard, "estimate", cfg);
  guard.commit();
}

void cmd_salience(const RunConfig& cfg, const fs::path& manifest, const fs::path& model,
                  const fs::path& out) {
  validate(cfg, Requirement::salience);
  const PropensityModel pm = load_model(model);
  const LoadedData d = load_data(cfg, manifest);
  OutputGuard guard(out);
  const fs::path dir = guard.subdir("salience");
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    Raster s = salience_map(pm, d.images[i]);
    if (cfg.salience_normalize) s = minmax_normalized(s);
    const std::string name = scene_name(d.manifest.records[i].scene_id);
    save_raster(s, dir / (name + ".rst"));
    write_file(dir / (name + ".csv"), [&](std::ostream& o) { write_salience_csv(o, s); });
  }
  write_run_meta(guard, "salience", cfg);
  guard.commit();
}

void cmd_grid(const RunConfig& cfg, std::size_t jobs, const fs::path& out, std::ostream* progress) {
  validate(cfg, Requirement::grid);
  OutputGuard guard(out);
  std::size_t last_decile = 0;
  const EvalReport report = run_grid(cfg.grid_spec(), jobs, [&](std::size_t done, std::size_t total) {
    if (!progress) return;
    const std::size_t decile = 10 * done / total;
    if (decile > last_decile || done == total) {
      last_decile = decile;
      *progress << "grid: " << done << "/" << total << " replicate work items\n" << std::flush;
    }
  });
  write_file(guard.path("report.csv"), [&](std::ostream& o) { write_report(o, report); });
  write_file(guard.path("skipped_cells.csv"), [&](std::ostream& o) { write_skipped(o, report); });
  write_file(guard.path("replicate_failures.csv"), [&](std::ostream& o) { write_failures(o, report); });
  write_run_meta(guard, "grid", cfg);
  guard.commit();
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulate image-confounded data, fit propensity models and evaluate IPW estimators."};
  app.name("imgconf");
  app.require_subcommand(1);

  struct Options {
    std::string config, out, manifest, model;
    std::uint64_t seed = 0;
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  } opt;
  CLI::Option* seed_opt = nullptr;
  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", opt.config, "key=value run configuration");
    if (needs_config) c->required();
    sub->add_option("--out", opt.out, "output directory")->required();
    seed_opt = sub->add_option("--seed", opt.seed, "overrides the config seed");
  };
  CLI::App* simulate = app.add_subcommand("simulate", "generate scenes, confounders, treatments and outcomes");
  CLI::App* train_cmd = app.add_subcommand("train", "fit a propensity model to a manifest");
  CLI::App* estimate = app.add_subcommand("estimate", "difference-in-means and IPW estimates");
  CLI::App* salience = app.add_subcommand("salience", "per-scene salience maps");
  CLI::App* grid = app.add_subcommand("grid", "Monte Carlo evaluation grid");
  std::vector<std::pair<CLI::App*, CLI::Option*>> seeds;
  for (auto [sub, needs] : {std::pair{simulate, true}, std::pair{train_cmd, false},
                            std::pair{estimate, false}, std::pair{salience, false},
                            std::pair{grid, true}}) {
    common(sub, needs);
    seeds.emplace_back(sub, seed_opt);
  }
  for (CLI::App* sub : {train_cmd, estimate, salience})
    sub->add_option("--manifest", opt.manifest, "dataset manifest CSV")->required();
  salience->add_option("--model", opt.model, "model checkpoint")->required();
  estimate->add_option("--model", opt.model, "predict pi_hat with this checkpoint");
  grid->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "imgconf: " << e.what() << '\n';
    return kConfigError;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::map<CLI::App*, Requirement> reqs{{simulate, Requirement::simulate},
                                              {train_cmd, Requirement::train},
                                              {estimate, Requirement::estimate},
                                              {salience, Requirement::salience},
                                              {grid, Requirement::grid}};
  const Requirement req = reqs.at(sub);
  try {
    RunConfig cfg = opt.config.empty() ? default_config(req) : load_config(opt.config, req);
    for (auto [s, o] : seeds)
      if (s == sub && o->count()) cfg.seed = opt.seed;

    if (sub == simulate) {
      cmd_simulate(cfg, opt.out);
      out << "simulate: wrote " << cfg.scenes << " scenes to " << opt.out << '\n';
    } else if (sub == train_cmd) {
      cmd_train(cfg, opt.manifest, opt.out);
      out << "train: wrote " << (fs::path(opt.out) / "model.ckpt").string() << '\n';
    } else if (sub == estimate) {
      cmd_estimate(cfg, opt.manifest,
                   opt.model.empty() ? std::nullopt : std::optional<fs::path>(opt.model), opt.out);
      out << "estimate: wrote " << (fs::path(opt.out) / "estimates.csv").string() << '\n';
    } else if (sub == salience) {
      cmd_salience(cfg, opt.manifest, opt.model, opt.out);
      out << "salience: wrote maps under " << (fs::path(opt.out) / "salience").string() << '\n';
    } else {
      cmd_grid(cfg, opt.jobs, opt.out, &out);
      out << "grid: wrote " << (fs::path(opt.out) / "report.csv").string() << '\n';
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "imgconf: " << e.what() << '\n';
    return kConfigError;
  } catch (const DivergenceError& e) {
    err << "imgconf: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    err << "imgconf: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace imgconf::cli
