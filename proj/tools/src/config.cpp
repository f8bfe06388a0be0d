#include "imgconf_cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "imgconf/csv.hpp"
#include "imgconf/errors.hpp"

namespace imgconf::cli {

namespace {

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Value parsers throw std::invalid_argument with a short reason.
std::uint64_t to_u64(std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::size_t to_size(std::string_view v) { return static_cast<std::size_t>(to_u64(v)); }

int to_int(std::string_view v) {
  const std::uint64_t x = to_u64(v);
  if (x > 1'000'000'000) throw std::invalid_argument("value too large: " + std::string(v));
  return static_cast<int>(x);
}

double to_double(std::string_view v) {
  try {
    return csv::parse_double(v, "value");
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number, got '" + std::string(v) + "'");
  }
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

template <class T, class F>
std::vector<T> to_list(std::string_view v, F parse) {
  std::vector<T> out;
  for (const auto& item : csv::split(v, ',')) out.push_back(parse(trim(item)));
  return out;
}

template <class T, class F>
std::string list_text(const std::vector<T>& xs, F fmt) {
  std::vector<std::string> parts;
  for (const auto& x : xs) parts.push_back(fmt(x));
  return join(parts, ",");
}

std::string num(double v) { return csv::format_double(v); }

struct KeyDef {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, KeyDef>& key_table() {
  static const std::map<std::string, KeyDef> table = [] {
    std::map<std::string, KeyDef> t;
    auto size_key = [&](const char* name, std::size_t RunConfig::*field) {
      t[name] = {[field](RunConfig& c, std::string_view v) { c.*field = to_size(v); },
                 [field](const RunConfig& c) { return std::to_string(c.*field); }};
    };
    auto real_key = [&](const char* name, double RunConfig::*field) {
      t[name] = {[field](RunConfig& c, std::string_view v) { c.*field = to_double(v); },
                 [field](const RunConfig& c) { return num(c.*field); }};
    };
    t["seed"] = {[](RunConfig& c, std::string_view v) { c.seed = to_u64(v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};

    t["synth.height"] = {[](RunConfig& c, std::string_view v) { c.synth.height = to_size(v); },
                         [](const RunConfig& c) { return std::to_string(c.synth.height); }};
    t["synth.width"] = {[](RunConfig& c, std::string_view v) { c.synth.width = to_size(v); },
                        [](const RunConfig& c) { return std::to_string(c.synth.width); }};
    t["synth.channels"] = {[](RunConfig& c, std::string_view v) { c.synth.channels = to_size(v); },
                           [](const RunConfig& c) { return std::to_string(c.synth.channels); }};
    t["synth.correlation_length"] = {
        [](RunConfig& c, std::string_view v) { c.synth.correlation_length = to_double(v); },
        [](const RunConfig& c) { return num(c.synth.correlation_length); }};
    t["synth.amplitude"] = {[](RunConfig& c, std::string_view v) { c.synth.amplitude = to_double(v); },
                            [](const RunConfig& c) { return num(c.synth.amplitude); }};

    size_key("confounder.kernel_width", &RunConfig::confounder_kernel_width);
    real_key("confounder.noise_sigma", &RunConfig::confounder_noise_sigma);

    t["dgp.beta"] = {[](RunConfig& c, std::string_view v) { c.dgp.beta = to_double(v); },
                     [](const RunConfig& c) { return num(c.dgp.beta); }};
    t["dgp.gamma"] = {[](RunConfig& c, std::string_view v) { c.dgp.gamma = to_double(v); },
                      [](const RunConfig& c) { return num(c.dgp.gamma); }};
    t["dgp.tau"] = {[](RunConfig& c, std::string_view v) { c.dgp.tau = to_double(v); },
                    [](const RunConfig& c) { return num(c.dgp.tau); }};
    t["dgp.sigma_w"] = {[](RunConfig& c, std::string_view v) { c.dgp.sigma_w = to_double(v); },
                        [](const RunConfig& c) { return num(c.dgp.sigma_w); }};
    t["dgp.sigma_y"] = {[](RunConfig& c, std::string_view v) { c.dgp.sigma_y = to_double(v); },
                        [](const RunConfig& c) { return num(c.dgp.sigma_y); }};
    size_key("data.scenes", &RunConfig::scenes);

    t["model.preset"] = {[](RunConfig& c, std::string_view v) {
                           if (v != "simulation" && v != "application") {
                             throw std::invalid_argument("expected simulation or application, got '" +
                                                         std::string(v) + "'");
                           }
                           c.model_preset = std::string(v);
                         },
                         [](const RunConfig& c) { return c.model_preset; }};
    size_key("model.kernel_width", &RunConfig::model_kernel_width);
    real_key("model.resolution_factor", &RunConfig::resolution_factor);

    t["train.optimizer"] = {[](RunConfig& c, std::string_view v) {
                              if (v == "sgd") {
                                c.train.optimizer = Optimizer::sgd;
                              } else if (v == "adam_nesterov") {
                                c.train.optimizer = Optimizer::adam_nesterov;
                              } else {
                                throw std::invalid_argument("expected sgd or adam_nesterov, got '" +
                                                            std::string(v) + "'");
                              }
                            },
                            [](const RunConfig& c) { return std::string(to_string(c.train.optimizer)); }};
    t["train.schedule"] = {[](RunConfig& c, std::string_view v) {
                             if (v == "constant") {
                               c.train.lr_schedule = LrSchedule::constant;
                             } else if (v == "cosine") {
                               c.train.lr_schedule = LrSchedule::cosine;
                             } else {
                               throw std::invalid_argument("expected constant or cosine, got '" +
                                                           std::string(v) + "'");
                             }
                           },
                           [](const RunConfig& c) { return std::string(to_string(c.train.lr_schedule)); }};
    t["train.lr"] = {[](RunConfig& c, std::string_view v) { c.train.base_lr = to_double(v); },
                     [](const RunConfig& c) { return num(c.train.base_lr); }};
    t["train.epochs"] = {[](RunConfig& c, std::string_view v) { c.train.epochs = to_int(v); },
                         [](const RunConfig& c) { return std::to_string(c.train.epochs); }};
    t["train.batch_size"] = {[](RunConfig& c, std::string_view v) { c.train.batch_size = to_size(v); },
                             [](const RunConfig& c) { return std::to_string(c.train.batch_size); }};
    t["train.augment_flips"] = {
        [](RunConfig& c, std::string_view v) { c.train.augment_flips = to_bool(v); },
        [](const RunConfig& c) { return std::string(c.train.augment_flips ? "true" : "false"); }};

    t["estimate.clip_lo"] = {[](RunConfig& c, std::string_view v) { c.clip.lo = to_double(v); },
                             [](const RunConfig& c) { return num(c.clip.lo); }};
    t["estimate.clip_hi"] = {[](RunConfig& c, std::string_view v) { c.clip.hi = to_double(v); },
                             [](const RunConfig& c) { return num(c.clip.hi); }};
    t["salience.normalize"] = {
        [](RunConfig& c, std::string_view v) { c.salience_normalize = to_bool(v); },
        [](const RunConfig& c) { return std::string(c.salience_normalize ? "true" : "false"); }};

    t["grid.widths"] = {
        [](RunConfig& c, std::string_view v) { c.grid_widths = to_list<std::size_t>(v, to_size); },
        [](const RunConfig& c) {
          return list_text(c.grid_widths, [](std::size_t k) { return std::to_string(k); });
        }};
    t["grid.factors"] = {
        [](RunConfig& c, std::string_view v) { c.grid_factors = to_list<double>(v, to_double); },
        [](const RunConfig& c) { return list_text(c.grid_factors, num); }};
    t["grid.noise_sigmas"] = {
        [](RunConfig& c, std::string_view v) { c.grid_noise_sigmas = to_list<double>(v, to_double); },
        [](const RunConfig& c) { return list_text(c.grid_noise_sigmas, num); }};
    t["grid.replicates"] = {[](RunConfig& c, std::string_view v) { c.grid_replicates = to_int(v); },
                            [](const RunConfig& c) { return std::to_string(c.grid_replicates); }};
    size_key("grid.scenes", &RunConfig::grid_scenes);
    return t;
  }();
  return table;
}

std::vector<std::string> required_keys(Requirement req) {
  switch (req) {
    case Requirement::simulate: return {"dgp.tau", "data.scenes"};
    case Requirement::grid: return {"dgp.tau"};
    default: return {};
  }
}

void check_invariants(const RunConfig& cfg, Requirement req, std::vector<std::string>& problems) {
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.emplace_back(e.what());
    }
  };
  check([&] { cfg.synth.validate(); });
  check([&] { cfg.dgp.validate(); });
  check([&] { cfg.clip.validate(); });
  check([&] { cfg.train.validate(); });
  if (req == Requirement::simulate) {
    check([&] { cfg.confounder_spec().validate(); });
    if (cfg.scenes < 2) problems.push_back("data.scenes: need at least 2 scenes");
  }
  if (req == Requirement::train || req == Requirement::estimate || req == Requirement::salience) {
    check([&] { cfg.convnet_spec().validate(); });
    if (!(cfg.resolution_factor > 0.0 && cfg.resolution_factor <= 1.0)) {
      problems.push_back("model.resolution_factor: must lie in (0, 1]");
    }
  }
  if (req == Requirement::grid) check([&] { cfg.grid_spec().validate(); });
}

RunConfig parse_lines(std::string_view text, Requirement req, const std::string& source) {
  RunConfig cfg;
  std::vector<std::string> problems;
  const auto& table = key_table();
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      problems.push_back(where + "expected key=value");
      continue;
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end()) {
      problems.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    if (!cfg.given.insert(key).second) {
      problems.push_back(where + "duplicate key '" + key + "'");
      continue;
    }
    try {
      it->second.set(cfg, value);
    } catch (const std::exception& e) {
      problems.push_back(where + key + ": " + e.what());
    }
  }
  for (const auto& key : required_keys(req))
    if (!cfg.given.count(key)) problems.push_back(source + ": missing required key '" + key + "'");
  check_invariants(cfg, req, problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

}  // namespace

ConfounderSpec RunConfig::confounder_spec() const {
  ConfounderSpec s;
  if (confounder_kernel_width == 0 || confounder_kernel_width % 2 == 0) {
    throw InvalidArgument("confounder.kernel_width: must be odd, got " +
                          std::to_string(confounder_kernel_width));
  }
  s.filter = KernelFilter::diagonal(confounder_kernel_width, synth.channels);
  s.noise_sigma = confounder_noise_sigma;
  s.seed = seed;
  return s;
}

ConvNetSpec RunConfig::convnet_spec() const {
  return model_preset == "application" ? ConvNetSpec::application(model_kernel_width)
                                       : ConvNetSpec::simulation(model_kernel_width);
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

GridSpec RunConfig::grid_spec() const {
  GridSpec g;
  g.synth = synth;
  if (confounder_kernel_width == 0 || confounder_kernel_width % 2 == 0) {
    throw InvalidArgument("confounder.kernel_width: must be odd, got " +
                          std::to_string(confounder_kernel_width));
  }
  g.true_filter = KernelFilter::diagonal(confounder_kernel_width, synth.channels);
  g.est_kernel_widths = grid_widths;
  g.resolution_factors = grid_factors;
  g.noise_sigmas = grid_noise_sigmas;
  g.replicates = grid_replicates;
  g.scenes_per_replicate = grid_scenes;
  g.dgp = dgp;
  g.train = train;
  g.clip = clip;
  g.master_seed = seed;
  return g;
}

RunConfig parse_config(std::string_view text, Requirement req) {
  return parse_lines(text, req, "config");
}

RunConfig load_config(const std::filesystem::path& path, Requirement req) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError({"cannot open config file " + path.string()});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_lines(ss.str(), req, path.filename().string());
}

RunConfig default_config(Requirement req) { return parse_lines("", req, "defaults"); }

void validate(const RunConfig& cfg, Requirement req) {
  std::vector<std::string> problems;
  check_invariants(cfg, req, problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::string canonical_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, def] : key_table()) out += key + "=" + def.get(cfg) + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_text(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, def] : key_table()) keys.push_back(key);
  return keys;
}

}  // namespace imgconf::cli
