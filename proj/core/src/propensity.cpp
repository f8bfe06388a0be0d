#include "imgconf/propensity.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "conv_kernels.hpp"
#include "imgconf/errors.hpp"
#include "imgconf/rng.hpp"

namespace imgconf {

namespace {

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.9;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

enum class OpKind { conv, batch_norm, relu, max_pool2, global_max_pool, dense };

struct Op {
  OpKind kind;
  Shape in;
  Shape out;
  std::size_t k = 0;
  std::size_t param_offset = 0;   // weights, then biases (conv/dense); gamma, beta (bn)
  std::size_t buffer_offset = 0;  // running mean, running var (bn)
};

struct Plan {
  std::vector<Op> ops;
  std::vector<ParamBlock> layout;
  std::size_t n_params = 0;
  std::size_t n_buffers = 0;
};

Plan make_plan(const ConvNetSpec& spec, const Shape& input) {
  spec.validate_for(input);
  Plan plan;
  Shape cur = input;
  auto add_block = [&](std::string name, std::size_t size) {
    plan.layout.push_back({std::move(name), plan.n_params, size});
    plan.n_params += size;
  };
  auto add_conv = [&](std::size_t k, std::size_t filters, const std::string& name) {
    Op op{OpKind::conv, cur, {cur.height - k + 1, cur.width - k + 1, filters}, k, plan.n_params};
    add_block(name + ".weight", filters * k * k * cur.channels);
    add_block(name + ".bias", filters);
    plan.ops.push_back(op);
    cur = op.out;
  };
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const ConvLayerSpec& ls = spec.layers[l];
    const std::string name = "conv" + std::to_string(l);
    add_conv(ls.kernel_width, ls.filters, name);
    if (spec.batch_norm) {
      Op bn{OpKind::batch_norm, cur, cur, 0, plan.n_params, plan.n_buffers};
      add_block("bn" + std::to_string(l) + ".gamma", cur.channels);
      add_block("bn" + std::to_string(l) + ".beta", cur.channels);
      plan.n_buffers += 2 * cur.channels;
      plan.ops.push_back(bn);
    }
    if (ls.activation == Activation::relu) plan.ops.push_back({OpKind::relu, cur, cur});
    if (ls.pool == Pool::max2) {
      const Shape out{cur.height / 2, cur.width / 2, cur.channels};
      plan.ops.push_back({OpKind::max_pool2, cur, out});
      cur = out;
    }
  }
  if (spec.projection_dim > 0) add_conv(1, spec.projection_dim, "projection");
  const Shape pooled{1, 1, cur.channels};
  plan.ops.push_back({OpKind::global_max_pool, cur, pooled});
  cur = pooled;
  Op head{OpKind::dense, cur, {1, 1, 1}, 0, plan.n_params};
  add_block("head.weight", cur.channels);
  add_block("head.bias", 1);
  plan.ops.push_back(head);
  return plan;
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

// Reuses r's storage when the shape already matches.
Raster& fit(Raster& r, const Shape& s) {
  if (r.height() != s.height || r.width() != s.width || r.channels() != s.channels) {
    r = Raster(s.height, s.width, s.channels);
  }
  return r;
}

Raster& zeroed(Raster& r, const Shape& s) {
  fit(r, s);
  std::fill(r.data().begin(), r.data().end(), 0.0);
  return r;
}

// Batched forward/backward over the op list of one model. Buffers persist
// across calls so a training loop allocates only on the first batch.
class Executor {
 public:
  Executor(const PropensityModel& model, const Plan& plan, BatchNormMode mode)
      : model_(model), plan_(plan), mode_(mode) {}

  void forward(std::span<const Raster> inputs) {
    std::vector<const Raster*> ptrs;
    for (const Raster& r : inputs) ptrs.push_back(&r);
    forward(std::move(ptrs));
  }

  void forward(std::vector<const Raster*> inputs) {
    const std::size_t B = inputs.size();
    inputs_ = std::move(inputs);
    const std::size_t n_ops = plan_.ops.size();
    acts_.resize(n_ops);
    routes_.resize(n_ops);
    xhat_.resize(n_ops);
    bn_mean_.resize(n_ops);
    bn_inv_.resize(n_ops);
    batch_var_.resize(n_ops);
    for (std::size_t o = 0; o < n_ops; ++o) {
      acts_[o].resize(B);
      routes_[o].resize(B);
    }
    const auto p = model_.parameters();
    for (std::size_t o = 0; o < plan_.ops.size(); ++o) {
      const Op& op = plan_.ops[o];
      switch (op.kind) {
        case OpKind::conv:
          for (std::size_t s = 0; s < B; ++s) {
            const double* w = p.data() + op.param_offset;
            const double* b = w + op.out.channels * op.k * op.k * op.in.channels;
            detail::correlate_valid(input(o, s), w, op.k, op.out.channels, b,
                                    fit(acts_[o][s], op.out));
          }
          break;
        case OpKind::batch_norm:
          batch_norm_forward(o);
          break;
        case OpKind::relu:
          for (std::size_t s = 0; s < B; ++s) {
            const auto in = input(o, s).data();
            auto out = fit(acts_[o][s], op.out).data();
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
          }
          break;
        case OpKind::max_pool2:
          for (std::size_t s = 0; s < B; ++s) max_pool2_forward(o, s);
          break;
        case OpKind::global_max_pool:
          for (std::size_t s = 0; s < B; ++s) global_max_forward(o, s);
          break;
        case OpKind::dense:
          for (std::size_t s = 0; s < B; ++s) {
            const Raster& x = input(o, s);
            const double* w = p.data() + op.param_offset;
            double z = w[op.in.channels];
            for (std::size_t c = 0; c < op.in.channels; ++c) z += w[c] * x.data()[c];
            fit(acts_[o][s], op.out).data()[0] = z;
          }
          break;
      }
    }
  }

  double logit(std::size_t s) const { return acts_.back()[s].data()[0]; }

  // dlogit[s] is the upstream derivative for sample s. Accumulates parameter
  // gradients into param_grad (if non-null) and writes input gradients into
  // input_grad (if non-null).
  void backward(std::span<const double> dlogit, std::vector<double>* param_grad,
                std::vector<Raster>* input_grad) {
    const std::size_t B = inputs_.size();
    std::vector<Raster>& g = grad_;
    std::vector<Raster>& gin = grad_in_;
    g.resize(B);
    gin.resize(B);
    for (std::size_t s = 0; s < B; ++s) fit(g[s], {1, 1, 1}).data()[0] = dlogit[s];
    const auto p = model_.parameters();
    for (std::size_t o = plan_.ops.size(); o-- > 0;) {
      const Op& op = plan_.ops[o];
      const bool need_input_grad = o > 0 || input_grad != nullptr;
      switch (op.kind) {
        case OpKind::dense: {
          const double* w = p.data() + op.param_offset;
          for (std::size_t s = 0; s < B; ++s) {
            const double gz = g[s].data()[0];
            const Raster& x = input(o, s);
            if (param_grad) {
              double* dw = param_grad->data() + op.param_offset;
              for (std::size_t c = 0; c < op.in.channels; ++c) dw[c] += gz * x.data()[c];
              dw[op.in.channels] += gz;
            }
            if (need_input_grad) {
              auto gi = fit(gin[s], op.in).data();
              for (std::size_t c = 0; c < op.in.channels; ++c) gi[c] = gz * w[c];
            }
          }
          break;
        }
        case OpKind::global_max_pool:
          for (std::size_t s = 0; s < B; ++s) {
            auto gi = zeroed(gin[s], op.in).data();
            const auto& route = routes_[o][s];
            for (std::size_t c = 0; c < op.in.channels; ++c) gi[route[c]] += g[s].data()[c];
          }
          break;
        case OpKind::max_pool2:
          for (std::size_t s = 0; s < B; ++s) {
            auto gi = zeroed(gin[s], op.in).data();
            const auto& route = routes_[o][s];
            for (std::size_t i = 0; i < route.size(); ++i) gi[route[i]] += g[s].data()[i];
          }
          break;
        case OpKind::relu:
          for (std::size_t s = 0; s < B; ++s) {
            const auto out = acts_[o][s].data();
            auto gd = g[s].data();
            for (std::size_t i = 0; i < gd.size(); ++i)
              if (!(out[i] > 0.0)) gd[i] = 0.0;
            std::swap(g[s], gin[s]);
          }
          break;
        case OpKind::batch_norm:
          batch_norm_backward(o, g, gin, param_grad);
          break;
        case OpKind::conv:
          for (std::size_t s = 0; s < B; ++s) {
            conv_backward(o, s, g[s], param_grad, need_input_grad ? &gin[s] : nullptr);
          }
          break;
      }
      std::swap(g, gin);
    }
    if (input_grad) *input_grad = g;
  }

  // Running statistics after this batch (only meaningful after a forward in
  // batch_statistics mode).
  void update_running_stats(std::span<double> buffers) const {
    for (std::size_t o = 0; o < plan_.ops.size(); ++o) {
      const Op& op = plan_.ops[o];
      if (op.kind != OpKind::batch_norm) continue;
      const std::size_t C = op.in.channels;
      double* rmean = buffers.data() + op.buffer_offset;
      double* rvar = rmean + C;
      for (std::size_t c = 0; c < C; ++c) {
        rmean[c] = kBatchNormMomentum * rmean[c] + (1.0 - kBatchNormMomentum) * bn_mean_[o][c];
        rvar[c] = kBatchNormMomentum * rvar[c] + (1.0 - kBatchNormMomentum) * batch_var_[o][c];
      }
    }
  }

  void signature(std::vector<std::int64_t>& sig) const {
    for (std::size_t o = 0; o < plan_.ops.size(); ++o) {
      const Op& op = plan_.ops[o];
      if (op.kind == OpKind::relu) {
        for (double v : acts_[o][0].data()) sig.push_back(v > 0.0 ? 1 : 0);
      } else if (op.kind == OpKind::max_pool2 || op.kind == OpKind::global_max_pool) {
        for (auto idx : routes_[o][0]) sig.push_back(idx);
      }
    }
  }

 private:
  const Raster& input(std::size_t o, std::size_t s) const {
    return o == 0 ? *inputs_[s] : acts_[o - 1][s];
  }

  void max_pool2_forward(std::size_t o, std::size_t s) {
    const Op& op = plan_.ops[o];
    const Raster& x = input(o, s);
    Raster& out = fit(acts_[o][s], op.out);
    auto& route = routes_[o][s];
    route.resize(out.size());
    for (std::size_t i = 0; i < op.out.height; ++i)
      for (std::size_t j = 0; j < op.out.width; ++j)
        for (std::size_t c = 0; c < op.out.channels; ++c) {
          std::size_t best = x.index(2 * i, 2 * j, c);
          for (std::size_t di = 0; di < 2; ++di)
            for (std::size_t dj = 0; dj < 2; ++dj) {
              const std::size_t idx = x.index(2 * i + di, 2 * j + dj, c);
              if (x.data()[idx] > x.data()[best]) best = idx;
            }
          const std::size_t oi = out.index(i, j, c);
          out.data()[oi] = x.data()[best];
          route[oi] = static_cast<std::uint32_t>(best);
        }
  }

  void global_max_forward(std::size_t o, std::size_t s) {
    const Op& op = plan_.ops[o];
    const Raster& x = input(o, s);
    const std::size_t C = op.in.channels;
    Raster& out = fit(acts_[o][s], op.out);
    auto& route = routes_[o][s];
    route.assign(C, 0);
    for (std::size_t c = 0; c < C; ++c) route[c] = static_cast<std::uint32_t>(c);
    const auto xd = x.data();
    for (std::size_t i = C; i < xd.size(); ++i) {
      const std::size_t c = i % C;
      if (xd[i] > xd[route[c]]) route[c] = static_cast<std::uint32_t>(i);
    }
    for (std::size_t c = 0; c < C; ++c) out.data()[c] = xd[route[c]];
  }

  void batch_norm_forward(std::size_t o) {
    const Op& op = plan_.ops[o];
    const std::size_t B = inputs_.size();
    const std::size_t C = op.in.channels;
    const auto p = model_.parameters();
    const double* gamma = p.data() + op.param_offset;
    const double* beta = gamma + C;
    std::vector<double> mean(C, 0.0), inv(C, 0.0), var(C, 0.0);
    if (mode_ == BatchNormMode::batch_statistics) {
      const double count = static_cast<double>(B * op.in.height * op.in.width);
      for (std::size_t s = 0; s < B; ++s) {
        const auto x = input(o, s).data();
        for (std::size_t i = 0; i < x.size(); ++i) mean[i % C] += x[i];
      }
      for (double& m : mean) m /= count;
      for (std::size_t s = 0; s < B; ++s) {
        const auto x = input(o, s).data();
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double d = x[i] - mean[i % C];
          var[i % C] += d * d;
        }
      }
      for (double& v : var) v /= count;
    } else {
      const auto buf = model_.buffers();
      for (std::size_t c = 0; c < C; ++c) {
        mean[c] = buf[op.buffer_offset + c];
        var[c] = buf[op.buffer_offset + C + c];
      }
    }
    for (std::size_t c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(var[c] + kBatchNormEps);
    xhat_[o].resize(B);
    for (std::size_t s = 0; s < B; ++s) {
      const Raster& x = input(o, s);
      Raster& xh = fit(xhat_[o][s], op.in);
      Raster& out = fit(acts_[o][s], op.out);
      const auto xd = x.data();
      for (std::size_t i = 0; i < xd.size(); ++i) {
        const std::size_t c = i % C;
        xh.data()[i] = (xd[i] - mean[c]) * inv[c];
        out.data()[i] = gamma[c] * xh.data()[i] + beta[c];
      }
    }
    bn_mean_[o] = std::move(mean);
    bn_inv_[o] = std::move(inv);
    batch_var_[o] = std::move(var);
  }

  void batch_norm_backward(std::size_t o, std::vector<Raster>& g, std::vector<Raster>& gin,
                           std::vector<double>* param_grad) {
    const Op& op = plan_.ops[o];
    const std::size_t B = inputs_.size();
    const std::size_t C = op.in.channels;
    const double* gamma = model_.parameters().data() + op.param_offset;
    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
    for (std::size_t s = 0; s < B; ++s) {
      const auto gd = g[s].data();
      const auto xh = xhat_[o][s].data();
      for (std::size_t i = 0; i < gd.size(); ++i) {
        sum_g[i % C] += gd[i];
        sum_gx[i % C] += gd[i] * xh[i];
      }
    }
    if (param_grad) {
      double* dgamma = param_grad->data() + op.param_offset;
      double* dbeta = dgamma + C;
      for (std::size_t c = 0; c < C; ++c) {
        dgamma[c] += sum_gx[c];
        dbeta[c] += sum_g[c];
      }
    }
    const auto& inv = bn_inv_[o];
    const double count = static_cast<double>(B * op.in.height * op.in.width);
    for (std::size_t s = 0; s < B; ++s) {
      auto gi = fit(gin[s], op.in).data();
      const auto gd = g[s].data();
      const auto xh = xhat_[o][s].data();
      for (std::size_t i = 0; i < gd.size(); ++i) {
        const std::size_t c = i % C;
        if (mode_ == BatchNormMode::batch_statistics) {
          // dx = gamma*inv/N * (N*g - sum(g) - xhat*sum(g*xhat))
          gi[i] = gamma[c] * inv[c] *
                         (gd[i] - sum_g[c] / count - xh[i] * sum_gx[c] / count);
        } else {
          gi[i] = gamma[c] * inv[c] * gd[i];
        }
      }
    }
  }

  void conv_backward(std::size_t o, std::size_t s, const Raster& g,
                     std::vector<double>* param_grad, Raster* gin) {
    const Op& op = plan_.ops[o];
    const Raster& x = input(o, s);
    const std::size_t k = op.k, C = op.in.channels, F = op.out.channels;
    const std::size_t span = k * C;
    const double* w = model_.parameters().data() + op.param_offset;
    double* dw = param_grad ? param_grad->data() + op.param_offset : nullptr;
    double* db = dw ? dw + F * k * span : nullptr;
    if (gin) zeroed(*gin, op.in);
    const auto gd = g.data();
    const auto xd = x.data();
    for (std::size_t i = 0; i < op.out.height; ++i)
      for (std::size_t j = 0; j < op.out.width; ++j)
        for (std::size_t f = 0; f < F; ++f) {
          const double gv = gd[(i * op.out.width + j) * F + f];
          if (gv == 0.0) continue;
          if (db) db[f] += gv;
          for (std::size_t di = 0; di < k; ++di) {
            const std::size_t base = ((i + di) * op.in.width + j) * C;
            const std::size_t woff = (f * k + di) * span;
            if (dw) {
              double* dwp = dw + woff;
              const double* xp = xd.data() + base;
              for (std::size_t t = 0; t < span; ++t) dwp[t] += gv * xp[t];
            }
            if (gin) {
              double* gp = gin->data().data() + base;
              const double* wp = w + woff;
              for (std::size_t t = 0; t < span; ++t) gp[t] += gv * wp[t];
            }
          }
        }
  }

  const PropensityModel& model_;
  const Plan& plan_;
  BatchNormMode mode_;
  std::vector<const Raster*> inputs_;
  std::vector<std::vector<Raster>> acts_;
  std::vector<std::vector<std::vector<std::uint32_t>>> routes_;
  std::vector<std::vector<Raster>> xhat_;
  std::vector<Raster> grad_, grad_in_;
  std::vector<std::vector<double>> bn_mean_, bn_inv_, batch_var_;
};

void check_input(const PropensityModel& model, const Raster& r) {
  if (shape_of(r) != model.input_shape()) {
    const Shape& s = model.input_shape();
    throw InvalidArgument("propensity: raster " + std::to_string(r.height()) + "x" +
                          std::to_string(r.width()) + "x" + std::to_string(r.channels()) +
                          " does not match model input " + std::to_string(s.height) + "x" +
                          std::to_string(s.width) + "x" + std::to_string(s.channels));
  }
}

void check_labels(std::span<const Raster> images, std::span<const int> labels) {
  if (images.size() != labels.size()) {
    throw InvalidArgument("propensity: " + std::to_string(images.size()) + " images but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (int t : labels)
    if (t != 0 && t != 1) throw InvalidArgument("propensity: labels must be 0 or 1");
}

}  // namespace

// ---------------------------------------------------------------------------
// Specs

Shape shape_of(const Raster& r) noexcept { return {r.height(), r.width(), r.channels()}; }

void ConvNetSpec::validate() const {
  if (layers.empty()) throw InvalidArgument("convnet: at least one conv layer required");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& ls = layers[l];
    if (ls.filters == 0) {
      throw InvalidArgument("convnet: layer " + std::to_string(l) + " has zero filters");
    }
    if (ls.kernel_width == 0 || ls.kernel_width % 2 == 0) {
      throw InvalidArgument("convnet: layer " + std::to_string(l) +
                            " kernel width must be odd, got " + std::to_string(ls.kernel_width));
    }
  }
}

void ConvNetSpec::validate_for(const Shape& input) const {
  validate();
  if (input.height == 0 || input.width == 0 || input.channels == 0) {
    throw InvalidArgument("convnet: empty input shape");
  }
  std::size_t h = input.height, w = input.width;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t k = layers[l].kernel_width;
    if (h < k || w < k) {
      throw InvalidArgument("convnet: layer " + std::to_string(l) + " kernel width " +
                            std::to_string(k) + " exceeds its " + std::to_string(h) + "x" +
                            std::to_string(w) + " input");
    }
    h = h - k + 1;
    w = w - k + 1;
    if (layers[l].pool == Pool::max2) {
      h /= 2;
      w /= 2;
      if (h == 0 || w == 0) {
        throw InvalidArgument("convnet: pooling after layer " + std::to_string(l) +
                              " leaves an empty feature map");
      }
    }
  }
}

bool ConvNetSpec::fits(const Shape& input) const noexcept {
  try {
    validate_for(input);
    return true;
  } catch (const InvalidArgument&) {
    return false;
  }
}

ConvNetSpec ConvNetSpec::simulation(std::size_t kernel_width) {
  ConvNetSpec s;
  s.layers = {{1, kernel_width, Pool::none, Activation::linear}};
  return s;
}

ConvNetSpec ConvNetSpec::application(std::size_t kernel_width) {
  ConvNetSpec s;
  s.layers.assign(3, ConvLayerSpec{32, kernel_width, Pool::max2, Activation::relu});
  s.batch_norm = true;
  s.projection_dim = 3;
  return s;
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) {
    throw InvalidArgument("train: base_lr must be > 0");
  }
  if (epochs < 1) throw InvalidArgument("train: epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("train: batch_size must be >= 1");
}

const char* to_string(Pool p) noexcept { return p == Pool::max2 ? "max2" : "none"; }
const char* to_string(Activation a) noexcept {
  return a == Activation::relu ? "relu" : "linear";
}
const char* to_string(Optimizer o) noexcept {
  return o == Optimizer::sgd ? "sgd" : "adam_nesterov";
}
const char* to_string(LrSchedule s) noexcept {
  return s == LrSchedule::cosine ? "cosine" : "constant";
}

// ---------------------------------------------------------------------------
// Model

PropensityModel::PropensityModel(ConvNetSpec spec, Shape input_shape)
    : spec_(std::move(spec)), input_shape_(input_shape) {
  Plan plan = make_plan(spec_, input_shape_);
  params_.assign(plan.n_params, 0.0);
  buffers_.assign(plan.n_buffers, 0.0);
  layout_ = std::move(plan.layout);
  for (const Op& op : plan.ops) {
    if (op.kind == OpKind::batch_norm) {
      const std::size_t C = op.in.channels;
      std::fill_n(buffers_.begin() + static_cast<std::ptrdiff_t>(op.buffer_offset + C), C, 1.0);
      std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(op.param_offset), C, 1.0);
    }
  }
}

PropensityModel PropensityModel::initialized(ConvNetSpec spec, Shape input_shape,
                                             std::uint64_t seed) {
  PropensityModel m(std::move(spec), input_shape);
  const Plan plan = make_plan(m.spec_, m.input_shape_);
  Philox rng(derive_key(seed, {stream_tag::kInit}), 0);
  for (const Op& op : plan.ops) {
    if (op.kind != OpKind::conv) continue;
    const double fan_in = static_cast<double>(op.k * op.k * op.in.channels);
    const double fan_out = static_cast<double>(op.k * op.k * op.out.channels);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    const std::size_t n = op.out.channels * op.k * op.k * op.in.channels;
    for (std::size_t i = 0; i < n; ++i) {
      m.params_[op.param_offset + i] = limit * (2.0 * rng.uniform() - 1.0);
    }
  }
  return m;
}

const ParamBlock& PropensityModel::block(const std::string& name) const {
  for (const auto& b : layout_)
    if (b.name == name) return b;
  throw InvalidArgument("propensity: no parameter block '" + name + "'");
}

std::vector<std::string> PropensityModel::layout_names() const {
  std::vector<std::string> names;
  for (const auto& b : layout_) names.push_back(b.name);
  return names;
}

// ---------------------------------------------------------------------------
// Inference and gradients

double forward_logit(const PropensityModel& model, const Raster& r) {
  check_input(model, r);
  const Plan plan = make_plan(model.spec(), model.input_shape());
  Executor ex(model, plan, BatchNormMode::inference);
  ex.forward(std::span<const Raster>(&r, 1));
  return ex.logit(0);
}

namespace {

// Saturated logits would round to exactly 0 or 1; keep the probability open.
double probability(double z) {
  return std::clamp(logistic(z), std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

}  // namespace

double forward(const PropensityModel& model, const Raster& r) {
  return probability(forward_logit(model, r));
}

std::vector<double> predict_batch(const PropensityModel& model, std::span<const Raster> rasters) {
  std::vector<double> out;
  out.reserve(rasters.size());
  if (rasters.empty()) return out;
  for (std::size_t i = 0; i < rasters.size(); ++i) {
    try {
      check_input(model, rasters[i]);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("predict_batch: item " + std::to_string(i) + ": " + e.what());
    }
  }
  const Plan plan = make_plan(model.spec(), model.input_shape());
  for (const Raster& r : rasters) {
    Executor ex(model, plan, BatchNormMode::inference);
    ex.forward(std::span<const Raster>(&r, 1));
    out.push_back(probability(ex.logit(0)));
  }
  return out;
}

namespace {

// d sigma(z) / dz without cancellation for large |z|.
double logistic_slope(double z) { return logistic(z) * logistic(-z); }

}  // namespace

Raster gradient_wrt_input(const PropensityModel& model, const Raster& r) {
  check_input(model, r);
  const Plan plan = make_plan(model.spec(), model.input_shape());
  Executor ex(model, plan, BatchNormMode::inference);
  ex.forward(std::span<const Raster>(&r, 1));
  const double d = logistic_slope(ex.logit(0));
  std::vector<Raster> gin;
  ex.backward(std::span<const double>(&d, 1), nullptr, &gin);
  return std::move(gin[0]);
}

std::vector<double> gradient_wrt_params(const PropensityModel& model, const Raster& r) {
  check_input(model, r);
  const Plan plan = make_plan(model.spec(), model.input_shape());
  Executor ex(model, plan, BatchNormMode::inference);
  ex.forward(std::span<const Raster>(&r, 1));
  const double d = logistic_slope(ex.logit(0));
  std::vector<double> grad(model.parameters().size(), 0.0);
  ex.backward(std::span<const double>(&d, 1), &grad, nullptr);
  return grad;
}

namespace {

// Forward and backward over one batch already loaded into ex.
LossAndGradient batch_loss(Executor& ex, const PropensityModel& model,
                           std::span<const int> labels, std::span<double> running_stats_out) {
  const std::size_t B = labels.size();
  const double inv_b = 1.0 / static_cast<double>(B);
  LossAndGradient out;
  std::vector<double> dlogit(B);
  for (std::size_t s = 0; s < B; ++s) {
    const double z = ex.logit(s);
    out.loss += (softplus(z) - labels[s] * z) * inv_b;
    dlogit[s] = (logistic(z) - labels[s]) * inv_b;
  }
  out.gradient.assign(model.parameters().size(), 0.0);
  ex.backward(dlogit, &out.gradient, nullptr);
  if (!running_stats_out.empty()) ex.update_running_stats(running_stats_out);
  return out;
}

}  // namespace

LossAndGradient loss_and_gradient(const PropensityModel& model, std::span<const Raster> images,
                                  std::span<const int> labels, BatchNormMode mode) {
  check_labels(images, labels);
  if (images.empty()) throw InvalidArgument("loss_and_gradient: empty batch");
  for (const Raster& r : images) check_input(model, r);
  const Plan plan = make_plan(model.spec(), model.input_shape());
  Executor ex(model, plan, mode);
  ex.forward(images);
  return batch_loss(ex, model, labels, {});
}

double mean_bce(const PropensityModel& model, std::span<const Raster> images,
                std::span<const int> labels) {
  check_labels(images, labels);
  if (images.empty()) throw InvalidArgument("mean_bce: empty input");
  double total = 0.0;
  const std::vector<double> logits = [&] {
    std::vector<double> z;
    for (const Raster& r : images) z.push_back(forward_logit(model, r));
    return z;
  }();
  for (std::size_t i = 0; i < images.size(); ++i) total += softplus(logits[i]) - labels[i] * logits[i];
  return total / static_cast<double>(images.size());
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(std::span<const Raster> images, std::span<const int> labels,
                  const ConvNetSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  check_labels(images, labels);
  if (images.size() < 2) throw DegenerateData("train: need at least 2 records");
  const std::size_t treated = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (treated == 0 || treated == labels.size()) {
    throw DegenerateData("train: labels contain a single class");
  }
  const Shape shape = shape_of(images[0]);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (shape_of(images[i]) != shape) {
      throw InvalidArgument("train: image " + std::to_string(i) + " differs in shape from image 0");
    }
  }

  TrainResult result{PropensityModel::initialized(spec, shape, cfg.seed), {}};
  PropensityModel& model = result.model;
  const Plan plan = make_plan(spec, shape);
  const std::size_t n = images.size();
  const std::size_t B = std::min(cfg.batch_size, n);
  const std::size_t steps_per_epoch = (n + B - 1) / B;
  const double total_steps = static_cast<double>(steps_per_epoch * static_cast<std::size_t>(cfg.epochs));
  const BatchNormMode bn_mode =
      spec.batch_norm ? BatchNormMode::batch_statistics : BatchNormMode::inference;

  const std::size_t P = model.parameters().size();
  std::vector<double> m1(P, 0.0), m2(P, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<Raster> flipped;  // augmented copies, only with augment_flips
  std::vector<const Raster*> batch;
  std::vector<int> batch_labels;
  Executor ex(model, plan, bn_mode);
  std::vector<double> running(model.buffers().begin(), model.buffers().end());
  const std::uint64_t shuffle_key = derive_key(cfg.seed, {stream_tag::kShuffle});
  const std::uint64_t augment_key = derive_key(cfg.seed, {stream_tag::kAugment});
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Philox shuffle_rng(shuffle_key, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n; i-- > 1;) {
      std::swap(order[i], order[shuffle_rng() % (i + 1)]);
    }
    Philox augment_rng(augment_key, static_cast<std::uint64_t>(epoch));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += B) {
      const std::size_t end = std::min(n, start + B);
      batch.clear();
      batch_labels.clear();
      flipped.resize(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Raster& img = images[order[i]];
        if (cfg.augment_flips) {
          flipped[i - start] = random_flip(img, augment_rng);
          batch.push_back(&flipped[i - start]);
        } else {
          batch.push_back(&img);
        }
        batch_labels.push_back(labels[order[i]]);
      }
      ex.forward(batch);
      LossAndGradient lg = batch_loss(ex, model, batch_labels,
                                      spec.batch_norm ? std::span<double>(running) : std::span<double>());
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("train: non-finite loss in epoch " + std::to_string(epoch + 1),
                              epoch + 1);
      }
      epoch_loss += lg.loss * static_cast<double>(end - start);

      double lr = cfg.base_lr;
      if (cfg.lr_schedule == LrSchedule::cosine) {
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      }
      ++step;
      auto params = model.parameters();
      if (cfg.optimizer == Optimizer::sgd) {
        for (std::size_t i = 0; i < P; ++i) params[i] -= lr * lg.gradient[i];
      } else {
        // Nadam: Adam with a Nesterov look-ahead on the first moment.
        const double t = static_cast<double>(step);
        const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
        const double bc1_next = 1.0 - std::pow(kAdamBeta1, t + 1.0);
        const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
        for (std::size_t i = 0; i < P; ++i) {
          const double g = lg.gradient[i];
          m1[i] = kAdamBeta1 * m1[i] + (1.0 - kAdamBeta1) * g;
          m2[i] = kAdamBeta2 * m2[i] + (1.0 - kAdamBeta2) * g * g;
          const double m_hat = kAdamBeta1 * m1[i] / bc1_next + (1.0 - kAdamBeta1) * g / bc1;
          const double v_hat = m2[i] / bc2;
          params[i] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
        }
      }
      if (spec.batch_norm) std::copy(running.begin(), running.end(), model.buffers().begin());
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw DivergenceError("train: non-finite loss in epoch " + std::to_string(epoch + 1),
                            epoch + 1);
    }
    result.loss_trace.push_back(epoch_loss);
    for (double v : model.parameters()) {
      if (!std::isfinite(v)) {
        throw DivergenceError("train: non-finite parameter after epoch " +
                                  std::to_string(epoch + 1),
                              epoch + 1);
      }
    }
  }
  return result;
}

TrainResult train(std::span<const SceneRecord> records, std::span<const Raster> rasters,
                  const ConvNetSpec& spec, const TrainConfig& cfg) {
  if (records.size() != rasters.size()) {
    throw InvalidArgument("train: " + std::to_string(records.size()) + " records but " +
                          std::to_string(rasters.size()) + " rasters");
  }
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.t);
  return train(rasters, labels, spec, cfg);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_f32(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  const char b[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                     static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
  out.write(b, 4);
}

std::string expect_line(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("checkpoint: missing '" + key + "' line");
  std::istringstream ls(line);
  std::string k;
  ls >> k;
  if (k != key) throw FormatError("checkpoint: expected '" + key + "', found '" + line + "'");
  std::string rest;
  std::getline(ls, rest);
  const auto first = rest.find_first_not_of(' ');
  return first == std::string::npos ? std::string() : rest.substr(first);
}

std::size_t parse_count(const std::string& s, const std::string& field) {
  std::istringstream is(s);
  long long v = -1;
  std::string extra;
  if (!(is >> v) || v < 0 || (is >> extra)) {
    throw FormatError("checkpoint: invalid " + field + " '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

void write_model(std::ostream& out, const PropensityModel& model) {
  const auto& spec = model.spec();
  const auto& in = model.input_shape();
  out << "PROPENSITY 1\n";
  out << "input " << in.height << ' ' << in.width << ' ' << in.channels << '\n';
  out << "batch_norm " << (spec.batch_norm ? 1 : 0) << '\n';
  out << "projection " << spec.projection_dim << '\n';
  out << "layers " << spec.layers.size() << '\n';
  for (const auto& l : spec.layers) {
    out << "layer " << l.filters << ' ' << l.kernel_width << ' ' << to_string(l.pool) << ' '
        << to_string(l.activation) << '\n';
  }
  out << "parameters " << model.parameters().size() << '\n';
  out << "buffers " << model.buffers().size() << '\n';
  out << "end\n";
  for (double v : model.parameters()) put_f32(out, v);
  for (double v : model.buffers()) put_f32(out, v);
  if (!out) throw FormatError("checkpoint: write failed");
}

PropensityModel read_model(std::istream& in) {
  std::string magic;
  if (!std::getline(in, magic) || magic != "PROPENSITY 1") {
    throw FormatError("checkpoint: bad magic line '" + magic + "'");
  }
  const std::string input = expect_line(in, "input");
  Shape shape;
  {
    std::istringstream is(input);
    std::string extra;
    if (!(is >> shape.height >> shape.width >> shape.channels) || (is >> extra) ||
        shape.height == 0 || shape.width == 0 || shape.channels == 0) {
      throw FormatError("checkpoint: invalid input shape '" + input + "'");
    }
  }
  ConvNetSpec spec;
  const std::string bn = expect_line(in, "batch_norm");
  if (bn != "0" && bn != "1") throw FormatError("checkpoint: invalid batch_norm '" + bn + "'");
  spec.batch_norm = bn == "1";
  spec.projection_dim = parse_count(expect_line(in, "projection"), "projection");
  const std::size_t n_layers = parse_count(expect_line(in, "layers"), "layers");
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::string line = expect_line(in, "layer");
    std::istringstream is(line);
    ConvLayerSpec ls;
    std::string pool, act, extra;
    if (!(is >> ls.filters >> ls.kernel_width >> pool >> act) || (is >> extra)) {
      throw FormatError("checkpoint: invalid layer " + std::to_string(l) + " '" + line + "'");
    }
    if (pool == "none") ls.pool = Pool::none;
    else if (pool == "max2") ls.pool = Pool::max2;
    else throw FormatError("checkpoint: invalid pool '" + pool + "' in layer " + std::to_string(l));
    if (act == "relu") ls.activation = Activation::relu;
    else if (act == "linear") ls.activation = Activation::linear;
    else throw FormatError("checkpoint: invalid activation '" + act + "' in layer " + std::to_string(l));
    spec.layers.push_back(ls);
  }
  const std::size_t n_params = parse_count(expect_line(in, "parameters"), "parameters");
  const std::size_t n_buffers = parse_count(expect_line(in, "buffers"), "buffers");
  expect_line(in, "end");

  PropensityModel model = [&] {
    try {
      return PropensityModel(spec, shape);
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("checkpoint: inconsistent architecture: ") + e.what());
    }
  }();
  if (model.parameters().size() != n_params) {
    throw FormatError("checkpoint: parameters count " + std::to_string(n_params) +
                      " does not match architecture (" +
                      std::to_string(model.parameters().size()) + ")");
  }
  if (model.buffers().size() != n_buffers) {
    throw FormatError("checkpoint: buffers count " + std::to_string(n_buffers) +
                      " does not match architecture (" + std::to_string(model.buffers().size()) +
                      ")");
  }
  std::vector<unsigned char> bytes(4 * (n_params + n_buffers));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw FormatError("checkpoint: payload truncated");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint: trailing bytes after payload");
  }
  auto read_at = [&](std::size_t i) {
    const unsigned char* p = &bytes[4 * i];
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    const double v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) throw FormatError("checkpoint: non-finite value at index " + std::to_string(i));
    return v;
  };
  for (std::size_t i = 0; i < n_params; ++i) model.parameters()[i] = read_at(i);
  for (std::size_t i = 0; i < n_buffers; ++i) model.buffers()[i] = read_at(n_params + i);
  return model;
}

void save_model(const PropensityModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot open '" + path.string() + "' for writing");
  write_model(out, model);
}

PropensityModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open '" + path.string() + "'");
  return read_model(in);
}

namespace detail {

std::vector<std::int64_t> routing_signature(const PropensityModel& model, const Raster& r) {
  check_input(model, r);
  const Plan plan = make_plan(model.spec(), model.input_shape());
  Executor ex(model, plan, BatchNormMode::inference);
  ex.forward(std::span<const Raster>(&r, 1));
  std::vector<std::int64_t> sig;
  ex.signature(sig);
  return sig;
}

}  // namespace detail

}  // namespace imgconf
