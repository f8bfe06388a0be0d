#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "imgconf/dgp.hpp"
#include "imgconf/raster.hpp"

namespace imgconf {

enum class Pool { none, max2 };
enum class Activation { relu, linear };

struct ConvLayerSpec {
  std::size_t filters = 1;
  std::size_t kernel_width = 3;  // odd
  Pool pool = Pool::none;
  Activation activation = Activation::relu;
};

struct Shape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

Shape shape_of(const Raster& r) noexcept;

// Layer stack: [valid conv -> batch norm (optional) -> activation -> 2x2 max
// pool (optional)] per layer, then an optional 1x1 channel projection, a
// per-channel global max pool, an affine head and the logistic link.
struct ConvNetSpec {
  std::vector<ConvLayerSpec> layers;
  bool batch_norm = false;
  std::size_t projection_dim = 0;  // 0 = no projection

  void validate() const;
  // Also checks that every intermediate spatial extent stays >= 1.
  void validate_for(const Shape& input) const;
  bool fits(const Shape& input) const noexcept;

  // One linear filter + global max pool + logistic head: the model family
  // that contains the simulated treatment mechanism.
  static ConvNetSpec simulation(std::size_t kernel_width);
  // Three 32-filter ReLU layers with max pooling, batch norm and a
  // 3-channel projection.
  static ConvNetSpec application(std::size_t kernel_width);
};

enum class Optimizer { sgd, adam_nesterov };
enum class LrSchedule { constant, cosine };

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam_nesterov;
  double base_lr = 0.005;
  LrSchedule lr_schedule = LrSchedule::cosine;
  int epochs = 20;
  std::size_t batch_size = 32;
  bool augment_flips = false;
  std::uint64_t seed = 1;

  void validate() const;
};

// Named slice of the flat parameter vector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

class PropensityModel {
 public:
  // All parameters zero, batch-norm running statistics at (mean 0, var 1).
  PropensityModel(ConvNetSpec spec, Shape input_shape);

  // Conv and projection weights uniform in +-sqrt(6 / (fan_in + fan_out));
  // biases, batch-norm shifts and the head start at zero.
  static PropensityModel initialized(ConvNetSpec spec, Shape input_shape, std::uint64_t seed);

  const ConvNetSpec& spec() const noexcept { return spec_; }
  const Shape& input_shape() const noexcept { return input_shape_; }

  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }
  // Batch-norm running means and variances (not trained by gradient).
  std::span<const double> buffers() const noexcept { return buffers_; }
  std::span<double> buffers() noexcept { return buffers_; }
  const std::vector<ParamBlock>& layout() const noexcept { return layout_; }
  const ParamBlock& block(const std::string& name) const;

  friend bool operator==(const PropensityModel& a, const PropensityModel& b) {
    return a.input_shape_ == b.input_shape_ && a.params_ == b.params_ &&
           a.buffers_ == b.buffers_ && a.layout_names() == b.layout_names();
  }

 private:
  std::vector<std::string> layout_names() const;

  ConvNetSpec spec_;
  Shape input_shape_;
  std::vector<double> params_;
  std::vector<double> buffers_;
  std::vector<ParamBlock> layout_;
};

// Predicted Pr(T = 1 | image), batch norm in inference mode.
double forward(const PropensityModel& model, const Raster& r);
double forward_logit(const PropensityModel& model, const Raster& r);
std::vector<double> predict_batch(const PropensityModel& model, std::span<const Raster> rasters);

// d forward / d image, exact reverse-mode accumulation. Max pooling routes
// the gradient to the first maximal element in scan order.
Raster gradient_wrt_input(const PropensityModel& model, const Raster& r);
// d forward / d parameters, same layout as parameters().
std::vector<double> gradient_wrt_params(const PropensityModel& model, const Raster& r);

enum class BatchNormMode { inference, batch_statistics };

struct LossAndGradient {
  double loss = 0.0;             // mean binary cross-entropy
  std::vector<double> gradient;  // d loss / d parameters
};
LossAndGradient loss_and_gradient(const PropensityModel& model, std::span<const Raster> images,
                                  std::span<const int> labels, BatchNormMode mode);

// Mean binary cross-entropy with batch norm in inference mode.
double mean_bce(const PropensityModel& model, std::span<const Raster> images,
                std::span<const int> labels);

struct TrainResult {
  PropensityModel model;
  std::vector<double> loss_trace;  // mean training BCE per epoch
};

// Mini-batch minimisation of mean BCE. Deterministic in cfg.seed.
// Throws DegenerateData for single-class labels and DivergenceError when the
// loss becomes non-finite.
TrainResult train(std::span<const Raster> images, std::span<const int> labels,
                  const ConvNetSpec& spec, const TrainConfig& cfg);
// records[i] labels rasters[i].
TrainResult train(std::span<const SceneRecord> records, std::span<const Raster> rasters,
                  const ConvNetSpec& spec, const TrainConfig& cfg);

// Checkpoint: ASCII header describing the architecture followed by
// little-endian float32 parameters then buffers.
void write_model(std::ostream& out, const PropensityModel& model);
PropensityModel read_model(std::istream& in);
void save_model(const PropensityModel& model, const std::filesystem::path& path);
PropensityModel load_model(const std::filesystem::path& path);

const char* to_string(Pool p) noexcept;
const char* to_string(Activation a) noexcept;
const char* to_string(Optimizer o) noexcept;
const char* to_string(LrSchedule s) noexcept;

namespace detail {
// Which inputs every ReLU passes and where every max pool routes its
// gradient. Two inputs with equal signatures lie in the same linear piece of
// the network, so finite differences between them are exact up to the
// smooth parts.
std::vector<std::int64_t> routing_signature(const PropensityModel& model, const Raster& r);
}  // namespace detail

}  // namespace imgconf
