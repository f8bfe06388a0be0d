#include "imgconf/raster.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "imgconf/errors.hpp"

namespace imgconf {

Raster::Raster(std::size_t height, std::size_t width, std::size_t channels)
    : height_(height), width_(width), channels_(channels),
      data_(height * width * channels, 0.0) {
  if (height == 0 || width == 0 || channels == 0) {
    throw InvalidArgument("raster dimensions must be positive");
  }
}

Raster::Raster(std::size_t height, std::size_t width, std::size_t channels,
               std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height == 0 || width == 0 || channels == 0) {
    throw InvalidArgument("raster dimensions must be positive");
  }
  if (data_.size() != height * width * channels) {
    throw InvalidArgument("raster data length " + std::to_string(data_.size()) +
                          " does not match " + std::to_string(height) + "x" +
                          std::to_string(width) + "x" + std::to_string(channels));
  }
  if (!all_finite()) throw InvalidArgument("raster data contains a non-finite value");
}

bool Raster::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void SynthParams::validate() const {
  if (height == 0 || width == 0 || channels == 0) {
    throw InvalidArgument("synth: height, width and channels must be positive");
  }
  if (!(correlation_length >= 1.0) || !std::isfinite(correlation_length)) {
    throw InvalidArgument("synth: correlation_length must be >= 1");
  }
  if (!(amplitude > 0.0) || !std::isfinite(amplitude)) {
    throw InvalidArgument("synth: amplitude must be > 0");
  }
}

Raster synth_scene(const SynthParams& params, std::uint64_t index) {
  params.validate();
  const double sigma = params.correlation_length;
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (std::size_t j = 0; j < kernel.size(); ++j) {
    const double d = static_cast<double>(j) - static_cast<double>(radius);
    kernel[j] = std::exp(-d * d / (2.0 * sigma * sigma));
    ksum += kernel[j];
  }
  double ksq = 0.0;
  for (double& k : kernel) {
    k /= ksum;
    ksq += k * k;
  }
  // Separable smoothing of unit white noise leaves per-pixel variance ksq^2.
  const double scale = params.amplitude / ksq;

  const std::size_t H = params.height, W = params.width;
  const std::size_t ph = H + 2 * radius, pw = W + 2 * radius;
  const std::uint64_t key = derive_key(params.seed, {stream_tag::kScene, index});

  Raster out(H, W, params.channels);
  std::vector<double> noise(ph * pw);
  std::vector<double> rows(ph * W);
  for (std::size_t c = 0; c < params.channels; ++c) {
    Philox rng(key, c);
    for (double& v : noise) v = rng.normal();
    for (std::size_t i = 0; i < ph; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        double acc = 0.0;
        const double* src = &noise[i * pw + j];
        for (std::size_t t = 0; t < kernel.size(); ++t) acc += kernel[t] * src[t];
        rows[i * W + j] = acc;
      }
    }
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < kernel.size(); ++t) acc += kernel[t] * rows[(i + t) * W + j];
        out.at(i, j, c) = scale * acc;
      }
    }
  }
  return out;
}

std::size_t downsampled_extent(std::size_t n, double factor) {
  // The epsilon keeps products like 0.12 * 100 = 12.000000000000002 at 12.
  const double v = factor * static_cast<double>(n);
  const auto e = static_cast<std::size_t>(std::ceil(v - 1e-9));
  return std::max<std::size_t>(1, e);
}

namespace {

struct Tap {
  std::size_t src;
  double weight;
};

// Overlap weights of each output cell's footprint with the source cells.
std::vector<std::vector<Tap>> area_weights(std::size_t n_src, std::size_t n_out) {
  const double s = static_cast<double>(n_src) / static_cast<double>(n_out);
  std::vector<std::vector<Tap>> taps(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double lo = static_cast<double>(i) * s;
    const double hi = static_cast<double>(i + 1) * s;
    const auto first = static_cast<std::size_t>(std::floor(lo));
    const auto last = std::min(n_src, static_cast<std::size_t>(std::ceil(hi)));
    for (std::size_t j = first; j < last; ++j) {
      const double overlap =
          std::min(hi, static_cast<double>(j + 1)) - std::max(lo, static_cast<double>(j));
      if (overlap > 0.0) taps[i].push_back({j, overlap / s});
    }
  }
  return taps;
}

}  // namespace

Raster downsample(const Raster& r, double factor) {
  if (!(factor > 0.0 && factor <= 1.0)) {
    throw InvalidArgument("downsample: factor must lie in (0, 1]");
  }
  if (factor == 1.0) return r;
  const std::size_t H = r.height(), W = r.width(), C = r.channels();
  const std::size_t oh = downsampled_extent(H, factor);
  const std::size_t ow = downsampled_extent(W, factor);
  const auto wtaps = area_weights(W, ow);
  const auto htaps = area_weights(H, oh);

  Raster tmp(H, ow, C);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t k = 0; k < ow; ++k)
      for (const Tap& t : wtaps[k])
        for (std::size_t c = 0; c < C; ++c) tmp.at(i, k, c) += t.weight * r.at(i, t.src, c);

  Raster out(oh, ow, C);
  for (std::size_t i = 0; i < oh; ++i)
    for (const Tap& t : htaps[i])
      for (std::size_t k = 0; k < ow; ++k)
        for (std::size_t c = 0; c < C; ++c) out.at(i, k, c) += t.weight * tmp.at(t.src, k, c);
  return out;
}

Raster flip(const Raster& r, bool flip_height, bool flip_width) {
  if (!flip_height && !flip_width) return r;
  Raster out(r.height(), r.width(), r.channels());
  for (std::size_t h = 0; h < r.height(); ++h) {
    const std::size_t sh = flip_height ? r.height() - 1 - h : h;
    for (std::size_t w = 0; w < r.width(); ++w) {
      const std::size_t sw = flip_width ? r.width() - 1 - w : w;
      for (std::size_t c = 0; c < r.channels(); ++c) out.at(h, w, c) = r.at(sh, sw, c);
    }
  }
  return out;
}

Raster random_flip(const Raster& r, Philox& rng) {
  const bool fh = rng.bernoulli(0.5);
  const bool fw = rng.bernoulli(0.5);
  return flip(r, fh, fw);
}

// ---------------------------------------------------------------------------
// File format

namespace {

void put_f32_le(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                         static_cast<char>((bits >> 16) & 0xFF),
                         static_cast<char>((bits >> 24) & 0xFF)};
  out.write(bytes, 4);
}

float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

std::size_t parse_dim(const std::string& token, const char* field) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size() || v == 0) {
    throw FormatError(std::string("raster header: invalid ") + field + " '" + token + "'");
  }
  return v;
}

}  // namespace

void write_raster(std::ostream& out, const Raster& r) {
  out << "RASTER 1 " << r.height() << ' ' << r.width() << ' ' << r.channels() << '\n';
  for (double v : r.data()) put_f32_le(out, static_cast<float>(v));
  if (!out) throw FormatError("raster: write failed");
}

Raster read_raster(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("raster header: missing header line");
  std::istringstream fields(header);
  std::string magic, version, hs, ws, cs, extra;
  fields >> magic >> version >> hs >> ws >> cs;
  if (magic != "RASTER") throw FormatError("raster header: bad magic '" + magic + "'");
  if (version != "1") throw FormatError("raster header: unsupported version '" + version + "'");
  if (hs.empty()) throw FormatError("raster header: missing height");
  const std::size_t H = parse_dim(hs, "height");
  if (ws.empty()) throw FormatError("raster header: missing width");
  const std::size_t W = parse_dim(ws, "width");
  if (cs.empty()) throw FormatError("raster header: missing channels");
  const std::size_t C = parse_dim(cs, "channels");
  if (fields >> extra) throw FormatError("raster header: unexpected token '" + extra + "'");

  const std::size_t n = H * W * C;
  std::vector<unsigned char> bytes(n * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != bytes.size()) {
    throw FormatError("raster payload: truncated, header declares " + std::to_string(n) +
                      " values (" + std::to_string(bytes.size()) + " bytes) but only " +
                      std::to_string(got) + " bytes present");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("raster payload: dimension mismatch, trailing bytes after " +
                      std::to_string(n) + " values");
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = get_f32_le(&bytes[4 * i]);
    if (!std::isfinite(data[i])) {
      throw FormatError("raster payload: non-finite value at index " + std::to_string(i));
    }
  }
  return Raster(H, W, C, std::move(data));
}

void save_raster(const Raster& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("raster: cannot open '" + path.string() + "' for writing");
  write_raster(out, r);
}

Raster load_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("raster: cannot open '" + path.string() + "'");
  return read_raster(in);
}

}  // namespace imgconf
