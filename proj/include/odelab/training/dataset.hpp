#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "odelab/netcore/errors.hpp"
#include "odelab/netcore/tensor.hpp"

namespace odelab {

struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<int> labels;
  std::pair<double, double> value_range{0.0, 1.0};
  int class_count = 2;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
  std::size_t input_dim() const { return inputs.empty() ? 0 : inputs.front().size(); }
  double range_width() const { return value_range.second - value_range.first; }

  void validate() const {
    if (inputs.size() != labels.size()) throw ContractError("dataset has mismatched input and label counts");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= class_count) {
        throw ContractError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) + " out of range");
      }
      if (inputs[i].size() != input_dim()) throw DimensionError("sample " + std::to_string(i) + " has a different size");
      for (double v : inputs[i].data()) {
        if (!(v >= value_range.first && v <= value_range.second)) {
          throw ContractError("sample " + std::to_string(i) + " lies outside the value range");
        }
      }
    }
  }

  /// Samples [begin, end) as a new dataset with the same range.
  Dataset slice(std::size_t begin, std::size_t end) const {
    end = std::min(end, size());
    Dataset out{{}, {}, value_range, class_count};
    for (std::size_t i = begin; i < end; ++i) {
      out.inputs.push_back(inputs[i]);
      out.labels.push_back(labels[i]);
    }
    return out;
  }
};

/// Smallest and largest coordinate over all inputs.
inline std::pair<double, double> data_range(const std::vector<Tensor>& inputs) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const Tensor& x : inputs) {
    for (double v : x.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (inputs.empty()) return {0.0, 1.0};
  return {lo, hi};
}

/// Two interleaved half circles: class 0 on (cos t, sin t), class 1 on
/// (1 - cos t, 1/2 - sin t), t uniform in [0, pi], plus Gaussian noise.
inline Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n % 2 != 0) throw ContractError("two-moons sample count must be even, got " + std::to_string(n));
  if (noise < 0.0) throw ContractError("noise must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < n / 2 ? 0 : 1;
    const double t = angle(rng);
    double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    if (noise > 0.0) {
      x += noise * gauss(rng);
      y += noise * gauss(rng);
    }
    d.inputs.push_back(Tensor::vector({x, y}));
    d.labels.push_back(label);
  }
  d.value_range = data_range(d.inputs);
  return d;
}

/// Two concentric circles: class 0 on radius 1, class 1 on radius `factor`.
inline Dataset make_circles(std::size_t n, double noise, double factor, std::uint64_t seed) {
  if (n % 2 != 0) throw ContractError("circles sample count must be even, got " + std::to_string(n));
  if (!(factor > 0.0 && factor < 1.0)) throw ContractError("circles factor must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < n / 2 ? 0 : 1;
    const double t = angle(rng);
    const double r = label == 0 ? 1.0 : factor;
    double x = r * std::cos(t), y = r * std::sin(t);
    if (noise > 0.0) {
      x += noise * gauss(rng);
      y += noise * gauss(rng);
    }
    d.inputs.push_back(Tensor::vector({x, y}));
    d.labels.push_back(label);
  }
  d.value_range = data_range(d.inputs);
  return d;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw IoError(what + ": truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

inline std::ifstream open_binary(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return in;
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// MNIST-style IDX pair. Pixels are mapped linearly from [0, 255] to scale_to.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::optional<std::size_t> limit = std::nullopt,
                        std::pair<double, double> scale_to = {0.0, 1.0}) {
  if (!(scale_to.first < scale_to.second)) throw ContractError("scale range must satisfy lo < hi");
  std::ifstream img = detail::open_binary(images_path);
  std::ifstream lab = detail::open_binary(labels_path);
  const std::string in = images_path.string(), ln = labels_path.string();

  if (const std::uint32_t m = detail::read_be32(img, in); m != kIdxImageMagic) {
    throw FormatError(in + ": bad image magic " + std::to_string(m));
  }
  const std::uint32_t count = detail::read_be32(img, in);
  const std::uint32_t rows = detail::read_be32(img, in);
  const std::uint32_t cols = detail::read_be32(img, in);
  if (const std::uint32_t m = detail::read_be32(lab, ln); m != kIdxLabelMagic) {
    throw FormatError(ln + ": bad label magic " + std::to_string(m));
  }
  const std::uint32_t label_count = detail::read_be32(lab, ln);
  if (label_count != count) {
    throw FormatError("image count " + std::to_string(count) + " differs from label count " +
                      std::to_string(label_count));
  }
  if (rows == 0 || cols == 0) throw FormatError(in + ": zero image dimension");

  const std::size_t n = std::min<std::size_t>(count, limit.value_or(count));
  const std::size_t pixels = std::size_t{rows} * cols;
  const double scale = (scale_to.second - scale_to.first) / 255.0;
  Dataset d;
  d.class_count = 10;
  d.value_range = scale_to;
  std::vector<unsigned char> buf(pixels);
  for (std::size_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels))) {
      throw IoError(in + ": truncated at image " + std::to_string(i));
    }
    char label = 0;
    if (!lab.get(label)) throw IoError(ln + ": truncated at label " + std::to_string(i));
    const int l = static_cast<unsigned char>(label);
    if (l >= 10) throw FormatError(ln + ": label " + std::to_string(l) + " at index " + std::to_string(i));
    Tensor x({pixels});
    for (std::size_t p = 0; p < pixels; ++p) x[p] = std::min(scale_to.second, scale_to.first + scale * buf[p]);
    d.inputs.push_back(std::move(x));
    d.labels.push_back(l);
  }
  return d;
}

}  // namespace odelab
