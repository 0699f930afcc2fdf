#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nnsens {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree (batch width vs. network input width, etc.).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A numerical condition that makes a result meaningless: NaN loss,
/// an all-zero sensitivity vector, a solver that did not converge.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or argument (bad activation tag, threshold
/// out of range, non-partition group map).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable input files.
class IoError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_string(std::size_t rows, std::size_t cols) {
  return "(" + std::to_string(rows) + " x " + std::to_string(cols) + ")";
}

/// Dense row-major matrix of doubles.
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}
  Tensor2(std::size_t r, std::size_t c, std::vector<double> v)
      : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols) {
      throw ShapeError("Tensor2: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape_string(rows, cols));
    }
  }

  static Tensor2 row_vector(std::span<const double> v) {
    return Tensor2(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }

  std::string shape() const { return shape_string(rows, cols); }

  bool all_finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Rows selected by index, in the given order.
  Tensor2 gather_rows(std::span<const std::size_t> indices) const {
    Tensor2 out(indices.size(), cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = row(indices[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;
};

enum class Activation { linear, relu, tanh, softmax };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "unknown";
}

inline Activation parse_activation(const std::string& tag) {
  if (tag == "linear" || tag == "identity") return Activation::linear;
  if (tag == "relu") return Activation::relu;
  if (tag == "tanh") return Activation::tanh;
  if (tag == "softmax") return Activation::softmax;
  throw ConfigError("unknown activation tag '" + tag + "'");
}

}  // namespace nnsens
