// Dense row-major tensor.  Values are held in double precision; the 32-bit
// storage format exists only at the checkpoint serialization boundary.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace twlm {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<std::int64_t> shape) {
    Tensor t;
    std::int64_t n = 1;
    for (const auto d : shape) n *= d;
    t.shape = std::move(shape);
    t.data.assign(static_cast<std::size_t>(n), 0.0);
    return t;
  }

  static Tensor zeros_like(const Tensor& other) {
    return zeros(other.shape);
  }

  bool empty() const { return data.empty() && shape.empty(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }

  double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const double& at(std::int64_t i) const {
    return data[static_cast<std::size_t>(i)];
  }

  double& at(std::int64_t i, std::int64_t j) {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
  const double& at(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }

  double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const double& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  bool all_finite() const {
    for (const double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

}  // namespace twlm
