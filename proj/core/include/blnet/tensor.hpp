#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "blnet/tensor_shape.hpp"

namespace blnet {

enum class Precision { F32, F64 };

std::string_view precision_name(Precision p);
Precision precision_from_name(std::string_view name);

template <typename T>
constexpr Precision precision_of();
template <>
constexpr Precision precision_of<float>() { return Precision::F32; }
template <>
constexpr Precision precision_of<double>() { return Precision::F64; }

// Dense row-major (N, C, H, W) buffer.
template <typename T>
struct Tensor {
  TensorShape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(TensorShape s, T fill = T(0)) : shape(s), data(static_cast<std::size_t>(s.numel()), fill) {}

  std::size_t size() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  std::size_t offset(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return static_cast<std::size_t>(((n * shape.channels + c) * shape.height + h) * shape.width + w);
  }
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) { return data[offset(n, c, h, w)]; }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const { return data[offset(n, c, h, w)]; }

  bool operator==(const Tensor&) const = default;
};

// Per-channel vector stored as a (1, C, 1, 1) tensor.
inline TensorShape channel_shape(int64_t c) { return {1, c, 1, 1}; }

template <typename T>
bool all_finite(const Tensor<T>& t);

}  // namespace blnet
