#pragma once

#include <cstdint>
#include <string>

namespace blnet {

// Four-axis extent descriptor in (batch, channels, height, width) order.
// Speech graphs read height as frequency and width as time.
struct TensorShape {
  int64_t batch = 1;
  int64_t channels = 1;
  int64_t height = 1;
  int64_t width = 1;

  constexpr int64_t numel() const { return batch * channels * height * width; }
  constexpr int64_t per_sample() const { return channels * height * width; }
  constexpr bool positive() const { return batch >= 1 && channels >= 1 && height >= 1 && width >= 1; }

  bool operator==(const TensorShape&) const = default;

  std::string to_string() const;
};

}  // namespace blnet
