#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace flowdehaze {

/// Row-major single-precision image.
class Raster {
 public:
  Raster() = default;
  Raster(int height, int width, float fill = 0.0f);
  Raster(int height, int width, std::vector<float> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(int y, int x) noexcept { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float operator()(int y, int x) const noexcept { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<float> pixels() noexcept { return data_; }
  std::span<const float> pixels() const noexcept { return data_; }
  const std::vector<float>& vector() const noexcept { return data_; }

  bool same_shape(const Raster& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }
  bool all_finite() const noexcept;

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Throws ValidationError naming `what` when shapes differ.
void require_same_shape(const Raster& a, const Raster& b, const char* what);

/// Mirror index into [0, n) without repeating the edge sample; valid for any offset.
int reflect_index(int i, int n) noexcept;

/// Window of `height`x`width` starting at (top, left); out-of-range coordinates reflect.
Raster crop_reflect(const Raster& src, int top, int left, int height, int width);

double mean(const Raster& r);
double mean_squared_error(const Raster& a, const Raster& b);

// On-disk raster container: 8-byte magic "FDRASTER", uint32 height, uint32 width,
// then height*width little-endian float32 values in row-major order.
void write_raster(const std::filesystem::path& path, const Raster& raster);
Raster read_raster(const std::filesystem::path& path);

}  // namespace flowdehaze
