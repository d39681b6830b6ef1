#include "flowdehaze/raster.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "flowdehaze/error.hpp"
#include "flowdehaze/random.hpp"

namespace flowdehaze {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::incompatibility: return "incompatibility";
  }
  return "unknown";
}

void rethrow_with_context(const Error& e, const std::string& context) {
  const std::string msg = context + ": " + e.what();
  switch (e.kind()) {
    case ErrorKind::validation: throw ValidationError(msg);
    case ErrorKind::data: throw DataError(msg);
    case ErrorKind::divergence: throw DivergenceError(msg);
    case ErrorKind::incompatibility: throw IncompatibilityError(msg);
  }
  throw Error(e.kind(), msg);
}

Raster::Raster(int height, int width, float fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) throw ValidationError("raster dimensions must be non-negative");
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

Raster::Raster(int height, int width, std::vector<float> pixels)
    : height_(height), width_(width), data_(std::move(pixels)) {
  if (height < 0 || width < 0 || data_.size() != static_cast<std::size_t>(height) * width) {
    throw ValidationError("raster payload does not match its dimensions");
  }
}

bool Raster::all_finite() const noexcept {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Raster& a, const Raster& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(what) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                          std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                          std::to_string(b.width()));
  }
}

int reflect_index(int i, int n) noexcept {
  if (n <= 1) return 0;
  const int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

Raster crop_reflect(const Raster& src, int top, int left, int height, int width) {
  Raster out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = reflect_index(top + y, src.height());
    for (int x = 0; x < width; ++x) {
      out(y, x) = src(sy, reflect_index(left + x, src.width()));
    }
  }
  return out;
}

double mean(const Raster& r) {
  if (r.empty()) return 0.0;
  double s = 0.0;
  for (float v : r.pixels()) s += v;
  return s / static_cast<double>(r.size());
}

double mean_squared_error(const Raster& a, const Raster& b) {
  require_same_shape(a, b, "mean_squared_error");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

namespace {

constexpr std::array<char, 8> kRasterMagic{'F', 'D', 'R', 'A', 'S', 'T', 'E', 'R'};

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

}  // namespace

void write_raster(const std::filesystem::path& path, const Raster& raster) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open raster for writing: " + path.string());
  os.write(kRasterMagic.data(), kRasterMagic.size());
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(raster.height()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(raster.width()));
  os.write(reinterpret_cast<const char*>(raster.pixels().data()),
           static_cast<std::streamsize>(raster.size() * sizeof(float)));
  if (!os) throw DataError("failed writing raster: " + path.string());
}

Raster read_raster(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open raster: " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kRasterMagic) throw DataError("not a raster file: " + path.string());
  const auto h = get_le<std::uint32_t>(is);
  const auto w = get_le<std::uint32_t>(is);
  if (!is || h > (1u << 16) || w > (1u << 16)) throw DataError("corrupt raster header: " + path.string());
  std::vector<float> px(static_cast<std::size_t>(h) * w);
  is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size() * sizeof(float)));
  if (!is) throw DataError("truncated raster payload: " + path.string());
  return Raster(static_cast<int>(h), static_cast<int>(w), std::move(px));
}

Raster standard_normal(int height, int width, Rng& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Raster out(height, width);
  for (auto& v : out.pixels()) v = normal(rng);
  return out;
}

}  // namespace flowdehaze
