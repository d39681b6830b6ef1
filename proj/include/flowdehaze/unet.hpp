#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace flowdehaze {

enum class Conditioning { concat, add };

const char* to_string(Conditioning c);
Conditioning conditioning_from_string(const std::string& s);

struct ArchSpec {
  int base_channels = 32;
  int depth = 3;
  int time_embed_dim = 32;
  Conditioning conditioning = Conditioning::concat;

  int in_channels() const noexcept { return conditioning == Conditioning::concat ? 2 : 1; }
  int out_channels() const noexcept { return 1; }
  /// Spatial sizes must be multiples of this.
  int size_multiple() const noexcept { return 1 << depth; }
  void validate() const;

  /// Test-sized network.
  static ArchSpec tiny(Conditioning c = Conditioning::concat) { return {8, 2, 16, c}; }
  static ArchSpec desk(Conditioning c = Conditioning::concat) { return {32, 3, 32, c}; }

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Channel-major activation block: index = ((c * n + i) * h + y) * w + x.
template <typename T>
struct Tensor {
  int c = 0, n = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c_, int n_, int h_, int w_) : c(c_), n(n_), h(h_), w(w_), data(std::size_t(c_) * n_ * h_ * w_, T(0)) {}

  std::size_t plane() const noexcept { return std::size_t(h) * w; }
  std::size_t size() const noexcept { return data.size(); }
  T* at(int ch, int item) noexcept { return data.data() + (std::size_t(ch) * n + item) * plane(); }
  const T* at(int ch, int item) const noexcept { return data.data() + (std::size_t(ch) * n + item) * plane(); }
};

/// One named slice of the flat parameter vector.
struct ParamEntry {
  std::string name;
  std::size_t offset = 0;
  std::size_t count = 0;
};

// Encoder/decoder with skip connections. Each block is
//   conv3x3 -> groupnorm -> (+ time projection) -> SiLU -> conv3x3 -> groupnorm -> SiLU
// with 2x2 average pooling on the way down and nearest upsampling on the way up.
// Time enters as a sinusoidal embedding followed by a two-layer SiLU MLP.
template <typename T>
class UNet {
 public:
  struct Tape;

  explicit UNet(const ArchSpec& arch);

  const ArchSpec& arch() const noexcept { return arch_; }
  const std::vector<ParamEntry>& layout() const noexcept { return layout_; }
  std::size_t parameter_count() const noexcept { return count_; }

  std::vector<T> init_params(std::uint64_t seed) const;

  /// input: arch.in_channels() x N x H x W; times: one per item. Records activations into *tape when given.
  Tensor<T> forward(std::span<const T> params, std::span<const double> times, const Tensor<T>& input,
                    std::shared_ptr<Tape>* tape = nullptr) const;

  /// Accumulates dLoss/dparams into grad; returns dLoss/dinput.
  Tensor<T> backward(std::span<const T> params, const Tape& tape, const Tensor<T>& d_output,
                     std::span<T> grad) const;

 private:
  struct Dense {
    std::size_t weight, bias;
    int in, out;
  };
  struct Conv {
    std::size_t weight, bias;
    int in, out, k;
  };
  struct Norm {
    std::size_t gamma, beta;
    int channels, groups;
  };
  struct Block {
    Conv conv1;
    Norm norm1;
    Dense time;
    Conv conv2;
    Norm norm2;
  };

  std::size_t add_param(const std::string& name, std::size_t count);
  Conv add_conv(const std::string& name, int in, int out, int k);
  Norm add_norm(const std::string& name, int channels);
  Dense add_dense(const std::string& name, int in, int out);
  Block add_block(const std::string& name, int in, int out);

  ArchSpec arch_;
  std::vector<ParamEntry> layout_;
  std::size_t count_ = 0;
  Dense time_fc1_{}, time_fc2_{};
  std::vector<Block> encoder_;  // levels 0..depth-1
  Block middle_{};
  std::vector<Block> decoder_;  // decoder_[l] produces level l
  Conv out_{};
};

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace flowdehaze
