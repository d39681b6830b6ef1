#include "flowdehaze/unet.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "flowdehaze/error.hpp"
#include "flowdehaze/random.hpp"
#include "nn_ops.hpp"

namespace flowdehaze {

const char* to_string(Conditioning c) { return c == Conditioning::concat ? "concat" : "add"; }

Conditioning conditioning_from_string(const std::string& s) {
  if (s == "concat") return Conditioning::concat;
  if (s == "add") return Conditioning::add;
  throw ValidationError("unknown conditioning mode '" + s + "' (expected concat or add)");
}

void ArchSpec::validate() const {
  if (base_channels < 1) throw ValidationError("base_channels must be positive");
  if (depth < 1 || depth > 8) throw ValidationError("depth must be in [1, 8]");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) throw ValidationError("time_embed_dim must be even and >= 2");
}

namespace {

int group_count(int channels) {
  int g = std::min(8, channels);
  while (channels % g != 0) --g;
  return g;
}

// Sinusoidal features of 1000*t, half sines and half cosines.
template <typename T>
std::vector<T> time_features(std::span<const double> times, int dim) {
  const int half = dim / 2;
  std::vector<T> out(times.size() * std::size_t(dim));
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (int j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * j / half);
      const double arg = 1000.0 * times[i] * freq;
      out[i * dim + j] = T(std::sin(arg));
      out[i * dim + half + j] = T(std::cos(arg));
    }
  }
  return out;
}

template <typename Span>
Span slice(Span p, std::size_t off, std::size_t n) {
  return p.subspan(off, n);
}

template <typename T>
struct BlockTape {
  Tensor<T> x;
  nn::NormCache<T> norm1;
  Tensor<T> a1;  // pre-activation after norm1 + time projection
  Tensor<T> s1;
  nn::NormCache<T> norm2;
  Tensor<T> a2;
};

}  // namespace

template <typename T>
struct UNet<T>::Tape {
  int items = 0;
  std::vector<T> features, fc1_pre, fc1_act, temb, temb_act;
  std::vector<BlockTape<T>> encoder;
  BlockTape<T> middle;
  std::vector<BlockTape<T>> decoder;
  Tensor<T> head_input;
};

template <typename T>
UNet<T>::UNet(const ArchSpec& arch) : arch_(arch) {
  arch_.validate();
  const int e = arch_.time_embed_dim;
  const int b = arch_.base_channels;
  time_fc1_ = add_dense("time.fc1", e, e);
  time_fc2_ = add_dense("time.fc2", e, e);
  int in = arch_.in_channels();
  for (int l = 0; l < arch_.depth; ++l) {
    encoder_.push_back(add_block("enc" + std::to_string(l), in, b << l));
    in = b << l;
  }
  middle_ = add_block("mid", in, b << arch_.depth);
  decoder_.resize(arch_.depth);
  for (int l = arch_.depth - 1; l >= 0; --l) {
    decoder_[l] = add_block("dec" + std::to_string(l), (b << (l + 1)) + (b << l), b << l);
  }
  out_ = add_conv("out", b, arch_.out_channels(), 1);
}

template <typename T>
std::size_t UNet<T>::add_param(const std::string& name, std::size_t count) {
  layout_.push_back({name, count_, count});
  count_ += count;
  return layout_.back().offset;
}

template <typename T>
typename UNet<T>::Conv UNet<T>::add_conv(const std::string& name, int in, int out, int k) {
  Conv c;
  c.weight = add_param(name + ".weight", std::size_t(out) * in * k * k);
  c.bias = add_param(name + ".bias", std::size_t(out));
  c.in = in;
  c.out = out;
  c.k = k;
  return c;
}

template <typename T>
typename UNet<T>::Norm UNet<T>::add_norm(const std::string& name, int channels) {
  Norm n;
  n.gamma = add_param(name + ".gamma", std::size_t(channels));
  n.beta = add_param(name + ".beta", std::size_t(channels));
  n.channels = channels;
  n.groups = group_count(channels);
  return n;
}

template <typename T>
typename UNet<T>::Dense UNet<T>::add_dense(const std::string& name, int in, int out) {
  Dense d;
  d.weight = add_param(name + ".weight", std::size_t(out) * in);
  d.bias = add_param(name + ".bias", std::size_t(out));
  d.in = in;
  d.out = out;
  return d;
}

template <typename T>
typename UNet<T>::Block UNet<T>::add_block(const std::string& name, int in, int out) {
  Block blk;
  blk.conv1 = add_conv(name + ".conv1", in, out, 3);
  blk.norm1 = add_norm(name + ".norm1", out);
  blk.time = add_dense(name + ".time", arch_.time_embed_dim, out);
  blk.conv2 = add_conv(name + ".conv2", out, out, 3);
  blk.norm2 = add_norm(name + ".norm2", out);
  return blk;
}

template <typename T>
std::vector<T> UNet<T>::init_params(std::uint64_t seed) const {
  std::vector<T> p(count_, T(0));
  Rng rng(derive_seed(seed, 0x1417));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto fill_normal = [&](std::size_t off, std::size_t n, int fan_in) {
    const double scale = 1.0 / std::sqrt(double(fan_in));
    for (std::size_t i = 0; i < n; ++i) p[off + i] = T(scale * normal(rng));
  };
  const auto init_conv = [&](const Conv& c) { fill_normal(c.weight, std::size_t(c.out) * c.in * c.k * c.k, c.in * c.k * c.k); };
  const auto init_dense = [&](const Dense& d) { fill_normal(d.weight, std::size_t(d.out) * d.in, d.in); };
  const auto init_norm = [&](const Norm& n) { std::fill_n(p.begin() + std::ptrdiff_t(n.gamma), n.channels, T(1)); };
  const auto init_block = [&](const Block& b) {
    init_conv(b.conv1);
    init_norm(b.norm1);
    init_dense(b.time);
    init_conv(b.conv2);
    init_norm(b.norm2);
  };
  init_dense(time_fc1_);
  init_dense(time_fc2_);
  for (const auto& b : encoder_) init_block(b);
  init_block(middle_);
  for (int l = arch_.depth - 1; l >= 0; --l) init_block(decoder_[l]);
  init_conv(out_);
  return p;
}

namespace {

template <typename T, typename BlockT>
Tensor<T> block_forward(const BlockT& blk, std::span<const T> p, const Tensor<T>& x, const std::vector<T>& temb_act,
                        int embed_dim, BlockTape<T>* tape) {
  const auto conv = [&](const auto& c, const Tensor<T>& in) {
    return nn::conv_forward<T>(in, slice(p, c.weight, std::size_t(c.out) * c.in * c.k * c.k), slice(p, c.bias, c.out),
                               c.out, c.k);
  };
  const auto norm = [&](const auto& n, const Tensor<T>& in, nn::NormCache<T>* cache) {
    return nn::group_norm_forward<T>(in, slice(p, n.gamma, n.channels), slice(p, n.beta, n.channels), n.groups, cache);
  };

  nn::NormCache<T> c1, c2;
  Tensor<T> a1 = norm(blk.norm1, conv(blk.conv1, x), tape ? &c1 : nullptr);
  const auto proj = nn::dense_forward<T>(temb_act, x.n, slice(p, blk.time.weight, std::size_t(blk.time.out) * embed_dim),
                                         slice(p, blk.time.bias, blk.time.out), embed_dim, blk.time.out);
  for (int ch = 0; ch < a1.c; ++ch) {
    for (int i = 0; i < a1.n; ++i) {
      const T shift = proj[std::size_t(i) * a1.c + ch];
      T* q = a1.at(ch, i);
      for (std::size_t j = 0; j < a1.plane(); ++j) q[j] += shift;
    }
  }
  Tensor<T> s1 = a1;
  nn::silu_inplace(s1.data);
  Tensor<T> a2 = norm(blk.norm2, conv(blk.conv2, s1), tape ? &c2 : nullptr);
  Tensor<T> out = a2;
  nn::silu_inplace(out.data);
  if (tape) {
    tape->x = x;
    tape->norm1 = std::move(c1);
    tape->a1 = std::move(a1);
    tape->s1 = std::move(s1);
    tape->norm2 = std::move(c2);
    tape->a2 = std::move(a2);
  }
  return out;
}

// Returns dLoss/dx; adds this block's contribution to d_temb_act.
template <typename T, typename BlockT>
Tensor<T> block_backward(const BlockT& blk, std::span<const T> p, std::span<T> g, const BlockTape<T>& tape,
                         Tensor<T> d_out, const std::vector<T>& temb_act, int embed_dim, std::vector<T>& d_temb_act) {
  const auto conv_back = [&](const auto& c, const Tensor<T>& in, const Tensor<T>& dy) {
    const std::size_t wn = std::size_t(c.out) * c.in * c.k * c.k;
    return nn::conv_backward<T>(in, slice(p, c.weight, wn), dy, c.k, slice(g, c.weight, wn), slice(g, c.bias, c.out));
  };
  const auto norm_back = [&](const auto& n, const nn::NormCache<T>& cache, const Tensor<T>& dy) {
    return nn::group_norm_backward<T>(cache, slice(p, n.gamma, n.channels), dy, slice(g, n.gamma, n.channels),
                                      slice(g, n.beta, n.channels));
  };

  nn::silu_backward_inplace(tape.a2.data, d_out.data);
  Tensor<T> d_s1 = conv_back(blk.conv2, tape.s1, norm_back(blk.norm2, tape.norm2, d_out));
  nn::silu_backward_inplace(tape.a1.data, d_s1.data);
  const Tensor<T>& d_a1 = d_s1;

  const int items = d_a1.n;
  std::vector<T> d_proj(std::size_t(items) * d_a1.c, T(0));
  for (int ch = 0; ch < d_a1.c; ++ch) {
    for (int i = 0; i < items; ++i) {
      const T* q = d_a1.at(ch, i);
      T s = 0;
      for (std::size_t j = 0; j < d_a1.plane(); ++j) s += q[j];
      d_proj[std::size_t(i) * d_a1.c + ch] = s;
    }
  }
  const std::size_t wn = std::size_t(blk.time.out) * embed_dim;
  const auto d_t = nn::dense_backward<T>(temb_act, items, slice(p, blk.time.weight, wn), d_proj, embed_dim,
                                         blk.time.out, slice(g, blk.time.weight, wn), slice(g, blk.time.bias, blk.time.out));
  for (std::size_t i = 0; i < d_t.size(); ++i) d_temb_act[i] += d_t[i];

  return conv_back(blk.conv1, tape.x, norm_back(blk.norm1, tape.norm1, d_a1));
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += v.data[i];
}

}  // namespace

template <typename T>
Tensor<T> UNet<T>::forward(std::span<const T> p, std::span<const double> times, const Tensor<T>& input,
                           std::shared_ptr<Tape>* tape_out) const {
  if (p.size() != count_) throw ValidationError("parameter vector size does not match the architecture");
  if (input.c != arch_.in_channels()) throw ValidationError("input channel count does not match the architecture");
  if (std::size_t(input.n) != times.size()) throw ValidationError("one time value is required per batch item");
  const int m = arch_.size_multiple();
  if (input.h % m != 0 || input.w % m != 0 || input.h == 0 || input.w == 0) {
    throw ValidationError("spatial size " + std::to_string(input.h) + "x" + std::to_string(input.w) +
                          " is not divisible by 2^depth = " + std::to_string(m));
  }

  auto tape = tape_out ? std::make_shared<Tape>() : nullptr;
  const int e = arch_.time_embed_dim;
  const int items = input.n;

  auto features = time_features<T>(times, e);
  auto fc1_pre = nn::dense_forward<T>(features, items, slice(p, time_fc1_.weight, std::size_t(e) * e),
                                      slice(p, time_fc1_.bias, e), e, e);
  auto fc1_act = fc1_pre;
  nn::silu_inplace(fc1_act);
  auto temb = nn::dense_forward<T>(fc1_act, items, slice(p, time_fc2_.weight, std::size_t(e) * e),
                                   slice(p, time_fc2_.bias, e), e, e);
  auto temb_act = temb;
  nn::silu_inplace(temb_act);

  const int depth = arch_.depth;
  if (tape) {
    tape->encoder.resize(depth);
    tape->decoder.resize(depth);
  }
  std::vector<Tensor<T>> skips(depth);
  Tensor<T> h = input;
  for (int l = 0; l < depth; ++l) {
    if (l > 0) h = nn::avg_pool2(h);
    h = block_forward(encoder_[l], p, h, temb_act, e, tape ? &tape->encoder[l] : nullptr);
    skips[l] = h;
  }
  h = block_forward(middle_, p, nn::avg_pool2(h), temb_act, e, tape ? &tape->middle : nullptr);
  for (int l = depth - 1; l >= 0; --l) {
    h = block_forward(decoder_[l], p, nn::concat_channels(nn::upsample2(h), skips[l]), temb_act, e,
                      tape ? &tape->decoder[l] : nullptr);
  }
  Tensor<T> out = nn::conv_forward<T>(h, slice(p, out_.weight, std::size_t(out_.out) * out_.in), slice(p, out_.bias, out_.out),
                                      out_.out, 1);
  if (tape) {
    tape->items = items;
    tape->features = std::move(features);
    tape->fc1_pre = std::move(fc1_pre);
    tape->fc1_act = std::move(fc1_act);
    tape->temb = std::move(temb);
    tape->temb_act = std::move(temb_act);
    tape->head_input = std::move(h);
    *tape_out = std::move(tape);
  }
  return out;
}

template <typename T>
Tensor<T> UNet<T>::backward(std::span<const T> p, const Tape& tape, const Tensor<T>& d_output, std::span<T> g) const {
  if (g.size() != count_) throw ValidationError("gradient vector size does not match the architecture");
  const int e = arch_.time_embed_dim;
  const int items = tape.items;
  const int depth = arch_.depth;
  std::vector<T> d_temb_act(std::size_t(items) * e, T(0));

  const std::size_t wn = std::size_t(out_.out) * out_.in;
  Tensor<T> d_h = nn::conv_backward<T>(tape.head_input, slice(p, out_.weight, wn), d_output, 1, slice(g, out_.weight, wn),
                                       slice(g, out_.bias, out_.out));

  std::vector<Tensor<T>> d_skips(depth);
  for (int l = 0; l < depth; ++l) {
    Tensor<T> d_in = block_backward(decoder_[l], p, g, tape.decoder[l], std::move(d_h), tape.temb_act, e, d_temb_act);
    Tensor<T> d_up;
    nn::split_channels(d_in, decoder_[l].conv1.in - encoder_[l].conv2.out, d_up, d_skips[l]);
    d_h = nn::upsample2_backward(d_up);
  }
  d_h = nn::avg_pool2_backward(block_backward(middle_, p, g, tape.middle, std::move(d_h), tape.temb_act, e, d_temb_act));
  for (int l = depth - 1; l >= 0; --l) {
    add_into(d_h, d_skips[l]);
    d_h = block_backward(encoder_[l], p, g, tape.encoder[l], std::move(d_h), tape.temb_act, e, d_temb_act);
    if (l > 0) d_h = nn::avg_pool2_backward(d_h);
  }

  nn::silu_backward_inplace(tape.temb, d_temb_act);
  auto d_fc1_act = nn::dense_backward<T>(tape.fc1_act, items, slice(p, time_fc2_.weight, std::size_t(e) * e), d_temb_act,
                                         e, e, slice(g, time_fc2_.weight, std::size_t(e) * e), slice(g, time_fc2_.bias, e));
  nn::silu_backward_inplace(tape.fc1_pre, d_fc1_act);
  nn::dense_backward<T>(tape.features, items, slice(p, time_fc1_.weight, std::size_t(e) * e), d_fc1_act, e, e,
                        slice(g, time_fc1_.weight, std::size_t(e) * e), slice(g, time_fc1_.bias, e));
  return d_h;
}

template class UNet<float>;
template class UNet<double>;

}  // namespace flowdehaze
