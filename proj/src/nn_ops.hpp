#pragma once

// Layer primitives with hand-written backward passes over channel-major tensors.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "flowdehaze/unet.hpp"

namespace flowdehaze::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Eigen's vectorized reductions peel according to the address of the first element, so their
// rounding depends on where the allocator placed the buffer. Sums feeding gradients use a fixed order.
template <typename T>
double ordered_sum(const T* p, std::size_t n, std::size_t stride = 1) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += p[i * stride];
  return s;
}

// Rows are (ci, ky, kx); columns are (item, y, x). Zero padding of k/2.
template <typename T>
std::vector<T> im2col(const Tensor<T>& x, int k) {
  const int pad = k / 2;
  const std::size_t cols = std::size_t(x.n) * x.plane();
  std::vector<T> col(std::size_t(x.c) * k * k * cols, T(0));
  for (int ci = 0; ci < x.c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.data() + (std::size_t(ci * k + ky) * k + kx) * cols;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(x.w, x.w - dx);
        for (int i = 0; i < x.n; ++i) {
          const T* src = x.at(ci, i);
          T* dst = row + std::size_t(i) * x.plane();
          for (int y = 0; y < x.h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= x.h) continue;
            const T* s = src + std::size_t(sy) * x.w + dx;
            T* d = dst + std::size_t(y) * x.w;
            for (int xx = x_lo; xx < x_hi; ++xx) d[xx] = s[xx];
          }
        }
      }
    }
  }
  return col;
}

template <typename T>
void col2im_add(const std::vector<T>& col, int k, Tensor<T>& dx) {
  const int pad = k / 2;
  const std::size_t cols = std::size_t(dx.n) * dx.plane();
  for (int ci = 0; ci < dx.c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.data() + (std::size_t(ci * k + ky) * k + kx) * cols;
        const int ddx = kx - pad;
        const int x_lo = std::max(0, -ddx), x_hi = std::min(dx.w, dx.w - ddx);
        for (int i = 0; i < dx.n; ++i) {
          T* dst = dx.at(ci, i);
          const T* src = row + std::size_t(i) * dx.plane();
          for (int y = 0; y < dx.h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= dx.h) continue;
            T* d = dst + std::size_t(sy) * dx.w + ddx;
            const T* s = src + std::size_t(y) * dx.w;
            for (int xx = x_lo; xx < x_hi; ++xx) d[xx] += s[xx];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int out, int k) {
  Tensor<T> y(out, x.n, x.h, x.w);
  const Eigen::Index cols = Eigen::Index(x.n) * x.plane();
  const Eigen::Index depth = Eigen::Index(x.c) * k * k;
  ConstMatMap<T> w(weight.data(), out, depth);
  MatMap<T> ym(y.data.data(), out, cols);
  if (k == 1) {
    ym.noalias() = w * ConstMatMap<T>(x.data.data(), depth, cols);
  } else {
    const auto col = im2col(x, k);
    ym.noalias() = w * ConstMatMap<T>(col.data(), depth, cols);
  }
  for (int co = 0; co < out; ++co) ym.row(co).array() += bias[co];
  return y;
}

template <typename T>
Tensor<T> conv_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& dy, int k,
                        std::span<T> d_weight, std::span<T> d_bias) {
  const int out = dy.c;
  const Eigen::Index cols = Eigen::Index(x.n) * x.plane();
  const Eigen::Index depth = Eigen::Index(x.c) * k * k;
  ConstMatMap<T> w(weight.data(), out, depth);
  ConstMatMap<T> dym(dy.data.data(), out, cols);
  MatMap<T> dw(d_weight.data(), out, depth);
  for (int co = 0; co < out; ++co) d_bias[co] += T(ordered_sum(dym.row(co).data(), std::size_t(cols)));

  Tensor<T> dx(x.c, x.n, x.h, x.w);
  if (k == 1) {
    dw.noalias() += dym * ConstMatMap<T>(x.data.data(), depth, cols).transpose();
    MatMap<T>(dx.data.data(), depth, cols).noalias() = w.transpose() * dym;
  } else {
    const auto col = im2col(x, k);
    dw.noalias() += dym * ConstMatMap<T>(col.data(), depth, cols).transpose();
    std::vector<T> dcol(col.size());
    MatMap<T>(dcol.data(), depth, cols).noalias() = w.transpose() * dym;
    col2im_add(dcol, k, dx);
  }
  return dx;
}

template <typename T>
struct NormCache {
  Tensor<T> xhat;
  std::vector<T> rstd;  // per (item, group)
  int groups = 1;
};

inline constexpr double kNormEps = 1e-5;

template <typename T>
Tensor<T> group_norm_forward(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta, int groups,
                             NormCache<T>* cache) {
  const int per_group = x.c / groups;
  const double count = double(per_group) * x.plane();
  Tensor<T> xhat(x.c, x.n, x.h, x.w);
  std::vector<T> rstd(std::size_t(x.n) * groups);
  for (int i = 0; i < x.n; ++i) {
    for (int g = 0; g < groups; ++g) {
      double s = 0.0, ss = 0.0;
      for (int ch = g * per_group; ch < (g + 1) * per_group; ++ch) {
        const T* p = x.at(ch, i);
        for (std::size_t j = 0; j < x.plane(); ++j) s += p[j];
      }
      const double mu = s / count;
      for (int ch = g * per_group; ch < (g + 1) * per_group; ++ch) {
        const T* p = x.at(ch, i);
        for (std::size_t j = 0; j < x.plane(); ++j) ss += (p[j] - mu) * (p[j] - mu);
      }
      const T r = T(1.0 / std::sqrt(ss / count + kNormEps));
      rstd[std::size_t(i) * groups + g] = r;
      for (int ch = g * per_group; ch < (g + 1) * per_group; ++ch) {
        const T* p = x.at(ch, i);
        T* q = xhat.at(ch, i);
        for (std::size_t j = 0; j < x.plane(); ++j) q[j] = (p[j] - T(mu)) * r;
      }
    }
  }
  Tensor<T> y(x.c, x.n, x.h, x.w);
  for (int ch = 0; ch < x.c; ++ch) {
    for (int i = 0; i < x.n; ++i) {
      const T* q = xhat.at(ch, i);
      T* o = y.at(ch, i);
      for (std::size_t j = 0; j < x.plane(); ++j) o[j] = gamma[ch] * q[j] + beta[ch];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
    cache->groups = groups;
  }
  return y;
}

template <typename T>
Tensor<T> group_norm_backward(const NormCache<T>& cache, std::span<const T> gamma, const Tensor<T>& dy,
                              std::span<T> d_gamma, std::span<T> d_beta) {
  const auto& xhat = cache.xhat;
  const int groups = cache.groups;
  const int per_group = dy.c / groups;
  const double count = double(per_group) * dy.plane();
  Tensor<T> dx(dy.c, dy.n, dy.h, dy.w);
  for (int ch = 0; ch < dy.c; ++ch) {
    double sg = 0.0, sb = 0.0;
    for (int i = 0; i < dy.n; ++i) {
      const T* d = dy.at(ch, i);
      const T* q = xhat.at(ch, i);
      for (std::size_t j = 0; j < dy.plane(); ++j) {
        sg += d[j] * q[j];
        sb += d[j];
      }
    }
    d_gamma[ch] += T(sg);
    d_beta[ch] += T(sb);
  }
  for (int i = 0; i < dy.n; ++i) {
    for (int g = 0; g < groups; ++g) {
      double s1 = 0.0, s2 = 0.0;
      for (int ch = g * per_group; ch < (g + 1) * per_group; ++ch) {
        const T* d = dy.at(ch, i);
        const T* q = xhat.at(ch, i);
        for (std::size_t j = 0; j < dy.plane(); ++j) {
          const double dq = double(d[j]) * gamma[ch];
          s1 += dq;
          s2 += dq * q[j];
        }
      }
      const double r = cache.rstd[std::size_t(i) * groups + g];
      const double m1 = s1 / count, m2 = s2 / count;
      for (int ch = g * per_group; ch < (g + 1) * per_group; ++ch) {
        const T* d = dy.at(ch, i);
        const T* q = xhat.at(ch, i);
        T* o = dx.at(ch, i);
        for (std::size_t j = 0; j < dy.plane(); ++j) {
          o[j] = T(r * (double(d[j]) * gamma[ch] - m1 - double(q[j]) * m2));
        }
      }
    }
  }
  return dx;
}

template <typename T>
T silu(T v) {
  return v / (T(1) + std::exp(-v));
}

template <typename T>
T silu_grad(T v) {
  const T s = T(1) / (T(1) + std::exp(-v));
  return s * (T(1) + v * (T(1) - s));
}

template <typename T>
void silu_inplace(std::vector<T>& v) {
  for (auto& e : v) e = silu(e);
}

template <typename T>
void silu_backward_inplace(const std::vector<T>& pre, std::vector<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= silu_grad(pre[i]);
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  Tensor<T> y(x.c, x.n, x.h / 2, x.w / 2);
  for (int ch = 0; ch < x.c; ++ch) {
    for (int i = 0; i < x.n; ++i) {
      const T* p = x.at(ch, i);
      T* q = y.at(ch, i);
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx) {
          const T* a = p + std::size_t(2 * yy) * x.w + 2 * xx;
          q[std::size_t(yy) * y.w + xx] = T(0.25) * (a[0] + a[1] + a[x.w] + a[x.w + 1]);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.c, dy.n, dy.h * 2, dy.w * 2);
  for (int ch = 0; ch < dy.c; ++ch) {
    for (int i = 0; i < dy.n; ++i) {
      const T* q = dy.at(ch, i);
      T* p = dx.at(ch, i);
      for (int yy = 0; yy < dx.h; ++yy) {
        for (int xx = 0; xx < dx.w; ++xx) p[std::size_t(yy) * dx.w + xx] = T(0.25) * q[std::size_t(yy / 2) * dy.w + xx / 2];
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y(x.c, x.n, x.h * 2, x.w * 2);
  for (int ch = 0; ch < x.c; ++ch) {
    for (int i = 0; i < x.n; ++i) {
      const T* p = x.at(ch, i);
      T* q = y.at(ch, i);
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx) q[std::size_t(yy) * y.w + xx] = p[std::size_t(yy / 2) * x.w + xx / 2];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.c, dy.n, dy.h / 2, dy.w / 2);
  for (int ch = 0; ch < dy.c; ++ch) {
    for (int i = 0; i < dy.n; ++i) {
      const T* q = dy.at(ch, i);
      T* p = dx.at(ch, i);
      for (int yy = 0; yy < dy.h; ++yy) {
        for (int xx = 0; xx < dy.w; ++xx) p[std::size_t(yy / 2) * dx.w + xx / 2] += q[std::size_t(yy) * dy.w + xx];
      }
    }
  }
  return dx;
}

/// Channel concatenation; channel-major layout makes this an append.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> y;
  y.c = a.c + b.c;
  y.n = a.n;
  y.h = a.h;
  y.w = a.w;
  y.data.reserve(a.size() + b.size());
  y.data.insert(y.data.end(), a.data.begin(), a.data.end());
  y.data.insert(y.data.end(), b.data.begin(), b.data.end());
  return y;
}

template <typename T>
void split_channels(const Tensor<T>& y, int first, Tensor<T>& a, Tensor<T>& b) {
  a = Tensor<T>(first, y.n, y.h, y.w);
  b = Tensor<T>(y.c - first, y.n, y.h, y.w);
  std::copy(y.data.begin(), y.data.begin() + std::ptrdiff_t(a.size()), a.data.begin());
  std::copy(y.data.begin() + std::ptrdiff_t(a.size()), y.data.end(), b.data.begin());
}

/// x: items x in (row-major); returns items x out.
template <typename T>
std::vector<T> dense_forward(const std::vector<T>& x, int items, std::span<const T> weight, std::span<const T> bias,
                             int in, int out) {
  std::vector<T> y(std::size_t(items) * out);
  ConstMatMap<T> w(weight.data(), out, in);
  MatMap<T> ym(y.data(), items, out);
  ym.noalias() = ConstMatMap<T>(x.data(), items, in) * w.transpose();
  for (int i = 0; i < items; ++i) {
    for (int o = 0; o < out; ++o) ym(i, o) += bias[o];
  }
  return y;
}

template <typename T>
std::vector<T> dense_backward(const std::vector<T>& x, int items, std::span<const T> weight, const std::vector<T>& dy,
                              int in, int out, std::span<T> d_weight, std::span<T> d_bias) {
  ConstMatMap<T> w(weight.data(), out, in);
  ConstMatMap<T> dym(dy.data(), items, out);
  MatMap<T>(d_weight.data(), out, in).noalias() += dym.transpose() * ConstMatMap<T>(x.data(), items, in);
  for (int o = 0; o < out; ++o) d_bias[o] += T(ordered_sum(dy.data() + o, std::size_t(items), std::size_t(out)));
  std::vector<T> dx(std::size_t(items) * in);
  MatMap<T>(dx.data(), items, in).noalias() = dym * w;
  return dx;
}

}  // namespace flowdehaze::nn
