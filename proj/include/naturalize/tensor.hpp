// SPDX-License-Identifier: Apache-2.0
//
// Dense tensor engine with reverse-mode autodiff on an explicit tape.
// Layout is row-major; model tensors are [N,C,H,W] (conv-style ops also
// accept [C,H,W] and treat it as a batch of one). Convolutions run as
// im2col + GEMM; GEMM is delegated to Eigen.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "naturalize/errors.hpp"

namespace naturalize {

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, same size as data when present
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, bool req = false)
      : shape(std::move(s)), requires_grad(req) {
    data.assign(numel_of(shape), T(0));
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw DimensionError("tensor dimension must be positive, got " + std::to_string(d));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <class T>
TensorPtr<T> make_tensor(std::vector<int> shape, bool requires_grad = false) {
  return std::make_shared<Tensor<T>>(std::move(shape), requires_grad);
}

template <class T>
TensorPtr<T> make_scalar(T value) {
  auto t = make_tensor<T>({1});
  t->data[0] = value;
  return t;
}

// Ordered record of differentiable ops. backward() replays it once in
// reverse; a second backward on the same tape is a contract error.
template <class T>
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  bool empty() const { return nodes_.empty(); }
  bool consumed() const { return consumed_; }

  void run_backward() {
    if (consumed_) throw ContractError("tape already consumed by a previous backward()");
    if (nodes_.empty()) throw ContractError("backward() on an empty tape");
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    consumed_ = true;
    nodes_.clear();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

template <class T>
void backward(Tape<T>& tape, const TensorPtr<T>& loss) {
  if (!loss || loss->numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + (loss ? loss->shape_str() : std::string("null")));
  loss->ensure_grad();
  loss->grad[0] = T(1);
  tape.run_backward();
}

namespace detail {

template <class T>
using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<EigenMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const EigenMat<T>>;

// C = A(m x k) * B(k x n), optionally accumulating into C.
template <class T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  ConstMatMap<T> A(a, m, k);
  ConstMatMap<T> B(b, k, n);
  MatMap<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

// C = A(m x k) * B(n x k)^T
template <class T>
void gemm_bt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  ConstMatMap<T> A(a, m, k);
  ConstMatMap<T> B(b, n, k);
  MatMap<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

// C = A(k x m)^T * B(k x n)
template <class T>
void gemm_at(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  ConstMatMap<T> A(a, k, m);
  ConstMatMap<T> B(b, k, n);
  MatMap<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

// Gather windows of src[C,Hs,Ws] anchored on a (Hg x Wg) grid with the given
// stride/pad into dst[(C*k*k) x (Hg*Wg)]. Out-of-bounds reads are zero.
template <class T>
void im2col(const T* src, int C, int Hs, int Ws, int k, int stride, int pad,
            int Hg, int Wg, T* dst) {
  const int cols = Hg * Wg;
  for (int c = 0; c < C; ++c) {
    const T* plane = src + static_cast<std::size_t>(c) * Hs * Ws;
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        T* row = dst + (static_cast<std::size_t>(c) * k * k + dy * k + dx) * cols;
        for (int oy = 0; oy < Hg; ++oy) {
          const int sy = oy * stride - pad + dy;
          T* out = row + static_cast<std::size_t>(oy) * Wg;
          if (sy < 0 || sy >= Hs) {
            std::fill(out, out + Wg, T(0));
            continue;
          }
          const T* in = plane + static_cast<std::size_t>(sy) * Ws;
          for (int ox = 0; ox < Wg; ++ox) {
            const int sx = ox * stride - pad + dx;
            out[ox] = (sx >= 0 && sx < Ws) ? in[sx] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add dst[(C*k*k) x (Hg*Wg)] back into src.
template <class T>
void col2im_add(const T* cols_buf, int C, int Hs, int Ws, int k, int stride,
                int pad, int Hg, int Wg, T* src) {
  const int cols = Hg * Wg;
  for (int c = 0; c < C; ++c) {
    T* plane = src + static_cast<std::size_t>(c) * Hs * Ws;
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        const T* row = cols_buf + (static_cast<std::size_t>(c) * k * k + dy * k + dx) * cols;
        for (int oy = 0; oy < Hg; ++oy) {
          const int sy = oy * stride - pad + dy;
          if (sy < 0 || sy >= Hs) continue;
          T* out = plane + static_cast<std::size_t>(sy) * Ws;
          const T* in = row + static_cast<std::size_t>(oy) * Wg;
          for (int ox = 0; ox < Wg; ++ox) {
            const int sx = ox * stride - pad + dx;
            if (sx >= 0 && sx < Ws) out[sx] += in[ox];
          }
        }
      }
    }
  }
}

struct ConvGeom {
  int n, c_in, h, w;     // input
  int h_out, w_out;      // spatial output
  bool batched;          // false when caller passed [C,H,W]
};

template <class T>
inline ConvGeom conv_input_geom(const Tensor<T>& x) {
  ConvGeom g{};
  if (x.ndim() == 4) {
    g = {x.shape[0], x.shape[1], x.shape[2], x.shape[3], 0, 0, true};
  } else if (x.ndim() == 3) {
    g = {1, x.shape[0], x.shape[1], x.shape[2], 0, 0, false};
  } else {
    throw DimensionError("conv input must be [C,H,W] or [N,C,H,W], got " + x.shape_str());
  }
  return g;
}

template <class T>
inline bool track(Tape<T>* tape, std::initializer_list<const TensorPtr<T>*> ins) {
  if (!tape) return false;
  for (auto p : ins)
    if (*p && (*p)->requires_grad) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, weight [C_out, C_in, k, k], bias [C_out].
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b, int stride, int padding) {
  auto g = detail::conv_input_geom(*x);
  if (w->ndim() != 4)
    throw DimensionError("conv2d weight must be [C_out,C_in,k,k], got " + w->shape_str());
  const int c_out = w->shape[0], c_in = w->shape[1], k = w->shape[2];
  if (w->shape[3] != k) throw DimensionError("conv2d kernel must be square, got " + w->shape_str());
  if (k % 2 == 0) throw DimensionError("conv2d kernel size must be odd, got " + std::to_string(k));
  if (c_in != g.c_in)
    throw DimensionError("conv2d channel mismatch: input axis 1 has " + std::to_string(g.c_in) +
                         " channels, weight axis 1 expects " + std::to_string(c_in));
  if (b->numel() != static_cast<std::size_t>(c_out))
    throw DimensionError("conv2d bias axis 0 must have " + std::to_string(c_out) +
                         " entries, got " + std::to_string(b->numel()));
  if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
  auto out_dim = [&](int in, const char* axis) {
    int num = in + 2 * padding - k;
    if (num < 0 || num % stride != 0)
      throw DimensionError(std::string("conv2d output size on ") + axis + " axis is not a positive integer");
    return num / stride + 1;
  };
  g.h_out = out_dim(g.h, "H");
  g.w_out = out_dim(g.w, "W");

  const int cols = g.h_out * g.w_out;
  const int krows = c_in * k * k;
  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(g.n) * krows * cols);
  std::vector<int> out_shape = g.batched ? std::vector<int>{g.n, c_out, g.h_out, g.w_out}
                                         : std::vector<int>{c_out, g.h_out, g.w_out};
  auto out = make_tensor<T>(out_shape);

  const std::size_t in_plane = static_cast<std::size_t>(g.c_in) * g.h * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(c_out) * cols;
  for (int n = 0; n < g.n; ++n) {
    T* coln = col->data() + static_cast<std::size_t>(n) * krows * cols;
    detail::im2col(x->data.data() + n * in_plane, g.c_in, g.h, g.w, k, stride, padding,
                   g.h_out, g.w_out, coln);
    detail::gemm(w->data.data(), coln, out->data.data() + n * out_plane, c_out, krows, cols, false);
  }
  for (int n = 0; n < g.n; ++n) {
    T* on = out->data.data() + n * out_plane;
    for (int co = 0; co < c_out; ++co) {
      const T bias = b->data[co];
      T* row = on + static_cast<std::size_t>(co) * cols;
      for (int i = 0; i < cols; ++i) row[i] += bias;
    }
  }

  if (detail::track<T>(tape, {&x, &w, &b})) {
    out->requires_grad = true;
    auto geom = g;
    int kk = k, s = stride, p = padding, co_n = c_out, kr = krows, nc = cols;
    tape->record([x, w, b, out, col, geom, kk, s, p, co_n, kr, nc]() {
      const std::size_t in_plane = static_cast<std::size_t>(geom.c_in) * geom.h * geom.w;
      const std::size_t out_plane = static_cast<std::size_t>(co_n) * nc;
      if (w->requires_grad) {
        w->ensure_grad();
        for (int n = 0; n < geom.n; ++n)
          detail::gemm_bt(out->grad.data() + n * out_plane,
                          col->data() + static_cast<std::size_t>(n) * kr * nc,
                          w->grad.data(), co_n, nc, kr, true);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int n = 0; n < geom.n; ++n) {
          const T* gn = out->grad.data() + n * out_plane;
          for (int co = 0; co < co_n; ++co) {
            T acc = T(0);
            const T* row = gn + static_cast<std::size_t>(co) * nc;
            for (int i = 0; i < nc; ++i) acc += row[i];
            b->grad[co] += acc;
          }
        }
      }
      if (x->requires_grad) {
        x->ensure_grad();
        std::vector<T> dcol(static_cast<std::size_t>(kr) * nc);
        for (int n = 0; n < geom.n; ++n) {
          detail::gemm_at(w->data.data(), out->grad.data() + n * out_plane, dcol.data(),
                          kr, co_n, nc, false);
          detail::col2im_add(dcol.data(), geom.c_in, geom.h, geom.w, kk, s, p,
                             geom.h_out, geom.w_out, x->grad.data() + n * in_plane);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d_transpose: adjoint of conv2d. Weight [C_in, C_out, k, k]; with
// output_padding = stride-1 the spatial output is exactly stride*H.
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> conv2d_transpose(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                              const TensorPtr<T>& b, int stride, int padding) {
  auto g = detail::conv_input_geom(*x);
  if (w->ndim() != 4)
    throw DimensionError("conv2d_transpose weight must be [C_in,C_out,k,k], got " + w->shape_str());
  const int c_in = w->shape[0], c_out = w->shape[1], k = w->shape[2];
  if (w->shape[3] != k)
    throw DimensionError("conv2d_transpose kernel must be square, got " + w->shape_str());
  if (c_in != g.c_in)
    throw DimensionError("conv2d_transpose channel mismatch: input axis 1 has " + std::to_string(g.c_in) +
                         " channels, weight axis 0 expects " + std::to_string(c_in));
  if (b->numel() != static_cast<std::size_t>(c_out))
    throw DimensionError("conv2d_transpose bias axis 0 must have " + std::to_string(c_out) + " entries");
  if (stride < 1) throw DimensionError("conv2d_transpose stride must be >= 1");
  const int h_out = (g.h - 1) * stride - 2 * padding + k + (stride - 1);
  const int w_out = (g.w - 1) * stride - 2 * padding + k + (stride - 1);
  if (h_out <= 0 || w_out <= 0)
    throw DimensionError("conv2d_transpose output size is not positive");

  const int cols = g.h * g.w;          // grid = input positions
  const int krows = c_out * k * k;
  std::vector<int> out_shape = g.batched ? std::vector<int>{g.n, c_out, h_out, w_out}
                                         : std::vector<int>{c_out, h_out, w_out};
  auto out = make_tensor<T>(out_shape);

  const std::size_t in_plane = static_cast<std::size_t>(c_in) * cols;
  const std::size_t out_plane = static_cast<std::size_t>(c_out) * h_out * w_out;
  std::vector<T> colbuf(static_cast<std::size_t>(krows) * cols);
  for (int n = 0; n < g.n; ++n) {
    // col = W^T(krows x c_in) * x_n(c_in x cols), then scatter into the output
    detail::gemm_at(w->data.data(), x->data.data() + n * in_plane, colbuf.data(),
                    krows, c_in, cols, false);
    detail::col2im_add(colbuf.data(), c_out, h_out, w_out, k, stride, padding,
                       g.h, g.w, out->data.data() + n * out_plane);
  }
  for (int n = 0; n < g.n; ++n) {
    T* on = out->data.data() + n * out_plane;
    for (int co = 0; co < c_out; ++co) {
      const T bias = b->data[co];
      T* row = on + static_cast<std::size_t>(co) * h_out * w_out;
      for (int i = 0; i < h_out * w_out; ++i) row[i] += bias;
    }
  }

  if (detail::track<T>(tape, {&x, &w, &b})) {
    out->requires_grad = true;
    auto geom = g;
    int kk = k, s = stride, p = padding, ho = h_out, wo = w_out, kr = krows, nc = cols, ci = c_in, co_n = c_out;
    tape->record([x, w, b, out, geom, kk, s, p, ho, wo, kr, nc, ci, co_n]() {
      const std::size_t in_plane = static_cast<std::size_t>(ci) * nc;
      const std::size_t out_plane = static_cast<std::size_t>(co_n) * ho * wo;
      std::vector<T> gcol(static_cast<std::size_t>(kr) * nc);
      const bool need_x = x->requires_grad, need_w = w->requires_grad;
      if (need_x) x->ensure_grad();
      if (need_w) w->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (int n = 0; n < geom.n; ++n) {
        const T* gout = out->grad.data() + n * out_plane;
        if (need_x || need_w)
          detail::im2col(gout, co_n, ho, wo, kk, s, p, geom.h, geom.w, gcol.data());
        if (need_x)
          detail::gemm(w->data.data(), gcol.data(), x->grad.data() + n * in_plane,
                       ci, kr, nc, true);
        if (need_w)
          detail::gemm_bt(x->data.data() + n * in_plane, gcol.data(), w->grad.data(),
                          ci, nc, kr, true);
        if (b->requires_grad) {
          for (int co = 0; co < co_n; ++co) {
            T acc = T(0);
            const T* row = gout + static_cast<std::size_t>(co) * ho * wo;
            for (int i = 0; i < ho * wo; ++i) acc += row[i];
            b->grad[co] += acc;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pixel_shuffle: [C*r^2, H, W] -> [C, r*H, r*W] with
// out[c, y*r+dy, x*r+dx] = in[c*r^2 + dy*r + dx, y, x].
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> pixel_shuffle(Tape<T>* tape, const TensorPtr<T>& x, int r) {
  auto g = detail::conv_input_geom(*x);
  if (r < 1) throw DimensionError("pixel_shuffle factor must be >= 1");
  if (g.c_in % (r * r) != 0)
    throw DimensionError("pixel_shuffle: channel axis (" + std::to_string(g.c_in) +
                         ") not divisible by r^2 = " + std::to_string(r * r));
  const int c_out = g.c_in / (r * r);
  const int ho = g.h * r, wo = g.w * r;
  std::vector<int> out_shape = g.batched ? std::vector<int>{g.n, c_out, ho, wo}
                                         : std::vector<int>{c_out, ho, wo};
  auto out = make_tensor<T>(out_shape);

  const std::size_t in_plane = static_cast<std::size_t>(g.c_in) * g.h * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(c_out) * ho * wo;
  auto index_map = [&](int n, bool forward_dir, const T* src, T* dst) {
    for (int c = 0; c < c_out; ++c)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx) {
          const T* sp = src + (static_cast<std::size_t>(c) * r * r + dy * r + dx) * g.h * g.w;
          T* dp = dst + static_cast<std::size_t>(c) * ho * wo;
          for (int y = 0; y < g.h; ++y)
            for (int xx = 0; xx < g.w; ++xx) {
              const std::size_t di = static_cast<std::size_t>(y * r + dy) * wo + (xx * r + dx);
              const std::size_t si = static_cast<std::size_t>(y) * g.w + xx;
              if (forward_dir)
                dp[di] = sp[si];
              else
                const_cast<T*>(sp)[si] += dp[di];
            }
        }
    (void)n;
  };
  for (int n = 0; n < g.n; ++n)
    index_map(n, true, x->data.data() + n * in_plane, out->data.data() + n * out_plane);

  if (detail::track<T>(tape, {&x})) {
    out->requires_grad = true;
    auto geom = g;
    tape->record([x, out, geom, r, c_out, ho, wo]() {
      x->ensure_grad();
      const std::size_t in_plane = static_cast<std::size_t>(geom.c_in) * geom.h * geom.w;
      const std::size_t out_plane = static_cast<std::size_t>(c_out) * ho * wo;
      for (int n = 0; n < geom.n; ++n) {
        T* gx = x->grad.data() + n * in_plane;
        const T* go = out->grad.data() + n * out_plane;
        for (int c = 0; c < c_out; ++c)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
              T* sp = gx + (static_cast<std::size_t>(c) * r * r + dy * r + dx) * geom.h * geom.w;
              const T* dp = go + static_cast<std::size_t>(c) * ho * wo;
              for (int y = 0; y < geom.h; ++y)
                for (int xx = 0; xx < geom.w; ++xx)
                  sp[static_cast<std::size_t>(y) * geom.w + xx] +=
                      dp[static_cast<std::size_t>(y * r + dy) * wo + (xx * r + dx)];
            }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// avg_pool2: 2x2 mean pooling, no implicit padding.
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> avg_pool2(Tape<T>* tape, const TensorPtr<T>& x) {
  auto g = detail::conv_input_geom(*x);
  if (g.h % 2 != 0 || g.w % 2 != 0)
    throw DimensionError("avg_pool2 needs even spatial axes, got H=" + std::to_string(g.h) +
                         " W=" + std::to_string(g.w));
  const int ho = g.h / 2, wo = g.w / 2;
  std::vector<int> out_shape = g.batched ? std::vector<int>{g.n, g.c_in, ho, wo}
                                         : std::vector<int>{g.c_in, ho, wo};
  auto out = make_tensor<T>(out_shape);
  const std::size_t planes = static_cast<std::size_t>(g.n) * g.c_in;
  for (std::size_t pidx = 0; pidx < planes; ++pidx) {
    const T* in = x->data.data() + pidx * g.h * g.w;
    T* op = out->data.data() + pidx * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        const T* r0 = in + static_cast<std::size_t>(2 * y) * g.w + 2 * xx;
        const T* r1 = r0 + g.w;
        op[static_cast<std::size_t>(y) * wo + xx] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
      }
  }
  if (detail::track<T>(tape, {&x})) {
    out->requires_grad = true;
    auto geom = g;
    tape->record([x, out, geom, ho, wo]() {
      x->ensure_grad();
      const std::size_t planes = static_cast<std::size_t>(geom.n) * geom.c_in;
      for (std::size_t pidx = 0; pidx < planes; ++pidx) {
        T* gx = x->grad.data() + pidx * geom.h * geom.w;
        const T* go = out->grad.data() + pidx * ho * wo;
        for (int y = 0; y < ho; ++y)
          for (int xx = 0; xx < wo; ++xx) {
            const T v = go[static_cast<std::size_t>(y) * wo + xx] * T(0.25);
            T* r0 = gx + static_cast<std::size_t>(2 * y) * geom.w + 2 * xx;
            T* r1 = r0 + geom.w;
            r0[0] += v;
            r0[1] += v;
            r1[0] += v;
            r1[1] += v;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch_norm over [N,C,H,W]. Train mode normalizes by batch statistics and
// updates running stats (momentum 0.1, unbiased running variance); eval mode
// uses the running stats. epsilon = 1e-5.
// ---------------------------------------------------------------------------
enum class BnMode { Train, Eval };

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <class T>
TensorPtr<T> batch_norm(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, const TensorPtr<T>& running_mean,
                        const TensorPtr<T>& running_var, BnMode mode) {
  if (x->ndim() != 4)
    throw DimensionError("batch_norm input must be [N,C,H,W], got " + x->shape_str());
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  for (auto* t : {&gamma, &beta, &running_mean, &running_var})
    if ((*t)->numel() != static_cast<std::size_t>(C))
      throw DimensionError("batch_norm per-channel parameter must have " + std::to_string(C) +
                           " entries, got " + std::to_string((*t)->numel()));
  const std::size_t cnt = static_cast<std::size_t>(N) * H * W;
  if (mode == BnMode::Train && cnt < 2)
    throw ContractError("batch_norm train mode needs N*H*W >= 2 per channel, got " + std::to_string(cnt));

  auto out = make_tensor<T>(x->shape);
  const T eps = static_cast<T>(kBnEpsilon);
  auto mean = std::make_shared<std::vector<T>>(C, T(0));
  auto invstd = std::make_shared<std::vector<T>>(C, T(0));

  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t spp = static_cast<std::size_t>(C) * plane;  // per-sample stride
  if (mode == BnMode::Train) {
    for (int c = 0; c < C; ++c) {
      T mu = T(0);
      for (int n = 0; n < N; ++n) {
        const T* p = x->data.data() + n * spp + c * plane;
        for (std::size_t i = 0; i < plane; ++i) mu += p[i];
      }
      mu /= static_cast<T>(cnt);
      T var = T(0);
      for (int n = 0; n < N; ++n) {
        const T* p = x->data.data() + n * spp + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = p[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(cnt);
      (*mean)[c] = mu;
      (*invstd)[c] = T(1) / std::sqrt(var + eps);
      const T m = static_cast<T>(kBnMomentum);
      running_mean->data[c] = (T(1) - m) * running_mean->data[c] + m * mu;
      const T unbiased = var * static_cast<T>(cnt) / static_cast<T>(cnt - 1);
      running_var->data[c] = (T(1) - m) * running_var->data[c] + m * unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = running_mean->data[c];
      (*invstd)[c] = T(1) / std::sqrt(running_var->data[c] + eps);
    }
  }
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T mu = (*mean)[c], is = (*invstd)[c], gm = gamma->data[c], bt = beta->data[c];
      const T* p = x->data.data() + n * spp + c * plane;
      T* o = out->data.data() + n * spp + c * plane;
      for (std::size_t i = 0; i < plane; ++i) o[i] = (p[i] - mu) * is * gm + bt;
    }

  if (detail::track<T>(tape, {&x, &gamma, &beta})) {
    out->requires_grad = true;
    const bool train = (mode == BnMode::Train);
    tape->record([x, gamma, beta, out, mean, invstd, N, C, H, W, train]() {
      const std::size_t plane = static_cast<std::size_t>(H) * W;
      const std::size_t spp = static_cast<std::size_t>(C) * plane;
      const std::size_t cnt = static_cast<std::size_t>(N) * plane;
      const bool need_x = x->requires_grad;
      if (need_x) x->ensure_grad();
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      for (int c = 0; c < C; ++c) {
        const T mu = (*mean)[c], is = (*invstd)[c], gm = gamma->data[c];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int n = 0; n < N; ++n) {
          const T* px = x->data.data() + n * spp + c * plane;
          const T* pg = out->grad.data() + n * spp + c * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += pg[i];
            sum_dy_xhat += pg[i] * (px[i] - mu) * is;
          }
        }
        if (gamma->requires_grad) gamma->grad[c] += sum_dy_xhat;
        if (beta->requires_grad) beta->grad[c] += sum_dy;
        if (!need_x) continue;
        if (train) {
          // dx = (gamma*invstd/cnt) * (cnt*dy - sum_dy - xhat*sum_dy_xhat)
          const T scale = gm * is / static_cast<T>(cnt);
          for (int n = 0; n < N; ++n) {
            const T* px = x->data.data() + n * spp + c * plane;
            const T* pg = out->grad.data() + n * spp + c * plane;
            T* gx = x->grad.data() + n * spp + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const T xhat = (px[i] - mu) * is;
              gx[i] += scale * (static_cast<T>(cnt) * pg[i] - sum_dy - xhat * sum_dy_xhat);
            }
          }
        } else {
          const T scale = gm * is;
          for (int n = 0; n < N; ++n) {
            const T* pg = out->grad.data() + n * spp + c * plane;
            T* gx = x->grad.data() + n * spp + c * plane;
            for (std::size_t i = 0; i < plane; ++i) gx[i] += scale * pg[i];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elu (alpha = 1): x > 0 -> x; x <= 0 -> exp(x) - 1.
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> elu(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < x->numel(); ++i) {
    const T v = x->data[i];
    out->data[i] = v > T(0) ? v : std::expm1(v);
  }
  if (detail::track<T>(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->numel(); ++i) {
        const T v = x->data[i];
        const T d = v > T(0) ? T(1) : out->data[i] + T(1);  // exp(v) for v <= 0
        x->grad[i] += out->grad[i] * d;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// add: elementwise sum, used for residual skips.
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape)
    throw DimensionError("add shape mismatch: " + a->shape_str() + " vs " + b->shape_str());
  auto out = make_tensor<T>(a->shape);
  for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (detail::track<T>(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out]() {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < b->numel(); ++i) b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// mse_loss: mean of squared element differences -> scalar.
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> mse_loss(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape)
    throw DimensionError("mse_loss shape mismatch: " + a->shape_str() + " vs " + b->shape_str());
  auto out = make_tensor<T>({1});
  T acc = T(0);
  for (std::size_t i = 0; i < a->numel(); ++i) {
    const T d = a->data[i] - b->data[i];
    acc += d * d;
  }
  const T inv_n = T(1) / static_cast<T>(a->numel());
  out->data[0] = acc * inv_n;
  if (detail::track<T>(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out, inv_n]() {
      const T g = out->grad[0] * T(2) * inv_n;
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += g * (a->data[i] - b->data[i]);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < b->numel(); ++i) b->grad[i] -= g * (a->data[i] - b->data[i]);
      }
    });
  }
  return out;
}

// Fixed-projection reduction to a scalar; handy for building test losses.
template <class T>
TensorPtr<T> dot_const(Tape<T>* tape, const TensorPtr<T>& x, std::shared_ptr<std::vector<T>> r) {
  if (r->size() != x->numel())
    throw DimensionError("dot_const projection length " + std::to_string(r->size()) +
                         " does not match tensor numel " + std::to_string(x->numel()));
  auto out = make_tensor<T>({1});
  T acc = T(0);
  for (std::size_t i = 0; i < x->numel(); ++i) acc += x->data[i] * (*r)[i];
  out->data[0] = acc;
  if (detail::track<T>(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, r]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[0] * (*r)[i];
    });
  }
  return out;
}

// Sum of all elements -> scalar.
template <class T>
TensorPtr<T> sum(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>({1});
  T acc = T(0);
  for (T v : x->data) acc += v;
  out->data[0] = acc;
  if (detail::track<T>(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam with bias correction. One state owns the moments for one parameter
// group; the step counter covers the whole group.
// ---------------------------------------------------------------------------
template <class T>
struct AdamState {
  T lr = static_cast<T>(1e-4);
  T beta1 = static_cast<T>(0.9);
  T beta2 = static_cast<T>(0.999);
  T epsilon = static_cast<T>(1e-8);
  std::int64_t step = 0;
  std::vector<std::vector<T>> m, v;

  void init(const std::vector<TensorPtr<T>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p->numel(), T(0));
      v.emplace_back(p->numel(), T(0));
    }
    step = 0;
  }
};

template <class T>
void adam_step(std::vector<TensorPtr<T>>& params, AdamState<T>& state) {
  if (state.lr <= T(0)) throw ContractError("adam_step requires lr > 0");
  if (state.m.size() != params.size())
    throw DimensionError("adam_step state holds " + std::to_string(state.m.size()) +
                         " moment buffers for " + std::to_string(params.size()) + " parameters");
  ++state.step;
  const T b1 = state.beta1, b2 = state.beta2;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(b1), static_cast<double>(state.step)));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(b2), static_cast<double>(state.step)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (state.m[i].size() != p.numel())
      throw DimensionError("adam_step moment buffer " + std::to_string(i) + " has size " +
                           std::to_string(state.m[i].size()) + ", parameter has " + std::to_string(p.numel()));
    if (p.grad.empty()) continue;  // parameter untouched by this backward
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const T g = p.grad[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      p.data[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

template <class T>
void zero_grads(const std::vector<TensorPtr<T>>& params) {
  for (const auto& p : params) p->zero_grad();
}

template <class T>
double grad_norm(const std::vector<TensorPtr<T>>& params) {
  double acc = 0.0;
  for (const auto& p : params)
    for (T g : p->grad) acc += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(acc);
}

using TensorF = Tensor<float>;
using TensorPtrF = TensorPtr<float>;
using TapeF = Tape<float>;

}  // namespace naturalize
