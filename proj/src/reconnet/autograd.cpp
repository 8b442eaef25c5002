#include "ear/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace ear::nn {

std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

// Tape ---------------------------------------------------------------------

template <class T>
Var Tape<T>::leaf(Tensor4<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::push(Tensor4<T> value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (Var v : inputs) needs = needs || nodes_[v.id].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Tensor4<T>& Tape<T>::grad_slot(Var v) {
  Node& node = nodes_[v.id];
  if (node.grad.empty()) node.grad = Tensor4<T>(node.value.shape());
  return node.grad;
}

template <class T>
const Tensor4<T>& Tape<T>::grad(Var v) {
  return grad_slot(v);
}

template <class T>
void Tape<T>::backward(Var root) {
  if (nodes_[root.id].value.size() != 1) throw DimensionError("backward root must be a scalar");
  for (Node& n : nodes_) n.grad = Tensor4<T>();
  grad_slot(root)[0] = T(1);
  for (int i = root.id; i >= 0; --i) {
    Node& node = nodes_[i];
    if (node.backward && !node.grad.empty()) node.backward(*this, i);
  }
}

namespace {

// Dense kernels on row-major buffers. Every output element is accumulated in a
// fixed order independent of pointer alignment.

// c[m x n] = a[m x k] * b[k x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::size_t>(i) * k + p];
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[k x n] = a[m x k]^T * b[m x n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
  std::fill(c, c + static_cast<std::size_t>(k) * n, T(0));
  for (int p = 0; p < k; ++p) {
    T* crow = c + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = a[static_cast<std::size_t>(i) * k + p];
      const T* brow = b + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

constexpr int kLanes = 8;

template <class T>
T sum(const T* x, int n) {
  T lane[kLanes] = {};
  int j = 0;
  for (; j + kLanes <= n; j += kLanes)
    for (int l = 0; l < kLanes; ++l) lane[l] += x[j + l];
  T tail = T(0);
  for (; j < n; ++j) tail += x[j];
  T s = T(0);
  for (int l = 0; l < kLanes; ++l) s += lane[l];
  return s + tail;
}

// c[m x k] += a[m x n] * bt[n x k]
template <class T>
void gemm_nn_acc(const T* a, const T* bt, T* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T av = a[static_cast<std::size_t>(i) * n + j];
      const T* brow = bt + static_cast<std::size_t>(j) * k;
      for (int p = 0; p < k; ++p) crow[p] += av * brow[p];
    }
  }
}

template <class T>
void transpose(const T* src, T* dst, int rows, int cols) {
  constexpr int kTile = 32;
  for (int r0 = 0; r0 < rows; r0 += kTile)
    for (int c0 = 0; c0 < cols; c0 += kTile)
      for (int r = r0; r < std::min(rows, r0 + kTile); ++r)
        for (int c = c0; c < std::min(cols, c0 + kTile); ++c)
          dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

int clampi(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

void require_same(const Shape4& a, const Shape4& b, const char* what) {
  if (!(a == b)) throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// Row r of col = (c * k + ky) * k + kx; column = oy * wo + ox.
template <class T>
void im2col(const T* x, int channels, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * ho * wo;
        const T* plane = x + static_cast<std::size_t>(c) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* out = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            out[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im(const T* col, int channels, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * ho * wo;
        T* plane = x + static_cast<std::size_t>(c) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

template <class T>
Tensor4<T> zeros_like(const Tensor4<T>& t) {
  return Tensor4<T>(t.shape());
}

}  // namespace

// Network primitives --------------------------------------------------------

template <class T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride) {
  const Shape4 xs = tape.value(x).shape();
  const Shape4 ws = tape.value(weight).shape();
  if (ws.h != ws.w || ws.h % 2 == 0) throw DimensionError("conv kernel must be square and odd");
  if (ws.c != xs.c) throw DimensionError("conv input channels " + std::to_string(xs.c) +
                                          " do not match weight " + to_string(ws));
  if (!(tape.value(bias).shape() == Shape4{1, ws.n, 1, 1})) throw DimensionError("conv bias shape");
  if (stride < 1) throw ValueError("conv stride must be >= 1");
  const int k = ws.h, pad = k / 2;
  const int ho = (xs.h + 2 * pad - k) / stride + 1;
  const int wo = (xs.w + 2 * pad - k) / stride + 1;
  const int rows = xs.c * k * k, cols = ho * wo;

  Tensor4<T> out(Shape4{xs.n, ws.n, ho, wo});
  std::vector<T> col(static_cast<std::size_t>(rows) * cols);
  const T* w = tape.value(weight).data();
  const T* b = tape.value(bias).data();
  for (int n = 0; n < xs.n; ++n) {
    im2col(tape.value(x).plane(n, 0), xs.c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
    T* o = out.plane(n, 0);
    gemm_nn(w, col.data(), o, ws.n, rows, cols);
    for (int co = 0; co < ws.n; ++co)
      for (int j = 0; j < cols; ++j) o[static_cast<std::size_t>(co) * cols + j] += b[co];
  }

  return tape.push(std::move(out), {x, weight, bias}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    std::vector<T> col(static_cast<std::size_t>(rows) * cols), col_t;
    const T* w = t.value(weight).data();
    const bool need_w = t.requires_grad(weight), need_b = t.requires_grad(bias), need_x = t.requires_grad(x);
    for (int n = 0; n < xs.n; ++n) {
      const T* go = gout.plane(n, 0);
      if (need_w) {
        im2col(t.value(x).plane(n, 0), xs.c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
        col_t.resize(col.size());
        transpose(col.data(), col_t.data(), rows, cols);
        gemm_nn_acc(go, col_t.data(), t.grad_slot(weight).data(), ws.n, cols, rows);
      }
      if (need_b) {
        T* gb = t.grad_slot(bias).data();
        for (int co = 0; co < ws.n; ++co) gb[co] += sum(go + static_cast<std::size_t>(co) * cols, cols);
      }
      if (need_x) {
        gemm_tn(w, go, col.data(), ws.n, rows, cols);
        col2im(col.data(), xs.c, xs.h, xs.w, k, stride, pad, ho, wo, t.grad_slot(x).plane(n, 0));
      }
    }
  });
}

template <class T>
Var batch_norm(Tape<T>& tape, Var x, Var gamma, Var beta, BatchNormStats<T>* stats,
               const BatchNormOptions& options) {
  const Tensor4<T>& xv = tape.value(x);
  const Shape4 s = xv.shape();
  if (!(tape.value(gamma).shape() == Shape4{1, s.c, 1, 1}) || !(tape.value(beta).shape() == Shape4{1, s.c, 1, 1}))
    throw DimensionError("batch-norm affine parameters must be (1,C,1,1)");
  const std::size_t m = static_cast<std::size_t>(s.n) * s.plane();
  const T eps = static_cast<T>(options.eps);
  std::vector<T> mu(s.c), inv_std(s.c);

  if (options.training) {
    if (m < 2) throw DimensionError("batch-norm in training mode needs more than one value per channel");
    for (int c = 0; c < s.c; ++c) {
      double sum = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = xv.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
      }
      const double mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = xv.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      const double var = sq / static_cast<double>(m);
      mu[c] = static_cast<T>(mean);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
      if (stats) {
        const double mom = options.momentum;
        const double unbiased = sq / static_cast<double>(m - 1);
        stats->running_mean[c] = static_cast<T>((1.0 - mom) * stats->running_mean[c] + mom * mean);
        stats->running_var[c] = static_cast<T>((1.0 - mom) * stats->running_var[c] + mom * unbiased);
      }
    }
  } else {
    if (!stats) throw ValueError("batch-norm evaluation mode needs running statistics");
    for (int c = 0; c < s.c; ++c) {
      mu[c] = stats->running_mean[c];
      inv_std[c] = T(1) / std::sqrt(stats->running_var[c] + eps);
    }
  }

  auto xhat = std::make_shared<Tensor4<T>>(s);
  Tensor4<T> out(s);
  const T* g = tape.value(gamma).data();
  const T* b = tape.value(beta).data();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = xv.plane(n, c);
      T* xh = xhat->plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        xh[i] = (p[i] - mu[c]) * inv_std[c];
        o[i] = g[c] * xh[i] + b[c];
      }
    }

  const bool training = options.training;
  return tape.push(std::move(out), {x, gamma, beta}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    const T* gam = t.value(gamma).data();
    for (int c = 0; c < s.c; ++c) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (int n = 0; n < s.n; ++n) {
        const T* dy = gout.plane(n, c);
        const T* xh = xhat->plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * xh[i];
        }
      }
      if (t.requires_grad(gamma)) t.grad_slot(gamma)[c] += sum_dy_xhat;
      if (t.requires_grad(beta)) t.grad_slot(beta)[c] += sum_dy;
      if (!t.requires_grad(x)) continue;
      Tensor4<T>& gx = t.grad_slot(x);
      const T scale_c = gam[c] * inv_std[c];
      const T inv_m = T(1) / static_cast<T>(m);
      for (int n = 0; n < s.n; ++n) {
        const T* dy = gout.plane(n, c);
        const T* xh = xhat->plane(n, c);
        T* dx = gx.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          if (training)
            dx[i] += scale_c * (dy[i] - inv_m * sum_dy - xh[i] * inv_m * sum_dy_xhat);
          else
            dx[i] += scale_c * dy[i];
        }
      }
    }
  });
}

template <class T>
Var leaky_relu(Tape<T>& tape, Var x, T slope) {
  const Tensor4<T>& xv = tape.value(x);
  Tensor4<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : slope * xv[i];
  return tape.push(std::move(out), {x}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    const Tensor4<T>& xv = t.value(x);
    Tensor4<T>& gx = t.grad_slot(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += xv[i] > T(0) ? gout[i] : slope * gout[i];
  });
}

template <class T>
Var sigmoid(Tape<T>& tape, Var x) {
  const Tensor4<T>& xv = tape.value(x);
  Tensor4<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xv[i]));
  return tape.push(std::move(out), {x}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    const Tensor4<T>& y = t.value(Var{self});
    Tensor4<T>& gx = t.grad_slot(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * y[i] * (T(1) - y[i]);
  });
}

template <class T>
Var upsample_nearest2x(Tape<T>& tape, Var x) {
  const Shape4 s = tape.value(x).shape();
  Tensor4<T> out(Shape4{s.n, s.c, 2 * s.h, 2 * s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = tape.value(x).plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < 2 * s.h; ++y)
        for (int xx = 0; xx < 2 * s.w; ++xx) o[y * 2 * s.w + xx] = p[(y / 2) * s.w + xx / 2];
    }
  return tape.push(std::move(out), {x}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    Tensor4<T>& gx = t.grad_slot(x);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* g = gout.plane(n, c);
        T* d = gx.plane(n, c);
        for (int y = 0; y < 2 * s.h; ++y)
          for (int xx = 0; xx < 2 * s.w; ++xx) d[(y / 2) * s.w + xx / 2] += g[y * 2 * s.w + xx];
      }
  });
}

template <class T>
Var concat(Tape<T>& tape, Var a, Var b) {
  const Shape4 sa = tape.value(a).shape(), sb = tape.value(b).shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw DimensionError("concat: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  Tensor4<T> out(Shape4{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t plane = sa.plane();
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(tape.value(a).plane(n, 0), sa.c * plane, out.plane(n, 0));
    std::copy_n(tape.value(b).plane(n, 0), sb.c * plane, out.plane(n, sa.c));
  }
  return tape.push(std::move(out), {a, b}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    for (int n = 0; n < sa.n; ++n) {
      if (t.requires_grad(a)) {
        T* d = t.grad_slot(a).plane(n, 0);
        const T* g = gout.plane(n, 0);
        for (std::size_t i = 0; i < sa.c * plane; ++i) d[i] += g[i];
      }
      if (t.requires_grad(b)) {
        T* d = t.grad_slot(b).plane(n, 0);
        const T* g = gout.plane(n, sa.c);
        for (std::size_t i = 0; i < sb.c * plane; ++i) d[i] += g[i];
      }
    }
  });
}

// Loss primitives -----------------------------------------------------------

template <class T>
Var luma(Tape<T>& tape, Var x) {
  const Shape4 s = tape.value(x).shape();
  if (s.c == 1) return x;
  if (s.c != 3) throw DimensionError("luma expects 1 or 3 channels");
  const T wr = static_cast<T>(0.299f), wg = static_cast<T>(0.587f), wb = static_cast<T>(0.114f);
  Tensor4<T> out(Shape4{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const T* r = tape.value(x).plane(n, 0);
    const T* g = tape.value(x).plane(n, 1);
    const T* b = tape.value(x).plane(n, 2);
    T* o = out.plane(n, 0);
    for (std::size_t i = 0; i < s.plane(); ++i) o[i] = wr * r[i] + wg * g[i] + wb * b[i];
  }
  return tape.push(std::move(out), {x}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    Tensor4<T>& gx = t.grad_slot(x);
    for (int n = 0; n < s.n; ++n) {
      const T* g = gout.plane(n, 0);
      T* r = gx.plane(n, 0);
      T* gg = gx.plane(n, 1);
      T* b = gx.plane(n, 2);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        r[i] += wr * g[i];
        gg[i] += wg * g[i];
        b[i] += wb * g[i];
      }
    }
  });
}

template <class T>
Var avg_pool(Tape<T>& tape, Var x, int m) {
  if (m < 1) throw ValueError("pooling scale must be >= 1");
  if (m == 1) return x;
  const Shape4 s = tape.value(x).shape();
  const int oh = (s.h + m - 1) / m, ow = (s.w + m - 1) / m;
  Tensor4<T> out(Shape4{s.n, s.c, oh, ow});
  auto extent = [=](int o, int n_in) { return std::min(o * m + m, n_in) - o * m; };
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = tape.value(x).plane(n, c);
      T* o = out.plane(n, c);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T sum = 0;
          for (int y = oy * m; y < std::min(oy * m + m, s.h); ++y)
            for (int xx = ox * m; xx < std::min(ox * m + m, s.w); ++xx) sum += p[y * s.w + xx];
          o[oy * ow + ox] = sum / static_cast<T>(extent(oy, s.h) * extent(ox, s.w));
        }
    }
  return tape.push(std::move(out), {x}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    Tensor4<T>& gx = t.grad_slot(x);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* g = gout.plane(n, c);
        T* d = gx.plane(n, c);
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) {
            const int oy = y / m, ox = xx / m;
            d[y * s.w + xx] += g[oy * ow + ox] / static_cast<T>(extent(oy, s.h) * extent(ox, s.w));
          }
      }
  });
}

template <class T>
Var upscale_nearest(Tape<T>& tape, Var x, int height, int width) {
  if (height < 1 || width < 1) throw ValueError("target dimensions must be >= 1");
  const Shape4 s = tape.value(x).shape();
  if (s.h == height && s.w == width) return x;
  std::vector<int> ys(height), xs(width);
  for (int y = 0; y < height; ++y) ys[y] = static_cast<int>(static_cast<long long>(y) * s.h / height);
  for (int xx = 0; xx < width; ++xx) xs[xx] = static_cast<int>(static_cast<long long>(xx) * s.w / width);
  Tensor4<T> out(Shape4{s.n, s.c, height, width});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = tape.value(x).plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < height; ++y)
        for (int xx = 0; xx < width; ++xx) o[y * width + xx] = p[ys[y] * s.w + xs[xx]];
    }
  return tape.push(std::move(out), {x}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    Tensor4<T>& gx = t.grad_slot(x);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* g = gout.plane(n, c);
        T* d = gx.plane(n, c);
        for (int y = 0; y < height; ++y)
          for (int xx = 0; xx < width; ++xx) d[ys[y] * s.w + xs[xx]] += g[y * width + xx];
      }
  });
}

template <class T>
Var prewitt_magnitude(Tape<T>& tape, Var x) {
  const Shape4 s = tape.value(x).shape();
  if (s.h < 3 || s.w < 3) throw DimensionError("gradient magnitude needs planes of at least 3x3");
  auto gx = std::make_shared<Tensor4<T>>(s);
  auto gy = std::make_shared<Tensor4<T>>(s);
  Tensor4<T> out(s);
  const T third = T(1) / T(3);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = tape.value(x).plane(n, c);
      auto px = [&](int y, int xx) { return p[clampi(y, s.h) * s.w + clampi(xx, s.w)]; };
      T* ox = gx->plane(n, c);
      T* oy = gy->plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          T a = 0, b = 0;
          for (int k = -1; k <= 1; ++k) {
            a += px(y + k, xx + 1) - px(y + k, xx - 1);
            b += px(y + 1, xx + k) - px(y - 1, xx + k);
          }
          a *= third;
          b *= third;
          const std::size_t i = static_cast<std::size_t>(y) * s.w + xx;
          ox[i] = a;
          oy[i] = b;
          o[i] = std::sqrt(a * a + b * b);
        }
    }
  return tape.push(std::move(out), {x}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    const Tensor4<T>& mag = t.value(Var{self});
    Tensor4<T>& gin = t.grad_slot(x);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* g = gout.plane(n, c);
        const T* mg = mag.plane(n, c);
        const T* ax = gx->plane(n, c);
        const T* ay = gy->plane(n, c);
        T* d = gin.plane(n, c);
        auto acc = [&](int y, int xx, T v) { d[clampi(y, s.h) * s.w + clampi(xx, s.w)] += v; };
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) {
            const std::size_t i = static_cast<std::size_t>(y) * s.w + xx;
            if (mg[i] == T(0)) continue;
            const T dax = g[i] * ax[i] / mg[i] * third;
            const T day = g[i] * ay[i] / mg[i] * third;
            for (int k = -1; k <= 1; ++k) {
              acc(y + k, xx + 1, dax);
              acc(y + k, xx - 1, -dax);
              acc(y + 1, xx + k, day);
              acc(y - 1, xx + k, -day);
            }
          }
      }
  });
}

template <class T>
Var gms(Tape<T>& tape, Var a, Var b, T c) {
  require_same(tape.value(a).shape(), tape.value(b).shape(), "gms");
  const Tensor4<T>& av = tape.value(a);
  const Tensor4<T>& bv = tape.value(b);
  Tensor4<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i)
    out[i] = (T(2) * av[i] * bv[i] + c) / (av[i] * av[i] + bv[i] * bv[i] + c);
  return tape.push(std::move(out), {a, b}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    const Tensor4<T>& av = t.value(a);
    const Tensor4<T>& bv = t.value(b);
    const Tensor4<T>& y = t.value(Var{self});
    const bool need_a = t.requires_grad(a), need_b = t.requires_grad(b);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T den = av[i] * av[i] + bv[i] * bv[i] + c;
      // d/da = (2b - 2a y) / den
      if (need_a) t.grad_slot(a)[i] += gout[i] * (T(2) * bv[i] - T(2) * av[i] * y[i]) / den;
      if (need_b) t.grad_slot(b)[i] += gout[i] * (T(2) * av[i] - T(2) * bv[i] * y[i]) / den;
    }
  });
}

template <class T>
Var window_filter(Tape<T>& tape, Var x, std::span<const T> taps_in) {
  if (taps_in.size() % 2 == 0) throw ValueError("filter taps must have odd length");
  const std::vector<T> taps(taps_in.begin(), taps_in.end());
  const int r = static_cast<int>(taps.size() / 2);
  const Shape4 s = tape.value(x).shape();
  Tensor4<T> out(s);
  std::vector<T> tmp(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = tape.value(x).plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          T acc = 0;
          for (int k = -r; k <= r; ++k) acc += taps[k + r] * p[y * s.w + clampi(xx + k, s.w)];
          tmp[y * s.w + xx] = acc;
        }
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          T acc = 0;
          for (int k = -r; k <= r; ++k) acc += taps[k + r] * tmp[clampi(y + k, s.h) * s.w + xx];
          o[y * s.w + xx] = acc;
        }
    }
  return tape.push(std::move(out), {x}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& gout = t.grad_slot(Var{self});
    Tensor4<T>& gx = t.grad_slot(x);
    std::vector<T> gtmp(s.plane());
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* g = gout.plane(n, c);
        T* d = gx.plane(n, c);
        std::fill(gtmp.begin(), gtmp.end(), T(0));
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx)
            for (int k = -r; k <= r; ++k) gtmp[clampi(y + k, s.h) * s.w + xx] += taps[k + r] * g[y * s.w + xx];
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx)
            for (int k = -r; k <= r; ++k) d[y * s.w + clampi(xx + k, s.w)] += taps[k + r] * gtmp[y * s.w + xx];
      }
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  require_same(tape.value(a).shape(), tape.value(b).shape(), "add");
  Tensor4<T> out = tape.value(a);
  const Tensor4<T>& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.push(std::move(out), {a, b}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& g = t.grad_slot(Var{self});
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor4<T>& d = t.grad_slot(v);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

template <class T>
Var sub(Tape<T>& tape, Var a, Var b) {
  require_same(tape.value(a).shape(), tape.value(b).shape(), "sub");
  Tensor4<T> out = tape.value(a);
  const Tensor4<T>& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape.push(std::move(out), {a, b}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& g = t.grad_slot(Var{self});
    if (t.requires_grad(a)) {
      Tensor4<T>& d = t.grad_slot(a);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor4<T>& d = t.grad_slot(b);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  require_same(tape.value(a).shape(), tape.value(b).shape(), "mul");
  Tensor4<T> out = tape.value(a);
  const Tensor4<T>& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.push(std::move(out), {a, b}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& g = t.grad_slot(Var{self});
    const Tensor4<T>& av = t.value(a);
    const Tensor4<T>& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor4<T>& d = t.grad_slot(a);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor4<T>& d = t.grad_slot(b);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var div(Tape<T>& tape, Var a, Var b) {
  require_same(tape.value(a).shape(), tape.value(b).shape(), "div");
  Tensor4<T> out = tape.value(a);
  const Tensor4<T>& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return tape.push(std::move(out), {a, b}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& g = t.grad_slot(Var{self});
    const Tensor4<T>& bv = t.value(b);
    const Tensor4<T>& y = t.value(Var{self});
    if (t.requires_grad(a)) {
      Tensor4<T>& d = t.grad_slot(a);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor4<T>& d = t.grad_slot(b);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i] * y[i] / bv[i];
    }
  });
}

template <class T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Tensor4<T> out = tape.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return tape.push(std::move(out), {a}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& g = t.grad_slot(Var{self});
    Tensor4<T>& d = t.grad_slot(a);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
  });
}

template <class T>
Var add_scalar(Tape<T>& tape, Var a, T offset) {
  Tensor4<T> out = tape.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += offset;
  return tape.push(std::move(out), {a}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& g = t.grad_slot(Var{self});
    Tensor4<T>& d = t.grad_slot(a);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

template <class T>
Var mean(Tape<T>& tape, Var a) {
  const Tensor4<T>& av = tape.value(a);
  double sum = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) sum += av[i];
  const std::size_t count = av.size();
  Tensor4<T> out(Shape4{1, 1, 1, 1}, static_cast<T>(sum / static_cast<double>(count)));
  return tape.push(std::move(out), {a}, [=](Tape<T>& t, int self) {
    const T g = t.grad_slot(Var{self})[0] / static_cast<T>(count);
    Tensor4<T>& d = t.grad_slot(a);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
  });
}

template <class T>
Var clamp(Tape<T>& tape, Var a, T lo, T hi) {
  Tensor4<T> out = tape.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lo, hi);
  return tape.push(std::move(out), {a}, [=](Tape<T>& t, int self) {
    const Tensor4<T>& g = t.grad_slot(Var{self});
    const Tensor4<T>& av = t.value(a);
    Tensor4<T>& d = t.grad_slot(a);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (av[i] >= lo && av[i] <= hi) d[i] += g[i];
  });
}

template <class T>
Var lamp(Tape<T>& tape, Var l, T eps) {
  const Tensor4<T>& lv = tape.value(l);
  if (lv.size() != 1) throw DimensionError("lamp expects a scalar loss");
  if (!(lv[0] >= T(0))) throw ValueError("LAMP input must be non-negative");
  const T capped = std::min(lv[0], T(1) - eps);
  const bool saturated = lv[0] >= T(1) - eps;
  Tensor4<T> out(Shape4{1, 1, 1, 1}, -std::log(T(1) - capped));
  return tape.push(std::move(out), {l}, [=](Tape<T>& t, int self) {
    if (saturated) return;
    t.grad_slot(l)[0] += t.grad_slot(Var{self})[0] / (T(1) - capped);
  });
}

// Composite losses ------------------------------------------------------------

template <class T>
Var l2_loss(Tape<T>& tape, Var a, Var b) {
  const Var d = sub(tape, a, b);
  return mean(tape, mul(tape, d, d));
}

template <class T>
Var ssim_loss(Tape<T>& tape, Var a, Var b, const MetricConfig& cfg) {
  cfg.validate();
  const std::vector<float> wf = gaussian_window(cfg.ssim_window, static_cast<float>(cfg.ssim_sigma));
  const std::vector<T> window(wf.begin(), wf.end());
  const std::span<const T> taps(window);
  const T c1 = static_cast<T>(static_cast<float>(cfg.ssim_k1 * cfg.ssim_k1));
  const T c2 = static_cast<T>(static_cast<float>(cfg.ssim_k2 * cfg.ssim_k2));

  const Var mx = window_filter(tape, a, taps);
  const Var my = window_filter(tape, b, taps);
  const Var exx = window_filter(tape, mul(tape, a, a), taps);
  const Var eyy = window_filter(tape, mul(tape, b, b), taps);
  const Var exy = window_filter(tape, mul(tape, a, b), taps);
  const Var mx2 = mul(tape, mx, mx);
  const Var my2 = mul(tape, my, my);
  const Var mxy = mul(tape, mx, my);
  const Var vx = sub(tape, exx, mx2);
  const Var vy = sub(tape, eyy, my2);
  const Var cov = sub(tape, exy, mxy);
  const Var num = mul(tape, add_scalar(tape, scale(tape, mxy, T(2)), c1), add_scalar(tape, scale(tape, cov, T(2)), c2));
  const Var den = mul(tape, add_scalar(tape, add(tape, mx2, my2), c1), add_scalar(tape, add(tape, vx, vy), c2));
  const Var ssim = mean(tape, div(tape, num, den));
  return clamp(tape, add_scalar(tape, scale(tape, ssim, T(-1)), T(1)), T(0), T(1));
}

template <class T>
Var msgms_loss(Tape<T>& tape, Var a, Var b, const MetricConfig& cfg) {
  cfg.validate();
  require_same(tape.value(a).shape(), tape.value(b).shape(), "msgms_loss");
  const Var ga = luma(tape, a), gb = luma(tape, b);
  const Shape4 s = tape.value(ga).shape();
  Var total{};
  for (int n = 0; n < cfg.scales; ++n) {
    const int factor = 1 << n;
    const Var pa = avg_pool(tape, ga, factor), pb = avg_pool(tape, gb, factor);
    const Shape4 ps = tape.value(pa).shape();
    if (ps.h < 3 || ps.w < 3) throw DimensionError("image too small for the requested number of MSGMS scales");
    const Var sim = gms(tape, prewitt_magnitude(tape, pa), prewitt_magnitude(tape, pb), static_cast<T>(static_cast<float>(cfg.c)));
    const Var up = upscale_nearest(tape, sim, s.h, s.w);
    total = n == 0 ? up : add(tape, total, up);
  }
  const Var avg = scale(tape, total, T(1) / static_cast<T>(cfg.scales));
  return mean(tape, add_scalar(tape, scale(tape, avg, T(-1)), T(1)));
}

template <class T>
Var combined_loss(Tape<T>& tape, Var a, Var b, const LossWeights& w, const MetricConfig& cfg) {
  w.validate();
  Var total{};
  bool first = true;
  auto accumulate = [&](double weight, auto make) {
    if (weight <= 0.0) return;
    const Var term = scale(tape, make(), static_cast<T>(weight / w.sum()));
    total = first ? term : add(tape, total, term);
    first = false;
  };
  accumulate(w.l2, [&] { return l2_loss(tape, a, b); });
  accumulate(w.ssim, [&] { return ssim_loss(tape, a, b, cfg); });
  accumulate(w.msgms, [&] { return msgms_loss(tape, a, b, cfg); });
  return total;
}

template <class T>
Var training_loss(Tape<T>& tape, Var a, Var b, const LossWeights& w, const MetricConfig& cfg) {
  return lamp(tape, combined_loss(tape, a, b, w, cfg), static_cast<T>(cfg.lamp_epsilon));
}

#define EAR_INSTANTIATE(T)                                                                            \
  template class Tape<T>;                                                                             \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, int);                                               \
  template Var batch_norm<T>(Tape<T>&, Var, Var, Var, BatchNormStats<T>*, const BatchNormOptions&);   \
  template Var leaky_relu<T>(Tape<T>&, Var, T);                                                       \
  template Var sigmoid<T>(Tape<T>&, Var);                                                             \
  template Var upsample_nearest2x<T>(Tape<T>&, Var);                                                  \
  template Var concat<T>(Tape<T>&, Var, Var);                                                         \
  template Var luma<T>(Tape<T>&, Var);                                                                \
  template Var avg_pool<T>(Tape<T>&, Var, int);                                                       \
  template Var upscale_nearest<T>(Tape<T>&, Var, int, int);                                           \
  template Var prewitt_magnitude<T>(Tape<T>&, Var);                                                   \
  template Var gms<T>(Tape<T>&, Var, Var, T);                                                         \
  template Var window_filter<T>(Tape<T>&, Var, std::span<const T>);                                   \
  template Var add<T>(Tape<T>&, Var, Var);                                                            \
  template Var sub<T>(Tape<T>&, Var, Var);                                                            \
  template Var mul<T>(Tape<T>&, Var, Var);                                                            \
  template Var div<T>(Tape<T>&, Var, Var);                                                            \
  template Var scale<T>(Tape<T>&, Var, T);                                                            \
  template Var add_scalar<T>(Tape<T>&, Var, T);                                                       \
  template Var mean<T>(Tape<T>&, Var);                                                                \
  template Var clamp<T>(Tape<T>&, Var, T, T);                                                         \
  template Var lamp<T>(Tape<T>&, Var, T);                                                             \
  template Var l2_loss<T>(Tape<T>&, Var, Var);                                                        \
  template Var ssim_loss<T>(Tape<T>&, Var, Var, const MetricConfig&);                                 \
  template Var msgms_loss<T>(Tape<T>&, Var, Var, const MetricConfig&);                                \
  template Var combined_loss<T>(Tape<T>&, Var, Var, const LossWeights&, const MetricConfig&);         \
  template Var training_loss<T>(Tape<T>&, Var, Var, const LossWeights&, const MetricConfig&);

EAR_INSTANTIATE(float)
EAR_INSTANTIATE(double)

#undef EAR_INSTANTIATE

}  // namespace ear::nn
