#include "vsanet/nn/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace vsanet::nn {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;

// Reductions with a fixed lane layout. Eigen's vectorised reductions peel
// according to the runtime address, which makes rounding depend on where a
// buffer happens to be allocated; these keep training bit-reproducible.
constexpr std::size_t kLanes = 8;

template <typename Real>
Real fixed_dot(const Real* a, const Real* b, std::size_t n) {
  Real acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

template <typename Real>
Real fixed_sum(const Real* a, std::size_t n) {
  Real acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l];
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += a[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

// out[c] += sum over rows of m(r, c), rows accumulated in order.
template <typename Real>
void add_column_sums(const Real* m, std::size_t rows, std::size_t cols, Real* out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
}

template <typename Real>
std::span<Real> grad_of(const Tensor<Real>& t) {
  return t.node()->grad_buffer();
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename Real>
void require_rank(const Tensor<Real>& t, std::size_t rank, const char* op) {
  require(t.defined() && t.rank() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
              (t.defined() ? to_string(t.shape()) : std::string("undefined")));
}

template <typename Real>
Real sigmoid_scalar(Real x) {
  Real y;
  if (x >= Real{0}) {
    y = Real{1} / (Real{1} + std::exp(-x));
  } else {
    const Real e = std::exp(x);
    y = e / (Real{1} + e);
  }
  // Keep the result inside the open interval (0, 1) even when exp saturates.
  constexpr Real lo = std::numeric_limits<Real>::min();
  constexpr Real hi = Real{1} - std::numeric_limits<Real>::epsilon() / 2;
  return std::clamp(y, lo, hi);
}

template <typename Real>
Real tanh_scalar(Real x) {
  constexpr Real hi = Real{1} - std::numeric_limits<Real>::epsilon() / 2;
  return std::clamp(std::tanh(x), -hi, hi);
}

// Leading dims before `axis`, size of `axis`, and trailing element count.
struct AxisSplit {
  std::size_t outer, channels, inner;
};

AxisSplit split_channels(const Shape& s) {
  if (s.size() == 1) return {1, s[0], 1};
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], s[1], inner};
}

}  // namespace

std::size_t conv_out_freq(std::size_t freq, std::size_t kernel_f, Conv2dOptions opt) {
  require(opt.stride_f >= 1, "conv2d: stride must be >= 1");
  const std::size_t padded = freq + 2 * opt.pad_f;
  require(padded >= kernel_f, "conv2d: kernel larger than padded input");
  return (padded - kernel_f) / opt.stride_f + 1;
}

std::size_t tconv_out_freq(std::size_t freq, std::size_t kernel_f, TConv2dOptions opt) {
  require(freq >= 1 && opt.stride_f >= 1, "tconv2d: invalid size");
  const std::size_t full = (freq - 1) * opt.stride_f + kernel_f + opt.output_pad_f;
  require(full > 2 * opt.pad_f, "tconv2d: padding exceeds output");
  return full - 2 * opt.pad_f;
}

// ---------------------------------------------------------------------------
// Element-wise

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor<Real>::make_result(a.shape(), std::move(out), {&a, &b}, [a, b](TensorNode<Real>& self) {
    for (const auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto g = grad_of(*t);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor<Real>::make_result(a.shape(), std::move(out), {&a, &b}, [a, b](TensorNode<Real>& self) {
    if (a.requires_grad()) {
      auto g = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto g = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor<Real>::make_result(a.shape(), std::move(out), {&a, &b}, [a, b](TensorNode<Real>& self) {
    auto x = a.data();
    auto y = b.data();
    if (a.requires_grad()) {
      auto g = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (b.requires_grad()) {
      auto g = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<Real>::make_result(a.shape(), std::move(out), {&a}, [a, factor](TensorNode<Real>& self) {
    auto g = grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real total{0};
  for (Real v : a.data()) total += v;
  return Tensor<Real>::make_result(Shape{1}, {total}, {&a}, [a](TensorNode<Real>& self) {
    auto g = grad_of(a);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  std::vector<Real> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(in[i]);
  return Tensor<Real>::make_result(x.shape(), std::move(out), {&x}, [x](TensorNode<Real>& self) {
    auto g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real y = self.data[i];
      g[i] += self.grad[i] * y * (Real{1} - y);
    }
  });
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
  std::vector<Real> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tanh_scalar(in[i]);
  return Tensor<Real>::make_result(x.shape(), std::move(out), {&x}, [x](TensorNode<Real>& self) {
    auto g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real y = self.data[i];
      g[i] += self.grad[i] * (Real{1} - y * y);
    }
  });
}

template <typename Real>
Tensor<Real> prelu(const Tensor<Real>& x, const Tensor<Real>& slope) {
  const auto split = split_channels(x.shape());
  require(slope.rank() == 1 && slope.dim(0) == split.channels,
          "prelu: slope shape " + to_string(slope.shape()) + " does not match channels of " +
              to_string(x.shape()));
  auto in = x.data();
  auto a = slope.data();
  std::vector<Real> out(in.size());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t c = 0; c < split.channels; ++c) {
      const std::size_t base = (o * split.channels + c) * split.inner;
      for (std::size_t i = 0; i < split.inner; ++i) {
        const Real v = in[base + i];
        out[base + i] = v > Real{0} ? v : a[c] * v;
      }
    }
  }
  return Tensor<Real>::make_result(
      x.shape(), std::move(out), {&x, &slope}, [x, slope, split](TensorNode<Real>& self) {
        auto in = x.data();
        auto a = slope.data();
        const bool gx = x.requires_grad();
        const bool ga = slope.requires_grad();
        std::span<Real> dx = gx ? grad_of(x) : std::span<Real>{};
        std::span<Real> da = ga ? grad_of(slope) : std::span<Real>{};
        for (std::size_t o = 0; o < split.outer; ++o) {
          for (std::size_t c = 0; c < split.channels; ++c) {
            const std::size_t base = (o * split.channels + c) * split.inner;
            Real acc{0};
            for (std::size_t i = 0; i < split.inner; ++i) {
              const Real v = in[base + i];
              const Real g = self.grad[base + i];
              if (v > Real{0}) {
                if (gx) dx[base + i] += g;
              } else {
                if (gx) dx[base + i] += a[c] * g;
                acc += v * g;
              }
            }
            if (ga) da[c] += acc;
          }
        }
      });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  require(numel(shape) == x.size(),
          "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  std::vector<Real> out(x.data().begin(), x.data().end());
  return Tensor<Real>::make_result(std::move(shape), std::move(out), {&x}, [x](TensorNode<Real>& self) {
    auto g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Linear

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const LinearParams<Real>& p) {
  require(p.weight.defined() && p.weight.rank() == 2, "linear: weight must be [O, I]");
  const std::size_t out_f = p.weight.dim(0);
  const std::size_t in_f = p.weight.dim(1);
  require(p.bias.defined() && p.bias.rank() == 1 && p.bias.dim(0) == out_f,
          "linear: bias must be [O]");
  require(x.shape().back() == in_f, "linear: input features " +
                                        std::to_string(x.shape().back()) + " != " +
                                        std::to_string(in_f));
  const std::size_t rows = x.size() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;

  std::vector<Real> out(rows * out_f);
  ConstMatMap<Real> xm(x.data().data(), rows, in_f);
  ConstMatMap<Real> w(p.weight.data().data(), out_f, in_f);
  Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> b(p.bias.data().data(), out_f);
  MatMap<Real> ym(out.data(), rows, out_f);
  ym.noalias() = xm * w.transpose();
  ym.rowwise() += b;

  const Tensor<Real> weight = p.weight;
  const Tensor<Real> bias = p.bias;
  return Tensor<Real>::make_result(
      std::move(out_shape), std::move(out), {&x, &weight, &bias},
      [x, weight, bias, rows, in_f, out_f](TensorNode<Real>& self) {
        ConstMatMap<Real> gy(self.grad.data(), rows, out_f);
        if (weight.requires_grad()) {
          MatMap<Real> gw(grad_of(weight).data(), out_f, in_f);
          ConstMatMap<Real> xm(x.data().data(), rows, in_f);
          gw.noalias() += gy.transpose() * xm;
        }
        if (bias.requires_grad()) {
          add_column_sums(self.grad.data(), rows, out_f, grad_of(bias).data());
        }
        if (x.requires_grad()) {
          MatMap<Real> gx(grad_of(x).data(), rows, in_f);
          ConstMatMap<Real> w(weight.data().data(), out_f, in_f);
          gx.noalias() += gy * w;
        }
      });
}

// ---------------------------------------------------------------------------
// Causal convolution

namespace {

struct ConvGeometry {
  std::size_t batch, c_in, c_out, f_in, f_out, frames, k_f, k_t, stride_f, pad_f;
  std::size_t patch() const { return c_in * k_f * k_t; }
};

// cols(r, fo*T + t) = x[ci, fo*s + kf - pad, t + kt - (kT - 1)], r = (ci*kF + kf)*kT + kt.
template <typename Real>
void im2col(const Real* x, const ConvGeometry& g, Real* cols) {
  const std::size_t T = g.frames;
  const std::size_t width = g.f_out * T;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t kf = 0; kf < g.k_f; ++kf) {
      for (std::size_t kt = 0; kt < g.k_t; ++kt) {
        Real* row = cols + ((ci * g.k_f + kf) * g.k_t + kt) * width;
        const std::size_t shift = g.k_t - 1 - kt;  // frames of delay
        for (std::size_t fo = 0; fo < g.f_out; ++fo) {
          Real* dst = row + fo * T;
          const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(fo * g.stride_f + kf) -
                                    static_cast<std::ptrdiff_t>(g.pad_f);
          if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(g.f_in)) {
            std::fill(dst, dst + T, Real{0});
            continue;
          }
          const Real* src = x + (ci * g.f_in + static_cast<std::size_t>(fi)) * T;
          const std::size_t lead = std::min(shift, T);
          std::fill(dst, dst + lead, Real{0});
          std::copy(src, src + (T - lead), dst + lead);
        }
      }
    }
  }
}

template <typename Real>
void col2im(const Real* cols, const ConvGeometry& g, Real* x) {
  const std::size_t T = g.frames;
  const std::size_t width = g.f_out * T;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t kf = 0; kf < g.k_f; ++kf) {
      for (std::size_t kt = 0; kt < g.k_t; ++kt) {
        const Real* row = cols + ((ci * g.k_f + kf) * g.k_t + kt) * width;
        const std::size_t shift = g.k_t - 1 - kt;
        if (shift >= T) continue;
        for (std::size_t fo = 0; fo < g.f_out; ++fo) {
          const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(fo * g.stride_f + kf) -
                                    static_cast<std::ptrdiff_t>(g.pad_f);
          if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(g.f_in)) continue;
          const Real* src = row + fo * T + shift;
          Real* dst = x + (ci * g.f_in + static_cast<std::size_t>(fi)) * T;
          for (std::size_t t = 0; t < T - shift; ++t) dst[t] += src[t];
        }
      }
    }
  }
}

// Direct evaluation for layers with very few output channels (the attention
// convs), where im2col would materialise a large patch matrix for a GEMV.
constexpr std::size_t kDirectConvMaxOut = 2;

template <typename Real>
void conv_direct(const Real* x, const Real* w, const Real* b, const ConvGeometry& g, Real* y) {
  const std::size_t T = g.frames;
  for (std::size_t co = 0; co < g.c_out; ++co)
    std::fill(y + co * g.f_out * T, y + (co + 1) * g.f_out * T, b[co]);
  for (std::size_t co = 0; co < g.c_out; ++co)
    for (std::size_t ci = 0; ci < g.c_in; ++ci)
      for (std::size_t kf = 0; kf < g.k_f; ++kf)
        for (std::size_t kt = 0; kt < g.k_t; ++kt) {
          const Real wv = w[((co * g.c_in + ci) * g.k_f + kf) * g.k_t + kt];
          const std::size_t shift = g.k_t - 1 - kt;
          if (shift >= T) continue;
          for (std::size_t fo = 0; fo < g.f_out; ++fo) {
            const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(fo * g.stride_f + kf) -
                                      static_cast<std::ptrdiff_t>(g.pad_f);
            if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(g.f_in)) continue;
            const Real* src = x + (ci * g.f_in + static_cast<std::size_t>(fi)) * T;
            Real* dst = y + (co * g.f_out + fo) * T + shift;
            for (std::size_t t = 0; t < T - shift; ++t) dst[t] += wv * src[t];
          }
        }
}

// Accumulates weight and input gradients of conv_direct.
template <typename Real>
void conv_direct_backward(const Real* x, const Real* w, const Real* gy, const ConvGeometry& g, Real* gw,
                          Real* gx) {
  const std::size_t T = g.frames;
  for (std::size_t co = 0; co < g.c_out; ++co)
    for (std::size_t ci = 0; ci < g.c_in; ++ci)
      for (std::size_t kf = 0; kf < g.k_f; ++kf)
        for (std::size_t kt = 0; kt < g.k_t; ++kt) {
          const std::size_t widx = ((co * g.c_in + ci) * g.k_f + kf) * g.k_t + kt;
          const Real wv = w[widx];
          const std::size_t shift = g.k_t - 1 - kt;
          if (shift >= T) continue;
          Real acc{0};
          for (std::size_t fo = 0; fo < g.f_out; ++fo) {
            const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(fo * g.stride_f + kf) -
                                      static_cast<std::ptrdiff_t>(g.pad_f);
            if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(g.f_in)) continue;
            const std::size_t row = (ci * g.f_in + static_cast<std::size_t>(fi)) * T;
            const Real* go = gy + (co * g.f_out + fo) * T + shift;
            if (gw) acc += fixed_dot(go, x + row, T - shift);
            if (gx) {
              Real* dst = gx + row;
              for (std::size_t t = 0; t < T - shift; ++t) dst[t] += wv * go[t];
            }
          }
          if (gw) gw[widx] += acc;
        }
}

}  // namespace

template <typename Real>
Tensor<Real> conv2d_causal(const Tensor<Real>& x, const Conv2dParams<Real>& p, Conv2dOptions opt) {
  require_rank(x, 4, "conv2d_causal");
  require_rank(p.weight, 4, "conv2d_causal weight");
  const auto& ws = p.weight.shape();
  require(ws[1] == x.dim(1), "conv2d_causal: weight expects " + std::to_string(ws[1]) +
                                 " input channels, input has " + std::to_string(x.dim(1)));
  require(p.bias.defined() && p.bias.rank() == 1 && p.bias.dim(0) == ws[0],
          "conv2d_causal: bias must be [C_out]");
  require(ws[2] >= 1 && ws[3] >= 1, "conv2d_causal: empty kernel");

  ConvGeometry g{x.dim(0), x.dim(1), ws[0], x.dim(2), 0, x.dim(3), ws[2], ws[3], opt.stride_f, opt.pad_f};
  g.f_out = conv_out_freq(g.f_in, g.k_f, opt);
  const std::size_t width = g.f_out * g.frames;
  const std::size_t in_plane = g.c_in * g.f_in * g.frames;
  const std::size_t out_plane = g.c_out * width;

  std::vector<Real> out(g.batch * out_plane);
  const Tensor<Real> weight = p.weight;
  const Tensor<Real> bias = p.bias;
  if (g.c_out <= kDirectConvMaxOut) {
    for (std::size_t n = 0; n < g.batch; ++n) {
      conv_direct(x.data().data() + n * in_plane, weight.data().data(), bias.data().data(), g,
                  out.data() + n * out_plane);
    }
    return Tensor<Real>::make_result(
        Shape{g.batch, g.c_out, g.f_out, g.frames}, std::move(out), {&x, &weight, &bias},
        [x, weight, bias, g, width, in_plane, out_plane](TensorNode<Real>& self) {
          Real* gw = weight.requires_grad() ? grad_of(weight).data() : nullptr;
          for (std::size_t n = 0; n < g.batch; ++n) {
            const Real* gy = self.grad.data() + n * out_plane;
            if (bias.requires_grad()) {
              auto gb = grad_of(bias);
              for (std::size_t co = 0; co < g.c_out; ++co) gb[co] += fixed_sum(gy + co * width, width);
            }
            Real* gx = x.requires_grad() ? grad_of(x).data() + n * in_plane : nullptr;
            conv_direct_backward(x.data().data() + n * in_plane, weight.data().data(), gy, g, gw, gx);
          }
        });
  }

  std::vector<Real> cols(g.patch() * width);
  ConstMatMap<Real> w(p.weight.data().data(), g.c_out, g.patch());
  Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> b(p.bias.data().data(), g.c_out);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(x.data().data() + n * in_plane, g, cols.data());
    ConstMatMap<Real> cm(cols.data(), g.patch(), width);
    MatMap<Real> y(out.data() + n * out_plane, g.c_out, width);
    y.noalias() = w * cm;
    y.colwise() += b;
  }

  return Tensor<Real>::make_result(
      Shape{g.batch, g.c_out, g.f_out, g.frames}, std::move(out), {&x, &weight, &bias},
      [x, weight, bias, g, width, in_plane, out_plane](TensorNode<Real>& self) {
        std::vector<Real> cols(g.patch() * width);
        ConstMatMap<Real> w(weight.data().data(), g.c_out, g.patch());
        for (std::size_t n = 0; n < g.batch; ++n) {
          ConstMatMap<Real> gy(self.grad.data() + n * out_plane, g.c_out, width);
          if (bias.requires_grad()) {
            auto gb = grad_of(bias);
            for (std::size_t co = 0; co < g.c_out; ++co) gb[co] += fixed_sum(self.grad.data() + n * out_plane + co * width, width);
          }
          if (weight.requires_grad()) {
            im2col(x.data().data() + n * in_plane, g, cols.data());
            ConstMatMap<Real> cm(cols.data(), g.patch(), width);
            MatMap<Real> gw(grad_of(weight).data(), g.c_out, g.patch());
            gw.noalias() += gy * cm.transpose();
          }
          if (x.requires_grad()) {
            MatMap<Real> gc(cols.data(), g.patch(), width);
            gc.noalias() = w.transpose() * gy;
            col2im(cols.data(), g, grad_of(x).data() + n * in_plane);
          }
        }
      });
}

namespace {

struct TConvGeometry {
  std::size_t batch, c_in, c_out, f_in, f_out, frames, k_f, k_t, stride_f, pad_f;
  std::size_t patch() const { return c_out * k_f * k_t; }
};

// Scatter cols((co*kF + kf)*kT + kt, fi*T + t) into y[co, fi*s + kf - pad, t + kt],
// dropping positions outside [0, F_out) x [0, T).
template <typename Real>
void tconv_scatter(const Real* cols, const TConvGeometry& g, Real* y) {
  const std::size_t T = g.frames;
  const std::size_t width = g.f_in * T;
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t kf = 0; kf < g.k_f; ++kf) {
      for (std::size_t kt = 0; kt < g.k_t; ++kt) {
        if (kt >= T) continue;
        const Real* row = cols + ((co * g.k_f + kf) * g.k_t + kt) * width;
        for (std::size_t fi = 0; fi < g.f_in; ++fi) {
          const std::ptrdiff_t fo = static_cast<std::ptrdiff_t>(fi * g.stride_f + kf) -
                                    static_cast<std::ptrdiff_t>(g.pad_f);
          if (fo < 0 || fo >= static_cast<std::ptrdiff_t>(g.f_out)) continue;
          const Real* src = row + fi * T;
          Real* dst = y + (co * g.f_out + static_cast<std::size_t>(fo)) * T + kt;
          for (std::size_t t = 0; t < T - kt; ++t) dst[t] += src[t];
        }
      }
    }
  }
}

// Adjoint of tconv_scatter.
template <typename Real>
void tconv_gather(const Real* y, const TConvGeometry& g, Real* cols) {
  const std::size_t T = g.frames;
  const std::size_t width = g.f_in * T;
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t kf = 0; kf < g.k_f; ++kf) {
      for (std::size_t kt = 0; kt < g.k_t; ++kt) {
        Real* row = cols + ((co * g.k_f + kf) * g.k_t + kt) * width;
        for (std::size_t fi = 0; fi < g.f_in; ++fi) {
          Real* dst = row + fi * T;
          const std::ptrdiff_t fo = static_cast<std::ptrdiff_t>(fi * g.stride_f + kf) -
                                    static_cast<std::ptrdiff_t>(g.pad_f);
          if (kt >= T || fo < 0 || fo >= static_cast<std::ptrdiff_t>(g.f_out)) {
            std::fill(dst, dst + T, Real{0});
            continue;
          }
          const Real* src = y + (co * g.f_out + static_cast<std::size_t>(fo)) * T + kt;
          std::copy(src, src + (T - kt), dst);
          std::fill(dst + (T - kt), dst + T, Real{0});
        }
      }
    }
  }
}

}  // namespace

template <typename Real>
Tensor<Real> tconv2d_causal(const Tensor<Real>& x, const Conv2dParams<Real>& p,
                            TConv2dOptions opt) {
  require_rank(x, 4, "tconv2d_causal");
  require_rank(p.weight, 4, "tconv2d_causal weight");
  const auto& ws = p.weight.shape();
  require(ws[0] == x.dim(1), "tconv2d_causal: weight expects " + std::to_string(ws[0]) +
                                 " input channels, input has " + std::to_string(x.dim(1)));
  require(p.bias.defined() && p.bias.rank() == 1 && p.bias.dim(0) == ws[1],
          "tconv2d_causal: bias must be [C_out]");

  TConvGeometry g{x.dim(0), x.dim(1), ws[1], x.dim(2), 0, x.dim(3), ws[2], ws[3], opt.stride_f, opt.pad_f};
  g.f_out = tconv_out_freq(g.f_in, g.k_f, opt);
  const std::size_t width = g.f_in * g.frames;
  const std::size_t in_plane = g.c_in * width;
  const std::size_t out_plane = g.c_out * g.f_out * g.frames;

  std::vector<Real> out(g.batch * out_plane);
  std::vector<Real> cols(g.patch() * width);
  ConstMatMap<Real> w(p.weight.data().data(), g.c_in, g.patch());
  auto b = p.bias.data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    ConstMatMap<Real> xm(x.data().data() + n * in_plane, g.c_in, width);
    MatMap<Real> cm(cols.data(), g.patch(), width);
    cm.noalias() = w.transpose() * xm;
    Real* y = out.data() + n * out_plane;
    for (std::size_t co = 0; co < g.c_out; ++co) {
      std::fill(y + co * g.f_out * g.frames, y + (co + 1) * g.f_out * g.frames, b[co]);
    }
    tconv_scatter(cols.data(), g, y);
  }

  const Tensor<Real> weight = p.weight;
  const Tensor<Real> bias = p.bias;
  return Tensor<Real>::make_result(
      Shape{g.batch, g.c_out, g.f_out, g.frames}, std::move(out), {&x, &weight, &bias},
      [x, weight, bias, g, width, in_plane, out_plane](TensorNode<Real>& self) {
        std::vector<Real> cols(g.patch() * width);
        ConstMatMap<Real> w(weight.data().data(), g.c_in, g.patch());
        const std::size_t plane = g.f_out * g.frames;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const Real* gy = self.grad.data() + n * out_plane;
          if (bias.requires_grad()) {
            auto gb = grad_of(bias);
            for (std::size_t co = 0; co < g.c_out; ++co) {
              Real acc{0};
              for (std::size_t i = 0; i < plane; ++i) acc += gy[co * plane + i];
              gb[co] += acc;
            }
          }
          if (!weight.requires_grad() && !x.requires_grad()) continue;
          tconv_gather(gy, g, cols.data());
          ConstMatMap<Real> gc(cols.data(), g.patch(), width);
          if (weight.requires_grad()) {
            ConstMatMap<Real> xm(x.data().data() + n * in_plane, g.c_in, width);
            MatMap<Real> gw(grad_of(weight).data(), g.c_in, g.patch());
            gw.noalias() += xm * gc.transpose();
          }
          if (x.requires_grad()) {
            MatMap<Real> gx(grad_of(x).data() + n * in_plane, g.c_in, width);
            gx.noalias() += w * gc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalisation

template <typename Real>
Tensor<Real> batch_norm2d(const Tensor<Real>& x, const BatchNormParams<Real>& p, BnMode mode,
                          double momentum, double eps) {
  require_rank(x, 4, "batch_norm2d");
  const std::size_t B = x.dim(0), C = x.dim(1), inner = x.dim(2) * x.dim(3);
  for (const auto* t : {&p.gain, &p.bias, &p.running_mean, &p.running_var}) {
    require(t->defined() && t->rank() == 1 && t->dim(0) == C,
            "batch_norm2d: parameter shape does not match " + std::to_string(C) + " channels");
  }
  const std::size_t count = B * inner;
  auto in = x.data();
  auto gain = p.gain.data();
  auto beta = p.bias.data();

  std::vector<Real> mean(C), inv_std(C);
  if (mode == BnMode::kTrain) {
    require(count > 1, "batch_norm2d: train mode needs more than one element per channel");
    Tensor<Real> running_mean = p.running_mean;
    Tensor<Real> running_var = p.running_var;
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < B; ++n) {
        const Real* src = in.data() + (n * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += src[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < B; ++n) {
        const Real* src = in.data() + (n * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = src[i] - m;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<Real>(m);
      inv_std[c] = static_cast<Real>(1.0 / std::sqrt(var + eps));
      const double unbiased = ss / static_cast<double>(count - 1);
      rm[c] = static_cast<Real>((1.0 - momentum) * rm[c] + momentum * m);
      rv[c] = static_cast<Real>((1.0 - momentum) * rv[c] + momentum * unbiased);
    }
  } else {
    auto rm = p.running_mean.data();
    auto rv = p.running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = rm[c];
      inv_std[c] = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(rv[c]) + eps));
    }
  }

  std::vector<Real> out(in.size());
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * inner;
      const Real a = gain[c] * inv_std[c];
      const Real shift = beta[c] - a * mean[c];
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = a * in[base + i] + shift;
    }
  }

  const Tensor<Real> g_t = p.gain;
  const Tensor<Real> b_t = p.bias;
  return Tensor<Real>::make_result(
      x.shape(), std::move(out), {&x, &g_t, &b_t},
      [x, g_t, b_t, mode, mean, inv_std, B, C, inner, count](TensorNode<Real>& self) {
        auto in = x.data();
        auto gain = g_t.data();
        const bool gx = x.requires_grad();
        std::span<Real> dx = gx ? grad_of(x) : std::span<Real>{};
        std::span<Real> dgain = g_t.requires_grad() ? grad_of(g_t) : std::span<Real>{};
        std::span<Real> dbias = b_t.requires_grad() ? grad_of(b_t) : std::span<Real>{};
        for (std::size_t c = 0; c < C; ++c) {
          Real sum_dy{0}, sum_dy_xhat{0};
          for (std::size_t n = 0; n < B; ++n) {
            const std::size_t base = (n * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              const Real xhat = (in[base + i] - mean[c]) * inv_std[c];
              sum_dy += self.grad[base + i];
              sum_dy_xhat += self.grad[base + i] * xhat;
            }
          }
          if (!dgain.empty()) dgain[c] += sum_dy_xhat;
          if (!dbias.empty()) dbias[c] += sum_dy;
          if (!gx) continue;
          const Real k = gain[c] * inv_std[c];
          const Real inv_n = Real{1} / static_cast<Real>(count);
          for (std::size_t n = 0; n < B; ++n) {
            const std::size_t base = (n * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              const Real dy = self.grad[base + i];
              if (mode == BnMode::kEval) {
                dx[base + i] += k * dy;
              } else {
                const Real xhat = (in[base + i] - mean[c]) * inv_std[c];
                dx[base + i] += k * (dy - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat);
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// GRU

template <typename Real>
Tensor<Real> gru(const Tensor<Real>& x, const GruParams<Real>& p, const Tensor<Real>& h0) {
  require_rank(x, 3, "gru");
  require(p.w_ih.defined() && p.w_ih.rank() == 2 && p.w_hh.defined() && p.w_hh.rank() == 2,
          "gru: weights must be rank 2");
  const std::size_t B = x.dim(0), T = x.dim(1), I = x.dim(2);
  const std::size_t H = p.w_hh.dim(1);
  require(p.w_ih.dim(0) == 3 * H && p.w_ih.dim(1) == I,
          "gru: w_ih shape " + to_string(p.w_ih.shape()) + " incompatible with input " +
              to_string(x.shape()));
  require(p.w_hh.dim(0) == 3 * H, "gru: w_hh must be [3H, H]");
  require(p.b_ih.defined() && p.b_ih.size() == 3 * H && p.b_hh.defined() && p.b_hh.size() == 3 * H,
          "gru: biases must be [3H]");
  if (h0.defined()) {
    require(h0.size() == B * H, "gru: h0 must be [B, H], got " + to_string(h0.shape()));
  }

  ConstMatMap<Real> w_ih(p.w_ih.data().data(), 3 * H, I);
  ConstMatMap<Real> w_hh(p.w_hh.data().data(), 3 * H, H);
  Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> b_ih(p.b_ih.data().data(), 3 * H);
  Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> b_hh(p.b_hh.data().data(), 3 * H);

  // Input projections are computed one frame at a time so that the result for
  // frame t does not depend on how many frames follow it.
  using StridedMap = Eigen::Map<const RowMat<Real>, 0, Eigen::OuterStride<>>;
  RowMat<Real> gi(B, 3 * H);

  // Saved activations for the backward pass, all [B*T, H].
  std::vector<Real> out(B * T * H);
  std::vector<Real> r_s(B * T * H), z_s(B * T * H), n_s(B * T * H), hn_s(B * T * H);
  RowMat<Real> h_prev = RowMat<Real>::Zero(B, H);
  if (h0.defined()) h_prev = ConstMatMap<Real>(h0.data().data(), B, H);
  RowMat<Real> gh(B, 3 * H);
  for (std::size_t t = 0; t < T; ++t) {
    StridedMap x_t(x.data().data() + t * I, B, I, Eigen::OuterStride<>(T * I));
    gi.noalias() = x_t * w_ih.transpose();
    gi.rowwise() += b_ih;
    gh.noalias() = h_prev * w_hh.transpose();
    gh.rowwise() += b_hh;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t row = b * T + t;
      for (std::size_t j = 0; j < H; ++j) {
        const Real r = sigmoid_scalar(gi(b, j) + gh(b, j));
        const Real z = sigmoid_scalar(gi(b, H + j) + gh(b, H + j));
        const Real hn = gh(b, 2 * H + j);
        const Real n = std::tanh(gi(b, 2 * H + j) + r * hn);
        const Real h = (Real{1} - z) * n + z * h_prev(b, j);
        const std::size_t k = row * H + j;
        r_s[k] = r;
        z_s[k] = z;
        n_s[k] = n;
        hn_s[k] = hn;
        out[k] = h;
      }
    }
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < H; ++j) h_prev(b, j) = out[(b * T + t) * H + j];
    }
  }

  const GruParams<Real> params = p;
  const Tensor<Real> w_ih_t = p.w_ih, w_hh_t = p.w_hh, b_ih_t = p.b_ih, b_hh_t = p.b_hh;
  return Tensor<Real>::make_result(
      Shape{B, T, H}, std::move(out), {&x, &h0, &w_ih_t, &w_hh_t, &b_ih_t, &b_hh_t},
      [x, h0, params, B, T, I, H, r_s = std::move(r_s), z_s = std::move(z_s),
       n_s = std::move(n_s), hn_s = std::move(hn_s)](TensorNode<Real>& self) {
        ConstMatMap<Real> w_ih(params.w_ih.data().data(), 3 * H, I);
        ConstMatMap<Real> w_hh(params.w_hh.data().data(), 3 * H, H);
        const auto& hs = self.data;
        auto h_at = [&](std::size_t b, std::ptrdiff_t t, std::size_t j) -> Real {
          if (t >= 0) return hs[(b * T + static_cast<std::size_t>(t)) * H + j];
          return h0.defined() ? h0.data()[b * H + j] : Real{0};
        };

        RowMat<Real> dgi(B * T, 3 * H);
        RowMat<Real> dgh(B, 3 * H);
        RowMat<Real> dh_next = RowMat<Real>::Zero(B, H);
        RowMat<Real> dw_hh = RowMat<Real>::Zero(3 * H, H);
        Eigen::Matrix<Real, 1, Eigen::Dynamic> db_hh = Eigen::Matrix<Real, 1, Eigen::Dynamic>::Zero(3 * H);
        RowMat<Real> h_prev(B, H);
        for (std::size_t step = T; step-- > 0;) {
          const auto t = static_cast<std::ptrdiff_t>(step);
          RowMat<Real> dh_prev(B, H);
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t row = b * T + step;
            for (std::size_t j = 0; j < H; ++j) {
              const std::size_t k = row * H + j;
              const Real dh = self.grad[k] + dh_next(b, j);
              const Real r = r_s[k], z = z_s[k], n = n_s[k], hn = hn_s[k];
              const Real hp = h_at(b, t - 1, j);
              h_prev(b, j) = hp;
              const Real dn = dh * (Real{1} - z);
              const Real dz = dh * (hp - n);
              const Real dan = dn * (Real{1} - n * n);
              const Real dar = dan * hn * r * (Real{1} - r);
              const Real daz = dz * z * (Real{1} - z);
              dgi(row, j) = dar;
              dgi(row, H + j) = daz;
              dgi(row, 2 * H + j) = dan;
              dgh(b, j) = dar;
              dgh(b, H + j) = daz;
              dgh(b, 2 * H + j) = dan * r;
              dh_prev(b, j) = dh * z;
            }
          }
          dh_prev.noalias() += dgh * w_hh;
          dw_hh.noalias() += dgh.transpose() * h_prev;
          add_column_sums(dgh.data(), B, 3 * H, db_hh.data());
          dh_next = std::move(dh_prev);
        }

        if (params.w_hh.requires_grad()) {
          MatMap<Real>(grad_of(params.w_hh).data(), 3 * H, H) += dw_hh;
        }
        if (params.b_hh.requires_grad()) {
          Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(grad_of(params.b_hh).data(), 3 * H) += db_hh;
        }
        if (params.b_ih.requires_grad()) {
          add_column_sums(dgi.data(), B * T, 3 * H, grad_of(params.b_ih).data());
        }
        if (params.w_ih.requires_grad()) {
          MatMap<Real>(grad_of(params.w_ih).data(), 3 * H, I).noalias() +=
              dgi.transpose() * ConstMatMap<Real>(x.data().data(), B * T, I);
        }
        if (x.requires_grad()) {
          MatMap<Real>(grad_of(x).data(), B * T, I).noalias() += dgi * w_ih;
        }
        if (h0.defined() && h0.requires_grad()) {
          MatMap<Real>(grad_of(h0).data(), B, H) += dh_next;
        }
      });
}

// ---------------------------------------------------------------------------
// Attention helpers and layout

template <typename Real>
Tensor<Real> channel_pool(const Tensor<Real>& u) {
  require_rank(u, 4, "channel_pool");
  const std::size_t B = u.dim(0), C = u.dim(1), inner = u.dim(2) * u.dim(3);
  require(C > 0, "channel_pool: zero channels");
  auto in = u.data();
  std::vector<Real> out(B * 2 * inner);
  std::vector<std::uint32_t> argmax(B * inner);
  for (std::size_t b = 0; b < B; ++b) {
    Real* avg = out.data() + (b * 2) * inner;
    Real* mx = avg + inner;
    const Real* base = in.data() + b * C * inner;
    std::copy(base, base + inner, avg);
    std::copy(base, base + inner, mx);
    std::fill(argmax.begin() + b * inner, argmax.begin() + (b + 1) * inner, 0u);
    for (std::size_t c = 1; c < C; ++c) {
      const Real* src = base + c * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        avg[i] += src[i];
        if (src[i] > mx[i]) {
          mx[i] = src[i];
          argmax[b * inner + i] = static_cast<std::uint32_t>(c);
        }
      }
    }
    const Real inv_c = Real{1} / static_cast<Real>(C);
    for (std::size_t i = 0; i < inner; ++i) avg[i] *= inv_c;
  }
  return Tensor<Real>::make_result(
      Shape{B, 2, u.dim(2), u.dim(3)}, std::move(out), {&u},
      [u, B, C, inner, argmax = std::move(argmax)](TensorNode<Real>& self) {
        auto g = grad_of(u);
        const Real inv_c = Real{1} / static_cast<Real>(C);
        for (std::size_t b = 0; b < B; ++b) {
          const Real* gavg = self.grad.data() + (b * 2) * inner;
          const Real* gmax = gavg + inner;
          for (std::size_t c = 0; c < C; ++c) {
            Real* dst = g.data() + (b * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += gavg[i] * inv_c;
          }
          for (std::size_t i = 0; i < inner; ++i) {
            g[(b * C + argmax[b * inner + i]) * inner + i] += gmax[i];
          }
        }
      });
}

template <typename Real>
Tensor<Real> mul_broadcast_channels(const Tensor<Real>& u, const Tensor<Real>& gate) {
  require_rank(u, 4, "mul_broadcast_channels");
  require_rank(gate, 4, "mul_broadcast_channels gate");
  require(gate.dim(0) == u.dim(0) && gate.dim(1) == 1 && gate.dim(2) == u.dim(2) &&
              gate.dim(3) == u.dim(3),
          "mul_broadcast_channels: gate " + to_string(gate.shape()) + " incompatible with " +
              to_string(u.shape()));
  const std::size_t B = u.dim(0), C = u.dim(1), inner = u.dim(2) * u.dim(3);
  auto in = u.data();
  auto a = gate.data();
  std::vector<Real> out(in.size());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = a[b * inner + i] * in[base + i];
    }
  }
  return Tensor<Real>::make_result(
      u.shape(), std::move(out), {&u, &gate}, [u, gate, B, C, inner](TensorNode<Real>& self) {
        auto in = u.data();
        auto a = gate.data();
        std::span<Real> du = u.requires_grad() ? grad_of(u) : std::span<Real>{};
        std::span<Real> da = gate.requires_grad() ? grad_of(gate) : std::span<Real>{};
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              const Real g = self.grad[base + i];
              if (!du.empty()) du[base + i] += g * a[b * inner + i];
              if (!da.empty()) da[b * inner + i] += g * in[base + i];
            }
          }
        }
      });
}

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: incompatible shapes " + to_string(a.shape()) + " and " +
              to_string(b.shape()));
  const std::size_t B = a.dim(0), ca = a.dim(1), cb = b.dim(1), inner = a.dim(2) * a.dim(3);
  std::vector<Real> out(B * (ca + cb) * inner);
  auto da = a.data();
  auto db = b.data();
  for (std::size_t n = 0; n < B; ++n) {
    Real* dst = out.data() + n * (ca + cb) * inner;
    std::copy_n(da.data() + n * ca * inner, ca * inner, dst);
    std::copy_n(db.data() + n * cb * inner, cb * inner, dst + ca * inner);
  }
  return Tensor<Real>::make_result(
      Shape{B, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {&a, &b},
      [a, b, B, ca, cb, inner](TensorNode<Real>& self) {
        for (std::size_t n = 0; n < B; ++n) {
          const Real* src = self.grad.data() + n * (ca + cb) * inner;
          if (a.requires_grad()) {
            Real* g = grad_of(a).data() + n * ca * inner;
            for (std::size_t i = 0; i < ca * inner; ++i) g[i] += src[i];
          }
          if (b.requires_grad()) {
            Real* g = grad_of(b).data() + n * cb * inner;
            for (std::size_t i = 0; i < cb * inner; ++i) g[i] += src[ca * inner + i];
          }
        }
      });
}

template <typename Real>
Tensor<Real> to_frames(const Tensor<Real>& x) {
  require_rank(x, 4, "to_frames");
  const std::size_t B = x.dim(0), CF = x.dim(1) * x.dim(2), T = x.dim(3);
  auto in = x.data();
  std::vector<Real> out(in.size());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < CF; ++k) {
      for (std::size_t t = 0; t < T; ++t) out[(b * T + t) * CF + k] = in[(b * CF + k) * T + t];
    }
  }
  return Tensor<Real>::make_result(Shape{B, T, CF}, std::move(out), {&x}, [x, B, CF, T](TensorNode<Real>& self) {
    auto g = grad_of(x);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t k = 0; k < CF; ++k) {
        for (std::size_t t = 0; t < T; ++t) g[(b * CF + k) * T + t] += self.grad[(b * T + t) * CF + k];
      }
    }
  });
}

template <typename Real>
Tensor<Real> from_frames(const Tensor<Real>& x, std::size_t channels, std::size_t freq) {
  require_rank(x, 3, "from_frames");
  const std::size_t B = x.dim(0), T = x.dim(1), CF = x.dim(2);
  require(CF == channels * freq, "from_frames: feature size " + std::to_string(CF) +
                                     " != " + std::to_string(channels) + "x" + std::to_string(freq));
  auto in = x.data();
  std::vector<Real> out(in.size());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < CF; ++k) {
      for (std::size_t t = 0; t < T; ++t) out[(b * CF + k) * T + t] = in[(b * T + t) * CF + k];
    }
  }
  return Tensor<Real>::make_result(
      Shape{B, channels, freq, T}, std::move(out), {&x}, [x, B, CF, T](TensorNode<Real>& self) {
        auto g = grad_of(x);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t k = 0; k < CF; ++k) {
            for (std::size_t t = 0; t < T; ++t) g[(b * T + t) * CF + k] += self.grad[(b * CF + k) * T + t];
          }
        }
      });
}

#define VSANET_INSTANTIATE_OPS(Real)                                                              \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                            \
  template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                            \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                            \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                                         \
  template Tensor<Real> sum(const Tensor<Real>&);                                                 \
  template Tensor<Real> sigmoid(const Tensor<Real>&);                                             \
  template Tensor<Real> tanh(const Tensor<Real>&);                                                \
  template Tensor<Real> prelu(const Tensor<Real>&, const Tensor<Real>&);                          \
  template Tensor<Real> reshape(const Tensor<Real>&, Shape);                                      \
  template Tensor<Real> linear(const Tensor<Real>&, const LinearParams<Real>&);                   \
  template Tensor<Real> conv2d_causal(const Tensor<Real>&, const Conv2dParams<Real>&,             \
                                      Conv2dOptions);                                             \
  template Tensor<Real> tconv2d_causal(const Tensor<Real>&, const Conv2dParams<Real>&,            \
                                       TConv2dOptions);                                           \
  template Tensor<Real> batch_norm2d(const Tensor<Real>&, const BatchNormParams<Real>&, BnMode,   \
                                     double, double);                                             \
  template Tensor<Real> gru(const Tensor<Real>&, const GruParams<Real>&, const Tensor<Real>&);    \
  template Tensor<Real> channel_pool(const Tensor<Real>&);                                        \
  template Tensor<Real> mul_broadcast_channels(const Tensor<Real>&, const Tensor<Real>&);         \
  template Tensor<Real> concat_channels(const Tensor<Real>&, const Tensor<Real>&);                \
  template Tensor<Real> to_frames(const Tensor<Real>&);                                           \
  template Tensor<Real> from_frames(const Tensor<Real>&, std::size_t, std::size_t);

VSANET_INSTANTIATE_OPS(float)
VSANET_INSTANTIATE_OPS(double)

#undef VSANET_INSTANTIATE_OPS

}  // namespace vsanet::nn
