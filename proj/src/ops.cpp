// SPDX-License-Identifier: Apache-2.0
#include "gansearch/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace gansearch {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.valid()) throw std::invalid_argument("op applied to an invalid Var");
  return *a.tape;
}

template <typename T>
void same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
}

template <typename T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const char* what, Var<T> a, size_t rank) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(a.shape()));
  }
}

/// Elementwise unary op given f(x) and f'(x, f(x)).
template <typename T, typename F, typename DF>
Var<T> unary(const char* name, Var<T> a, F f, DF df) {
  Tape<T>& tape = tape_of(a);
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  const int ia = a.id;
  const int iy = static_cast<int>(tape.size());
  return tape.record(name, std::move(y), {ia}, [ia, iy, df](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* ga = t.grad_for(ia);
    if (ga == nullptr) return;
    const Tensor<T>& xv = t.value(ia);
    const Tensor<T>& yv = t.value(iy);
    for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * df(xv[i], yv[i]);
  });
}

template <typename T>
void im2col(const T* x, int64_t channels, int64_t h, int64_t w, int64_t k, int stride, int pad,
            int64_t ho, int64_t wo, T* col) {
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t ki = 0; ki < k; ++ki) {
      for (int64_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * ho * wo;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          T* dst = row + oh * wo;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo, T{0});
            continue;
          }
          const T* src = x + (c * h + ih) * w;
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int64_t channels, int64_t h, int64_t w, int64_t k, int stride, int pad,
            int64_t ho, int64_t wo, T* dx) {
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t ki = 0; ki < k; ++ki) {
      for (int64_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * ho * wo;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          T* dst = dx + (c * h + ih) * w;
          const T* src = row + oh * wo;
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b);
  require_same_shape("add", a, b);
  const Tensor<T>& x = a.value();
  const Tensor<T>& z = b.value();
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = x[i] + z[i];
  const int ia = a.id, ib = b.id;
  return tape_of(a).record("add", std::move(y), {ia, ib}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    for (int id : {ia, ib}) {
      if (Tensor<T>* gi = t.grad_for(id)) {
        for (int64_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_tape(a, b);
  require_same_shape("sub", a, b);
  const Tensor<T>& x = a.value();
  const Tensor<T>& z = b.value();
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = x[i] - z[i];
  const int ia = a.id, ib = b.id;
  return tape_of(a).record("sub", std::move(y), {ia, ib}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* ga = t.grad_for(ia)) {
      for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor<T>* gb = t.grad_for(ib)) {
      for (int64_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b);
  require_same_shape("mul", a, b);
  const Tensor<T>& x = a.value();
  const Tensor<T>& z = b.value();
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = x[i] * z[i];
  const int ia = a.id, ib = b.id;
  return tape_of(a).record("mul", std::move(y), {ia, ib}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(ia);
    const Tensor<T>& zv = t.value(ib);
    if (Tensor<T>* ga = t.grad_for(ia)) {
      for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * zv[i];
    }
    if (Tensor<T>* gb = t.grad_for(ib)) {
      for (int64_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * xv[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  return unary<T>("scale", a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  return unary<T>("add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary<T>(
      "relu", a, [](T x) { return x > T{0} ? x : T{0}; },
      [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> lrelu(Var<T> a, T slope) {
  return unary<T>(
      "lrelu", a, [slope](T x) { return x > T{0} ? x : slope * x; },
      [slope](T x, T) { return x > T{0} ? T{1} : (x < T{0} ? slope : T{0}); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> abs(Var<T> a) {
  return unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T{0} ? T{1} : (x < T{0} ? T{-1} : T{0}); });
}

template <typename T>
Var<T> square(Var<T> a) {
  return unary<T>(
      "square", a, [](T x) { return x * x; }, [](T x, T) { return T{2} * x; });
}

template <typename T>
Var<T> log(Var<T> a) {
  return unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> softplus(Var<T> a) {
  return unary<T>(
      "softplus", a,
      [](T x) { return x > T{0} ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) { return T{1} / (T{1} + std::exp(-x)); });
}

template <typename T>
Var<T> sum(Var<T> a) {
  const Tensor<T>& x = a.value();
  T acc{0};
  for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
  const int ia = a.id;
  return tape_of(a).record("sum", Tensor<T>::scalar(acc), {ia}, [ia](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* ga = t.grad_for(ia)) {
      for (int64_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g[0];
    }
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const Tensor<T>& x = a.value();
  T acc{0};
  for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
  const T n = static_cast<T>(x.numel());
  const int ia = a.id;
  return tape_of(a).record("mean", Tensor<T>::scalar(acc / n), {ia},
                           [ia, n](Tape<T>& t, const Tensor<T>& g) {
                             if (Tensor<T>* ga = t.grad_for(ia)) {
                               const T d = g[0] / n;
                               for (int64_t i = 0; i < ga->numel(); ++i) (*ga)[i] += d;
                             }
                           });
}

template <typename T>
Var<T> scalar_mul(Var<T> x, Var<T> s) {
  same_tape(x, s);
  if (s.value().numel() != 1) {
    throw ShapeError("scalar_mul: factor must have one element, got " + shape_str(s.shape()));
  }
  const T c = s.value()[0];
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = c * xv[i];
  const int ix = x.id, is = s.id;
  return tape_of(x).record("scalar_mul", std::move(y), {ix, is}, [ix, is](Tape<T>& t, const Tensor<T>& g) {
    const T cv = t.value(is)[0];
    if (Tensor<T>* gx = t.grad_for(ix)) {
      for (int64_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * cv;
    }
    if (Tensor<T>* gs = t.grad_for(is)) {
      const Tensor<T>& xv2 = t.value(ix);
      T acc{0};
      for (int64_t i = 0; i < g.numel(); ++i) acc += g[i] * xv2[i];
      (*gs)[0] += acc;
    }
  });
}

template <typename T>
Var<T> channel_scale(Var<T> x, Var<T> s) {
  same_tape(x, s);
  require_rank("channel_scale", "input", x, 4);
  require_rank("channel_scale", "scale", s, 1);
  const Shape& sh = x.shape();
  const int64_t batch = sh[0], channels = sh[1], plane = sh[2] * sh[3];
  if (s.shape()[0] != channels) {
    throw ShapeError("channel_scale: scale length " + std::to_string(s.shape()[0]) +
                     " does not match channel count " + std::to_string(channels));
  }
  const Tensor<T>& xv = x.value();
  const Tensor<T>& sv = s.value();
  Tensor<T> y(sh);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      const int64_t off = (b * channels + c) * plane;
      for (int64_t p = 0; p < plane; ++p) y[off + p] = xv[off + p] * sv[c];
    }
  }
  const int ix = x.id, is = s.id;
  return tape_of(x).record(
      "channel_scale", std::move(y), {ix, is},
      [ix, is, batch, channels, plane](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv2 = t.value(ix);
        const Tensor<T>& sv2 = t.value(is);
        Tensor<T>* gx = t.grad_for(ix);
        Tensor<T>* gs = t.grad_for(is);
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t c = 0; c < channels; ++c) {
            const int64_t off = (b * channels + c) * plane;
            if (gx != nullptr) {
              for (int64_t p = 0; p < plane; ++p) (*gx)[off + p] += g[off + p] * sv2[c];
            }
            if (gs != nullptr) {
              T acc{0};
              for (int64_t p = 0; p < plane; ++p) acc += g[off + p] * xv2[off + p];
              (*gs)[c] += acc;
            }
          }
        }
      });
}

template <typename T>
Var<T> channel_bias(Var<T> x, Var<T> bias) {
  same_tape(x, bias);
  require_rank("channel_bias", "input", x, 4);
  require_rank("channel_bias", "bias", bias, 1);
  const Shape& sh = x.shape();
  const int64_t batch = sh[0], channels = sh[1], plane = sh[2] * sh[3];
  if (bias.shape()[0] != channels) {
    throw ShapeError("channel_bias: bias length " + std::to_string(bias.shape()[0]) +
                     " does not match channel count " + std::to_string(channels));
  }
  const Tensor<T>& xv = x.value();
  const Tensor<T>& bv = bias.value();
  Tensor<T> y(sh);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      const int64_t off = (b * channels + c) * plane;
      for (int64_t p = 0; p < plane; ++p) y[off + p] = xv[off + p] + bv[c];
    }
  }
  const int ix = x.id, ib = bias.id;
  return tape_of(x).record("channel_bias", std::move(y), {ix, ib},
                           [ix, ib, batch, channels, plane](Tape<T>& t, const Tensor<T>& g) {
                             if (Tensor<T>* gx = t.grad_for(ix)) {
                               for (int64_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
                             }
                             if (Tensor<T>* gb = t.grad_for(ib)) {
                               for (int64_t b = 0; b < batch; ++b) {
                                 for (int64_t c = 0; c < channels; ++c) {
                                   const int64_t off = (b * channels + c) * plane;
                                   T acc{0};
                                   for (int64_t p = 0; p < plane; ++p) acc += g[off + p];
                                   (*gb)[c] += acc;
                                 }
                               }
                             }
                           });
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, int stride, int pad) {
  same_tape(input, weight);
  require_rank("conv2d", "input", input, 4);
  require_rank("conv2d", "weight", weight, 4);
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  if (pad < 0) throw std::invalid_argument("conv2d: pad must be non-negative");
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  const int64_t batch = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const int64_t cout = ws[0], k = ws[2];
  if (ws[1] != cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(ws[1]) + " input channels, input " +
                     shape_str(xs) + " has " + std::to_string(cin));
  }
  if (ws[3] != k) throw ShapeError("conv2d: kernel must be square, got " + shape_str(ws));
  if (h + 2 * pad < k || w + 2 * pad < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + shape_str(xs));
  }
  const int64_t ho = conv_out_size(h, k, stride, pad);
  const int64_t wo = conv_out_size(w, k, stride, pad);
  const int64_t ckk = cin * k * k;
  const int64_t npix = ho * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  const Tensor<T>& xv = input.value();
  const Tensor<T>& wv = weight.value();
  Tensor<T> y({batch, cout, ho, wo});
  std::vector<T> col(direct ? 0 : static_cast<size_t>(ckk * npix));
  CMapR<T> wm(wv.ptr(), cout, ckk);
  for (int64_t b = 0; b < batch; ++b) {
    const T* xb = xv.ptr() + b * cin * h * w;
    const T* cb = xb;
    if (!direct) {
      im2col(xb, cin, h, w, k, stride, pad, ho, wo, col.data());
      cb = col.data();
    }
    MapR<T> ym(y.ptr() + b * cout * npix, cout, npix);
    ym.noalias() = wm * CMapR<T>(cb, ckk, npix);
  }

  const int ix = input.id, iw = weight.id;
  return tape_of(input).record(
      "conv2d", std::move(y), {ix, iw},
      [=](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* gx = t.grad_for(ix);
        Tensor<T>* gw = t.grad_for(iw);
        const Tensor<T>& x2 = t.value(ix);
        const Tensor<T>& w2 = t.value(iw);
        std::vector<T> col2(direct ? 0 : static_cast<size_t>(ckk * npix));
        MatR<T> dcol;
        for (int64_t b = 0; b < batch; ++b) {
          CMapR<T> gm(g.ptr() + b * cout * npix, cout, npix);
          const T* xb = x2.ptr() + b * cin * h * w;
          if (gw != nullptr) {
            const T* cb = xb;
            if (!direct) {
              im2col(xb, cin, h, w, k, stride, pad, ho, wo, col2.data());
              cb = col2.data();
            }
            MapR<T> gwm(gw->ptr(), cout, ckk);
            gwm.noalias() += gm * CMapR<T>(cb, ckk, npix).transpose();
          }
          if (gx != nullptr) {
            CMapR<T> wm2(w2.ptr(), cout, ckk);
            T* gxb = gx->ptr() + b * cin * h * w;
            if (direct) {
              MapR<T>(gxb, cin, npix).noalias() += wm2.transpose() * gm;
            } else {
              dcol.noalias() = wm2.transpose() * gm;
              col2im(dcol.data(), cin, h, w, k, stride, pad, ho, wo, gxb);
            }
          }
        }
      });
}

template <typename T>
Var<T> dense(Var<T> input, Var<T> weight, Var<T> bias) {
  same_tape(input, weight);
  same_tape(input, bias);
  require_rank("dense", "input", input, 2);
  require_rank("dense", "weight", weight, 2);
  require_rank("dense", "bias", bias, 1);
  const int64_t batch = input.shape()[0], n = input.shape()[1];
  const int64_t m = weight.shape()[0];
  if (weight.shape()[1] != n) {
    throw ShapeError("dense: weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(input.shape()));
  }
  if (bias.shape()[0] != m) {
    throw ShapeError("dense: bias length " + std::to_string(bias.shape()[0]) + " != " + std::to_string(m));
  }
  Tensor<T> y({batch, m});
  MapR<T> ym(y.ptr(), batch, m);
  ym.noalias() = CMapR<T>(input.value().ptr(), batch, n) * CMapR<T>(weight.value().ptr(), m, n).transpose();
  const T* bv = bias.value().ptr();
  for (int64_t r = 0; r < batch; ++r) {
    for (int64_t c = 0; c < m; ++c) y[r * m + c] += bv[c];
  }
  const int ix = input.id, iw = weight.id, ib = bias.id;
  return tape_of(input).record("dense", std::move(y), {ix, iw, ib},
                               [=](Tape<T>& t, const Tensor<T>& g) {
                                 CMapR<T> gm(g.ptr(), batch, m);
                                 if (Tensor<T>* gx = t.grad_for(ix)) {
                                   MapR<T>(gx->ptr(), batch, n).noalias() +=
                                       gm * CMapR<T>(t.value(iw).ptr(), m, n);
                                 }
                                 if (Tensor<T>* gw = t.grad_for(iw)) {
                                   MapR<T>(gw->ptr(), m, n).noalias() +=
                                       gm.transpose() * CMapR<T>(t.value(ix).ptr(), batch, n);
                                 }
                                 if (Tensor<T>* gb = t.grad_for(ib)) {
                                   for (int64_t r = 0; r < batch; ++r) {
                                     for (int64_t c = 0; c < m; ++c) (*gb)[c] += g[r * m + c];
                                   }
                                 }
                               });
}

template <typename T>
Var<T> instance_norm(Var<T> input, Var<T> gamma, Var<T> beta, T eps) {
  same_tape(input, gamma);
  same_tape(input, beta);
  require_rank("instance_norm", "input", input, 4);
  require_rank("instance_norm", "gamma", gamma, 1);
  require_rank("instance_norm", "beta", beta, 1);
  const Shape& sh = input.shape();
  const int64_t batch = sh[0], channels = sh[1], plane = sh[2] * sh[3];
  if (gamma.shape()[0] != channels || beta.shape()[0] != channels) {
    throw ShapeError("instance_norm: affine parameters must have length " + std::to_string(channels));
  }
  const Tensor<T>& xv = input.value();
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  Tensor<T> y(sh);
  // xhat and per-plane inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(xv.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(batch * channels));
  const T n = static_cast<T>(plane);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      const int64_t off = (b * channels + c) * plane;
      T mu{0};
      for (int64_t p = 0; p < plane; ++p) mu += xv[off + p];
      mu /= n;
      T var{0};
      for (int64_t p = 0; p < plane; ++p) {
        const T d = xv[off + p] - mu;
        var += d * d;
      }
      var /= n;
      const T inv = T{1} / std::sqrt(var + eps);
      (*inv_std)[static_cast<size_t>(b * channels + c)] = inv;
      for (int64_t p = 0; p < plane; ++p) {
        const T xh = (xv[off + p] - mu) * inv;
        (*xhat)[static_cast<size_t>(off + p)] = xh;
        y[off + p] = gv[c] * xh + bv[c];
      }
    }
  }
  const int ix = input.id, ig = gamma.id, ib = beta.id;
  return tape_of(input).record(
      "instance_norm", std::move(y), {ix, ig, ib},
      [=](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* gx = t.grad_for(ix);
        Tensor<T>* gg = t.grad_for(ig);
        Tensor<T>* gb = t.grad_for(ib);
        const Tensor<T>& gam = t.value(ig);
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t c = 0; c < channels; ++c) {
            const int64_t off = (b * channels + c) * plane;
            const T* xh = xhat->data() + off;
            T sum_g{0}, sum_gx{0};
            for (int64_t p = 0; p < plane; ++p) {
              sum_g += g[off + p];
              sum_gx += g[off + p] * xh[p];
            }
            if (gg != nullptr) (*gg)[c] += sum_gx;
            if (gb != nullptr) (*gb)[c] += sum_g;
            if (gx != nullptr) {
              const T k = gam[c] * (*inv_std)[static_cast<size_t>(b * channels + c)] / n;
              for (int64_t p = 0; p < plane; ++p) {
                (*gx)[off + p] += k * (n * g[off + p] - sum_g - xh[p] * sum_gx);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> upsample2x(Var<T> input) {
  require_rank("upsample2x", "input", input, 4);
  const Shape& sh = input.shape();
  const int64_t planes = sh[0] * sh[1], h = sh[2], w = sh[3];
  const Tensor<T>& xv = input.value();
  Tensor<T> y({sh[0], sh[1], 2 * h, 2 * w});
  for (int64_t pl = 0; pl < planes; ++pl) {
    const T* src = xv.ptr() + pl * h * w;
    T* dst = y.ptr() + pl * 4 * h * w;
    for (int64_t i = 0; i < 2 * h; ++i) {
      for (int64_t j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  const int ix = input.id;
  return tape_of(input).record("upsample2x", std::move(y), {ix},
                               [ix, planes, h, w](Tape<T>& t, const Tensor<T>& g) {
                                 Tensor<T>* gx = t.grad_for(ix);
                                 if (gx == nullptr) return;
                                 for (int64_t pl = 0; pl < planes; ++pl) {
                                   const T* src = g.ptr() + pl * 4 * h * w;
                                   T* dst = gx->ptr() + pl * h * w;
                                   for (int64_t i = 0; i < 2 * h; ++i) {
                                     for (int64_t j = 0; j < 2 * w; ++j) {
                                       dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
                                     }
                                   }
                                 }
                               });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> y(std::move(shape), a.value().storage());
  const int ia = a.id;
  return tape_of(a).record("reshape", std::move(y), {ia}, [ia](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* ga = t.grad_for(ia)) {
      for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    }
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, Shape shape) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<T> data;
  std::vector<int> ids;
  std::vector<int64_t> sizes;
  for (const Var<T>& p : parts) {
    same_tape(parts.front(), p);
    const Tensor<T>& v = p.value();
    data.insert(data.end(), v.storage().begin(), v.storage().end());
    ids.push_back(p.id);
    sizes.push_back(v.numel());
  }
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("concat: " + std::to_string(data.size()) + " elements cannot form " + shape_str(shape));
  }
  Tensor<T> y(std::move(shape), std::move(data));
  return tape_of(parts.front())
      .record("concat", std::move(y), ids, [ids, sizes](Tape<T>& t, const Tensor<T>& g) {
        int64_t off = 0;
        for (size_t i = 0; i < ids.size(); ++i) {
          if (Tensor<T>* gi = t.grad_for(ids[i])) {
            for (int64_t j = 0; j < sizes[i]; ++j) (*gi)[j] += g[off + j];
          }
          off += sizes[i];
        }
      });
}

#define GANSEARCH_INSTANTIATE_OPS(T)                                          \
  template Var<T> add(Var<T>, Var<T>);                                        \
  template Var<T> sub(Var<T>, Var<T>);                                        \
  template Var<T> mul(Var<T>, Var<T>);                                        \
  template Var<T> scale(Var<T>, T);                                           \
  template Var<T> add_scalar(Var<T>, T);                                      \
  template Var<T> relu(Var<T>);                                               \
  template Var<T> lrelu(Var<T>, T);                                           \
  template Var<T> tanh(Var<T>);                                               \
  template Var<T> abs(Var<T>);                                                \
  template Var<T> square(Var<T>);                                             \
  template Var<T> log(Var<T>);                                                \
  template Var<T> exp(Var<T>);                                                \
  template Var<T> softplus(Var<T>);                                           \
  template Var<T> sum(Var<T>);                                                \
  template Var<T> mean(Var<T>);                                               \
  template Var<T> scalar_mul(Var<T>, Var<T>);                                 \
  template Var<T> channel_scale(Var<T>, Var<T>);                              \
  template Var<T> channel_bias(Var<T>, Var<T>);                               \
  template Var<T> conv2d(Var<T>, Var<T>, int, int);                           \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                              \
  template Var<T> instance_norm(Var<T>, Var<T>, Var<T>, T);                   \
  template Var<T> upsample2x(Var<T>);                                         \
  template Var<T> reshape(Var<T>, Shape);                                     \
  template Var<T> concat(std::span<const Var<T>>, Shape);

GANSEARCH_INSTANTIATE_OPS(float)
GANSEARCH_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace gansearch
