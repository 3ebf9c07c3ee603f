#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "zootune/errors.hpp"
#include "zootune/mac_counter.hpp"
#include "zootune/tensor.hpp"

// Numeric kernels shared by the autograd tape and the graph-free inference
// path. Convolutions run on an explicitly zero-padded buffer, so the number
// of multiply-accumulates each kernel executes equals the nominal
// Ho*Wo*K^2*Cout*Cin count that the complexity report predicts.

namespace zootune::detail {

struct Conv2dGeom {
  int n, ci, h, w, co, k, stride, pad, ho, wo;
  std::uint64_t macs() const {
    return static_cast<std::uint64_t>(n) * co * ci * k * k *
           static_cast<std::uint64_t>(ho) * wo;
  }
};

inline Conv2dGeom conv2d_geometry(const std::vector<int>& xs,
                                  const std::vector<int>& ws, int stride,
                                  int pad) {
  if (xs.size() != 4 || ws.size() != 4) {
    throw ShapeError("conv2d expects 4-d input and weight, got input " +
                     shape_str(xs) + " and weight " + shape_str(ws));
  }
  if (ws[2] != ws[3]) {
    throw ShapeError("conv2d expects square kernels, got weight " + shape_str(ws));
  }
  if (xs[1] != ws[1]) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(xs) +
                     " vs weight " + shape_str(ws));
  }
  if (stride < 1) throw ValueError("conv2d stride must be positive");
  if (pad < 0) throw ValueError("conv2d padding must be non-negative");
  Conv2dGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad, 0, 0};
  int ho_num = g.h + 2 * pad - g.k;
  int wo_num = g.w + 2 * pad - g.k;
  if (ho_num < 0 || wo_num < 0) {
    throw GeometryError("conv2d output would be empty: input " + shape_str(xs) +
                        ", kernel " + std::to_string(g.k) + ", padding " +
                        std::to_string(pad));
  }
  g.ho = ho_num / stride + 1;
  g.wo = wo_num / stride + 1;
  return g;
}

template <typename T>
Tensor<T> pad_nchw(const Tensor<T>& x, int pad) {
  if (pad == 0) return x;
  const auto& s = x.shape();
  Tensor<T> out({s[0], s[1], s[2] + 2 * pad, s[3] + 2 * pad});
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c)
      for (int h = 0; h < s[2]; ++h) {
        const T* src = &x(n, c, h, 0);
        T* dst = &out(n, c, h + pad, pad);
        for (int w = 0; w < s[3]; ++w) dst[w] = src[w];
      }
  return out;
}

template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                     int stride, int pad, const CountScope& cs = {}) {
  Conv2dGeom g = conv2d_geometry(x.shape(), w.shape(), stride, pad);
  if (bias != nullptr && !(bias->ndim() == 1 && bias->dim(0) == g.co)) {
    throw ShapeError("conv2d bias shape " + shape_str(bias->shape()) +
                     " does not match output channels " + std::to_string(g.co));
  }
  Tensor<T> xp = pad_nchw(x, pad);
  Tensor<T> out({g.n, g.co, g.ho, g.wo});
  for (int n = 0; n < g.n; ++n) {
    for (int co = 0; co < g.co; ++co) {
      T* oplane = &out(n, co, 0, 0);
      T bv = bias != nullptr ? (*bias)[static_cast<std::size_t>(co)] : T(0);
      for (int i = 0; i < g.ho * g.wo; ++i) oplane[i] = bv;
      for (int ci = 0; ci < g.ci; ++ci) {
        for (int kh = 0; kh < g.k; ++kh) {
          for (int kw = 0; kw < g.k; ++kw) {
            T wv = w(co, ci, kh, kw);
            for (int oh = 0; oh < g.ho; ++oh) {
              const T* irow = &xp(n, ci, oh * stride + kh, kw);
              T* orow = oplane + static_cast<std::size_t>(oh) * g.wo;
              for (int ow = 0; ow < g.wo; ++ow) {
                orow[ow] += wv * irow[static_cast<std::size_t>(ow) * stride];
              }
            }
          }
        }
      }
    }
  }
  cs.add(g.macs());
  return out;
}

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& gy, const Tensor<T>& w,
                            const std::vector<int>& xshape, int stride, int pad,
                            const CountScope& cs = {}) {
  Conv2dGeom g = conv2d_geometry(xshape, w.shape(), stride, pad);
  Tensor<T> gxp({g.n, g.ci, g.h + 2 * pad, g.w + 2 * pad});
  for (int n = 0; n < g.n; ++n) {
    for (int co = 0; co < g.co; ++co) {
      for (int ci = 0; ci < g.ci; ++ci) {
        for (int kh = 0; kh < g.k; ++kh) {
          for (int kw = 0; kw < g.k; ++kw) {
            T wv = w(co, ci, kh, kw);
            for (int oh = 0; oh < g.ho; ++oh) {
              const T* grow = &gy(n, co, oh, 0);
              T* xrow = &gxp(n, ci, oh * stride + kh, kw);
              for (int ow = 0; ow < g.wo; ++ow) {
                xrow[static_cast<std::size_t>(ow) * stride] += wv * grow[ow];
              }
            }
          }
        }
      }
    }
  }
  cs.add(g.macs());
  if (pad == 0) return gxp;
  Tensor<T> gx({g.n, g.ci, g.h, g.w});
  for (int n = 0; n < g.n; ++n)
    for (int ci = 0; ci < g.ci; ++ci)
      for (int h = 0; h < g.h; ++h) {
        const T* src = &gxp(n, ci, h + pad, pad);
        T* dst = &gx(n, ci, h, 0);
        for (int w2 = 0; w2 < g.w; ++w2) dst[w2] = src[w2];
      }
  return gx;
}

template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& gy, const Tensor<T>& x,
                             const std::vector<int>& wshape, int stride, int pad,
                             const CountScope& cs = {}) {
  Conv2dGeom g = conv2d_geometry(x.shape(), wshape, stride, pad);
  Tensor<T> xp = pad_nchw(x, pad);
  Tensor<T> gw(wshape);
  for (int n = 0; n < g.n; ++n) {
    for (int co = 0; co < g.co; ++co) {
      for (int ci = 0; ci < g.ci; ++ci) {
        for (int kh = 0; kh < g.k; ++kh) {
          for (int kw = 0; kw < g.k; ++kw) {
            T acc = T(0);
            for (int oh = 0; oh < g.ho; ++oh) {
              const T* irow = &xp(n, ci, oh * stride + kh, kw);
              const T* grow = &gy(n, co, oh, 0);
              for (int ow = 0; ow < g.wo; ++ow) {
                acc += irow[static_cast<std::size_t>(ow) * stride] * grow[ow];
              }
            }
            gw(co, ci, kh, kw) += acc;
          }
        }
      }
    }
  }
  cs.add(g.macs());
  return gw;
}

template <typename T>
Tensor<T> conv2d_grad_bias(const Tensor<T>& gy) {
  const auto& s = gy.shape();
  Tensor<T> gb({s[1]});
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c) {
      T acc = T(0);
      const T* plane = &gy(n, c, 0, 0);
      for (int i = 0; i < s[2] * s[3]; ++i) acc += plane[i];
      gb[static_cast<std::size_t>(c)] += acc;
    }
  return gb;
}

// out[p,r] = sum_q a[p,q] * b[q,r]
template <typename T>
Tensor<T> matmul_nn(const Tensor<T>& a, const Tensor<T>& b, const CountScope& cs = {}) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  int p = a.dim(0), q = a.dim(1), r = b.dim(1);
  Tensor<T> out({p, r});
  for (int i = 0; i < p; ++i) {
    T* orow = &out(i, 0);
    for (int j = 0; j < q; ++j) {
      T av = a(i, j);
      const T* brow = &b(j, 0);
      for (int k = 0; k < r; ++k) orow[k] += av * brow[k];
    }
  }
  cs.add(static_cast<std::uint64_t>(p) * q * r);
  return out;
}

// out[p,r] = sum_q a[p,q] * b[r,q]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b, const CountScope& cs = {}) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  int p = a.dim(0), q = a.dim(1), r = b.dim(0);
  Tensor<T> out({p, r});
  for (int i = 0; i < p; ++i) {
    const T* arow = &a(i, 0);
    T* orow = &out(i, 0);
    for (int k = 0; k < r; ++k) {
      const T* brow = &b(k, 0);
      T acc = T(0);
      for (int j = 0; j < q; ++j) acc += arow[j] * brow[j];
      orow[k] = acc;
    }
  }
  cs.add(static_cast<std::uint64_t>(p) * q * r);
  return out;
}

// out[q,r] = sum_p a[p,q] * b[p,r]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b, const CountScope& cs = {}) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0)) {
    throw ShapeError("matmul mismatch: " + shape_str(a.shape()) + "^T x " +
                     shape_str(b.shape()));
  }
  int p = a.dim(0), q = a.dim(1), r = b.dim(1);
  Tensor<T> out({q, r});
  for (int i = 0; i < p; ++i) {
    const T* arow = &a(i, 0);
    const T* brow = &b(i, 0);
    for (int j = 0; j < q; ++j) {
      T av = arow[j];
      T* orow = &out(j, 0);
      for (int k = 0; k < r; ++k) orow[k] += av * brow[k];
    }
  }
  cs.add(static_cast<std::uint64_t>(p) * q * r);
  return out;
}

// out = x * w^T + b, x: [N, Din], w: [Dout, Din], b: [Dout]
template <typename T>
Tensor<T> affine_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                     const CountScope& cs = {}) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("affine mismatch: input " + shape_str(x.shape()) +
                     " vs weight " + shape_str(w.shape()));
  }
  if (!(b.ndim() == 1 && b.dim(0) == w.dim(0))) {
    throw ShapeError("affine bias shape " + shape_str(b.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  }
  Tensor<T> out = matmul_nt(x, w, cs);
  for (int n = 0; n < out.dim(0); ++n)
    for (int o = 0; o < out.dim(1); ++o) out(n, o) += b[static_cast<std::size_t>(o)];
  return out;
}

template <typename T>
Tensor<T> gap_fwd(const Tensor<T>& x, const CountScope& cs = {}) {
  if (x.ndim() != 4) {
    throw ShapeError("global average pool expects 4-d input, got " +
                     shape_str(x.shape()));
  }
  const auto& s = x.shape();
  Tensor<T> out({s[0], s[1], 1, 1});
  T inv = T(1) / static_cast<T>(s[2] * s[3]);
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c) {
      const T* plane = &x(n, c, 0, 0);
      T acc = T(0);
      for (int i = 0; i < s[2] * s[3]; ++i) acc += plane[i];
      out(n, c, 0, 0) = acc * inv;
    }
  cs.add(static_cast<std::uint64_t>(s[0]) * s[1] * s[2] * s[3]);
  return out;
}

template <typename T>
Tensor<T> gap_bwd(const Tensor<T>& gy, const std::vector<int>& xshape) {
  Tensor<T> gx(xshape);
  T inv = T(1) / static_cast<T>(xshape[2] * xshape[3]);
  for (int n = 0; n < xshape[0]; ++n)
    for (int c = 0; c < xshape[1]; ++c) {
      T g = gy(n, c, 0, 0) * inv;
      T* plane = &gx(n, c, 0, 0);
      for (int i = 0; i < xshape[2] * xshape[3]; ++i) plane[i] = g;
    }
  return gx;
}

// Weighted sum of same-shape tensors, left to right. te_collapse and the
// frozen-gate forward both route through this so their arithmetic order is
// identical.
template <typename T>
Tensor<T> weighted_sum(const std::vector<const Tensor<T>*>& terms,
                       const std::vector<T>& coeffs, const CountScope& cs = {}) {
  if (terms.empty() || terms.size() != coeffs.size()) {
    throw ShapeError("weighted_sum needs one coefficient per term");
  }
  Tensor<T> out(terms[0]->shape());
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (!terms[t]->same_shape(out)) {
      throw ShapeError("weighted_sum term " + std::to_string(t) + " has shape " +
                       shape_str(terms[t]->shape()) + ", expected " +
                       shape_str(out.shape()));
    }
    T c = coeffs[t];
    const T* src = terms[t]->data();
    T* dst = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) dst[i] += c * src[i];
  }
  cs.add(static_cast<std::uint64_t>(terms.size()) * out.size());
  return out;
}

template <typename T>
Tensor<T> scale_tensor(T c, const Tensor<T>& x, const CountScope& cs = {}) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = c * x[i];
  cs.add(out.size());
  return out;
}

template <typename T>
Tensor<T> relu_fwd(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> sigmoid_fwd(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = T(1) / (T(1) + std::exp(-x[i]));
  }
  return out;
}

struct BatchNormSaved {
  // x_hat is stored for the backward pass; inv_std per channel.
  // Kept in double so float training reuses the same statistics code.
  std::vector<double> inv_std;
};

// Train mode: normalizes by batch statistics (biased variance) and updates
// running statistics in place (unbiased variance, PyTorch-style momentum).
// Eval mode: normalizes by the provided running statistics.
template <typename T>
Tensor<T> batch_norm_fwd(const Tensor<T>& x, const Tensor<T>& gamma,
                         const Tensor<T>& beta, Tensor<T>* running_mean,
                         Tensor<T>* running_var, bool train, double momentum,
                         double eps, Tensor<T>* x_hat_out,
                         std::vector<double>* inv_std_out) {
  if (x.ndim() != 4) {
    throw ShapeError("batch_norm expects 4-d input, got " + shape_str(x.shape()));
  }
  const auto& s = x.shape();
  int channels = s[1];
  auto check_c = [&](const Tensor<T>& t, const char* name) {
    if (!(t.ndim() == 1 && t.dim(0) == channels)) {
      throw ShapeError(std::string("batch_norm ") + name + " shape " +
                       shape_str(t.shape()) + " does not match channels " +
                       std::to_string(channels));
    }
  };
  check_c(gamma, "gamma");
  check_c(beta, "beta");
  std::int64_t cnt = static_cast<std::int64_t>(s[0]) * s[2] * s[3];
  if (train && cnt < 2) {
    throw ValueError("batch_norm train mode needs at least 2 elements per channel, got " +
                     std::to_string(cnt));
  }
  Tensor<T> out(x.shape());
  if (x_hat_out != nullptr) *x_hat_out = Tensor<T>(x.shape());
  if (inv_std_out != nullptr) inv_std_out->assign(static_cast<std::size_t>(channels), 0.0);
  for (int c = 0; c < channels; ++c) {
    double mean;
    double var;
    if (train) {
      double acc = 0.0;
      for (int n = 0; n < s[0]; ++n) {
        const T* plane = &x(n, c, 0, 0);
        for (int i = 0; i < s[2] * s[3]; ++i) acc += static_cast<double>(plane[i]);
      }
      mean = acc / static_cast<double>(cnt);
      double vacc = 0.0;
      for (int n = 0; n < s[0]; ++n) {
        const T* plane = &x(n, c, 0, 0);
        for (int i = 0; i < s[2] * s[3]; ++i) {
          double d = static_cast<double>(plane[i]) - mean;
          vacc += d * d;
        }
      }
      var = vacc / static_cast<double>(cnt);
      if (running_mean != nullptr && running_var != nullptr) {
        check_c(*running_mean, "running_mean");
        check_c(*running_var, "running_var");
        double unbiased = vacc / static_cast<double>(cnt - 1);
        auto& rm = (*running_mean)[static_cast<std::size_t>(c)];
        auto& rv = (*running_var)[static_cast<std::size_t>(c)];
        rm = static_cast<T>((1.0 - momentum) * static_cast<double>(rm) + momentum * mean);
        rv = static_cast<T>((1.0 - momentum) * static_cast<double>(rv) + momentum * unbiased);
      }
    } else {
      if (running_mean == nullptr || running_var == nullptr) {
        throw StateError("batch_norm eval mode requires running statistics");
      }
      check_c(*running_mean, "running_mean");
      check_c(*running_var, "running_var");
      mean = static_cast<double>((*running_mean)[static_cast<std::size_t>(c)]);
      var = static_cast<double>((*running_var)[static_cast<std::size_t>(c)]);
    }
    double inv_std = 1.0 / std::sqrt(var + eps);
    if (inv_std_out != nullptr) (*inv_std_out)[static_cast<std::size_t>(c)] = inv_std;
    T g = gamma[static_cast<std::size_t>(c)];
    T b = beta[static_cast<std::size_t>(c)];
    for (int n = 0; n < s[0]; ++n) {
      const T* src = &x(n, c, 0, 0);
      T* dst = &out(n, c, 0, 0);
      T* xh = x_hat_out != nullptr ? &(*x_hat_out)(n, c, 0, 0) : nullptr;
      for (int i = 0; i < s[2] * s[3]; ++i) {
        T h = static_cast<T>((static_cast<double>(src[i]) - mean) * inv_std);
        if (xh != nullptr) xh[i] = h;
        dst[i] = g * h + b;
      }
    }
  }
  return out;
}

template <typename T>
void batch_norm_bwd(const Tensor<T>& gy, const Tensor<T>& x_hat,
                    const std::vector<double>& inv_std, const Tensor<T>& gamma,
                    bool train, Tensor<T>* gx, Tensor<T>* ggamma, Tensor<T>* gbeta) {
  const auto& s = gy.shape();
  int channels = s[1];
  double cnt = static_cast<double>(s[0]) * s[2] * s[3];
  *gx = Tensor<T>(gy.shape());
  *ggamma = Tensor<T>({channels});
  *gbeta = Tensor<T>({channels});
  for (int c = 0; c < channels; ++c) {
    double sum_gy = 0.0;
    double sum_gy_xhat = 0.0;
    for (int n = 0; n < s[0]; ++n) {
      const T* gp = &gy(n, c, 0, 0);
      const T* hp = &x_hat(n, c, 0, 0);
      for (int i = 0; i < s[2] * s[3]; ++i) {
        sum_gy += static_cast<double>(gp[i]);
        sum_gy_xhat += static_cast<double>(gp[i]) * static_cast<double>(hp[i]);
      }
    }
    (*ggamma)[static_cast<std::size_t>(c)] = static_cast<T>(sum_gy_xhat);
    (*gbeta)[static_cast<std::size_t>(c)] = static_cast<T>(sum_gy);
    double g = static_cast<double>(gamma[static_cast<std::size_t>(c)]);
    double istd = inv_std[static_cast<std::size_t>(c)];
    double mean_gy = sum_gy / cnt;
    double mean_gy_xhat = sum_gy_xhat / cnt;
    for (int n = 0; n < s[0]; ++n) {
      const T* gp = &gy(n, c, 0, 0);
      const T* hp = &x_hat(n, c, 0, 0);
      T* xp = &(*gx)(n, c, 0, 0);
      for (int i = 0; i < s[2] * s[3]; ++i) {
        double v;
        if (train) {
          v = g * istd *
              (static_cast<double>(gp[i]) - mean_gy -
               static_cast<double>(hp[i]) * mean_gy_xhat);
        } else {
          v = g * istd * static_cast<double>(gp[i]);
        }
        xp[i] = static_cast<T>(v);
      }
    }
  }
}

// Mean over the batch of -log softmax(logits)[label], max-stabilized.
// Returns the loss and stores the softmax matrix for the backward pass.
template <typename T>
T softmax_cross_entropy_fwd(const Tensor<T>& logits, const std::vector<int>& labels,
                            Tensor<T>* softmax_out) {
  if (logits.ndim() != 2) {
    throw ShapeError("cross entropy expects 2-d logits, got " +
                     shape_str(logits.shape()));
  }
  int n = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("cross entropy label count " + std::to_string(labels.size()) +
                     " does not match batch " + std::to_string(n));
  }
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0 ||
        labels[static_cast<std::size_t>(i)] >= classes) {
      throw ValueError("label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                       " out of range [0," + std::to_string(classes) + ")");
    }
  }
  *softmax_out = Tensor<T>(logits.shape());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const T* row = &logits(i, 0);
    T* prow = &(*softmax_out)(i, 0);
    T mx = row[0];
    for (int c = 1; c < classes; ++c) mx = row[c] > mx ? row[c] : mx;
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) {
      double e = std::exp(static_cast<double>(row[c] - mx));
      prow[c] = static_cast<T>(e);
      denom += e;
    }
    for (int c = 0; c < classes; ++c) prow[c] = static_cast<T>(prow[c] / denom);
    loss -= std::log(static_cast<double>(prow[labels[static_cast<std::size_t>(i)]]));
  }
  return static_cast<T>(loss / n);
}

template <typename T>
Tensor<T> softmax_cross_entropy_bwd(T gy, const Tensor<T>& softmax,
                                    const std::vector<int>& labels) {
  int n = softmax.dim(0), classes = softmax.dim(1);
  Tensor<T> gx(softmax.shape());
  T scale = gy / static_cast<T>(n);
  for (int i = 0; i < n; ++i) {
    const T* prow = &softmax(i, 0);
    T* grow = &gx(i, 0);
    for (int c = 0; c < classes; ++c) {
      T delta = c == labels[static_cast<std::size_t>(i)] ? T(1) : T(0);
      grow[c] = scale * (prow[c] - delta);
    }
  }
  return gx;
}

}  // namespace zootune::detail
