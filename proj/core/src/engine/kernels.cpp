#include "blnet/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "blnet/error.hpp"

namespace blnet {

std::string_view precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision precision_from_name(std::string_view name) {
  if (name == "f32") return Precision::F32;
  if (name == "f64") return Precision::F64;
  throw Error(ErrorKind::InvalidArgument, "unknown precision '" + std::string(name) + "' (expected f32 or f64)");
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](T v) { return std::isfinite(v); });
}

template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

}  // namespace blnet

namespace blnet::kernels {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int64_t n, cin, h, w, cout, oh, ow, groups, cin_g, cout_g, kh, kw, sh, sw, ph, pw;
  int64_t patch() const { return cin_g * kh * kw; }
  int64_t pixels() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0; }
};

template <typename T>
ConvGeometry geometry(const Tensor<T>& x, const Tensor<T>& weight, const Conv2dParams& p) {
  const TensorShape& s = x.shape;
  if (s.channels != p.in_channels || p.groups < 1 || p.in_channels % p.groups != 0 ||
      p.out_channels % p.groups != 0) {
    throw Error(ErrorKind::ShapeMismatch, "conv2d: input channels " + std::to_string(s.channels) +
                                              " incompatible with layer " + std::to_string(p.in_channels) + "/" +
                                              std::to_string(p.groups));
  }
  const TensorShape want{p.out_channels, p.in_channels / p.groups, p.kernel_h, p.kernel_w};
  if (weight.shape != want) {
    throw Error(ErrorKind::ShapeMismatch,
                "conv2d: weight shape " + weight.shape.to_string() + ", expected " + want.to_string());
  }
  ConvGeometry g{};
  g.n = s.batch;
  g.cin = s.channels;
  g.h = s.height;
  g.w = s.width;
  g.cout = p.out_channels;
  g.groups = p.groups;
  g.cin_g = p.in_channels / p.groups;
  g.cout_g = p.out_channels / p.groups;
  g.kh = p.kernel_h;
  g.kw = p.kernel_w;
  g.sh = p.stride_h;
  g.sw = p.stride_w;
  g.ph = p.pad_h;
  g.pw = p.pad_w;
  g.oh = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.ow = (g.w + 2 * g.pw - g.kw) / g.sw + 1;
  if (g.h + 2 * g.ph < g.kh || g.w + 2 * g.pw < g.kw || g.oh < 1 || g.ow < 1) {
    throw Error(ErrorKind::ShapeMismatch, "conv2d: non-positive output extent for input " + s.to_string());
  }
  return g;
}

bool use_im2col(ConvAlgo algo) { return algo != ConvAlgo::Direct; }

// Unrolls one (sample, group) slice into a patch x pixels matrix.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (int64_t ic = 0; ic < g.cin_g; ++ic) {
    const T* plane = x + ic * g.h * g.w;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((ic * g.kh + ki) * g.kw + kj) * g.pixels();
        for (int64_t oi = 0; oi < g.oh; ++oi) {
          const int64_t ii = oi * g.sh - g.ph + ki;
          T* dst = row + oi * g.ow;
          if (ii < 0 || ii >= g.h) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          for (int64_t oj = 0; oj < g.ow; ++oj) {
            const int64_t jj = oj * g.sw - g.pw + kj;
            dst[oj] = (jj >= 0 && jj < g.w) ? plane[ii * g.w + jj] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
  for (int64_t ic = 0; ic < g.cin_g; ++ic) {
    T* plane = dx + ic * g.h * g.w;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((ic * g.kh + ki) * g.kw + kj) * g.pixels();
        for (int64_t oi = 0; oi < g.oh; ++oi) {
          const int64_t ii = oi * g.sh - g.ph + ki;
          if (ii < 0 || ii >= g.h) continue;
          for (int64_t oj = 0; oj < g.ow; ++oj) {
            const int64_t jj = oj * g.sw - g.pw + kj;
            if (jj >= 0 && jj < g.w) plane[ii * g.w + jj] += row[oi * g.ow + oj];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_direct(const Tensor<T>& x, const Tensor<T>& weight, const ConvGeometry& g, Tensor<T>& y) {
  for (int64_t n = 0; n < g.n; ++n) {
    for (int64_t oc = 0; oc < g.cout; ++oc) {
      const int64_t grp = oc / g.cout_g;
      for (int64_t oi = 0; oi < g.oh; ++oi) {
        for (int64_t oj = 0; oj < g.ow; ++oj) {
          T acc = 0;
          for (int64_t ic = 0; ic < g.cin_g; ++ic) {
            const int64_t c = grp * g.cin_g + ic;
            for (int64_t ki = 0; ki < g.kh; ++ki) {
              const int64_t ii = oi * g.sh - g.ph + ki;
              if (ii < 0 || ii >= g.h) continue;
              for (int64_t kj = 0; kj < g.kw; ++kj) {
                const int64_t jj = oj * g.sw - g.pw + kj;
                if (jj < 0 || jj >= g.w) continue;
                acc += weight.at(oc, ic, ki, kj) * x.at(n, c, ii, jj);
              }
            }
          }
          y.at(n, oc, oi, oj) += acc;
        }
      }
    }
  }
}

template <typename T>
void conv_im2col(const Tensor<T>& x, const Tensor<T>& weight, const ConvGeometry& g, Tensor<T>& y) {
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.patch() * g.pixels()));
  for (int64_t n = 0; n < g.n; ++n) {
    for (int64_t grp = 0; grp < g.groups; ++grp) {
      const T* xs = x.ptr() + (n * g.cin + grp * g.cin_g) * g.h * g.w;
      if (!g.pointwise()) im2col(xs, g, col.data());
      ConstMapMatrix<T> cols(g.pointwise() ? xs : col.data(), g.patch(), g.pixels());
      ConstMapMatrix<T> w(weight.ptr() + grp * g.cout_g * g.patch(), g.cout_g, g.patch());
      MapMatrix<T> out(y.ptr() + (n * g.cout + grp * g.cout_g) * g.pixels(), g.cout_g, g.pixels());
      out.noalias() += w * cols;
    }
  }
}

template <typename T>
void conv_backward_direct(const Tensor<T>& x, const Tensor<T>& weight, const ConvGeometry& g, const Tensor<T>& dy,
                          Tensor<T>* dx, Tensor<T>* dw) {
  for (int64_t n = 0; n < g.n; ++n) {
    for (int64_t oc = 0; oc < g.cout; ++oc) {
      const int64_t grp = oc / g.cout_g;
      for (int64_t oi = 0; oi < g.oh; ++oi) {
        for (int64_t oj = 0; oj < g.ow; ++oj) {
          const T d = dy.at(n, oc, oi, oj);
          for (int64_t ic = 0; ic < g.cin_g; ++ic) {
            const int64_t c = grp * g.cin_g + ic;
            for (int64_t ki = 0; ki < g.kh; ++ki) {
              const int64_t ii = oi * g.sh - g.ph + ki;
              if (ii < 0 || ii >= g.h) continue;
              for (int64_t kj = 0; kj < g.kw; ++kj) {
                const int64_t jj = oj * g.sw - g.pw + kj;
                if (jj < 0 || jj >= g.w) continue;
                if (dw) dw->at(oc, ic, ki, kj) += d * x.at(n, c, ii, jj);
                if (dx) dx->at(n, c, ii, jj) += d * weight.at(oc, ic, ki, kj);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_im2col(const Tensor<T>& x, const Tensor<T>& weight, const ConvGeometry& g, const Tensor<T>& dy,
                          Tensor<T>* dx, Tensor<T>* dw) {
  const auto size = static_cast<std::size_t>(g.patch() * g.pixels());
  std::vector<T> col(dw && !g.pointwise() ? size : 0);
  std::vector<T> dcol(dx && !g.pointwise() ? size : 0);
  for (int64_t n = 0; n < g.n; ++n) {
    for (int64_t grp = 0; grp < g.groups; ++grp) {
      const int64_t xoff = (n * g.cin + grp * g.cin_g) * g.h * g.w;
      ConstMapMatrix<T> dout(dy.ptr() + (n * g.cout + grp * g.cout_g) * g.pixels(), g.cout_g, g.pixels());
      if (dw) {
        const T* xs = x.ptr() + xoff;
        if (!g.pointwise()) im2col(xs, g, col.data());
        ConstMapMatrix<T> cols(g.pointwise() ? xs : col.data(), g.patch(), g.pixels());
        MapMatrix<T> dweight(dw->ptr() + grp * g.cout_g * g.patch(), g.cout_g, g.patch());
        dweight.noalias() += dout * cols.transpose();
      }
      if (dx) {
        ConstMapMatrix<T> w(weight.ptr() + grp * g.cout_g * g.patch(), g.cout_g, g.patch());
        if (g.pointwise()) {
          MapMatrix<T> dxs(dx->ptr() + xoff, g.patch(), g.pixels());
          dxs.noalias() += w.transpose() * dout;
        } else {
          MapMatrix<T> dc(dcol.data(), g.patch(), g.pixels());
          dc.noalias() = w.transpose() * dout;
          col2im(dcol.data(), g, dx->ptr() + xoff);
        }
      }
    }
  }
}

void require_same(const TensorShape& a, const TensorShape& b, const char* what) {
  if (a != b) throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": " + a.to_string() + " vs " + b.to_string());
}

void require_channels(const TensorShape& param, int64_t c, const char* what) {
  if (param != channel_shape(c)) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + ": parameter shape " + param.to_string() + " for " + std::to_string(c) + " channels");
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, Opt<const Tensor<T>> bias, const Conv2dParams& p,
                 ConvAlgo algo) {
  const ConvGeometry g = geometry(x, weight, p);
  Tensor<T> y({g.n, g.cout, g.oh, g.ow});
  if (bias) {
    require_channels(bias->shape, g.cout, "conv2d bias");
    for (int64_t n = 0; n < g.n; ++n)
      for (int64_t c = 0; c < g.cout; ++c)
        std::fill_n(y.ptr() + (n * g.cout + c) * g.pixels(), g.pixels(), bias->data[c]);
  }
  if (use_im2col(algo)) {
    conv_im2col(x, weight, g, y);
  } else {
    conv_direct(x, weight, g, y);
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Conv2dParams& p, const Tensor<T>& dy,
                     Opt<Tensor<T>> dx, Opt<Tensor<T>> dweight, Opt<Tensor<T>> dbias, ConvAlgo algo) {
  const ConvGeometry g = geometry(x, weight, p);
  require_same(dy.shape, {g.n, g.cout, g.oh, g.ow}, "conv2d backward");
  if (dx) require_same(dx->shape, x.shape, "conv2d dx");
  if (dweight) require_same(dweight->shape, weight.shape, "conv2d dweight");
  if (dbias) {
    require_channels(dbias->shape, g.cout, "conv2d dbias");
    for (int64_t n = 0; n < g.n; ++n)
      for (int64_t c = 0; c < g.cout; ++c) {
        const T* d = dy.ptr() + (n * g.cout + c) * g.pixels();
        T s = 0;
        for (int64_t i = 0; i < g.pixels(); ++i) s += d[i];
        dbias->data[c] += s;
      }
  }
  if (use_im2col(algo)) {
    conv_backward_im2col(x, weight, g, dy, dx, dweight);
  } else {
    conv_backward_direct(x, weight, g, dy, dx, dweight);
  }
}

template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchStats<T>* stats) {
  const TensorShape& s = x.shape;
  require_channels(gamma.shape, s.channels, "batchnorm gamma");
  require_channels(beta.shape, s.channels, "batchnorm beta");
  const int64_t hw = s.height * s.width;
  const T m = static_cast<T>(s.batch * hw);
  BatchStats<T> local;
  BatchStats<T>& st = stats ? *stats : local;
  st.mean.assign(s.channels, T(0));
  st.var.assign(s.channels, T(0));
  for (int64_t c = 0; c < s.channels; ++c) {
    T sum = 0;
    for (int64_t n = 0; n < s.batch; ++n) {
      const T* p = x.ptr() + (n * s.channels + c) * hw;
      for (int64_t i = 0; i < hw; ++i) sum += p[i];
    }
    const T mean = sum / m;
    T sq = 0;
    for (int64_t n = 0; n < s.batch; ++n) {
      const T* p = x.ptr() + (n * s.channels + c) * hw;
      for (int64_t i = 0; i < hw; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    st.mean[c] = mean;
    st.var[c] = sq / m;
  }
  Tensor<T> y(s);
  for (int64_t n = 0; n < s.batch; ++n)
    for (int64_t c = 0; c < s.channels; ++c) {
      const T inv = T(1) / std::sqrt(st.var[c] + static_cast<T>(kBatchNormEps));
      const T* p = x.ptr() + (n * s.channels + c) * hw;
      T* q = y.ptr() + (n * s.channels + c) * hw;
      for (int64_t i = 0; i < hw; ++i) q[i] = gamma.data[c] * (p[i] - st.mean[c]) * inv + beta.data[c];
    }
  return y;
}

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                         const Tensor<T>& running_mean, const Tensor<T>& running_var) {
  const TensorShape& s = x.shape;
  for (const Tensor<T>* t : {&gamma, &beta, &running_mean, &running_var})
    require_channels(t->shape, s.channels, "batchnorm");
  const int64_t hw = s.height * s.width;
  Tensor<T> y(s);
  for (int64_t n = 0; n < s.batch; ++n)
    for (int64_t c = 0; c < s.channels; ++c) {
      const T inv = T(1) / std::sqrt(running_var.data[c] + static_cast<T>(kBatchNormEps));
      const T* p = x.ptr() + (n * s.channels + c) * hw;
      T* q = y.ptr() + (n * s.channels + c) * hw;
      for (int64_t i = 0; i < hw; ++i) q[i] = gamma.data[c] * (p[i] - running_mean.data[c]) * inv + beta.data[c];
    }
  return y;
}

template <typename T>
void batchnorm_train_backward(const Tensor<T>& x, const Tensor<T>& gamma, const BatchStats<T>& stats,
                              const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const TensorShape& s = x.shape;
  require_same(dy.shape, s, "batchnorm backward");
  require_same(dx.shape, s, "batchnorm dx");
  const int64_t hw = s.height * s.width;
  const T m = static_cast<T>(s.batch * hw);
  for (int64_t c = 0; c < s.channels; ++c) {
    const T inv = T(1) / std::sqrt(stats.var[c] + static_cast<T>(kBatchNormEps));
    T sum_dy = 0, sum_dy_xhat = 0;
    for (int64_t n = 0; n < s.batch; ++n) {
      const std::size_t o = static_cast<std::size_t>((n * s.channels + c) * hw);
      for (int64_t i = 0; i < hw; ++i) {
        const T xhat = (x.data[o + i] - stats.mean[c]) * inv;
        sum_dy += dy.data[o + i];
        sum_dy_xhat += dy.data[o + i] * xhat;
      }
    }
    dgamma.data[c] += sum_dy_xhat;
    dbeta.data[c] += sum_dy;
    const T scale = gamma.data[c] * inv / m;
    for (int64_t n = 0; n < s.batch; ++n) {
      const std::size_t o = static_cast<std::size_t>((n * s.channels + c) * hw);
      for (int64_t i = 0; i < hw; ++i) {
        const T xhat = (x.data[o + i] - stats.mean[c]) * inv;
        dx.data[o + i] += scale * (m * dy.data[o + i] - sum_dy - xhat * sum_dy_xhat);
      }
    }
  }
}

template <typename T>
void batchnorm_eval_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& running_mean,
                             const Tensor<T>& running_var, const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dgamma,
                             Tensor<T>& dbeta) {
  const TensorShape& s = x.shape;
  require_same(dy.shape, s, "batchnorm backward");
  const int64_t hw = s.height * s.width;
  for (int64_t n = 0; n < s.batch; ++n)
    for (int64_t c = 0; c < s.channels; ++c) {
      const T inv = T(1) / std::sqrt(running_var.data[c] + static_cast<T>(kBatchNormEps));
      const std::size_t o = static_cast<std::size_t>((n * s.channels + c) * hw);
      for (int64_t i = 0; i < hw; ++i) {
        const T xhat = (x.data[o + i] - running_mean.data[c]) * inv;
        dgamma.data[c] += dy.data[o + i] * xhat;
        dbeta.data[c] += dy.data[o + i];
        dx.data[o + i] += dy.data[o + i] * gamma.data[c] * inv;
      }
    }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  require_same(dy.shape, x.shape, "relu backward");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x.data[i] > T(0)) dx.data[i] += dy.data[i];
}

namespace {

// Index of the winning input cell for one pooling window, or -1 if the
// window covers padding only.
template <typename T>
int64_t pool_argmax(const Tensor<T>& x, const MaxPoolParams& p, int64_t n, int64_t c, int64_t oi, int64_t oj) {
  int64_t best = -1;
  T best_v = -std::numeric_limits<T>::infinity();
  for (int64_t ki = 0; ki < p.kernel_h; ++ki) {
    const int64_t ii = oi * p.stride_h - p.pad_h + ki;
    if (ii < 0 || ii >= x.shape.height) continue;
    for (int64_t kj = 0; kj < p.kernel_w; ++kj) {
      const int64_t jj = oj * p.stride_w - p.pad_w + kj;
      if (jj < 0 || jj >= x.shape.width) continue;
      const T v = x.at(n, c, ii, jj);
      if (best < 0 || v > best_v) {
        best = static_cast<int64_t>(x.offset(n, c, ii, jj));
        best_v = v;
      }
    }
  }
  return best;
}

TensorShape pool_shape(const TensorShape& s, const MaxPoolParams& p) {
  const int64_t oh = (s.height + 2 * p.pad_h - p.kernel_h) / p.stride_h + 1;
  const int64_t ow = (s.width + 2 * p.pad_w - p.kernel_w) / p.stride_w + 1;
  if (s.height + 2 * p.pad_h < p.kernel_h || s.width + 2 * p.pad_w < p.kernel_w || oh < 1 || ow < 1) {
    throw Error(ErrorKind::ShapeMismatch, "maxpool: non-positive output extent for input " + s.to_string());
  }
  return {s.batch, s.channels, oh, ow};
}

}  // namespace

template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, const MaxPoolParams& p) {
  Tensor<T> y(pool_shape(x.shape, p));
  for (int64_t n = 0; n < y.shape.batch; ++n)
    for (int64_t c = 0; c < y.shape.channels; ++c)
      for (int64_t oi = 0; oi < y.shape.height; ++oi)
        for (int64_t oj = 0; oj < y.shape.width; ++oj) {
          const int64_t k = pool_argmax(x, p, n, c, oi, oj);
          y.at(n, c, oi, oj) = k < 0 ? T(0) : x.data[static_cast<std::size_t>(k)];
        }
  return y;
}

template <typename T>
void maxpool_backward(const Tensor<T>& x, const MaxPoolParams& p, const Tensor<T>& dy, Tensor<T>& dx) {
  require_same(dy.shape, pool_shape(x.shape, p), "maxpool backward");
  for (int64_t n = 0; n < dy.shape.batch; ++n)
    for (int64_t c = 0; c < dy.shape.channels; ++c)
      for (int64_t oi = 0; oi < dy.shape.height; ++oi)
        for (int64_t oj = 0; oj < dy.shape.width; ++oj) {
          const int64_t k = pool_argmax(x, p, n, c, oi, oj);
          if (k >= 0) dx.data[static_cast<std::size_t>(k)] += dy.at(n, c, oi, oj);
        }
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const TensorShape& s = x.shape;
  const int64_t hw = s.height * s.width;
  Tensor<T> y({s.batch, s.channels, 1, 1});
  for (int64_t i = 0; i < s.batch * s.channels; ++i) {
    T sum = 0;
    for (int64_t j = 0; j < hw; ++j) sum += x.data[static_cast<std::size_t>(i * hw + j)];
    y.data[static_cast<std::size_t>(i)] = sum / static_cast<T>(hw);
  }
  return y;
}

template <typename T>
void global_avg_pool_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const TensorShape& s = dx.shape;
  require_same(dy.shape, {s.batch, s.channels, 1, 1}, "global_avg_pool backward");
  const int64_t hw = s.height * s.width;
  for (int64_t i = 0; i < s.batch * s.channels; ++i) {
    const T g = dy.data[static_cast<std::size_t>(i)] / static_cast<T>(hw);
    for (int64_t j = 0; j < hw; ++j) dx.data[static_cast<std::size_t>(i * hw + j)] += g;
  }
}

namespace {

struct Tap1d {
  int64_t lo, hi;
  double frac;  // weight of hi
};

std::vector<Tap1d> upsample_taps(int64_t in, int64_t scale) {
  std::vector<Tap1d> taps(static_cast<std::size_t>(in * scale));
  for (int64_t d = 0; d < in * scale; ++d) {
    double s = (static_cast<double>(d) + 0.5) / static_cast<double>(scale) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<int64_t>(std::floor(s));
    const int64_t hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(d)] = {lo, hi, s - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int64_t scale_h, int64_t scale_w) {
  if (scale_h < 1 || scale_w < 1) throw Error(ErrorKind::InvalidArgument, "upsample scale must be >= 1");
  const TensorShape& s = x.shape;
  if (scale_h == 1 && scale_w == 1) return x;
  const auto th = upsample_taps(s.height, scale_h);
  const auto tw = upsample_taps(s.width, scale_w);
  Tensor<T> y({s.batch, s.channels, s.height * scale_h, s.width * scale_w});
  for (int64_t n = 0; n < s.batch; ++n)
    for (int64_t c = 0; c < s.channels; ++c)
      for (std::size_t i = 0; i < th.size(); ++i)
        for (std::size_t j = 0; j < tw.size(); ++j) {
          const T fh = static_cast<T>(th[i].frac), fw = static_cast<T>(tw[j].frac);
          y.at(n, c, static_cast<int64_t>(i), static_cast<int64_t>(j)) =
              (1 - fh) * (1 - fw) * x.at(n, c, th[i].lo, tw[j].lo) + (1 - fh) * fw * x.at(n, c, th[i].lo, tw[j].hi) +
              fh * (1 - fw) * x.at(n, c, th[i].hi, tw[j].lo) + fh * fw * x.at(n, c, th[i].hi, tw[j].hi);
        }
  return y;
}

template <typename T>
void bilinear_upsample_backward(const Tensor<T>& dy, int64_t scale_h, int64_t scale_w, Tensor<T>& dx) {
  const TensorShape& s = dx.shape;
  require_same(dy.shape, {s.batch, s.channels, s.height * scale_h, s.width * scale_w}, "upsample backward");
  const auto th = upsample_taps(s.height, scale_h);
  const auto tw = upsample_taps(s.width, scale_w);
  for (int64_t n = 0; n < s.batch; ++n)
    for (int64_t c = 0; c < s.channels; ++c)
      for (std::size_t i = 0; i < th.size(); ++i)
        for (std::size_t j = 0; j < tw.size(); ++j) {
          const T g = dy.at(n, c, static_cast<int64_t>(i), static_cast<int64_t>(j));
          const T fh = static_cast<T>(th[i].frac), fw = static_cast<T>(tw[j].frac);
          dx.at(n, c, th[i].lo, tw[j].lo) += (1 - fh) * (1 - fw) * g;
          dx.at(n, c, th[i].lo, tw[j].hi) += (1 - fh) * fw * g;
          dx.at(n, c, th[i].hi, tw[j].lo) += fh * (1 - fw) * g;
          dx.at(n, c, th[i].hi, tw[j].hi) += fh * fw * g;
        }
}

template <typename T>
Tensor<T> add_merge(std::span<const Tensor<T>* const> xs, std::span<const double> coefficients) {
  if (xs.empty() || xs.size() != coefficients.size())
    throw Error(ErrorKind::ShapeMismatch, "add_merge: coefficient count does not match inputs");
  Tensor<T> y(xs[0]->shape);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require_same(xs[k]->shape, y.shape, "add_merge");
    const T c = static_cast<T>(coefficients[k]);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += c * xs[k]->data[i];
  }
  return y;
}

template <typename T>
void add_merge_backward(const Tensor<T>& dy, double coefficient, Tensor<T>& dx) {
  require_same(dy.shape, dx.shape, "add_merge backward");
  const T c = static_cast<T>(coefficient);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] += c * dy.data[i];
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>* const> xs) {
  if (xs.empty()) throw Error(ErrorKind::ShapeMismatch, "concat: no inputs");
  TensorShape out = xs[0]->shape;
  out.channels = 0;
  for (const Tensor<T>* x : xs) {
    TensorShape s = x->shape;
    if (s.batch != out.batch || s.height != out.height || s.width != out.width)
      throw Error(ErrorKind::ShapeMismatch, "concat: " + s.to_string() + " vs " + xs[0]->shape.to_string());
    out.channels += s.channels;
  }
  Tensor<T> y(out);
  const int64_t hw = out.height * out.width;
  for (int64_t n = 0; n < out.batch; ++n) {
    T* dst = y.ptr() + n * out.channels * hw;
    for (const Tensor<T>* x : xs) {
      const int64_t len = x->shape.channels * hw;
      std::copy_n(x->ptr() + n * len, len, dst);
      dst += len;
    }
  }
  return y;
}

template <typename T>
void concat_backward(const Tensor<T>& dy, int64_t channel_offset, Tensor<T>& dx) {
  const TensorShape& s = dx.shape;
  const int64_t hw = s.height * s.width;
  for (int64_t n = 0; n < s.batch; ++n) {
    const T* src = dy.ptr() + (n * dy.shape.channels + channel_offset) * hw;
    T* dst = dx.ptr() + n * s.channels * hw;
    for (int64_t i = 0; i < s.channels * hw; ++i) dst[i] += src[i];
  }
}

template <typename T>
Tensor<T> crop_time(const Tensor<T>& x, const CropTimeParams& p) {
  const TensorShape& s = x.shape;
  const int64_t w = s.width - p.total();
  if (p.trim_front < 0 || p.trim_back < 0 || w < 1)
    throw Error(ErrorKind::ShapeMismatch, "crop_time: cannot trim " + std::to_string(p.total()) + " of " + s.to_string());
  Tensor<T> y({s.batch, s.channels, s.height, w});
  for (int64_t r = 0; r < s.batch * s.channels * s.height; ++r)
    std::copy_n(x.ptr() + r * s.width + p.trim_front, w, y.ptr() + r * w);
  return y;
}

template <typename T>
void crop_time_backward(const Tensor<T>& dy, const CropTimeParams& p, Tensor<T>& dx) {
  const TensorShape& s = dx.shape;
  const int64_t w = s.width - p.total();
  require_same(dy.shape, {s.batch, s.channels, s.height, w}, "crop_time backward");
  for (int64_t r = 0; r < s.batch * s.channels * s.height; ++r)
    for (int64_t j = 0; j < w; ++j) dx.data[static_cast<std::size_t>(r * s.width + p.trim_front + j)] += dy.data[static_cast<std::size_t>(r * w + j)];
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, Opt<const Tensor<T>> bias) {
  const int64_t in = x.shape.per_sample();
  const int64_t out = weight.shape.batch;
  if (weight.shape != TensorShape{out, in, 1, 1})
    throw Error(ErrorKind::ShapeMismatch, "linear: weight " + weight.shape.to_string() + " for " +
                                              std::to_string(in) + " input features");
  if (bias) require_channels(bias->shape, out, "linear bias");
  Tensor<T> y({x.shape.batch, out, 1, 1});
  for (int64_t n = 0; n < x.shape.batch; ++n)
    for (int64_t o = 0; o < out; ++o) {
      T acc = bias ? bias->data[o] : T(0);
      for (int64_t i = 0; i < in; ++i) acc += weight.data[o * in + i] * x.data[n * in + i];
      y.data[n * out + o] = acc;
    }
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Opt<Tensor<T>> dx,
                     Opt<Tensor<T>> dweight, Opt<Tensor<T>> dbias) {
  const int64_t in = x.shape.per_sample();
  const int64_t out = weight.shape.batch;
  require_same(dy.shape, {x.shape.batch, out, 1, 1}, "linear backward");
  for (int64_t n = 0; n < x.shape.batch; ++n)
    for (int64_t o = 0; o < out; ++o) {
      const T g = dy.data[n * out + o];
      if (dbias) dbias->data[o] += g;
      for (int64_t i = 0; i < in; ++i) {
        if (dweight) dweight->data[o * in + i] += g * x.data[n * in + i];
        if (dx) dx->data[n * in + i] += g * weight.data[o * in + i];
      }
    }
}

#define BLNET_INSTANTIATE_KERNELS(T)                                                                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const Conv2dParams&, ConvAlgo);  \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Conv2dParams&, const Tensor<T>&,         \
                                Tensor<T>*, Tensor<T>*, Tensor<T>*, ConvAlgo);                                     \
  template Tensor<T> batchnorm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchStats<T>*);        \
  template Tensor<T> batchnorm_eval(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                    const Tensor<T>&);                                                             \
  template void batchnorm_train_backward(const Tensor<T>&, const Tensor<T>&, const BatchStats<T>&,                 \
                                         const Tensor<T>&, Tensor<T>&, Tensor<T>&, Tensor<T>&);                    \
  template void batchnorm_eval_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                        const Tensor<T>&, Tensor<T>&, Tensor<T>&, Tensor<T>&);                     \
  template Tensor<T> relu(const Tensor<T>&);                                                                       \
  template void relu_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                                     \
  template Tensor<T> maxpool(const Tensor<T>&, const MaxPoolParams&);                                              \
  template void maxpool_backward(const Tensor<T>&, const MaxPoolParams&, const Tensor<T>&, Tensor<T>&);            \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                            \
  template void global_avg_pool_backward(const Tensor<T>&, Tensor<T>&);                                            \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, int64_t, int64_t);                                        \
  template void bilinear_upsample_backward(const Tensor<T>&, int64_t, int64_t, Tensor<T>&);                        \
  template Tensor<T> add_merge(std::span<const Tensor<T>* const>, std::span<const double>);                        \
  template void add_merge_backward(const Tensor<T>&, double, Tensor<T>&);                                          \
  template Tensor<T> concat(std::span<const Tensor<T>* const>);                                                    \
  template void concat_backward(const Tensor<T>&, int64_t, Tensor<T>&);                                           \
  template Tensor<T> crop_time(const Tensor<T>&, const CropTimeParams&);                                           \
  template void crop_time_backward(const Tensor<T>&, const CropTimeParams&, Tensor<T>&);                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                                 \
  template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*,      \
                                Tensor<T>*);

BLNET_INSTANTIATE_KERNELS(float)
BLNET_INSTANTIATE_KERNELS(double)

#undef BLNET_INSTANTIATE_KERNELS

}  // namespace blnet::kernels
