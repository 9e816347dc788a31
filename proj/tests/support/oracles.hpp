// Test-only reference implementations, written independently of src/ so the
// production kernels have something honest to disagree with.
#pragma once

#include <cmath>
#include <functional>

#include "csn/ops.hpp"
#include "csn/tensor.hpp"

namespace csn::oracle {

// Dead-simple grouped convolution: one scalar accumulator per output element,
// all seven loops spelled out, always double accumulation.
template <class T>
TensorT<T> conv3d_reference(const TensorT<T>& x, const TensorT<T>& w, const ConvSpec& s,
                            const TensorT<T>* bias = nullptr) {
  TensorT<T> y(s.out_shape(x.shape), T(0));
  const std::int64_t cig = s.c_in / s.groups, cog = s.c_out / s.groups;
  for (std::int64_t n = 0; n < y.shape.n; ++n)
    for (std::int64_t co = 0; co < y.shape.c; ++co)
      for (std::int64_t ot = 0; ot < y.shape.t; ++ot)
        for (std::int64_t oh = 0; oh < y.shape.h; ++oh)
          for (std::int64_t ow = 0; ow < y.shape.w; ++ow) {
            double acc = bias ? static_cast<double>(bias->data[static_cast<std::size_t>(co)]) : 0.0;
            for (std::int64_t ci = 0; ci < cig; ++ci)
              for (std::int64_t kt = 0; kt < s.kernel[0]; ++kt)
                for (std::int64_t kh = 0; kh < s.kernel[1]; ++kh)
                  for (std::int64_t kw = 0; kw < s.kernel[2]; ++kw) {
                    const std::int64_t it = ot * s.stride[0] - s.padding[0] + kt;
                    const std::int64_t ih = oh * s.stride[1] - s.padding[1] + kh;
                    const std::int64_t iw = ow * s.stride[2] - s.padding[2] + kw;
                    if (it < 0 || it >= x.shape.t || ih < 0 || ih >= x.shape.h || iw < 0 ||
                        iw >= x.shape.w)
                      continue;  // zero padding contributes nothing
                    const std::int64_t g = co / cog;
                    acc += static_cast<double>(x.at(n, g * cig + ci, it, ih, iw)) *
                           static_cast<double>(w.at(co, ci, kt, kh, kw));
                  }
            y.at(n, co, ot, oh, ow) = static_cast<T>(acc);
          }
  return y;
}

// Expands grouped weights into a block-diagonal dense (G=1) weight tensor.
template <class T>
TensorT<T> masked_dense_weight(const TensorT<T>& w, const ConvSpec& s) {
  TensorT<T> dense({s.c_out, s.c_in, s.kernel[0], s.kernel[1], s.kernel[2]}, T(0));
  const std::int64_t cig = s.c_in / s.groups, cog = s.c_out / s.groups;
  for (std::int64_t co = 0; co < s.c_out; ++co) {
    const std::int64_t g = co / cog;
    for (std::int64_t ci = 0; ci < cig; ++ci)
      for (std::int64_t kt = 0; kt < s.kernel[0]; ++kt)
        for (std::int64_t kh = 0; kh < s.kernel[1]; ++kh)
          for (std::int64_t kw = 0; kw < s.kernel[2]; ++kw)
            dense.at(co, g * cig + ci, kt, kh, kw) = w.at(co, ci, kt, kh, kw);
  }
  return dense;
}

inline ConvSpec as_dense(ConvSpec s) {
  s.groups = 1;
  return s;
}

template <class T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return m;
}

// Mixed absolute/relative error: absolute below 1, relative above.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

template <class T>
double dot(const TensorT<T>& a, const TensorT<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    s += static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]);
  return s;
}

// Central finite differences of a scalar loss with respect to every element of
// `arg`, compared against `analytic`. The loss closure reads `arg` afresh on
// each call. Returns the worst mixed error over all coordinates.
inline double fd_check(Tensor5d& arg, const Tensor5d& analytic,
                       const std::function<double()>& loss, double h = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < arg.data.size(); ++i) {
    const double saved = arg.data[i];
    arg.data[i] = saved + h;
    const double up = loss();
    arg.data[i] = saved - h;
    const double dn = loss();
    arg.data[i] = saved;
    worst = std::max(worst, rel_err((up - dn) / (2.0 * h), analytic.data[i]));
  }
  return worst;
}

}  // namespace csn::oracle
