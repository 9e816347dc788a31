#include "csn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "csn/common.hpp"

namespace csn {

void ConvSpec::validate() const {
  detail::require(c_in >= 1 && c_out >= 1 && groups >= 1, "conv: channel counts must be >= 1");
  detail::require(c_in % groups == 0, "conv: groups must divide c_in");
  detail::require(c_out % groups == 0, "conv: groups must divide c_out");
  for (int d = 0; d < 3; ++d) {
    detail::require(kernel[d] >= 1, "conv: kernel extents must be >= 1");
    detail::require(stride[d] >= 1, "conv: stride extents must be >= 1");
    detail::require(padding[d] >= 0, "conv: padding must be >= 0");
  }
}

Shape5 ConvSpec::out_shape(const Shape5& in) const {
  validate();
  detail::require(in.c == c_in, "conv: input has " + std::to_string(in.c) +
                                    " channels, spec expects " + std::to_string(c_in));
  const std::int64_t dims[3] = {in.t, in.h, in.w};
  std::int64_t out[3];
  for (int d = 0; d < 3; ++d) {
    out[d] = (dims[d] + 2 * padding[d] - kernel[d]) / stride[d] + 1;
    detail::require(out[d] >= 1, "conv: non-positive output extent on axis " +
                                     std::to_string(d) + " for input " + in.str());
  }
  return {in.n, c_out, out[0], out[1], out[2]};
}

namespace {

// Inclusive output-index range [lo, hi] for which in = out*stride + off stays
// inside [0, in_extent). hi < lo means no valid tap.
inline void tap_range(std::int64_t off, std::int64_t stride, std::int64_t in_extent,
                      std::int64_t out_extent, std::int64_t& lo, std::int64_t& hi) {
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const std::int64_t top = in_extent - 1 - off;
  hi = top < 0 ? -1 : std::min(out_extent - 1, top / stride);
}

template <class T, class AccT>
void conv_fwd_impl(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias,
                   const ConvSpec& s, TensorT<T>& y) {
  const Shape5 xs = x.shape, ys = y.shape;
  const std::int64_t cig = s.c_in / s.groups, cog = s.c_out / s.groups;
  const std::int64_t KT = s.kernel[0], KH = s.kernel[1], KW = s.kernel[2];
  const std::int64_t ST = s.stride[0], SH = s.stride[1], SW = s.stride[2];
  const std::int64_t PT = s.padding[0], PH = s.padding[1], PW = s.padding[2];

  parallel_for(ys.n * ys.c, [&](std::int64_t task) {
    const std::int64_t n = task / ys.c, co = task % ys.c;
    const std::int64_t ci0 = (co / cog) * cig;
    const AccT b = bias ? static_cast<AccT>(bias->data[static_cast<std::size_t>(co)]) : AccT(0);
    std::vector<AccT> row(static_cast<std::size_t>(ys.w));
    T* yc = y.chan(n, co);
    for (std::int64_t ot = 0; ot < ys.t; ++ot)
      for (std::int64_t oh = 0; oh < ys.h; ++oh) {
        std::fill(row.begin(), row.end(), b);
        for (std::int64_t ci = 0; ci < cig; ++ci) {
          const T* xc = x.chan(n, ci0 + ci);
          const T* wc = w.chan(co, ci);
          for (std::int64_t kt = 0; kt < KT; ++kt) {
            const std::int64_t it = ot * ST - PT + kt;
            if (it < 0 || it >= xs.t) continue;
            for (std::int64_t kh = 0; kh < KH; ++kh) {
              const std::int64_t ih = oh * SH - PH + kh;
              if (ih < 0 || ih >= xs.h) continue;
              const T* xrow = xc + (it * xs.h + ih) * xs.w;
              const T* wrow = wc + (kt * KH + kh) * KW;
              for (std::int64_t kw = 0; kw < KW; ++kw) {
                const AccT wv = static_cast<AccT>(wrow[kw]);
                const std::int64_t off = kw - PW;
                std::int64_t lo, hi;
                tap_range(off, SW, xs.w, ys.w, lo, hi);
                for (std::int64_t ow = lo; ow <= hi; ++ow)
                  row[static_cast<std::size_t>(ow)] +=
                      wv * static_cast<AccT>(xrow[ow * SW + off]);
              }
            }
          }
        }
        T* yrow = yc + (ot * ys.h + oh) * ys.w;
        for (std::int64_t ow = 0; ow < ys.w; ++ow)
          yrow[ow] = static_cast<T>(row[static_cast<std::size_t>(ow)]);
      }
  });
}

template <class T, class AccT>
void conv_bwd_input_impl(const TensorT<T>& w, const TensorT<T>& gy, const ConvSpec& s,
                         TensorT<T>& gx) {
  const Shape5 xs = gx.shape, ys = gy.shape;
  const std::int64_t cig = s.c_in / s.groups, cog = s.c_out / s.groups;
  const std::int64_t KT = s.kernel[0], KH = s.kernel[1], KW = s.kernel[2];
  const std::int64_t ST = s.stride[0], SH = s.stride[1], SW = s.stride[2];
  const std::int64_t PT = s.padding[0], PH = s.padding[1], PW = s.padding[2];

  parallel_for(xs.n * xs.c, [&](std::int64_t task) {
    const std::int64_t n = task / xs.c, ci = task % xs.c;
    const std::int64_t g = ci / cig;
    std::vector<AccT> buf(static_cast<std::size_t>(xs.voxels()), AccT(0));
    for (std::int64_t co = g * cog; co < (g + 1) * cog; ++co) {
      const T* gyc = gy.chan(n, co);
      const T* wc = w.chan(co, ci - g * cig);
      for (std::int64_t kt = 0; kt < KT; ++kt)
        for (std::int64_t kh = 0; kh < KH; ++kh)
          for (std::int64_t kw = 0; kw < KW; ++kw) {
            const AccT wv = static_cast<AccT>(wc[(kt * KH + kh) * KW + kw]);
            const std::int64_t off = kw - PW;
            std::int64_t lo, hi;
            tap_range(off, SW, xs.w, ys.w, lo, hi);
            if (hi < lo) continue;
            for (std::int64_t ot = 0; ot < ys.t; ++ot) {
              const std::int64_t it = ot * ST - PT + kt;
              if (it < 0 || it >= xs.t) continue;
              for (std::int64_t oh = 0; oh < ys.h; ++oh) {
                const std::int64_t ih = oh * SH - PH + kh;
                if (ih < 0 || ih >= xs.h) continue;
                const T* gyrow = gyc + (ot * ys.h + oh) * ys.w;
                AccT* brow = buf.data() + (it * xs.h + ih) * xs.w;
                for (std::int64_t ow = lo; ow <= hi; ++ow)
                  brow[ow * SW + off] += wv * static_cast<AccT>(gyrow[ow]);
              }
            }
          }
    }
    T* xc = gx.chan(n, ci);
    for (std::int64_t i = 0; i < xs.voxels(); ++i)
      xc[i] = static_cast<T>(buf[static_cast<std::size_t>(i)]);
  });
}

template <class T, class AccT>
void conv_bwd_weight_impl(const TensorT<T>& x, const TensorT<T>& gy, const ConvSpec& s,
                          TensorT<T>& gw, TensorT<T>* gb) {
  const Shape5 xs = x.shape, ys = gy.shape;
  const std::int64_t cig = s.c_in / s.groups, cog = s.c_out / s.groups;
  const std::int64_t KT = s.kernel[0], KH = s.kernel[1], KW = s.kernel[2];
  const std::int64_t ST = s.stride[0], SH = s.stride[1], SW = s.stride[2];
  const std::int64_t PT = s.padding[0], PH = s.padding[1], PW = s.padding[2];

  parallel_for(s.c_out, [&](std::int64_t co) {
    const std::int64_t ci0 = (co / cog) * cig;
    for (std::int64_t ci = 0; ci < cig; ++ci) {
      T* wc = gw.chan(co, ci);
      for (std::int64_t kt = 0; kt < KT; ++kt)
        for (std::int64_t kh = 0; kh < KH; ++kh)
          for (std::int64_t kw = 0; kw < KW; ++kw) {
            const std::int64_t off = kw - PW;
            std::int64_t lo, hi;
            tap_range(off, SW, xs.w, ys.w, lo, hi);
            AccT acc(0);
            if (hi >= lo)
              for (std::int64_t n = 0; n < xs.n; ++n) {
                const T* xc = x.chan(n, ci0 + ci);
                const T* gyc = gy.chan(n, co);
                for (std::int64_t ot = 0; ot < ys.t; ++ot) {
                  const std::int64_t it = ot * ST - PT + kt;
                  if (it < 0 || it >= xs.t) continue;
                  for (std::int64_t oh = 0; oh < ys.h; ++oh) {
                    const std::int64_t ih = oh * SH - PH + kh;
                    if (ih < 0 || ih >= xs.h) continue;
                    const T* xrow = xc + (it * xs.h + ih) * xs.w;
                    const T* gyrow = gyc + (ot * ys.h + oh) * ys.w;
                    for (std::int64_t ow = lo; ow <= hi; ++ow)
                      acc += static_cast<AccT>(gyrow[ow]) *
                             static_cast<AccT>(xrow[ow * SW + off]);
                  }
                }
              }
            wc[(kt * KH + kh) * KW + kw] = static_cast<T>(acc);
          }
    }
    if (gb) {
      AccT acc(0);
      for (std::int64_t n = 0; n < ys.n; ++n) {
        const T* gyc = gy.chan(n, co);
        for (std::int64_t i = 0; i < ys.voxels(); ++i) acc += static_cast<AccT>(gyc[i]);
      }
      gb->data[static_cast<std::size_t>(co)] = static_cast<T>(acc);
    }
  });
}

template <class T>
bool use_f64_accum() {
  return std::is_same_v<T, double> || accum_f64();
}

// Per-channel parameter vectors (BN scale/shift/stats, conv/linear bias) all
// use the (1, c, 1, 1, 1) layout.
void check_param_vec(const Shape5& got, std::int64_t channels, const char* what) {
  detail::require(got == Shape5{1, channels, 1, 1, 1},
                  std::string("bad ") + what + " shape " + got.str() + ", expected (1," +
                      std::to_string(channels) + ",1,1,1)");
}

}  // namespace

template <class T>
TensorT<T> conv3d_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const ConvSpec& spec, const TensorT<T>* bias) {
  TensorT<T> out(spec.out_shape(input.shape), T(0));
  detail::require(weight.shape == spec.weight_shape(),
                  "conv: weight shape " + weight.shape.str() + " does not match spec " +
                      spec.weight_shape().str());
  detail::require(spec.bias == (bias != nullptr), "conv: bias tensor does not match spec.bias");
  if (bias)
    check_param_vec(bias->shape, spec.c_out, "conv bias");
  if (use_f64_accum<T>())
    conv_fwd_impl<T, double>(input, weight, bias, spec, out);
  else
    conv_fwd_impl<T, T>(input, weight, bias, spec, out);
  return out;
}

template <class T>
GradPairT<T> conv3d_backward(const TensorT<T>& input, const TensorT<T>& weight,
                             const TensorT<T>& grad_output, const ConvSpec& spec) {
  const Shape5 ys = spec.out_shape(input.shape);
  detail::require(grad_output.shape == ys, "conv backward: grad_output shape " +
                                               grad_output.shape.str() + " expected " + ys.str());
  detail::require(weight.shape == spec.weight_shape(),
                  "conv backward: weight shape " + weight.shape.str() +
                      " does not match spec " + spec.weight_shape().str());
  GradPairT<T> g;
  g.grad_input = TensorT<T>(input.shape, T(0));
  g.grad_weight = TensorT<T>(weight.shape, T(0));
  TensorT<T>* gb = nullptr;
  if (spec.bias) {
    g.grad_bias = TensorT<T>({1, spec.c_out, 1, 1, 1}, T(0));
    gb = &g.grad_bias;
  }
  if (use_f64_accum<T>()) {
    conv_bwd_input_impl<T, double>(weight, grad_output, spec, g.grad_input);
    conv_bwd_weight_impl<T, double>(input, grad_output, spec, g.grad_weight, gb);
  } else {
    conv_bwd_input_impl<T, T>(weight, grad_output, spec, g.grad_input);
    conv_bwd_weight_impl<T, T>(input, grad_output, spec, g.grad_weight, gb);
  }
  return g;
}

template <class T>
TensorT<T> batchnorm_forward(const TensorT<T>& input, const TensorT<T>& scale,
                             const TensorT<T>& shift, TensorT<T>& running_mean,
                             TensorT<T>& running_var, const BatchNormSpec& spec,
                             bool training, BnCache* cache) {
  const Shape5 xs = input.shape;
  detail::require(xs.c == spec.channels, "batchnorm: input has " + std::to_string(xs.c) +
                                             " channels, spec expects " +
                                             std::to_string(spec.channels));
  detail::require(spec.epsilon > 0.0, "batchnorm: epsilon must be > 0");
  check_param_vec(scale.shape, spec.channels, "scale");
  check_param_vec(shift.shape, spec.channels, "shift");
  check_param_vec(running_mean.shape, spec.channels, "running_mean");
  check_param_vec(running_var.shape, spec.channels, "running_var");

  const std::int64_t N = xs.n * xs.voxels();
  std::vector<double> mean(static_cast<std::size_t>(xs.c));
  std::vector<double> inv_std(static_cast<std::size_t>(xs.c));

  if (training) {
    detail::require(N > 1, "batchnorm: train mode needs more than one value per channel");
    parallel_for(xs.c, [&](std::int64_t c) {
      double sum = 0.0;
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const T* xc = input.chan(n, c);
        for (std::int64_t i = 0; i < xs.voxels(); ++i) sum += static_cast<double>(xc[i]);
      }
      const double mu = sum / static_cast<double>(N);
      double sq = 0.0;
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const T* xc = input.chan(n, c);
        for (std::int64_t i = 0; i < xs.voxels(); ++i) {
          const double d = static_cast<double>(xc[i]) - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(N);
      mean[static_cast<std::size_t>(c)] = mu;
      inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + spec.epsilon);
      const double m = spec.running_momentum;
      auto& rm = running_mean.data[static_cast<std::size_t>(c)];
      auto& rv = running_var.data[static_cast<std::size_t>(c)];
      rm = static_cast<T>(m * static_cast<double>(rm) + (1.0 - m) * mu);
      rv = static_cast<T>(m * static_cast<double>(rv) + (1.0 - m) * var);
    });
  } else {
    for (std::int64_t c = 0; c < xs.c; ++c) {
      mean[static_cast<std::size_t>(c)] =
          static_cast<double>(running_mean.data[static_cast<std::size_t>(c)]);
      inv_std[static_cast<std::size_t>(c)] =
          1.0 / std::sqrt(static_cast<double>(running_var.data[static_cast<std::size_t>(c)]) +
                          spec.epsilon);
    }
  }

  TensorT<T> out(xs, T(0));
  parallel_for(xs.n * xs.c, [&](std::int64_t task) {
    const std::int64_t n = task / xs.c, c = task % xs.c;
    const double a =
        static_cast<double>(scale.data[static_cast<std::size_t>(c)]) * inv_std[static_cast<std::size_t>(c)];
    const double b = static_cast<double>(shift.data[static_cast<std::size_t>(c)]) -
                     a * mean[static_cast<std::size_t>(c)];
    const T* xc = input.chan(n, c);
    T* yc = out.chan(n, c);
    for (std::int64_t i = 0; i < xs.voxels(); ++i)
      yc[i] = static_cast<T>(a * static_cast<double>(xc[i]) + b);
  });

  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <class T>
GradPairT<T> batchnorm_backward(const TensorT<T>& input, const TensorT<T>& scale,
                                const BatchNormSpec& spec, const BnCache& cache,
                                const TensorT<T>& grad_output) {
  const Shape5 xs = input.shape;
  detail::require(grad_output.shape == xs, "batchnorm backward: grad shape mismatch");
  detail::require(static_cast<std::int64_t>(cache.mean.size()) == xs.c &&
                      static_cast<std::int64_t>(cache.inv_std.size()) == xs.c,
                  "batchnorm backward: cache does not match input channels");
  check_param_vec(scale.shape, spec.channels, "scale");

  GradPairT<T> g;
  g.grad_input = TensorT<T>(xs, T(0));
  g.grad_weight = TensorT<T>({1, xs.c, 1, 1, 1}, T(0));
  g.grad_bias = TensorT<T>({1, xs.c, 1, 1, 1}, T(0));
  const double N = static_cast<double>(xs.n * xs.voxels());

  parallel_for(xs.c, [&](std::int64_t c) {
    const double mu = cache.mean[static_cast<std::size_t>(c)];
    const double is = cache.inv_std[static_cast<std::size_t>(c)];
    double sum_g = 0.0, sum_gx = 0.0;  // sum of g and of g*xhat over (n,t,h,w)
    for (std::int64_t n = 0; n < xs.n; ++n) {
      const T* xc = input.chan(n, c);
      const T* gc = grad_output.chan(n, c);
      for (std::int64_t i = 0; i < xs.voxels(); ++i) {
        const double gv = static_cast<double>(gc[i]);
        sum_g += gv;
        sum_gx += gv * (static_cast<double>(xc[i]) - mu) * is;
      }
    }
    g.grad_weight.data[static_cast<std::size_t>(c)] = static_cast<T>(sum_gx);
    g.grad_bias.data[static_cast<std::size_t>(c)] = static_cast<T>(sum_g);
    const double k = static_cast<double>(scale.data[static_cast<std::size_t>(c)]) * is / N;
    for (std::int64_t n = 0; n < xs.n; ++n) {
      const T* xc = input.chan(n, c);
      const T* gc = grad_output.chan(n, c);
      T* oc = g.grad_input.chan(n, c);
      for (std::int64_t i = 0; i < xs.voxels(); ++i) {
        const double xhat = (static_cast<double>(xc[i]) - mu) * is;
        oc[i] = static_cast<T>(k * (N * static_cast<double>(gc[i]) - sum_g - xhat * sum_gx));
      }
    }
  });
  return g;
}

template <class T>
TensorT<T> maxpool3d(const TensorT<T>& input, const Dims3& kernel, const Dims3& stride,
                     const Dims3& padding, std::vector<std::int64_t>* argmax) {
  const Shape5 xs = input.shape;
  const std::int64_t in_dims[3] = {xs.t, xs.h, xs.w};
  std::int64_t out[3];
  for (int d = 0; d < 3; ++d) {
    detail::require(kernel[d] >= 1 && stride[d] >= 1 && padding[d] >= 0,
                    "maxpool: bad kernel/stride/padding");
    detail::require(padding[d] < kernel[d], "maxpool: padding must be smaller than kernel");
    detail::require(kernel[d] <= in_dims[d] + 2 * padding[d],
                    "maxpool: window larger than padded input");
    out[d] = (in_dims[d] + 2 * padding[d] - kernel[d]) / stride[d] + 1;
  }
  TensorT<T> y({xs.n, xs.c, out[0], out[1], out[2]}, T(0));
  if (argmax) argmax->assign(static_cast<std::size_t>(y.size()), 0);

  parallel_for(xs.n * xs.c, [&](std::int64_t task) {
    const std::int64_t n = task / xs.c, c = task % xs.c;
    const T* xc = input.chan(n, c);
    for (std::int64_t ot = 0; ot < out[0]; ++ot)
      for (std::int64_t oh = 0; oh < out[1]; ++oh)
        for (std::int64_t ow = 0; ow < out[2]; ++ow) {
          T best = T(0);
          std::int64_t best_idx = -1;
          for (std::int64_t kt = 0; kt < kernel[0]; ++kt) {
            const std::int64_t it = ot * stride[0] - padding[0] + kt;
            if (it < 0 || it >= xs.t) continue;
            for (std::int64_t kh = 0; kh < kernel[1]; ++kh) {
              const std::int64_t ih = oh * stride[1] - padding[1] + kh;
              if (ih < 0 || ih >= xs.h) continue;
              for (std::int64_t kw = 0; kw < kernel[2]; ++kw) {
                const std::int64_t iw = ow * stride[2] - padding[2] + kw;
                if (iw < 0 || iw >= xs.w) continue;
                const std::int64_t idx = (it * xs.h + ih) * xs.w + iw;
                const T v = xc[idx];
                if (best_idx < 0 || v > best) {  // ties keep the lowest flat index
                  best = v;
                  best_idx = idx;
                }
              }
            }
          }
          y.at(n, c, ot, oh, ow) = best;
          if (argmax)
            (*argmax)[static_cast<std::size_t>(y.offset(n, c, ot, oh, ow))] =
                input.offset(n, c, 0, 0, 0) + best_idx;
        }
  });
  return y;
}

template <class T>
TensorT<T> maxpool3d_backward(const TensorT<T>& grad_output, const Shape5& in_shape,
                              const std::vector<std::int64_t>& argmax) {
  detail::require(static_cast<std::int64_t>(argmax.size()) == grad_output.size(),
                  "maxpool backward: argmax does not match grad_output");
  TensorT<T> gx(in_shape, T(0));
  const Shape5 ys = grad_output.shape;
  parallel_for(ys.n * ys.c, [&](std::int64_t task) {
    const std::int64_t n = task / ys.c, c = task % ys.c;
    const std::int64_t base = grad_output.offset(n, c, 0, 0, 0);
    for (std::int64_t i = 0; i < ys.voxels(); ++i) {
      const std::size_t src = static_cast<std::size_t>(base + i);
      gx.data[static_cast<std::size_t>(argmax[src])] += grad_output.data[src];
    }
  });
  return gx;
}

template <class T>
TensorT<T> global_avgpool(const TensorT<T>& input) {
  const Shape5 xs = input.shape;
  TensorT<T> y({xs.n, xs.c, 1, 1, 1}, T(0));
  parallel_for(xs.n * xs.c, [&](std::int64_t task) {
    const std::int64_t n = task / xs.c, c = task % xs.c;
    const T* xc = input.chan(n, c);
    double sum = 0.0;
    for (std::int64_t i = 0; i < xs.voxels(); ++i) sum += static_cast<double>(xc[i]);
    y.at(n, c, 0, 0, 0) = static_cast<T>(sum / static_cast<double>(xs.voxels()));
  });
  return y;
}

template <class T>
TensorT<T> global_avgpool_backward(const TensorT<T>& grad_output, const Shape5& in_shape) {
  detail::require(grad_output.shape == Shape5{in_shape.n, in_shape.c, 1, 1, 1},
                  "global_avgpool backward: grad shape mismatch");
  TensorT<T> gx(in_shape, T(0));
  const double inv = 1.0 / static_cast<double>(in_shape.voxels());
  parallel_for(in_shape.n * in_shape.c, [&](std::int64_t task) {
    const std::int64_t n = task / in_shape.c, c = task % in_shape.c;
    const T v = static_cast<T>(static_cast<double>(grad_output.at(n, c, 0, 0, 0)) * inv);
    T* xc = gx.chan(n, c);
    for (std::int64_t i = 0; i < in_shape.voxels(); ++i) xc[i] = v;
  });
  return gx;
}

template <class T>
TensorT<T> linear(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias) {
  const Shape5 xs = input.shape;
  detail::require(xs.t == 1 && xs.h == 1 && xs.w == 1,
                  "linear: input spatial extents must be 1, got " + xs.str());
  const std::int64_t classes = weight.shape.n;
  detail::require(weight.shape == Shape5{classes, xs.c, 1, 1, 1},
                  "linear: weight shape " + weight.shape.str() + " does not match input " +
                      xs.str());
  check_param_vec(bias.shape, classes, "linear bias");

  TensorT<T> y({xs.n, classes, 1, 1, 1}, T(0));
  const bool f64 = use_f64_accum<T>();
  parallel_for(xs.n, [&](std::int64_t n) {
    const T* xr = input.chan(n, 0);
    for (std::int64_t k = 0; k < classes; ++k) {
      const T* wr = weight.chan(k, 0);
      if (f64) {
        double acc = static_cast<double>(bias.data[static_cast<std::size_t>(k)]);
        for (std::int64_t c = 0; c < xs.c; ++c)
          acc += static_cast<double>(wr[c]) * static_cast<double>(xr[c]);
        y.at(n, k, 0, 0, 0) = static_cast<T>(acc);
      } else {
        T acc = bias.data[static_cast<std::size_t>(k)];
        for (std::int64_t c = 0; c < xs.c; ++c) acc += wr[c] * xr[c];
        y.at(n, k, 0, 0, 0) = acc;
      }
    }
  });
  return y;
}

template <class T>
GradPairT<T> linear_backward(const TensorT<T>& input, const TensorT<T>& weight,
                             const TensorT<T>& grad_output) {
  const Shape5 xs = input.shape;
  const std::int64_t classes = weight.shape.n;
  detail::require(grad_output.shape == Shape5{xs.n, classes, 1, 1, 1},
                  "linear backward: grad shape mismatch");

  GradPairT<T> g;
  g.grad_input = TensorT<T>(xs, T(0));
  g.grad_weight = TensorT<T>(weight.shape, T(0));
  g.grad_bias = TensorT<T>({1, classes, 1, 1, 1}, T(0));

  parallel_for(xs.n, [&](std::int64_t n) {
    const T* gr = grad_output.chan(n, 0);
    T* xr = g.grad_input.chan(n, 0);
    for (std::int64_t c = 0; c < xs.c; ++c) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < classes; ++k)
        acc += static_cast<double>(gr[k]) * static_cast<double>(weight.at(k, c, 0, 0, 0));
      xr[c] = static_cast<T>(acc);
    }
  });
  parallel_for(classes, [&](std::int64_t k) {
    T* wr = g.grad_weight.chan(k, 0);
    double bacc = 0.0;
    for (std::int64_t c = 0; c < xs.c; ++c) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < xs.n; ++n)
        acc += static_cast<double>(grad_output.at(n, k, 0, 0, 0)) *
               static_cast<double>(input.at(n, c, 0, 0, 0));
      wr[c] = static_cast<T>(acc);
    }
    for (std::int64_t n = 0; n < xs.n; ++n)
      bacc += static_cast<double>(grad_output.at(n, k, 0, 0, 0));
    g.grad_bias.data[static_cast<std::size_t>(k)] = static_cast<T>(bacc);
  });
  return g;
}

template <class T>
XentResultT<T> softmax_xent(const TensorT<T>& logits, const std::vector<std::int64_t>& labels) {
  const Shape5 xs = logits.shape;
  detail::require(xs.t == 1 && xs.h == 1 && xs.w == 1, "softmax_xent: logits must be (n,k,1,1,1)");
  detail::require(static_cast<std::int64_t>(labels.size()) == xs.n,
                  "softmax_xent: label count does not match batch");
  for (std::int64_t y : labels)
    detail::require(y >= 0 && y < xs.c, "softmax_xent: label out of range");

  XentResultT<T> r;
  r.grad_logits = TensorT<T>(xs, T(0));
  r.probs = TensorT<T>(xs, T(0));
  std::vector<double> row_loss(static_cast<std::size_t>(xs.n), 0.0);
  const double inv_n = 1.0 / static_cast<double>(xs.n);

  parallel_for(xs.n, [&](std::int64_t n) {
    const T* lr = logits.chan(n, 0);
    double mx = static_cast<double>(lr[0]);
    for (std::int64_t k = 1; k < xs.c; ++k) mx = std::max(mx, static_cast<double>(lr[k]));
    double z = 0.0;
    for (std::int64_t k = 0; k < xs.c; ++k) z += std::exp(static_cast<double>(lr[k]) - mx);
    const std::int64_t y = labels[static_cast<std::size_t>(n)];
    row_loss[static_cast<std::size_t>(n)] = -(static_cast<double>(lr[y]) - mx - std::log(z));
    T* pr = r.probs.chan(n, 0);
    T* gr = r.grad_logits.chan(n, 0);
    for (std::int64_t k = 0; k < xs.c; ++k) {
      const double p = std::exp(static_cast<double>(lr[k]) - mx) / z;
      pr[k] = static_cast<T>(p);
      gr[k] = static_cast<T>((p - (k == y ? 1.0 : 0.0)) * inv_n);
    }
  });
  double loss = 0.0;
  for (double v : row_loss) loss += v;
  r.loss = loss * inv_n;
  return r;
}

#define CSN_INSTANTIATE_OPS(T)                                                              \
  template TensorT<T> conv3d_forward<T>(const TensorT<T>&, const TensorT<T>&,              \
                                        const ConvSpec&, const TensorT<T>*);               \
  template GradPairT<T> conv3d_backward<T>(const TensorT<T>&, const TensorT<T>&,           \
                                           const TensorT<T>&, const ConvSpec&);            \
  template TensorT<T> batchnorm_forward<T>(const TensorT<T>&, const TensorT<T>&,           \
                                           const TensorT<T>&, TensorT<T>&, TensorT<T>&,    \
                                           const BatchNormSpec&, bool, BnCache*);          \
  template GradPairT<T> batchnorm_backward<T>(const TensorT<T>&, const TensorT<T>&,        \
                                              const BatchNormSpec&, const BnCache&,        \
                                              const TensorT<T>&);                          \
  template TensorT<T> maxpool3d<T>(const TensorT<T>&, const Dims3&, const Dims3&,          \
                                   const Dims3&, std::vector<std::int64_t>*);              \
  template TensorT<T> maxpool3d_backward<T>(const TensorT<T>&, const Shape5&,              \
                                            const std::vector<std::int64_t>&);             \
  template TensorT<T> global_avgpool<T>(const TensorT<T>&);                                \
  template TensorT<T> global_avgpool_backward<T>(const TensorT<T>&, const Shape5&);        \
  template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&); \
  template GradPairT<T> linear_backward<T>(const TensorT<T>&, const TensorT<T>&,           \
                                           const TensorT<T>&);                             \
  template XentResultT<T> softmax_xent<T>(const TensorT<T>&, const std::vector<std::int64_t>&);

CSN_INSTANTIATE_OPS(float)
CSN_INSTANTIATE_OPS(double)

#undef CSN_INSTANTIATE_OPS

}  // namespace csn
