#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "csn/tensor.hpp"

namespace csn {

using Dims3 = std::array<std::int64_t, 3>;  // (t, h, w) order everywhere

// Grouped 3-D convolution descriptor. Weight layout is
// (c_out, c_in/groups, k_t, k_h, k_w); output channel o reads only the input
// channels of its group g = o / (c_out/groups).
struct ConvSpec {
  std::int64_t c_in = 1;
  std::int64_t c_out = 1;
  std::int64_t groups = 1;
  Dims3 kernel{1, 1, 1};
  Dims3 stride{1, 1, 1};
  Dims3 padding{0, 0, 0};
  bool bias = false;

  bool depthwise() const { return groups == c_in && groups == c_out; }
  Shape5 weight_shape() const {
    return {c_out, c_in / groups, kernel[0], kernel[1], kernel[2]};
  }
  std::int64_t weight_count() const { return weight_shape().elems(); }

  // Throws on non-positive extents or group-divisibility violations.
  void validate() const;
  // Output shape for a given input; throws on channel mismatch or degenerate
  // (non-positive) output extents.
  Shape5 out_shape(const Shape5& in) const;
};

struct BatchNormSpec {
  std::int64_t channels = 1;
  double epsilon = 1e-5;
  double running_momentum = 0.9;  // r <- m*r + (1-m)*batch_stat
};

// Reverse-mode result bundle. grad_weight / grad_bias are meaningful only for
// parameterized ops (conv, batchnorm, linear); batchnorm reports its scale
// gradient in grad_weight and shift gradient in grad_bias.
template <class T>
struct GradPairT {
  TensorT<T> grad_input;
  TensorT<T> grad_weight;
  TensorT<T> grad_bias;
};
using GradPair = GradPairT<float>;

// --- convolution -----------------------------------------------------------

template <class T>
TensorT<T> conv3d_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const ConvSpec& spec, const TensorT<T>* bias = nullptr);

template <class T>
GradPairT<T> conv3d_backward(const TensorT<T>& input, const TensorT<T>& weight,
                             const TensorT<T>& grad_output, const ConvSpec& spec);

// --- batch normalization -----------------------------------------------------

// Per-channel batch statistics captured by the training-mode forward pass and
// consumed by the backward pass.
struct BnCache {
  std::vector<double> mean, inv_std;
};

// Training mode normalizes with batch statistics over (n,t,h,w) and folds the
// batch stats into the running estimates; eval mode normalizes with the
// running estimates and leaves them untouched. scale/shift/running_* all have
// shape (1, channels, 1, 1, 1).
template <class T>
TensorT<T> batchnorm_forward(const TensorT<T>& input, const TensorT<T>& scale,
                             const TensorT<T>& shift, TensorT<T>& running_mean,
                             TensorT<T>& running_var, const BatchNormSpec& spec,
                             bool training, BnCache* cache = nullptr);

template <class T>
GradPairT<T> batchnorm_backward(const TensorT<T>& input, const TensorT<T>& scale,
                                const BatchNormSpec& spec, const BnCache& cache,
                                const TensorT<T>& grad_output);

// --- pooling -----------------------------------------------------------------

// Max pooling with zero-free padding semantics: out-of-range taps are skipped,
// never compared. Ties go to the lowest flat input index. argmax (one flat
// input index per output element) feeds the backward pass.
template <class T>
TensorT<T> maxpool3d(const TensorT<T>& input, const Dims3& kernel, const Dims3& stride,
                     const Dims3& padding = {0, 0, 0},
                     std::vector<std::int64_t>* argmax = nullptr);

template <class T>
TensorT<T> maxpool3d_backward(const TensorT<T>& grad_output, const Shape5& in_shape,
                              const std::vector<std::int64_t>& argmax);

template <class T>
TensorT<T> global_avgpool(const TensorT<T>& input);

template <class T>
TensorT<T> global_avgpool_backward(const TensorT<T>& grad_output, const Shape5& in_shape);

// --- fully connected ---------------------------------------------------------

// input (n, c, 1, 1, 1), weight (classes, c, 1, 1, 1), bias (1, classes, 1, 1, 1)
// -> logits (n, classes, 1, 1, 1).
template <class T>
TensorT<T> linear(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias);

template <class T>
GradPairT<T> linear_backward(const TensorT<T>& input, const TensorT<T>& weight,
                             const TensorT<T>& grad_output);

// --- loss --------------------------------------------------------------------

template <class T>
struct XentResultT {
  double loss = 0.0;          // mean over the batch, accumulated in double
  TensorT<T> grad_logits;     // (softmax - onehot) / n
  TensorT<T> probs;           // softmax rows, for prediction averaging
};
using XentResult = XentResultT<float>;

template <class T>
XentResultT<T> softmax_xent(const TensorT<T>& logits, const std::vector<std::int64_t>& labels);

}  // namespace csn
