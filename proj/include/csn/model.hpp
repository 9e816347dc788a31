#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "csn/arch.hpp"

namespace csn {

template <class T>
using ParamMapT = std::map<std::string, TensorT<T>>;
using ParamMap = ParamMapT<float>;

// A compiled network plus its parameter store. Parameter names follow the
// plan: {unit}.weight and {unit}.bn.{scale,shift,running_mean,running_var}
// for every conv unit (conv1, conv{s}_{i}.{a,pw,b,c,proj}), plus fc.weight
// and fc.bias. Every parameter is reachable by exactly one name.
template <class T>
struct ModelT {
  NetworkPlan plan;
  ParamMapT<T> params;

  TensorT<T>& param(const std::string& name);
  const TensorT<T>& param(const std::string& name) const;
};
using Model = ModelT<float>;

// BN running statistics: carried by checkpoints, never touched by SGD.
bool is_buffer(const std::string& param_name);
// BN scale/shift and biases train without weight decay.
bool decay_exempt(const std::string& param_name);

// Builds and initializes a model: conv weights ~ N(0, sqrt(2/fan_out)) with
// fan_out = (c_out/groups)·k³, BN scale 1 / shift 0 / running (0,1),
// fc weight ~ N(0, 0.01), fc bias 0. Every parameter draws from its own
// split of `seed`, so the init is independent of parameter iteration order.
Model build_arch(const ArchSpec& spec, std::uint64_t seed = 0);

template <class To, class From>
ModelT<To> convert_model(const ModelT<From>& m) {
  ModelT<To> out;
  out.plan = m.plan;
  for (const auto& [name, tensor] : m.params) out.params.emplace(name, convert<To>(tensor));
  return out;
}

// --- forward / backward --------------------------------------------------------

// Activation tape for one conv unit (conv -> bn -> optional relu).
template <class T>
struct ConvTapeT {
  TensorT<T> conv_in;
  TensorT<T> bn_in;    // conv output
  BnCache bn;
  TensorT<T> relu_in;  // bn output; kept only when the unit has a relu
};

template <class T>
struct ForwardCacheT {
  ConvTapeT<T> conv1;
  std::vector<std::vector<ConvTapeT<T>>> block_main;  // per block, per main-path layer
  std::vector<ConvTapeT<T>> block_proj;               // per block; untouched when identity
  std::vector<TensorT<T>> block_sum;                  // residual sums (input of the final relu)
  std::vector<std::int64_t> pool1_argmax;
  Shape5 pool1_in;
  Shape5 gap_in;
  TensorT<T> fc_in;
};
using ForwardCache = ForwardCacheT<float>;

// Runs the network. `training` selects batch-norm batch statistics and updates
// the running estimates; pass a cache to enable model_backward. Errors raised
// inside a layer are rethrown with the layer name prepended.
template <class T>
TensorT<T> model_forward(ModelT<T>& model, const TensorT<T>& batch, bool training = false,
                         ForwardCacheT<T>* cache = nullptr);

// Eval-only forward for shared read-only models; never writes running stats.
template <class T>
TensorT<T> model_forward(const ModelT<T>& model, const TensorT<T>& batch) {
  // Safe: with training == false the forward never writes through the model.
  return model_forward(const_cast<ModelT<T>&>(model), batch, false,
                       static_cast<ForwardCacheT<T>*>(nullptr));
}

// Gradients for every trainable parameter (buffers excluded), keyed like
// model.params. grad_logits comes from softmax_xent on the cached forward.
template <class T>
ParamMapT<T> model_backward(const ModelT<T>& model, const ForwardCacheT<T>& cache,
                            const TensorT<T>& grad_logits);

// --- checkpoints ---------------------------------------------------------------

// Binary format: magic "CSNW", u32 version = 1, then one record per tensor in
// map (name-sorted) order: u32 name length, name bytes, 5 u32 extents,
// float32 payload. Little-endian throughout; round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ParamMap& params);
ParamMap load_checkpoint(const std::string& path);

// Replaces the model's parameters, requiring an exact name/shape match.
void load_into_model(Model& model, const ParamMap& params);

}  // namespace csn
