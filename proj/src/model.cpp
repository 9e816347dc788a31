#include "csn/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "csn/common.hpp"

namespace csn {

template <class T>
TensorT<T>& ModelT<T>::param(const std::string& name) {
  auto it = params.find(name);
  detail::require(it != params.end(), "no parameter named " + name);
  return it->second;
}

template <class T>
const TensorT<T>& ModelT<T>::param(const std::string& name) const {
  auto it = params.find(name);
  detail::require(it != params.end(), "no parameter named " + name);
  return it->second;
}

template struct ModelT<float>;
template struct ModelT<double>;

bool is_buffer(const std::string& param_name) {
  return param_name.find(".bn.running_") != std::string::npos;
}

bool decay_exempt(const std::string& param_name) {
  return param_name.ends_with(".bn.scale") || param_name.ends_with(".bn.shift") ||
         param_name.ends_with(".bias");
}

Model build_arch(const ArchSpec& spec, std::uint64_t seed) {
  Model m;
  m.plan = plan_network(spec);
  Rng root(seed);
  std::uint64_t stream = 0;

  auto add_unit = [&](const ConvPlan& p) {
    const double fan_out = static_cast<double>((p.spec.c_out / p.spec.groups) *
                                               p.spec.kernel[0] * p.spec.kernel[1] *
                                               p.spec.kernel[2]);
    Rng r = root.split(stream++);
    m.params.emplace(p.name + ".weight",
                     seeded_normal(p.spec.weight_shape(), r,
                                   static_cast<float>(std::sqrt(2.0 / fan_out))));
    const Shape5 per_chan{1, p.spec.c_out, 1, 1, 1};
    m.params.emplace(p.name + ".bn.scale", tensor_new(per_chan, 1.0f));
    m.params.emplace(p.name + ".bn.shift", tensor_new(per_chan, 0.0f));
    m.params.emplace(p.name + ".bn.running_mean", tensor_new(per_chan, 0.0f));
    m.params.emplace(p.name + ".bn.running_var", tensor_new(per_chan, 1.0f));
  };

  add_unit(m.plan.conv1);
  for (const auto& b : m.plan.blocks) {
    for (const auto& l : b.layers) add_unit(l);
    if (b.projection) add_unit(*b.projection);
  }
  Rng fr = root.split(stream++);
  m.params.emplace("fc.weight",
                   seeded_normal({m.plan.fc_out, m.plan.fc_in, 1, 1, 1}, fr, 0.01f));
  m.params.emplace("fc.bias", tensor_new({1, m.plan.fc_out, 1, 1, 1}, 0.0f));
  return m;
}

namespace {

template <class T>
TensorT<T> unit_forward(ModelT<T>& m, const ConvPlan& p, const TensorT<T>& x, bool training,
                        ConvTapeT<T>* tape) {
  try {
    TensorT<T> y = conv3d_forward(x, m.param(p.name + ".weight"), p.spec);
    BatchNormSpec bn{p.spec.c_out};
    BnCache bc;
    TensorT<T> z = batchnorm_forward(y, m.param(p.name + ".bn.scale"),
                                     m.param(p.name + ".bn.shift"),
                                     m.param(p.name + ".bn.running_mean"),
                                     m.param(p.name + ".bn.running_var"), bn, training,
                                     tape ? &bc : nullptr);
    if (tape) {
      tape->conv_in = x;
      tape->bn_in = std::move(y);
      tape->bn = std::move(bc);
    }
    if (!p.relu_after) return z;
    if (tape) tape->relu_in = z;
    return relu(z);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("at layer " + p.name + ": " + e.what());
  }
}

template <class T>
TensorT<T> unit_backward(const ModelT<T>& m, const ConvPlan& p, const ConvTapeT<T>& tape,
                         TensorT<T> grad, ParamMapT<T>& grads) {
  if (p.relu_after) grad = relu_backward(grad, tape.relu_in);
  BatchNormSpec bn{p.spec.c_out};
  GradPairT<T> bg = batchnorm_backward(tape.bn_in, m.param(p.name + ".bn.scale"), bn,
                                       tape.bn, grad);
  grads.emplace(p.name + ".bn.scale", std::move(bg.grad_weight));
  grads.emplace(p.name + ".bn.shift", std::move(bg.grad_bias));
  GradPairT<T> cg =
      conv3d_backward(tape.conv_in, m.param(p.name + ".weight"), bg.grad_input, p.spec);
  grads.emplace(p.name + ".weight", std::move(cg.grad_weight));
  return std::move(cg.grad_input);
}

}  // namespace

template <class T>
TensorT<T> model_forward(ModelT<T>& model, const TensorT<T>& batch, bool training,
                         ForwardCacheT<T>* cache) {
  const NetworkPlan& plan = model.plan;
  if (cache) {
    cache->block_main.assign(plan.blocks.size(), {});
    cache->block_proj.assign(plan.blocks.size(), ConvTapeT<T>{});
    cache->block_sum.assign(plan.blocks.size(), TensorT<T>{});
  }

  TensorT<T> x = unit_forward(model, plan.conv1, batch, training, cache ? &cache->conv1 : nullptr);

  if (cache) cache->pool1_in = x.shape;
  std::vector<std::int64_t> argmax;
  x = maxpool3d(x, plan.pool1.kernel, plan.pool1.stride, plan.pool1.padding,
                cache ? &argmax : nullptr);
  if (cache) cache->pool1_argmax = std::move(argmax);

  for (std::size_t b = 0; b < plan.blocks.size(); ++b) {
    const BlockPlan& bp = plan.blocks[b];
    if (cache) cache->block_main[b].resize(bp.layers.size());
    TensorT<T> main = x;
    for (std::size_t l = 0; l < bp.layers.size(); ++l)
      main = unit_forward(model, bp.layers[l], main, training,
                          cache ? &cache->block_main[b][l] : nullptr);
    TensorT<T> shortcut =
        bp.projection ? unit_forward(model, *bp.projection, x, training,
                                     cache ? &cache->block_proj[b] : nullptr)
                      : std::move(x);
    TensorT<T> sum = add(main, shortcut);
    if (cache) cache->block_sum[b] = sum;
    x = relu(sum);
  }

  if (cache) cache->gap_in = x.shape;
  x = global_avgpool(x);
  if (cache) cache->fc_in = x;
  try {
    return linear(x, model.param("fc.weight"), model.param("fc.bias"));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("at layer fc: ") + e.what());
  }
}

template <class T>
ParamMapT<T> model_backward(const ModelT<T>& model, const ForwardCacheT<T>& cache,
                            const TensorT<T>& grad_logits) {
  const NetworkPlan& plan = model.plan;
  detail::require(cache.block_sum.size() == plan.blocks.size(),
                  "model_backward: cache does not belong to this model");
  ParamMapT<T> grads;

  GradPairT<T> fg = linear_backward(cache.fc_in, model.param("fc.weight"), grad_logits);
  grads.emplace("fc.weight", std::move(fg.grad_weight));
  grads.emplace("fc.bias", std::move(fg.grad_bias));

  TensorT<T> g = global_avgpool_backward(fg.grad_input, cache.gap_in);

  for (std::size_t b = plan.blocks.size(); b-- > 0;) {
    const BlockPlan& bp = plan.blocks[b];
    TensorT<T> gsum = relu_backward(g, cache.block_sum[b]);
    TensorT<T> gmain = gsum;
    for (std::size_t l = bp.layers.size(); l-- > 0;)
      gmain = unit_backward(model, bp.layers[l], cache.block_main[b][l], std::move(gmain),
                            grads);
    if (bp.projection) {
      TensorT<T> gshort = unit_backward(model, *bp.projection, cache.block_proj[b],
                                        std::move(gsum), grads);
      g = add(gmain, gshort);
    } else {
      g = add(gmain, gsum);
    }
  }

  g = maxpool3d_backward(g, cache.pool1_in, cache.pool1_argmax);
  unit_backward(model, plan.conv1, cache.conv1, std::move(g), grads);
  return grads;
}

#define CSN_INSTANTIATE_MODEL(T)                                                         \
  template TensorT<T> model_forward<T>(ModelT<T>&, const TensorT<T>&, bool,              \
                                       ForwardCacheT<T>*);                               \
  template ParamMapT<T> model_backward<T>(const ModelT<T>&, const ForwardCacheT<T>&,     \
                                          const TensorT<T>&);

CSN_INSTANTIATE_MODEL(float)
CSN_INSTANTIATE_MODEL(double)

#undef CSN_INSTANTIATE_MODEL

// --- checkpoint I/O --------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  bool done() const { return pos == buf.size(); }
};

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const ParamMap& params) {
  std::string out = "CSNW";
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, tensor] : params) {
    detail::require(!name.empty(), "checkpoint: empty parameter name");
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const std::int64_t dims[5] = {tensor.shape.n, tensor.shape.c, tensor.shape.t,
                                  tensor.shape.h, tensor.shape.w};
    for (std::int64_t d : dims) {
      detail::require(d <= 0xffffffffll, "checkpoint: extent too large for format");
      put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (float v : tensor.data) put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f.good()) throw std::runtime_error("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f.good()) throw std::runtime_error("write failed: " + path);
}

ParamMap load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw std::runtime_error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  if (r.bytes(4, "magic") != "CSNW")
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  ParamMap params;
  while (!r.done()) {
    const std::uint32_t name_len = r.u32("name length");
    const std::string name = r.bytes(name_len, "name");
    Shape5 shape;
    shape.n = r.u32("shape");
    shape.c = r.u32("shape");
    shape.t = r.u32("shape");
    shape.h = r.u32("shape");
    shape.w = r.u32("shape");
    shape.validate();
    Tensor5 t(shape, 0.0f);
    for (auto& v : t.data) v = r.f32("payload");
    if (!params.emplace(name, std::move(t)).second)
      throw std::runtime_error("duplicate parameter in checkpoint: " + name);
  }
  return params;
}

void load_into_model(Model& model, const ParamMap& params) {
  detail::require(params.size() == model.params.size(),
                  "checkpoint has " + std::to_string(params.size()) + " tensors, model has " +
                      std::to_string(model.params.size()));
  for (auto& [name, tensor] : model.params) {
    auto it = params.find(name);
    detail::require(it != params.end(), "checkpoint missing parameter " + name);
    detail::require(it->second.shape == tensor.shape,
                    "checkpoint shape mismatch for " + name + ": got " +
                        it->second.shape.str() + ", want " + tensor.shape.str());
    tensor = it->second;
  }
}

}  // namespace csn
