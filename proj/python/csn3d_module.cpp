#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>

#include "csn/analyzer.hpp"
#include "csn/gradcheck.hpp"
#include "csn/model.hpp"
#include "csn/trainer.hpp"

namespace py = pybind11;
using namespace csn;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor5 to_tensor(const Array& a) {
  if (a.ndim() != 5) throw std::invalid_argument("expected a 5-d array (n, c, t, h, w)");
  const Shape5 shape{a.shape(0), a.shape(1), a.shape(2), a.shape(3), a.shape(4)};
  Tensor5 t(shape, 0.0f);
  std::memcpy(t.data.data(), a.data(), t.data.size() * sizeof(float));
  return t;
}

py::array_t<float> to_numpy(const Tensor5& t) {
  py::array_t<float> a({t.shape.n, t.shape.c, t.shape.t, t.shape.h, t.shape.w});
  std::memcpy(a.mutable_data(), t.data.data(), t.data.size() * sizeof(float));
  return a;
}

py::dict stats_dict(const LayerStats& s) {
  py::dict d;
  d["name"] = s.name;
  d["kind"] = s.kind;
  d["out_voxels"] = s.out_voxels;
  d["params"] = s.params;
  d["flops"] = s.flops;
  d["interactions"] = s.interactions;
  return d;
}

}  // namespace

PYBIND11_MODULE(_csn3d, m) {
  m.doc() = "3d channel-separated convolution kernels and the model analyzer";

  py::class_<ConvSpec>(m, "ConvSpec")
      .def(py::init([](std::int64_t c_in, std::int64_t c_out, std::int64_t groups,
                       Dims3 kernel, Dims3 stride, Dims3 padding, bool bias) {
             ConvSpec s;
             s.c_in = c_in;
             s.c_out = c_out;
             s.groups = groups;
             s.kernel = kernel;
             s.stride = stride;
             s.padding = padding;
             s.bias = bias;
             s.validate();
             return s;
           }),
           py::arg("c_in"), py::arg("c_out"), py::arg("groups") = 1,
           py::arg("kernel") = Dims3{3, 3, 3}, py::arg("stride") = Dims3{1, 1, 1},
           py::arg("padding") = Dims3{0, 0, 0}, py::arg("bias") = false)
      .def_readwrite("c_in", &ConvSpec::c_in)
      .def_readwrite("c_out", &ConvSpec::c_out)
      .def_readwrite("groups", &ConvSpec::groups)
      .def_readwrite("kernel", &ConvSpec::kernel)
      .def_readwrite("stride", &ConvSpec::stride)
      .def_readwrite("padding", &ConvSpec::padding)
      .def_readwrite("bias", &ConvSpec::bias)
      .def("weight_shape",
           [](const ConvSpec& s) {
             const Shape5 w = s.weight_shape();
             return py::make_tuple(w.n, w.c, w.t, w.h, w.w);
           })
      .def("depthwise", &ConvSpec::depthwise);

  m.def(
      "conv3d_forward",
      [](const Array& x, const Array& w, const ConvSpec& spec,
         std::optional<Array> bias) {
        const Tensor5 xt = to_tensor(x), wt = to_tensor(w);
        if (bias) {
          const Tensor5 bt = to_tensor(*bias);
          return to_numpy(conv3d_forward(xt, wt, spec, &bt));
        }
        return to_numpy(conv3d_forward(xt, wt, spec));
      },
      py::arg("input"), py::arg("weight"), py::arg("spec"), py::arg("bias") = py::none());

  m.def(
      "conv3d_backward",
      [](const Array& x, const Array& w, const Array& grad_out, const ConvSpec& spec) {
        const GradPairT<float> g =
            conv3d_backward(to_tensor(x), to_tensor(w), to_tensor(grad_out), spec);
        py::object gb = g.grad_bias.data.empty() ? py::object(py::none())
                                                 : py::object(to_numpy(g.grad_bias));
        return py::make_tuple(to_numpy(g.grad_input), to_numpy(g.grad_weight), gb);
      },
      py::arg("input"), py::arg("weight"), py::arg("grad_output"), py::arg("spec"));

  m.def(
      "softmax_xent",
      [](const Array& logits, const std::vector<std::int64_t>& labels) {
        const XentResultT<float> r = softmax_xent(to_tensor(logits), labels);
        return py::make_tuple(r.loss, to_numpy(r.grad_logits), to_numpy(r.probs));
      },
      py::arg("logits"), py::arg("labels"));

  py::class_<Model>(m, "Model")
      .def_property_readonly("arch", [](const Model& m_) { return m_.plan.arch.name; })
      .def_property_readonly("depth", [](const Model& m_) { return m_.plan.depth(); })
      .def_property_readonly("param_names",
                             [](const Model& m_) {
                               std::vector<std::string> names;
                               for (const auto& [name, t] : m_.params) names.push_back(name);
                               return names;
                             })
      .def("param",
           [](const Model& m_, const std::string& name) { return to_numpy(m_.param(name)); })
      .def("set_param",
           [](Model& m_, const std::string& name, const Array& value) {
             Tensor5 t = to_tensor(value);
             Tensor5& dst = m_.param(name);
             if (!(t.shape == dst.shape))
               throw std::invalid_argument("shape mismatch for " + name);
             dst = std::move(t);
           })
      .def(
          "forward",
          [](Model& m_, const Array& x, bool training) {
            return to_numpy(model_forward(m_, to_tensor(x), training));
          },
          py::arg("input"), py::arg("training") = false)
      .def("save", [](const Model& m_, const std::string& path) {
        save_checkpoint(path, m_.params);
      })
      .def("load", [](Model& m_, const std::string& path) {
        load_into_model(m_, load_checkpoint(path));
      });

  m.def(
      "build_model",
      [](const std::string& arch, std::int64_t classes, std::uint64_t seed) {
        ArchSpec spec = named_arch(arch);
        if (classes > 0) spec.num_classes = classes;
        return build_arch(spec, seed);
      },
      py::arg("arch"), py::arg("classes") = 0, py::arg("seed") = 0);

  m.def("arch_names", &arch_names);

  m.def(
      "layer_stats",
      [](const ConvSpec& spec, std::int64_t out_voxels) {
        return stats_dict(layer_stats(spec, out_voxels));
      },
      py::arg("spec"), py::arg("out_voxels"));

  m.def(
      "model_report_json",
      [](const std::string& arch, Dims3 input, std::int64_t classes) {
        ArchSpec spec = named_arch(arch);
        spec.num_classes = classes;
        return report_json(model_report(spec, {1, 3, input[0], input[1], input[2]}));
      },
      py::arg("arch"), py::arg("input") = Dims3{8, 224, 224}, py::arg("classes") = 400);

  m.def(
      "model_totals",
      [](const std::string& arch, Dims3 input, std::int64_t classes) {
        ArchSpec spec = named_arch(arch);
        spec.num_classes = classes;
        const ModelReport r = model_report(spec, {1, 3, input[0], input[1], input[2]});
        py::dict d;
        d["params"] = r.total_params;
        d["flops"] = r.total_flops;
        d["interactions"] = r.total_interactions;
        d["depth"] = r.depth;
        return d;
      },
      py::arg("arch"), py::arg("input") = Dims3{8, 224, 224}, py::arg("classes") = 400);

  m.def("check_table2", [] {
    py::list out;
    for (const Table2Check& c : check_table2()) {
      py::dict d;
      d["arch"] = c.arch;
      d["flops_err"] = c.flops_err;
      d["params_err"] = c.params_err;
      d["interactions_err"] = c.interactions_err;
      d["pass"] = c.pass;
      out.append(d);
    }
    return out;
  });

  m.def(
      "sweep",
      [](const std::string& arch, const std::string& axis) {
        const SweepResult s = sweep_stats(named_arch(arch), axis);
        py::list rows;
        for (const SweepRow& r : s.rows) {
          py::dict d;
          d["variant"] = r.variant;
          d["groups"] = r.group;
          d["params"] = r.params;
          d["flops"] = r.flops;
          d["interactions"] = r.interactions;
          rows.append(d);
        }
        return py::make_tuple(rows, s.warnings);
      },
      py::arg("arch"), py::arg("axis"));

  m.def(
      "lr_at",
      [](std::int64_t iter, double base_lr, std::int64_t warmup_iters,
         std::int64_t total_iters) {
        TrainConfig cfg;
        cfg.base_lr = base_lr;
        cfg.iters_per_epoch = 1;
        cfg.warmup_epochs = warmup_iters;
        cfg.total_epochs = total_iters;
        return lr_at(iter, cfg);
      },
      py::arg("iter"), py::arg("base_lr"), py::arg("warmup_iters"),
      py::arg("total_iters"));

  m.def(
      "gradcheck",
      [](const std::string& scope) {
        py::list out;
        for (const GradCheckRow& r : run_gradcheck(scope)) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_err"] = r.max_rel_err;
          d["tolerance"] = r.tolerance;
          d["pass"] = r.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("scope"));
}
