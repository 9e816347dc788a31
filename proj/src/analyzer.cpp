#include "csn/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace csn {

namespace {

std::string classify(const ConvSpec& spec) {
  if (spec.depthwise()) return "depthwise";
  if (spec.kernel == Dims3{1, 1, 1}) return "pointwise";
  return "conv";
}

std::string dims_str(const Dims3& d) {
  std::ostringstream os;
  os << d[0] << "x" << d[1] << "x" << d[2];
  return os.str();
}

std::string shape_str(const Shape5& s) {
  std::ostringstream os;
  os << s.n << "x" << s.c << "x" << s.t << "x" << s.h << "x" << s.w;
  return os.str();
}

// Scaled totals are rounded to fixed precision so the JSON is byte-stable.
double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

LayerStats conv_row(const std::string& name, const ConvSpec& spec, const Shape5& in,
                    const Conventions& conv) {
  const Shape5 out = spec.out_shape(in);
  LayerStats s = layer_stats(spec, conv.flops_use_input_voxels ? in.voxels() : out.voxels());
  s.name = name;
  s.out_shape = out;
  s.out_voxels = out.voxels();
  return s;
}

LayerStats pool_row(const std::string& name, const std::string& kind, const Shape5& in,
                    const Shape5& out, const Dims3& kernel, const Dims3& stride,
                    const Dims3& padding) {
  LayerStats s;
  s.name = name;
  s.kind = kind;
  s.spec.c_in = in.c;
  s.spec.c_out = out.c;
  s.spec.kernel = kernel;
  s.spec.stride = stride;
  s.spec.padding = padding;
  s.out_shape = out;
  s.out_voxels = out.voxels();
  return s;
}

}  // namespace

LayerStats layer_stats(const ConvSpec& spec, std::int64_t out_voxels) {
  spec.validate();
  if (out_voxels < 0) throw std::invalid_argument("layer_stats: negative voxel count");
  const std::int64_t cig = spec.c_in / spec.groups;
  LayerStats s;
  s.kind = classify(spec);
  s.spec = spec;
  s.out_voxels = out_voxels;
  s.params = spec.c_out * cig * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
  s.flops = s.params * out_voxels;
  s.interactions = spec.c_out * (cig * (cig - 1) / 2);
  return s;
}

ModelReport model_report(const ArchSpec& arch, const Shape5& input,
                         const Conventions& conventions) {
  const NetworkPlan plan = plan_network(arch);
  ModelReport r;
  r.arch = arch.name.empty() ? std::string(kind_name(arch.block_kind)) : arch.name;
  r.input = input;
  r.conventions = conventions;
  r.depth = plan.depth();

  Shape5 shape = input;
  r.layers.push_back(conv_row(plan.conv1.name, plan.conv1.spec, shape, conventions));
  shape = r.layers.back().out_shape;

  {
    ConvSpec probe;  // reuses conv shape arithmetic for the pool window
    probe.c_in = probe.c_out = shape.c;
    probe.kernel = plan.pool1.kernel;
    probe.stride = plan.pool1.stride;
    probe.padding = plan.pool1.padding;
    const Shape5 out = probe.out_shape(shape);
    r.layers.push_back(pool_row("pool1", "maxpool", shape, out, plan.pool1.kernel,
                                plan.pool1.stride, plan.pool1.padding));
    shape = out;
  }

  for (const BlockPlan& block : plan.blocks) {
    const Shape5 block_in = shape;
    for (const ConvPlan& layer : block.layers) {
      r.layers.push_back(conv_row(layer.name, layer.spec, shape, conventions));
      shape = r.layers.back().out_shape;
    }
    if (block.projection) {
      LayerStats proj = conv_row(block.projection->name, block.projection->spec,
                                 block_in, conventions);
      if (!(proj.out_shape == shape))
        throw std::logic_error("projection output mismatches main path at " + block.name);
      r.layers.push_back(proj);
    }
  }

  {
    const Shape5 out{shape.n, shape.c, 1, 1, 1};
    r.layers.push_back(pool_row("gap", "avgpool", shape, out,
                                {shape.t, shape.h, shape.w}, {1, 1, 1}, {0, 0, 0}));
    shape = out;
  }

  {
    LayerStats fc;
    fc.name = "fc";
    fc.kind = "fc";
    fc.spec.c_in = plan.fc_in;
    fc.spec.c_out = plan.fc_out;
    fc.out_shape = {shape.n, plan.fc_out, 1, 1, 1};
    fc.out_voxels = 1;
    fc.params = plan.fc_out * plan.fc_in + plan.fc_out;
    fc.flops = plan.fc_out * plan.fc_in;
    r.layers.push_back(fc);
  }

  for (const LayerStats& s : r.layers) {
    r.total_params += s.params;
    r.total_flops += s.flops;
    r.total_interactions += s.interactions;
    if (s.kind == "conv" || s.kind == "pointwise" || s.kind == "depthwise")
      r.bn_params += 2 * s.spec.c_out;
  }
  if (conventions.count_bn_params) r.total_params += r.bn_params;
  return r;
}

std::string report_json(const ModelReport& r) {
  using json = nlohmann::ordered_json;
  json j;
  j["arch"] = r.arch;
  j["input"] = {r.input.n, r.input.c, r.input.t, r.input.h, r.input.w};
  j["conventions"] = {
      {"flop", "multiply-accumulate"},
      {"flop_voxels", r.conventions.flops_use_input_voxels ? "input" : "output"},
      {"bn_params_in_total", r.conventions.count_bn_params},
  };
  j["layers"] = json::array();
  for (const LayerStats& s : r.layers) {
    json row;
    row["name"] = s.name;
    row["kind"] = s.kind;
    row["c_in"] = s.spec.c_in;
    row["c_out"] = s.spec.c_out;
    row["groups"] = s.spec.groups;
    row["kernel"] = {s.spec.kernel[0], s.spec.kernel[1], s.spec.kernel[2]};
    row["stride"] = {s.spec.stride[0], s.spec.stride[1], s.spec.stride[2]};
    row["out_shape"] = {s.out_shape.n, s.out_shape.c, s.out_shape.t, s.out_shape.h,
                        s.out_shape.w};
    row["params"] = s.params;
    row["flops"] = s.flops;
    row["interactions"] = s.interactions;
    j["layers"].push_back(std::move(row));
  }
  j["totals"] = {
      {"params", r.total_params},
      {"flops", r.total_flops},
      {"interactions", r.total_interactions},
      {"bn_params", r.bn_params},
      {"depth", r.depth},
      {"params_m", round_to(double(r.total_params) / 1e6, 3)},
      {"flops_g", round_to(double(r.total_flops) / 1e9, 3)},
      {"interactions_g", round_to(double(r.total_interactions) / 1e9, 3)},
  };
  return j.dump(2) + "\n";
}

std::string report_csv(const ModelReport& r) {
  std::ostringstream os;
  os << "name,kind,c_in,c_out,groups,kernel,stride,out_shape,params,flops,interactions\n";
  for (const LayerStats& s : r.layers) {
    os << s.name << "," << s.kind << "," << s.spec.c_in << "," << s.spec.c_out << ","
       << s.spec.groups << "," << dims_str(s.spec.kernel) << "," << dims_str(s.spec.stride)
       << "," << shape_str(s.out_shape) << "," << s.params << "," << s.flops << ","
       << s.interactions << "\n";
  }
  os << "total,,,,,,,," << r.total_params << "," << r.total_flops << ","
     << r.total_interactions << "\n";
  return os.str();
}

SweepResult sweep_stats(const ArchSpec& base, const std::string& axis, const Shape5& input) {
  base.validate();
  SweepResult result;
  result.axis = axis;
  const bool simple = simple_kind(base.block_kind);

  auto add = [&](const std::string& variant, std::int64_t group_col, BlockKind kind,
                 std::int64_t g) {
    ArchSpec v = base;
    v.name = variant;
    v.block_kind = kind;
    v.group_count = g;
    const ModelReport rep = model_report(v, input);
    result.rows.push_back(
        {variant, group_col, rep.total_params, rep.total_flops, rep.total_interactions, v});
  };

  if (axis == "groups-3x3x3") {
    const BlockKind dense = simple ? BlockKind::Simple : BlockKind::Bottleneck;
    const BlockKind grouped = simple ? BlockKind::SimpleG : BlockKind::BottleneckG;
    add(kind_name(dense), 1, dense, 1);
    for (std::int64_t g = 2; g <= base.base_width; g *= 2) {
      if (base.base_width % g != 0) {
        result.warnings.push_back("skipping g=" + std::to_string(g) +
                                  ": does not divide the stage widths");
        continue;
      }
      add(std::string(kind_name(grouped)) + std::to_string(g), g, grouped, g);
    }
    // The per-channel limit shares the bottleneck layer set, so it extends the
    // curve; the simple family's depthwise kind inserts extra pointwise layers
    // and is reported on the block-kind axis instead.
    if (!simple) add(kind_name(BlockKind::BottleneckD), 0, BlockKind::BottleneckD, 1);
  } else if (axis == "groups-1x1x1") {
    if (simple)
      throw std::invalid_argument("sweep_stats: axis groups-1x1x1 needs a bottleneck base");
    add(kind_name(BlockKind::BottleneckD), 1, BlockKind::BottleneckD, 1);
    for (std::int64_t g = 2; g <= base.base_width; g *= 2) {
      if (base.base_width % g != 0) {
        result.warnings.push_back("skipping g=" + std::to_string(g) +
                                  ": does not divide the stage widths");
        continue;
      }
      add(std::string(kind_name(BlockKind::BottleneckDG)) + std::to_string(g), g,
          BlockKind::BottleneckDG, g);
    }
  } else if (axis == "block-kind") {
    const std::int64_t g = base.group_count > 1 ? base.group_count : 2;
    if (simple) {
      add(kind_name(BlockKind::Simple), 1, BlockKind::Simple, 1);
      add(kind_name(BlockKind::SimpleG), g, BlockKind::SimpleG, g);
      add(kind_name(BlockKind::SimpleD), 0, BlockKind::SimpleD, 1);
    } else {
      add(kind_name(BlockKind::Bottleneck), 1, BlockKind::Bottleneck, 1);
      add(kind_name(BlockKind::BottleneckG), g, BlockKind::BottleneckG, g);
      add(kind_name(BlockKind::BottleneckD), 0, BlockKind::BottleneckD, 1);
      add(std::string(kind_name(BlockKind::BottleneckDG)) + std::to_string(g), g,
          BlockKind::BottleneckDG, g);
      add(kind_name(BlockKind::IpCSN), 0, BlockKind::IpCSN, 1);
    }
  } else {
    throw std::invalid_argument("sweep_stats: unknown axis " + axis);
  }
  return result;
}

std::string sweep_csv(const SweepResult& sweep) {
  std::ostringstream os;
  os << "variant,groups,params,flops,interactions\n";
  for (const SweepRow& row : sweep.rows) {
    os << row.variant << "," << row.group << "," << row.params << "," << row.flops << ","
       << row.interactions << "\n";
  }
  return os.str();
}

std::vector<Table2Check> check_table2(const Shape5& input, std::int64_t num_classes) {
  std::vector<Table2Check> checks;
  for (const Table2Row& ref : table2_reference()) {
    ArchSpec arch = named_arch(ref.arch);
    arch.num_classes = num_classes;
    const ModelReport rep = model_report(arch, input);
    Table2Check c;
    c.arch = ref.arch;
    c.flops_err = std::abs(double(rep.total_flops) - ref.flops_e9 * 1e9) / (ref.flops_e9 * 1e9);
    c.params_err =
        std::abs(double(rep.total_params) - ref.params_e6 * 1e6) / (ref.params_e6 * 1e6);
    c.interactions_err = std::abs(double(rep.total_interactions) - ref.interactions_e9 * 1e9) /
                         (ref.interactions_e9 * 1e9);
    c.pass = c.flops_err <= 0.15 && c.params_err <= 0.03 && c.interactions_err <= 0.02;
    checks.push_back(c);
  }
  return checks;
}

}  // namespace csn
