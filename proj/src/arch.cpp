#include "csn/arch.hpp"

#include <map>

#include "csn/common.hpp"

namespace csn {

const char* kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::Simple: return "simple";
    case BlockKind::SimpleG: return "simple-g";
    case BlockKind::SimpleD: return "simple-d";
    case BlockKind::Bottleneck: return "bottleneck";
    case BlockKind::BottleneckG: return "bottleneck-g";
    case BlockKind::BottleneckD: return "bottleneck-d";
    case BlockKind::BottleneckDG: return "bottleneck-dg";
    case BlockKind::IpCSN: return "ip-csn";
  }
  return "unknown";
}

BlockKind kind_from_name(const std::string& name) {
  for (BlockKind k : {BlockKind::Simple, BlockKind::SimpleG, BlockKind::SimpleD,
                      BlockKind::Bottleneck, BlockKind::BottleneckG, BlockKind::BottleneckD,
                      BlockKind::BottleneckDG, BlockKind::IpCSN})
    if (name == kind_name(k)) return k;
  throw std::invalid_argument("unknown block kind: " + name);
}

bool simple_kind(BlockKind k) {
  return k == BlockKind::Simple || k == BlockKind::SimpleG || k == BlockKind::SimpleD;
}

std::int64_t block_depth(BlockKind k) { return simple_kind(k) ? 2 : 3; }

void BlockSpec::validate() const {
  detail::require(in_channels >= 1 && mid_channels >= 1 && out_channels >= 1,
                  "block: channel counts must be >= 1");
  detail::require(group_count >= 1, "block: group count must be >= 1");
  if (simple_kind(kind))
    detail::require(mid_channels == out_channels,
                    "block: simple kinds use mid_channels == out_channels");
  for (std::int64_t s : stride) detail::require(s >= 1, "block: stride must be >= 1");
}

std::int64_t ArchSpec::depth() const {
  std::int64_t blocks = 0;
  for (std::int64_t b : stage_blocks) blocks += b;
  return blocks * block_depth(block_kind) + 2;  // + conv1 + fc
}

void ArchSpec::validate() const {
  for (std::int64_t b : stage_blocks)
    detail::require(b >= 1, "arch: stage block counts must be >= 1");
  detail::require(num_classes >= 1, "arch: num_classes must be >= 1");
  detail::require(base_width >= 1, "arch: base_width must be >= 1");
  detail::require(expansion >= 1, "arch: expansion must be >= 1");
  detail::require(group_count >= 1, "arch: group_count must be >= 1");
  if (simple_kind(block_kind))
    detail::require(expansion == 1, "arch: simple kinds use expansion 1");
}

namespace {

ArchSpec base_arch(const std::string& name, BlockKind kind, std::array<std::int64_t, 4> blocks,
                   std::int64_t expansion) {
  ArchSpec a;
  a.name = name;
  a.block_kind = kind;
  a.stage_blocks = blocks;
  a.expansion = expansion;
  return a;
}

ArchSpec tiny_arch(const std::string& name, BlockKind kind) {
  ArchSpec a = base_arch(name, kind, {2, 2, 2, 2}, 1);
  a.base_width = 8;
  a.num_classes = 4;
  return a;
}

}  // namespace

ArchSpec named_arch(const std::string& name) {
  // The depth-d bottleneck layouts; 26 uses expansion 1, the deeper nets 4.
  static const std::map<std::string, std::pair<std::array<std::int64_t, 4>, std::int64_t>>
      layouts = {
          {"26", {{2, 2, 2, 2}, 1}},
          {"50", {{3, 4, 6, 3}, 4}},
          {"101", {{3, 4, 23, 3}, 4}},
          {"152", {{3, 8, 36, 3}, 4}},
      };
  for (const auto& [depth, cfg] : layouts) {
    if (name == "resnet3d-" + depth)
      return base_arch(name, BlockKind::Bottleneck, cfg.first, cfg.second);
    if (name == "ir-csn-" + depth)
      return base_arch(name, BlockKind::BottleneckD, cfg.first, cfg.second);
    if (name == "ip-csn-" + depth)
      return base_arch(name, BlockKind::IpCSN, cfg.first, cfg.second);
  }
  if (name == "resnet3d-18" || name == "simple-8")
    return base_arch(name, BlockKind::Simple, {2, 2, 2, 2}, 1);
  if (name == "simple-16")
    return base_arch(name, BlockKind::Simple, {3, 4, 6, 3}, 1);
  if (name == "bottleneck-8")
    return base_arch(name, BlockKind::Bottleneck, {2, 2, 2, 2}, 1);
  if (name == "bottleneck-16")
    return base_arch(name, BlockKind::Bottleneck, {3, 4, 6, 3}, 4);
  if (name == "tiny-resnet3d") return tiny_arch(name, BlockKind::Bottleneck);
  if (name == "tiny-ir-csn") return tiny_arch(name, BlockKind::BottleneckD);
  if (name == "tiny-ip-csn") return tiny_arch(name, BlockKind::IpCSN);
  throw std::invalid_argument("unknown architecture: " + name);
}

std::vector<std::string> arch_names() {
  return {"resnet3d-18",  "resnet3d-26", "resnet3d-50", "resnet3d-101", "resnet3d-152",
          "ir-csn-26",    "ir-csn-50",   "ir-csn-101",  "ir-csn-152",   "ip-csn-26",
          "ip-csn-50",    "ip-csn-101",  "ip-csn-152",  "simple-8",     "simple-16",
          "bottleneck-8", "bottleneck-16", "tiny-resnet3d", "tiny-ir-csn", "tiny-ip-csn"};
}

namespace {

ConvPlan conv_unit(const std::string& name, std::int64_t c_in, std::int64_t c_out,
                   std::int64_t groups, Dims3 kernel, Dims3 stride, bool relu_after) {
  ConvPlan p;
  p.name = name;
  p.spec.c_in = c_in;
  p.spec.c_out = c_out;
  p.spec.groups = groups;
  p.spec.kernel = kernel;
  p.spec.stride = stride;
  // "same" padding for the odd kernels these networks use.
  p.spec.padding = {(kernel[0] - 1) / 2, (kernel[1] - 1) / 2, (kernel[2] - 1) / 2};
  p.spec.bias = false;  // batch norm follows every conv
  p.spec.validate();
  p.relu_after = relu_after;
  return p;
}

ConvPlan pointwise(const std::string& name, std::int64_t c_in, std::int64_t c_out,
                   std::int64_t groups, Dims3 stride, bool relu_after) {
  return conv_unit(name, c_in, c_out, groups, {1, 1, 1}, stride, relu_after);
}

}  // namespace

BlockPlan make_block(const BlockSpec& spec, const std::string& name) {
  spec.validate();
  BlockPlan plan;
  plan.name = name;
  plan.spec = spec;
  const Dims3 one{1, 1, 1};
  const std::int64_t g = spec.group_count;

  if (simple_kind(spec.kind)) {
    // Two 3x3x3 layers; the block stride sits on the second one. SimpleD
    // prepends the dashed 1x1x1 when the depthwise layers cannot change width.
    std::int64_t a_in = spec.in_channels;
    if (spec.kind == BlockKind::SimpleD && spec.in_channels != spec.out_channels) {
      plan.layers.push_back(pointwise(name + ".pw", spec.in_channels, spec.out_channels, 1,
                                      one, true));
      a_in = spec.out_channels;
    }
    std::int64_t groups = 1;
    if (spec.kind == BlockKind::SimpleG) groups = g;
    if (spec.kind == BlockKind::SimpleD) groups = spec.out_channels;
    plan.layers.push_back(
        conv_unit(name + ".a", a_in, spec.out_channels, groups, {3, 3, 3}, one, true));
    plan.layers.push_back(conv_unit(name + ".b", spec.out_channels, spec.out_channels, groups,
                                    {3, 3, 3}, spec.stride, false));
  } else {
    // Bottleneck family: 1x1x1 reduce, 3x3x3 (strided), 1x1x1 expand. IpCSN
    // slips a dense mid->mid pointwise ahead of the depthwise 3x3x3;
    // BottleneckDG groups the pointwise layers too.
    const std::int64_t pw_groups = spec.kind == BlockKind::BottleneckDG ? g : 1;
    std::int64_t mid_groups = 1;
    if (spec.kind == BlockKind::BottleneckG) mid_groups = g;
    if (spec.kind == BlockKind::BottleneckD || spec.kind == BlockKind::BottleneckDG ||
        spec.kind == BlockKind::IpCSN)
      mid_groups = spec.mid_channels;

    plan.layers.push_back(
        pointwise(name + ".a", spec.in_channels, spec.mid_channels, pw_groups, one, true));
    if (spec.kind == BlockKind::IpCSN)
      plan.layers.push_back(
          pointwise(name + ".pw", spec.mid_channels, spec.mid_channels, 1, one, true));
    plan.layers.push_back(conv_unit(name + ".b", spec.mid_channels, spec.mid_channels,
                                    mid_groups, {3, 3, 3}, spec.stride, true));
    plan.layers.push_back(
        pointwise(name + ".c", spec.mid_channels, spec.out_channels, pw_groups, one, false));
  }

  if (spec.needs_projection()) {
    const std::int64_t proj_groups = spec.kind == BlockKind::BottleneckDG ? g : 1;
    plan.projection = pointwise(name + ".proj", spec.in_channels, spec.out_channels,
                                proj_groups, spec.stride, false);
  }
  return plan;
}

NetworkPlan plan_network(const ArchSpec& arch) {
  arch.validate();
  NetworkPlan plan;
  plan.arch = arch;
  plan.conv1 = conv_unit("conv1", 3, arch.base_width, 1, {3, 7, 7}, {1, 2, 2}, true);

  std::int64_t in_ch = arch.base_width;
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t mid = arch.base_width << stage;
    const std::int64_t out = simple_kind(arch.block_kind) ? mid : mid * arch.expansion;
    for (std::int64_t i = 0; i < arch.stage_blocks[static_cast<std::size_t>(stage)]; ++i) {
      BlockSpec bs;
      bs.kind = arch.block_kind;
      bs.in_channels = in_ch;
      bs.mid_channels = mid;
      bs.out_channels = out;
      bs.stride = (stage > 0 && i == 0) ? Dims3{2, 2, 2} : Dims3{1, 1, 1};
      bs.group_count = arch.group_count;
      plan.blocks.push_back(make_block(
          bs, "conv" + std::to_string(stage + 2) + "_" + std::to_string(i + 1)));
      in_ch = out;
    }
  }
  plan.fc_in = in_ch;
  plan.fc_out = arch.num_classes;
  return plan;
}

std::int64_t NetworkPlan::depth() const {
  std::int64_t d = 2;  // conv1 + fc
  for (const auto& b : blocks) d += block_depth(b.spec.kind);
  return d;
}

std::string NetworkPlan::resolve_alias(const std::string& layer) const {
  if (layer.rfind("comp_", 0) == 0) {
    const std::string idx_str = layer.substr(5);
    std::size_t pos = 0;
    std::int64_t idx = -1;
    try {
      idx = std::stoll(idx_str, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == idx_str.size() && idx >= 0 &&
        idx < static_cast<std::int64_t>(blocks.size()))
      return blocks[static_cast<std::size_t>(idx)].name;
    throw std::invalid_argument("no such block alias: " + layer + " (have comp_0..comp_" +
                                std::to_string(blocks.size() - 1) + ")");
  }
  return layer;
}

}  // namespace csn
