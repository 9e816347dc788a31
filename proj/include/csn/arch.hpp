#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csn/ops.hpp"

namespace csn {

// Residual block families. The *G kinds carry a group count in BlockSpec /
// ArchSpec; D kinds make the 3x3x3 depthwise; DG additionally groups the
// 1x1x1 layers (and the projection shortcut, see make_block).
enum class BlockKind {
  Simple,
  SimpleG,
  SimpleD,
  Bottleneck,
  BottleneckG,
  BottleneckD,  // ir-CSN block
  BottleneckDG,
  IpCSN,        // interaction-preserved block
};

const char* kind_name(BlockKind k);
BlockKind kind_from_name(const std::string& name);
bool simple_kind(BlockKind k);
// Conv layers a block contributes to the depth count (2 for simple kinds,
// 3 for the bottleneck family; inserted pointwise layers are not counted).
std::int64_t block_depth(BlockKind k);

struct BlockSpec {
  BlockKind kind = BlockKind::Bottleneck;
  std::int64_t in_channels = 0;
  std::int64_t mid_channels = 0;  // bottleneck inner width; equals out for simple kinds
  std::int64_t out_channels = 0;
  Dims3 stride{1, 1, 1};
  std::int64_t group_count = 1;  // used by the *G kinds

  bool needs_projection() const {
    return in_channels != out_channels || stride != Dims3{1, 1, 1};
  }
  void validate() const;
};

struct ArchSpec {
  std::string name;  // reporting label, e.g. "ir-csn-50"
  BlockKind block_kind = BlockKind::Bottleneck;
  std::int64_t group_count = 1;
  std::array<std::int64_t, 4> stage_blocks{2, 2, 2, 2};
  std::int64_t num_classes = 400;
  std::int64_t base_width = 64;  // conv1 width; stage s has mid width base·2^(s-1)
  std::int64_t expansion = 1;    // block out = mid · expansion

  std::int64_t depth() const;
  void validate() const;
};

// Named configurations: resnet3d-{18,26,50,101,152}, ir-csn-{26,50,101,152},
// ip-csn-{26,50,101,152}, simple-{8,16}, bottleneck-{8,16} and the desk-scale
// tiny-{resnet3d,ir-csn,ip-csn}. Throws on unknown names.
ArchSpec named_arch(const std::string& name);
std::vector<std::string> arch_names();

// --- layer-level plan --------------------------------------------------------

// One convolution unit of the compiled network. Every conv in these
// architectures is bias-free and followed by batch norm; relu_after is false
// on block-final convs (the relu moves after the residual add) and on
// projections.
struct ConvPlan {
  std::string name;  // parameter base name, e.g. "conv2_1.a"
  ConvSpec spec;
  bool relu_after = true;
};

struct BlockPlan {
  std::string name;  // e.g. "conv2_1"
  BlockSpec spec;
  std::vector<ConvPlan> layers;        // main path, execution order
  std::optional<ConvPlan> projection;  // shortcut conv when spec.needs_projection()
};

// Emits the layer sequence of one residual block. `name` prefixes every
// parameter name.
BlockPlan make_block(const BlockSpec& spec, const std::string& name = "block");

struct PoolPlan {
  Dims3 kernel{1, 3, 3};
  Dims3 stride{1, 2, 2};
  Dims3 padding{0, 1, 1};
};

// The full compiled network: conv1 -> pool1 -> 4 stages of blocks ->
// global average pool -> fc. Blocks are named conv{stage}_{index} with
// stage in 2..5; "comp_k" (k counting blocks from 0 across stages) is an
// accepted alias everywhere block names are looked up.
struct NetworkPlan {
  ArchSpec arch;
  ConvPlan conv1;
  PoolPlan pool1;
  std::vector<BlockPlan> blocks;
  std::int64_t fc_in = 0;
  std::int64_t fc_out = 0;

  std::int64_t depth() const;  // conv1 + counted block layers + fc
  // Resolves "comp_k" aliases to conv{stage}_{index} names; returns the input
  // unchanged when it is not an alias.
  std::string resolve_alias(const std::string& layer) const;
};

NetworkPlan plan_network(const ArchSpec& arch);

}  // namespace csn
