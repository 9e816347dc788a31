#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "csn/model.hpp"
#include "csn/ops.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace csn;

namespace {

std::int64_t weight_count(const BlockPlan& b) {
  std::int64_t total = 0;
  for (const auto& l : b.layers) total += l.spec.weight_count();
  if (b.projection) total += b.projection->spec.weight_count();
  return total;
}

std::vector<std::string> layer_suffixes(const BlockPlan& b) {
  std::vector<std::string> out;
  for (const auto& l : b.layers) out.push_back(l.name.substr(b.name.size() + 1));
  return out;
}

BlockSpec block(BlockKind kind, std::int64_t in, std::int64_t mid, std::int64_t out,
                Dims3 stride = {1, 1, 1}, std::int64_t g = 1) {
  BlockSpec s;
  s.kind = kind;
  s.in_channels = in;
  s.mid_channels = mid;
  s.out_channels = out;
  s.stride = stride;
  s.group_count = g;
  return s;
}

}  // namespace

TEST_CASE("named architectures carry their advertised depth") {
  const std::pair<const char*, std::int64_t> cases[] = {
      {"resnet3d-18", 18}, {"resnet3d-26", 26}, {"resnet3d-50", 50}, {"resnet3d-101", 101},
      {"resnet3d-152", 152}, {"ir-csn-26", 26}, {"ir-csn-50", 50},  {"ir-csn-101", 101},
      {"ir-csn-152", 152}, {"ip-csn-26", 26}, {"ip-csn-50", 50},    {"ip-csn-101", 101},
      {"ip-csn-152", 152}, {"simple-8", 18},  {"simple-16", 34},    {"bottleneck-8", 26},
      {"bottleneck-16", 50}, {"tiny-resnet3d", 26}, {"tiny-ir-csn", 26}, {"tiny-ip-csn", 26},
  };
  for (const auto& [name, depth] : cases) {
    CAPTURE(name);
    ArchSpec a = named_arch(name);
    CHECK(a.depth() == depth);
    CHECK(plan_network(a).depth() == depth);
  }
  CHECK_THROWS_AS(named_arch("resnet3d-42"), std::invalid_argument);
}

TEST_CASE("block counts per named layout") {
  CHECK(plan_network(named_arch("simple-8")).blocks.size() == 8);
  CHECK(plan_network(named_arch("bottleneck-16")).blocks.size() == 16);
  CHECK(plan_network(named_arch("resnet3d-101")).blocks.size() == 33);
}

TEST_CASE("bottleneck block emits the 1-3-1 sequence with the documented weights") {
  BlockPlan b = make_block(block(BlockKind::Bottleneck, 256, 64, 256), "blk");
  CHECK(layer_suffixes(b) == std::vector<std::string>{"a", "b", "c"});
  CHECK(!b.projection.has_value());
  CHECK(b.layers[0].spec.weight_count() == 64 * 256 * 1);
  CHECK(b.layers[1].spec.weight_count() == 64 * 64 * 27);
  CHECK(b.layers[2].spec.weight_count() == 256 * 64 * 1);
  CHECK(weight_count(b) == 64 * 256 + 64 * 64 * 27 + 256 * 64);
  // Stride placement: the 3x3x3 layer carries it.
  BlockPlan s = make_block(block(BlockKind::Bottleneck, 256, 128, 512, {2, 2, 2}), "blk");
  CHECK(s.layers[1].spec.stride == Dims3{2, 2, 2});
  CHECK(s.layers[0].spec.stride == Dims3{1, 1, 1});
  CHECK(s.projection.has_value());
  CHECK(s.projection->spec.stride == Dims3{2, 2, 2});
  CHECK(s.projection->spec.kernel == Dims3{1, 1, 1});
}

TEST_CASE("depthwise 3x3x3 of the ir-CSN block has 64*27 weights") {
  BlockPlan b = make_block(block(BlockKind::BottleneckD, 256, 64, 256), "blk");
  CHECK(b.layers[1].spec.depthwise());
  CHECK(b.layers[1].spec.weight_count() == 1728);  // 64 * 1 * 27
}

TEST_CASE("ip-CSN block inserts the dense mid-to-mid pointwise before the depthwise") {
  BlockPlan b = make_block(block(BlockKind::IpCSN, 256, 64, 256), "blk");
  CHECK(layer_suffixes(b) == std::vector<std::string>{"a", "pw", "b", "c"});
  CHECK(b.layers[1].spec.kernel == Dims3{1, 1, 1});
  CHECK(b.layers[1].spec.c_in == 64);
  CHECK(b.layers[1].spec.c_out == 64);
  CHECK(b.layers[1].spec.groups == 1);
  CHECK(b.layers[2].spec.depthwise());
  // Stride stays on the depthwise 3x3x3; the inserted pointwise runs at full
  // resolution.
  BlockPlan s = make_block(block(BlockKind::IpCSN, 64, 64, 64, {2, 2, 2}), "blk");
  CHECK(s.layers[1].spec.stride == Dims3{1, 1, 1});
  CHECK(s.layers[2].spec.stride == Dims3{2, 2, 2});
}

TEST_CASE("simple-d prepends the dashed pointwise only on width change") {
  BlockPlan grow = make_block(block(BlockKind::SimpleD, 64, 128, 128, {2, 2, 2}), "blk");
  CHECK(layer_suffixes(grow) == std::vector<std::string>{"pw", "a", "b"});
  CHECK(grow.layers[0].spec.kernel == Dims3{1, 1, 1});
  CHECK(grow.layers[1].spec.depthwise());
  CHECK(grow.layers[2].spec.depthwise());
  CHECK(grow.layers[2].spec.stride == Dims3{2, 2, 2});  // stride on the second 3x3x3

  BlockPlan same = make_block(block(BlockKind::SimpleD, 128, 128, 128), "blk");
  CHECK(layer_suffixes(same) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("bottleneck-dg groups the pointwise layers and the projection") {
  BlockPlan b = make_block(block(BlockKind::BottleneckDG, 64, 64, 256, {2, 2, 2}, 4), "blk");
  CHECK(b.layers[0].spec.groups == 4);
  CHECK(b.layers[1].spec.depthwise());
  CHECK(b.layers[2].spec.groups == 4);
  REQUIRE(b.projection.has_value());
  CHECK(b.projection->spec.groups == 4);
}

TEST_CASE("projection shortcut appears iff width or stride demands it") {
  CHECK(!make_block(block(BlockKind::Bottleneck, 256, 64, 256)).projection.has_value());
  CHECK(make_block(block(BlockKind::Bottleneck, 128, 64, 256)).projection.has_value());
  CHECK(make_block(block(BlockKind::Bottleneck, 256, 64, 256, {2, 2, 2})).projection.has_value());
  CHECK(!make_block(block(BlockKind::Simple, 64, 64, 64)).projection.has_value());
}

TEST_CASE("invalid group divisibility is rejected") {
  CHECK_THROWS_AS(make_block(block(BlockKind::BottleneckG, 64, 66, 64, {1, 1, 1}, 4)),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_block(block(BlockKind::SimpleG, 64, 66, 66, {1, 1, 1}, 4)),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_block(block(BlockKind::Simple, 64, 32, 64)), std::invalid_argument);
}

TEST_CASE("table-1 chain: stage widths, strides and output sizes") {
  NetworkPlan p = plan_network(named_arch("resnet3d-50"));
  CHECK(p.conv1.spec.kernel == Dims3{3, 7, 7});
  CHECK(p.conv1.spec.stride == Dims3{1, 2, 2});
  CHECK(p.conv1.spec.padding == Dims3{1, 3, 3});
  CHECK(p.conv1.spec.out_shape({1, 3, 8, 224, 224}) == Shape5{1, 64, 8, 112, 112});
  CHECK(p.pool1.kernel == Dims3{1, 3, 3});
  CHECK(p.pool1.stride == Dims3{1, 2, 2});

  // First block of conv3/conv4/conv5 downsamples 2x2x2; conv2 never does.
  CHECK(p.blocks[0].name == "conv2_1");
  CHECK(p.blocks[0].spec.stride == Dims3{1, 1, 1});
  CHECK(p.blocks[3].name == "conv3_1");
  CHECK(p.blocks[3].spec.stride == Dims3{2, 2, 2});
  CHECK(p.blocks[7].name == "conv4_1");
  CHECK(p.blocks[7].spec.stride == Dims3{2, 2, 2});
  CHECK(p.blocks[13].name == "conv5_1");
  CHECK(p.blocks[13].spec.stride == Dims3{2, 2, 2});

  // Stage widths 64/128/256/512 with expansion 4.
  CHECK(p.blocks[0].spec.mid_channels == 64);
  CHECK(p.blocks[0].spec.out_channels == 256);
  CHECK(p.blocks[15].spec.mid_channels == 512);
  CHECK(p.blocks[15].spec.out_channels == 2048);
  CHECK(p.fc_in == 2048);
  CHECK(p.fc_out == 400);

  // The 26-layer layout keeps expansion 1 (stage outputs 64..512).
  NetworkPlan p26 = plan_network(named_arch("resnet3d-26"));
  CHECK(p26.blocks[0].spec.out_channels == 64);
  CHECK(p26.fc_in == 512);
}

TEST_CASE("comp_k aliases map onto conv{stage}_{index} names") {
  NetworkPlan p = plan_network(named_arch("resnet3d-26"));
  CHECK(p.resolve_alias("comp_0") == "conv2_1");
  CHECK(p.resolve_alias("comp_3") == "conv3_2");
  CHECK(p.resolve_alias("comp_7") == "conv5_2");
  CHECK(p.resolve_alias("conv4_1") == "conv4_1");  // non-alias passes through
  CHECK_THROWS_AS(p.resolve_alias("comp_8"), std::invalid_argument);
  CHECK_THROWS_AS(p.resolve_alias("comp_x"), std::invalid_argument);
}

TEST_CASE("build_arch names every parameter exactly once") {
  Model m = build_arch(named_arch("tiny-ip-csn"), 7);
  std::int64_t conv_units = 1;  // conv1
  for (const auto& b : m.plan.blocks)
    conv_units += static_cast<std::int64_t>(b.layers.size()) + (b.projection ? 1 : 0);
  CHECK(static_cast<std::int64_t>(m.params.size()) == conv_units * 5 + 2);
  CHECK(m.param("fc.weight").shape == Shape5{4, 64, 1, 1, 1});
  CHECK(m.param("conv2_1.b.weight").shape == Shape5{8, 1, 3, 3, 3});  // depthwise
  CHECK_THROWS_AS(m.param("conv9_9.weight"), std::invalid_argument);

  // Same seed, same arch: bit-identical init.
  Model m2 = build_arch(named_arch("tiny-ip-csn"), 7);
  for (const auto& [name, t] : m.params) CHECK(t.data == m2.param(name).data);
  // Different seed: conv1 weights differ.
  Model m3 = build_arch(named_arch("tiny-ip-csn"), 8);
  CHECK(m.param("conv1.weight").data != m3.param("conv1.weight").data);
}

TEST_CASE("bottleneck-g with one group is bit-identical to plain bottleneck") {
  ArchSpec plain = named_arch("tiny-resnet3d");
  ArchSpec grouped = plain;
  grouped.block_kind = BlockKind::BottleneckG;
  grouped.group_count = 1;

  Model a = build_arch(plain, 5);
  Model b = build_arch(grouped, 5);
  Rng r(6);
  Tensor5 x = seeded_normal({2, 3, 4, 16, 16}, r, 1.0f);
  Tensor5 ya = model_forward(a, x);
  Tensor5 yb = model_forward(b, x);
  CHECK(ya.data == yb.data);
}

TEST_CASE("zeroing the depthwise weights leaves the residual path alive") {
  Model m = build_arch(named_arch("tiny-ir-csn"), 9);
  for (auto& [name, t] : m.params)
    if (name.ends_with(".b.weight")) map_inplace(t, [](float) { return 0.0f; });
  Rng r(10);
  Tensor5 x = seeded_normal({2, 3, 4, 16, 16}, r, 1.0f);
  Tensor5 y = model_forward(m, x);
  CHECK(y.shape == Shape5{2, 4, 1, 1, 1});
  for (float v : y.data) CHECK(std::isfinite(v));
}

TEST_CASE("untrained 400-way model scores chance-level loss") {
  Model m = build_arch(named_arch("resnet3d-26"), 11);
  Rng r(12);
  Tensor5 x = seeded_normal({2, 3, 4, 32, 32}, r, 1.0f);
  Tensor5 logits = model_forward(m, x);
  XentResult xe = softmax_xent(logits, {17, 200});
  CHECK(std::abs(xe.loss - std::log(400.0)) <= 0.3);
}

TEST_CASE("eval forward is deterministic and training mode is what updates stats") {
  Model m = build_arch(named_arch("tiny-resnet3d"), 13);
  Rng r(14);
  Tensor5 x = seeded_normal({2, 3, 4, 16, 16}, r, 1.0f);
  Tensor5 y1 = model_forward(m, x);
  Tensor5 y2 = model_forward(m, x);
  CHECK(y1.data == y2.data);
  Tensor5 rm_before = m.param("conv1.bn.running_mean");
  model_forward(m, x, true);
  CHECK(m.param("conv1.bn.running_mean").data != rm_before.data);
}

TEST_CASE("layer errors carry the layer name") {
  Model m = build_arch(named_arch("tiny-resnet3d"), 15);
  Rng r(16);
  Tensor5 bad = seeded_normal({1, 4, 4, 16, 16}, r, 1.0f);  // 4 channels, conv1 wants 3
  try {
    model_forward(m, bad);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("conv1") != std::string::npos);
  }
}

TEST_CASE("full-size forward matches the table-1 end-to-end chain") {
  Model m = build_arch(named_arch("resnet3d-26"), 17);
  Rng r(18);
  Tensor5 x = seeded_normal({2, 3, 8, 224, 224}, r, 1.0f);
  ForwardCache cache;
  Tensor5 logits = model_forward(m, x, false, &cache);
  CHECK(logits.shape == Shape5{2, 400, 1, 1, 1});
  // conv5 activation entering the global pool: T/8 x 7 x 7 at width 512
  // (the 26-layer layout runs expansion 1, so 512 rather than 2048).
  CHECK(cache.gap_in == Shape5{2, 512, 1, 7, 7});
}

TEST_CASE("checkpoint round-trip is byte-exact") {
  Model m = build_arch(named_arch("tiny-ip-csn"), 19);
  const std::string p1 = "ckpt_a.csnw", p2 = "ckpt_b.csnw";
  save_checkpoint(p1, m.params);
  ParamMap loaded = load_checkpoint(p1);
  CHECK(loaded.size() == m.params.size());
  for (const auto& [name, t] : m.params) {
    REQUIRE(loaded.count(name) == 1);
    CHECK(loaded.at(name).shape == t.shape);
    CHECK(loaded.at(name).data == t.data);
  }
  save_checkpoint(p2, loaded);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());

  Model m2 = build_arch(named_arch("tiny-ip-csn"), 20);
  load_into_model(m2, loaded);
  Rng r(21);
  Tensor5 x = seeded_normal({1, 3, 4, 16, 16}, r, 1.0f);
  CHECK(model_forward(m, x).data == model_forward(m2, x).data);

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint loader rejects damaged files") {
  Model m = build_arch(named_arch("tiny-ir-csn"), 22);
  const std::string path = "ckpt_bad.csnw";
  save_checkpoint(path, m.params);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  {  // bad magic
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << corrupt;
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
  {  // truncated payload
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes.substr(0, bytes.size() - 3);
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
  {  // empty file
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
  std::remove(path.c_str());

  // Shape mismatch against a different architecture.
  Model other = build_arch(named_arch("tiny-ip-csn"), 23);
  CHECK_THROWS_AS(load_into_model(other, m.params), std::invalid_argument);
}

TEST_CASE("model backward produces a gradient for every trainable parameter") {
  Model m = build_arch(named_arch("tiny-ip-csn"), 24);
  Rng r(25);
  Tensor5 x = seeded_normal({2, 3, 4, 16, 16}, r, 1.0f);
  ForwardCache cache;
  Tensor5 logits = model_forward(m, x, true, &cache);
  XentResult xe = softmax_xent(logits, {1, 3});
  ParamMap grads = model_backward(m, cache, xe.grad_logits);

  std::int64_t trainable = 0;
  for (const auto& [name, t] : m.params) {
    if (is_buffer(name)) {
      CHECK(grads.count(name) == 0);
      continue;
    }
    ++trainable;
    REQUIRE(grads.count(name) == 1);
    CHECK(grads.at(name).shape == t.shape);
    double mag = 0.0;
    for (float v : grads.at(name).data) mag += std::abs(v);
    CHECK(mag > 0.0);  // gradient flows through every trainable layer
  }
  CHECK(trainable == static_cast<std::int64_t>(grads.size()));
}
