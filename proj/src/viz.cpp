#include "csn/viz.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "csn/common.hpp"

namespace csn {

namespace {

constexpr std::int64_t kGap = 1;
constexpr std::uint8_t kBackground = 255;
constexpr std::uint8_t kMidGray = 128;

struct GridLayout {
  std::int64_t cols = 0, rows = 0;
  std::int64_t tile_w = 0, tile_h = 0;

  std::int64_t image_w() const { return cols * tile_w + (cols + 1) * kGap; }
  std::int64_t image_h() const { return rows * tile_h + (rows + 1) * kGap; }
  std::int64_t tile_x(std::int64_t i) const { return kGap + (i % cols) * (tile_w + kGap); }
  std::int64_t tile_y(std::int64_t i) const { return kGap + (i / cols) * (tile_h + kGap); }
};

GridLayout layout_for(std::int64_t filters, std::int64_t tile_w, std::int64_t tile_h) {
  GridLayout g;
  g.cols = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(filters))));
  g.rows = (filters + g.cols - 1) / g.cols;
  g.tile_w = tile_w;
  g.tile_h = tile_h;
  return g;
}

ImageU8 blank_image(const GridLayout& g, std::int64_t channels) {
  ImageU8 img;
  img.width = g.image_w();
  img.height = g.image_h();
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(img.width * img.height * channels), kBackground);
  return img;
}

// Per-filter min-max over every tap and channel; a flat filter maps to the
// mid-gray fallback.
struct FilterRange {
  float lo = 0.0f, scale = 0.0f;
  bool flat = true;
};

FilterRange filter_range(const Tensor5& w, std::int64_t filter) {
  const std::int64_t per = w.shape.c * w.shape.t * w.shape.h * w.shape.w;
  const float* p = w.data.data() + filter * per;
  const auto [lo, hi] = std::minmax_element(p, p + per);
  FilterRange r;
  r.lo = *lo;
  r.flat = !(*hi > *lo);
  if (!r.flat) r.scale = 255.0f / (*hi - *lo);
  return r;
}

std::uint8_t shade(float v, const FilterRange& r) {
  if (r.flat) return kMidGray;
  return static_cast<std::uint8_t>(std::lround((v - r.lo) * r.scale));
}

ImageU8 render_grid(const Tensor5& w, std::int64_t upscale, std::int64_t channels) {
  const std::int64_t n = w.shape.n, kt = w.shape.t, kh = w.shape.h, kw = w.shape.w;
  const GridLayout g =
      layout_for(n, kt * kw * upscale + (kt - 1) * kGap, kh * upscale);
  ImageU8 img = blank_image(g, channels);
  for (std::int64_t f = 0; f < n; ++f) {
    const FilterRange range = filter_range(w, f);
    for (std::int64_t t = 0; t < kt; ++t) {
      const std::int64_t sx = g.tile_x(f) + t * (kw * upscale + kGap);
      const std::int64_t sy = g.tile_y(f);
      for (std::int64_t y = 0; y < kh * upscale; ++y)
        for (std::int64_t x = 0; x < kw * upscale; ++x)
          for (std::int64_t c = 0; c < channels; ++c)
            img.px(sx + x, sy + y, c) =
                shade(w.at(f, c, t, y / upscale, x / upscale), range);
    }
  }
  return img;
}

}  // namespace

std::string encode_pnm(const ImageU8& img) {
  detail::require(img.channels == 1 || img.channels == 3, "encode_pnm: 1 or 3 channels");
  detail::require(img.width > 0 && img.height > 0 &&
                      img.pixels.size() ==
                          static_cast<std::size_t>(img.width * img.height * img.channels),
                  "encode_pnm: pixel buffer does not match dimensions");
  std::string out = img.channels == 3 ? "P6" : "P5";
  out += "\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

ImageU8 render_conv1(const Tensor5& weight) {
  detail::require(weight.shape.c == 3, "render_conv1: expected rgb filters");
  return render_grid(weight, 1, 3);
}

ImageU8 render_depthwise(const Tensor5& weight) {
  detail::require(weight.shape.c == 1, "render_depthwise: expected single-channel filters");
  return render_grid(weight, 5, 1);
}

namespace {

bool channelwise_3x3x3(const ConvPlan& p) {
  return p.spec.depthwise() && p.spec.kernel == Dims3{3, 3, 3};
}

const ConvPlan* block_channelwise(const BlockPlan& b) {
  for (const ConvPlan& l : b.layers)
    if (channelwise_3x3x3(l)) return &l;
  return nullptr;
}

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (const std::string& n : names) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

[[noreturn]] void reject(const std::string& layer, const NetworkPlan& plan,
                         const char* why) {
  throw std::invalid_argument("cannot render " + layer + ": " + why +
                              "; renderable layers: " + join(viz_eligible(plan)));
}

// conv1 or a channelwise 3x3x3 unit; block names pick their channelwise unit.
const ConvPlan* find_unit(const NetworkPlan& plan, const std::string& layer) {
  const std::string name = plan.resolve_alias(layer);
  if (name == "conv1") return &plan.conv1;
  for (const BlockPlan& b : plan.blocks) {
    if (b.name == name) {
      const ConvPlan* unit = block_channelwise(b);
      if (!unit) reject(layer, plan, "the block has no channelwise 3x3x3 unit");
      return unit;
    }
    for (const ConvPlan& l : b.layers)
      if (l.name == name) {
        if (!channelwise_3x3x3(l))
          reject(layer, plan, "only conv1 and channelwise 3x3x3 units have renderable filters");
        return &l;
      }
    if (b.projection && b.projection->name == name)
      reject(layer, plan, "only conv1 and channelwise 3x3x3 units have renderable filters");
  }
  reject(layer, plan, "no such layer");
}

}  // namespace

std::vector<std::string> viz_eligible(const NetworkPlan& plan) {
  std::vector<std::string> names{"conv1"};
  for (const BlockPlan& b : plan.blocks)
    if (const ConvPlan* unit = block_channelwise(b)) names.push_back(unit->name);
  return names;
}

std::string viz_filters(const Model& model, const std::string& layer,
                        const std::string& out_dir) {
  const ConvPlan* unit = find_unit(model.plan, layer);
  const Tensor5& weight = model.param(unit->name + ".weight");
  const bool rgb = unit->name == "conv1";
  const ImageU8 img = rgb ? render_conv1(weight) : render_depthwise(weight);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path path = fs::path(out_dir) / (unit->name + (rgb ? ".ppm" : ".pgm"));
  std::ofstream out(path, std::ios::binary);
  const std::string bytes = encode_pnm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return path.string();
}

}  // namespace csn
