#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csn/model.hpp"

namespace csn {

// Row-major 8-bit raster with 1 (grayscale) or 3 (rgb) bytes per pixel.
struct ImageU8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::int64_t channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& px(std::int64_t x, std::int64_t y, std::int64_t c = 0) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t px(std::int64_t x, std::int64_t y, std::int64_t c = 0) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

// Binary PGM (P5) for grayscale, PPM (P6) for rgb.
std::string encode_pnm(const ImageU8& img);

// Filter grids: each filter is min-max normalized on its own and drawn as its
// temporal slices side by side inside one tile; tiles pack into a roughly
// square grid on a white background. A constant filter renders mid-gray.
// conv1 filters keep native resolution and color; channelwise filters are
// grayscale, scaled up x5 with nearest-neighbor.
ImageU8 render_conv1(const Tensor5& weight);      // (c_out, 3, kt, kh, kw)
ImageU8 render_depthwise(const Tensor5& weight);  // (c_out, 1, kt, kh, kw)

// Units whose filters can be rendered: conv1 plus every channelwise 3x3x3
// unit in the plan.
std::vector<std::string> viz_eligible(const NetworkPlan& plan);

// Renders the named layer into <out_dir>/<unit>.ppm (conv1) or .pgm
// (channelwise) and returns the written path. Accepts unit names, block
// names and comp_k aliases; a block name picks the block's channelwise
// 3x3x3 unit. Throws when the layer has no renderable filters, naming the
// eligible units.
std::string viz_filters(const Model& model, const std::string& layer,
                        const std::string& out_dir);

}  // namespace csn
