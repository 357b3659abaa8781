#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sdmg/dataset.hpp"
#include "sdmg/ops.hpp"
#include "sdmg/params.hpp"

namespace sdmg {

template <class T>
struct ConvLayer {
  Tensor<T> w;  // [K × C × k × k]
  Tensor<T> b;  // [K] or undefined
};

template <class T>
struct UNetParams {
  std::vector<std::array<ConvLayer<T>, 2>> down;  // one per level
  std::array<ConvLayer<T>, 2> bottom;
  std::vector<ConvLayer<T>> up;                   // after each upsample, deepest first
  std::vector<std::array<ConvLayer<T>, 2>> merge;  // after each skip concat, deepest first
  ConvLayer<T> head;                               // 1×1 to C_out
  std::size_t depth = 0;
  std::size_t out_channels = 0;
};

namespace detail {

template <class T>
ConvLayer<T> add_conv(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                      bool use_bias) {
  ConvLayer<T> c;
  c.w = store.add(name + ".w", {out, in, k, k}, in * k * k, Init::kHe);
  if (use_bias) c.b = store.add(name + ".b", {out}, in * k * k);
  return c;
}

template <class T>
Tensor<T> conv_relu(const Tensor<T>& x, const ConvLayer<T>& c) {
  return relu(conv2d(x, c.w, c.b, 1, c.w.extent(2) / 2));
}

}  // namespace detail

/// Encoder/decoder with `depth` poolings; level k has base·2^k channels.
template <class T>
UNetParams<T> make_unet(ParamStore<T>& store, const std::string& prefix, std::size_t in_channels, std::size_t base,
                        std::size_t depth, std::size_t out_channels, bool use_bias = true) {
  UNetParams<T> p;
  p.depth = depth;
  p.out_channels = out_channels;
  std::size_t ch = in_channels;
  for (std::size_t k = 0; k < depth; ++k) {
    const std::size_t o = base << k;
    p.down.push_back({detail::add_conv(store, prefix + ".down" + std::to_string(k) + ".0", ch, o, 3, use_bias),
                      detail::add_conv(store, prefix + ".down" + std::to_string(k) + ".1", o, o, 3, use_bias)});
    ch = o;
  }
  const std::size_t bo = base << depth;
  p.bottom = {detail::add_conv(store, prefix + ".bottom.0", ch, bo, 3, use_bias),
              detail::add_conv(store, prefix + ".bottom.1", bo, bo, 3, use_bias)};
  ch = bo;
  for (std::size_t j = 0; j < depth; ++j) {
    const std::size_t k = depth - 1 - j, o = base << k;
    const std::string lvl = std::to_string(k);
    p.up.push_back(detail::add_conv(store, prefix + ".up" + lvl, ch, o, 3, use_bias));
    p.merge.push_back({detail::add_conv(store, prefix + ".merge" + lvl + ".0", 2 * o, o, 3, use_bias),
                       detail::add_conv(store, prefix + ".merge" + lvl + ".1", o, o, 3, use_bias)});
    ch = o;
  }
  p.head = detail::add_conv(store, prefix + ".head", ch, out_channels, 1, use_bias);
  return p;
}

/// [C×S×S] image → [C_out×S×S] feature map. S must be divisible by 2^depth.
template <class T>
Tensor<T> unet_forward(const Tensor<T>& image, const UNetParams<T>& p) {
  detail::require_rank(image, 3, "unet_forward");
  const std::size_t H = image.extent(1), W = image.extent(2), f = std::size_t{1} << p.depth;
  if (H % f != 0 || W % f != 0)
    throw DimensionError("unet_forward: spatial extents " + shape_str(image.shape()) + " not divisible by " + std::to_string(f));
  std::vector<Tensor<T>> skips;
  Tensor<T> x = image;
  for (const auto& blk : p.down) {
    x = detail::conv_relu(detail::conv_relu(x, blk[0]), blk[1]);
    skips.push_back(x);
    x = maxpool2d(x);
  }
  x = detail::conv_relu(detail::conv_relu(x, p.bottom[0]), p.bottom[1]);
  for (std::size_t j = 0; j < p.depth; ++j) {
    auto up = detail::conv_relu(upsample_nearest2x(x), p.up[j]);
    x = concat0<T>({skips[p.depth - 1 - j], up});
    x = detail::conv_relu(detail::conv_relu(x, p.merge[j][0]), p.merge[j][1]);
  }
  return conv2d(x, p.head.w, p.head.b, 1, 0);
}

/// Pixel rectangle covering a region on a map of the given extent: outward
/// rounding, at least one cell wide.
inline PixelRect region_rect(const TextRegion& r, std::size_t height, std::size_t width) {
  constexpr double kSlack = 1e-6;
  PixelRect p{static_cast<long>(std::floor(r.x + kSlack)), static_cast<long>(std::floor(r.y + kSlack)),
              static_cast<long>(std::ceil(r.x + r.w - kSlack)), static_cast<long>(std::ceil(r.y + r.h - kSlack))};
  const long W = static_cast<long>(width), H = static_cast<long>(height);
  if (p.x0 == W && p.x1 == W) p.x0 = W - 1;
  if (p.y0 == H && p.y1 == H) p.y0 = H - 1;
  p.x1 = std::max(p.x1, p.x0 + 1);
  p.y1 = std::max(p.y1, p.y0 + 1);
  if (p.x0 < 0 || p.y0 < 0 || p.x1 > W || p.y1 > H)
    throw ValidationError("region (" + std::to_string(r.x) + "," + std::to_string(r.y) + "," + std::to_string(r.w) + "x" +
                          std::to_string(r.h) + ") outside " + std::to_string(width) + "x" + std::to_string(height) +
                          " feature map");
  return p;
}

template <class T>
struct VisualReduceParams {
  Tensor<T> w;  // [D_v × C_out·G·G]
  Tensor<T> b;
  std::size_t grid = 3;
  RoiMode mode = RoiMode::kMax;
};

template <class T>
VisualReduceParams<T> make_visual_reduce(ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t grid,
                                         std::size_t out_dim, bool use_bias = true, RoiMode mode = RoiMode::kMax) {
  VisualReduceParams<T> p;
  const std::size_t in = channels * grid * grid;
  p.w = store.add(prefix + ".w", {out_dim, in}, in);
  if (use_bias) p.b = store.add(prefix + ".b", {out_dim}, in);
  p.grid = grid;
  p.mode = mode;
  return p;
}

/// Flattened pooled features [n × C·G·G] → [n × D_v].
template <class T>
Tensor<T> visual_reduce(const Tensor<T>& pooled, const VisualReduceParams<T>& p) {
  return linear(pooled, p.w, p.b);
}

/// Visual feature of every region, [n × D_v].
template <class T>
Tensor<T> encode_regions_visual(const Tensor<T>& fmap, const std::vector<TextRegion>& regions, const VisualReduceParams<T>& p) {
  std::vector<PixelRect> rects;
  rects.reserve(regions.size());
  for (const auto& r : regions) rects.push_back(region_rect(r, fmap.extent(1), fmap.extent(2)));
  return visual_reduce(roi_pool(fmap, rects, p.grid, p.mode), p);
}

}  // namespace sdmg
