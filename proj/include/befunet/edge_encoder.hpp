#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "befunet/grid.hpp"
#include "befunet/nn.hpp"
#include "befunet/ops.hpp"
#include "befunet/pdc.hpp"

namespace befunet {

// Residual PDC block: x + conv1x1(relu(depthwise_pdc(x))). Channel count
// is preserved; biases start at zero so a freshly built block with zeroed
// pointwise weights is the identity.
template <typename T>
struct PdcBlock {
  PdcVariant variant = PdcVariant::kVanilla;
  PdcPairs pairs;
  Tensor<T> dw_w;  // [k,k,C]
  Tensor<T> dw_b;  // [C]
  Tensor<T> pw_w;  // [1,1,C,C]
  Tensor<T> pw_b;  // [C]

  PdcBlock() = default;
  PdcBlock(int channels, PdcVariant v, Rng& rng) : variant(v), pairs(pdc_pairs(v)) {
    const int k = pairs.k;
    dw_w = fan_in_uniform<T>(rng, {k, k, channels}, k * k);
    dw_b = zero_param<T>({channels});
    pw_w = fan_in_uniform<T>(rng, {1, 1, channels, channels}, channels);
    pw_b = zero_param<T>({channels});
  }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) const {
    detail::check(x.dim(2) == dw_w.dim(2),
                  "pdc_block: input has " + std::to_string(x.dim(2)) +
                      " channels, block expects " + std::to_string(dw_w.dim(2)));
    Tensor<T> y = depthwise_pdc(ctx, x, dw_w, dw_b, pairs);
    y = conv2d(ctx, relu(ctx, y), pw_w, pw_b, /*stride=*/1, /*pad=*/0);
    return add(ctx, x, y);
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    out.push_back({p + ".dw_w", dw_w});
    out.push_back({p + ".dw_b", dw_b});
    out.push_back({p + ".pw_w", pw_w});
    out.push_back({p + ".pw_b", pw_b});
  }
};

template <typename T>
struct EdgeStageOutput {
  TokenGrid<T> features;
  Tensor<T> side_map;  // [H,W,1], sigmoid range
};

// Four-stage PDC branch. The stem reduces the input 4x via two stride-2
// convolutions and expands 3 -> C channels; max pooling plus a 1x1
// transition conv doubles channels between stages (C, 2C, 4C, 8C so the
// stages line up with the body encoder for fusion). Each stage emits a
// single-channel edge map upsampled back to full input resolution.
template <typename T>
struct EdgeEncoder {
  int base_dim = 16;
  int img_h = 0, img_w = 0;
  Tensor<T> stem_w1, stem_b1;  // [3,3,3,C]
  Tensor<T> stem_w2, stem_b2;  // [3,3,C,C]
  std::vector<std::vector<PdcBlock<T>>> stages;  // [4][4]
  std::vector<Tensor<T>> trans_w, trans_b;       // 1x1 transitions, 3 of them
  std::vector<Tensor<T>> side_w, side_b;         // per-stage 1x1 -> 1 heads

  EdgeEncoder() = default;
  EdgeEncoder(int base_dim_, int img_h_, int img_w_, Rng& rng)
      : base_dim(base_dim_), img_h(img_h_), img_w(img_w_) {
    const int c = base_dim;
    stem_w1 = fan_in_uniform<T>(rng, {3, 3, 3, c}, 3 * 3 * 3);
    stem_b1 = zero_param<T>({c});
    stem_w2 = fan_in_uniform<T>(rng, {3, 3, c, c}, 3 * 3 * c);
    stem_b2 = zero_param<T>({c});
    for (int s = 0; s < 4; ++s) {
      const int dim = c << s;
      // The 5x5 radial variant has nothing to difference on maps smaller
      // than 3x3 (clamped +/-2 offsets land on the +/-1 pixels), so such
      // stages fall back to the central variant.
      const int min_dim = std::min(img_h, img_w) / (4 << s);
      PdcVariant cycle[4] = {PdcVariant::kCentral, PdcVariant::kAngular,
                             min_dim >= 3 ? PdcVariant::kRadial
                                          : PdcVariant::kCentral,
                             PdcVariant::kVanilla};
      std::vector<PdcBlock<T>> blocks;
      for (int b = 0; b < 4; ++b) blocks.emplace_back(dim, cycle[b], rng);
      stages.push_back(std::move(blocks));
      side_w.push_back(fan_in_uniform<T>(rng, {1, 1, dim, 1}, dim));
      side_b.push_back(zero_param<T>({1}));
      if (s < 3) {
        trans_w.push_back(fan_in_uniform<T>(rng, {1, 1, dim, 2 * dim}, dim));
        trans_b.push_back(zero_param<T>({2 * dim}));
      }
    }
  }

  std::vector<EdgeStageOutput<T>> forward(Ctx<T>& ctx, const Tensor<T>& image) const {
    detail::check(image.rank() == 3 && image.dim(2) == 3 && image.dim(0) == img_h &&
                      image.dim(1) == img_w,
                  "edge_encoder: expects [" + std::to_string(img_h) + "," +
                      std::to_string(img_w) + ",3] image");
    Tensor<T> x = relu(ctx, conv2d(ctx, image, stem_w1, stem_b1, 2, 1));
    x = relu(ctx, conv2d(ctx, x, stem_w2, stem_b2, 2, 1));
    std::vector<EdgeStageOutput<T>> outs;
    for (std::size_t s = 0; s < 4; ++s) {
      for (const auto& blk : stages[s]) x = blk.forward(ctx, x);
      Tensor<T> side = sigmoid(ctx, conv2d(ctx, x, side_w[s], side_b[s], 1, 0));
      side = upsample_nearest(ctx, side, 4 << s);
      outs.push_back({map_to_grid(ctx, x), side});
      if (s < 3) {
        x = maxpool2d(ctx, x, 2, 2);
        x = relu(ctx, conv2d(ctx, x, trans_w[s], trans_b[s], 1, 0));
      }
    }
    return outs;
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    out.push_back({p + ".stem.w1", stem_w1});
    out.push_back({p + ".stem.b1", stem_b1});
    out.push_back({p + ".stem.w2", stem_w2});
    out.push_back({p + ".stem.b2", stem_b2});
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t b = 0; b < stages[s].size(); ++b)
        stages[s][b].collect(p + ".s" + std::to_string(s) + ".b" + std::to_string(b),
                             out);
      out.push_back({p + ".side" + std::to_string(s) + ".w", side_w[s]});
      out.push_back({p + ".side" + std::to_string(s) + ".b", side_b[s]});
      if (s < trans_w.size()) {
        out.push_back({p + ".trans" + std::to_string(s) + ".w", trans_w[s]});
        out.push_back({p + ".trans" + std::to_string(s) + ".b", trans_b[s]});
      }
    }
  }
};

}  // namespace befunet
