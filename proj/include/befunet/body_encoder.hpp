#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "befunet/attention.hpp"
#include "befunet/grid.hpp"
#include "befunet/nn.hpp"
#include "befunet/ops.hpp"

namespace befunet {

// Additive attention masks for shifted windows: token pairs that came
// from different pre-shift regions must not attend to each other. Region
// ids follow the usual three-slice construction per axis.
template <typename T>
std::vector<Tensor<T>> shifted_window_masks(int h, int w, int m, int shift) {
  std::vector<int> region(static_cast<std::size_t>(h) * w);
  const int hb[4] = {0, h - m, h - shift, h};
  const int wb[4] = {0, w - m, w - shift, w};
  int id = 0;
  for (int hs = 0; hs < 3; ++hs)
    for (int ws = 0; ws < 3; ++ws) {
      for (int y = hb[hs]; y < hb[hs + 1]; ++y)
        for (int x = wb[ws]; x < wb[ws + 1]; ++x)
          region[static_cast<std::size_t>(y) * w + x] = id;
      ++id;
    }
  const auto wins = window_indices(h, w, m, m);
  const int n = m * m;
  std::vector<Tensor<T>> masks;
  masks.reserve(wins.size());
  for (const auto& win : wins) {
    Tensor<T> mask = Tensor<T>::zeros({n, n});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (region[static_cast<std::size_t>(win[i])] !=
            region[static_cast<std::size_t>(win[j])])
          mask.value()[static_cast<std::size_t>(i) * n + j] = T(-1e9);
    masks.push_back(std::move(mask));
  }
  return masks;
}

// Window-restricted multi-head self-attention (W-MSA / SW-MSA). A
// nonzero shift cyclically rolls the token grid by (shift, shift) before
// windowing and rolls back after, with masks forbidding cross-region
// attention. Relative position bias is off by default and togglable.
template <typename T>
struct WindowAttention {
  int dim = 0, heads = 1, window = 2;
  bool use_rel_bias = false;
  LinearLayer<T> wq, wk, wv, wo;
  Tensor<T> rel_bias_table;     // [(2M-1)^2, heads]
  std::vector<int> rel_index;   // [M^2 * M^2]

  WindowAttention() = default;
  WindowAttention(int dim_, int heads_, int window_, bool rel, Rng& rng)
      : dim(dim_),
        heads(heads_),
        window(window_),
        use_rel_bias(rel),
        wq(dim_, dim_, rng),
        wk(dim_, dim_, rng),
        wv(dim_, dim_, rng),
        wo(dim_, dim_, rng) {
    if (use_rel_bias) {
      const int span = 2 * window - 1;
      rel_bias_table = zero_param<T>({span * span, heads});
      const int n = window * window;
      rel_index.resize(static_cast<std::size_t>(n) * n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const int dy = (i / window) - (j / window) + window - 1;
          const int dx = (i % window) - (j % window) + window - 1;
          rel_index[static_cast<std::size_t>(i) * n + j] = dy * span + dx;
        }
    }
  }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& tokens, int h, int w, int shift,
                    const std::string& tag) const {
    const int m = window;
    const int n = m * m;
    Tensor<T> x = tokens;
    if (shift > 0) x = gather_rows(ctx, x, roll_indices(h, w, shift, shift));
    const auto wins = window_indices(h, w, m, m);
    std::vector<Tensor<T>> masks;
    if (shift > 0) masks = shifted_window_masks<T>(h, w, m, shift);

    std::vector<Tensor<T>> bias_mats;  // per head, shared across windows
    if (use_rel_bias) {
      Tensor<T> gathered = gather_rows(ctx, rel_bias_table, rel_index);  // [n*n, heads]
      for (int hd = 0; hd < heads; ++hd)
        bias_mats.push_back(reshape(ctx, narrow(ctx, gathered, 1, hd, 1), {n, n}));
    }

    Tensor<T> q = wq.forward(ctx, x);
    Tensor<T> k = wk.forward(ctx, x);
    Tensor<T> v = wv.forward(ctx, x);
    std::vector<Tensor<T>> outs;
    outs.reserve(wins.size());
    for (std::size_t wi = 0; wi < wins.size(); ++wi) {
      Tensor<T> qw = gather_rows(ctx, q, wins[wi]);
      Tensor<T> kw = gather_rows(ctx, k, wins[wi]);
      Tensor<T> vw = gather_rows(ctx, v, wins[wi]);
      std::vector<Tensor<T>> score_bias;
      if (use_rel_bias && shift > 0) {
        for (int hd = 0; hd < heads; ++hd)
          score_bias.push_back(add(ctx, bias_mats[static_cast<std::size_t>(hd)],
                                   masks[wi]));
      } else if (use_rel_bias) {
        score_bias = bias_mats;
      } else if (shift > 0) {
        score_bias.push_back(masks[wi]);
      }
      outs.push_back(mha_core(ctx, qw, kw, vw, heads,
                              score_bias.empty() ? nullptr : &score_bias,
                              tag + ".win" + std::to_string(wi)));
    }
    Tensor<T> joined = outs.size() == 1 ? outs[0] : concat_rows(ctx, outs);
    joined = gather_rows(ctx, joined, inverse_window_order(wins, h * w));
    if (shift > 0) joined = gather_rows(ctx, joined, roll_indices(h, w, -shift, -shift));
    return wo.forward(ctx, joined);
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    wq.collect(p + ".wq", out);
    wk.collect(p + ".wk", out);
    wv.collect(p + ".wv", out);
    wo.collect(p + ".wo", out);
    if (use_rel_bias) out.push_back({p + ".rel_bias", rel_bias_table});
  }
};

// One transformer block: z = z + (S)W-MSA(LN(z)); z = z + MLP(LN(z)).
template <typename T>
struct SwinBlock {
  bool shifted = false;
  LayerNormLayer<T> norm1, norm2;
  WindowAttention<T> attn;
  Mlp<T> mlp;

  SwinBlock() = default;
  SwinBlock(int dim, int heads, int window, bool shifted_, bool rel, Rng& rng)
      : shifted(shifted_),
        norm1(dim),
        norm2(dim),
        attn(dim, heads, window, rel, rng),
        mlp(dim, 4, rng) {}

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& tokens, int h, int w,
                    const std::string& tag) const {
    // A single-window grid has nothing to shift across.
    const bool degenerate = (h == attn.window && w == attn.window);
    const int shift = (shifted && !degenerate) ? attn.window / 2 : 0;
    Tensor<T> z = add(ctx, tokens,
                      attn.forward(ctx, norm1.forward(ctx, tokens), h, w, shift, tag));
    return add(ctx, z, mlp.forward(ctx, norm2.forward(ctx, z)));
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    norm1.collect(p + ".norm1", out);
    norm2.collect(p + ".norm2", out);
    attn.collect(p + ".attn", out);
    mlp.collect(p + ".mlp", out);
  }
};

// W-MSA block followed by its SW-MSA partner.
template <typename T>
struct SwinBlockPair {
  SwinBlock<T> plain;
  SwinBlock<T> shifted;

  SwinBlockPair() = default;
  SwinBlockPair(int dim, int heads, int window, bool rel, Rng& rng)
      : plain(dim, heads, window, false, rel, rng),
        shifted(dim, heads, window, true, rel, rng) {}

  TokenGrid<T> forward(Ctx<T>& ctx, const TokenGrid<T>& g, const std::string& tag) const {
    Tensor<T> z = plain.forward(ctx, g.tokens, g.h, g.w, tag + ".w");
    z = shifted.forward(ctx, z, g.h, g.w, tag + ".sw");
    return TokenGrid<T>(z, g.h, g.w);
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    plain.collect(p + ".w", out);
    shifted.collect(p + ".sw", out);
  }
};

// Non-overlapping PxP patches flattened and projected to C dims, plus a
// learnable positional embedding (stage 1 only, zero-initialized).
template <typename T>
struct PatchEmbed {
  int patch = 4, dim = 0, grid_h = 0, grid_w = 0;
  LinearLayer<T> proj;
  Tensor<T> pos;

  PatchEmbed() = default;
  PatchEmbed(int img_h, int img_w, int patch_, int dim_, Rng& rng)
      : patch(patch_), dim(dim_), grid_h(img_h / patch_), grid_w(img_w / patch_),
        proj(patch_ * patch_ * 3, dim_, rng) {
    if (img_h % patch_ != 0 || img_w % patch_ != 0)
      throw ConfigError("image size not divisible by patch size");
    pos = zero_param<T>({grid_h * grid_w, dim_});
  }

  TokenGrid<T> forward(Ctx<T>& ctx, const Tensor<T>& image) const {
    detail::check(image.rank() == 3 && image.dim(2) == 3,
                  "patch_embed: expects [H,W,3] image");
    detail::check(image.dim(0) == grid_h * patch && image.dim(1) == grid_w * patch,
                  "patch_embed: image size mismatch");
    const int w = image.dim(1);
    Tensor<T> flat = reshape(ctx, image, {image.dim(0) * w, 3});
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(grid_h) * grid_w * patch * patch);
    for (int ty = 0; ty < grid_h; ++ty)
      for (int tx = 0; tx < grid_w; ++tx)
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            idx.push_back((ty * patch + dy) * w + tx * patch + dx);
    Tensor<T> patches = gather_rows(ctx, flat, idx);
    patches = reshape(ctx, patches, {grid_h * grid_w, patch * patch * 3});
    Tensor<T> tokens = add(ctx, proj.forward(ctx, patches), pos);
    return TokenGrid<T>(tokens, grid_h, grid_w);
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    proj.collect(p + ".proj", out);
    out.push_back({p + ".pos", pos});
  }
};

// Merge 2x2 neighboring tokens: concat to 4D, LN, linear reduce to 2D.
template <typename T>
struct PatchMerge {
  LayerNormLayer<T> norm;
  LinearLayer<T> reduce;

  PatchMerge() = default;
  PatchMerge(int dim, Rng& rng)
      : norm(4 * dim), reduce(4 * dim, 2 * dim, rng, /*bias=*/false) {}

  TokenGrid<T> forward(Ctx<T>& ctx, const TokenGrid<T>& g) const {
    if (g.h % 2 != 0 || g.w % 2 != 0)
      throw ConfigError("patch_merge: grid " + std::to_string(g.h) + "x" +
                        std::to_string(g.w) + " must have even dims");
    const int ho = g.h / 2, wo = g.w / 2;
    std::vector<int> i00, i10, i01, i11;
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        i00.push_back((2 * y) * g.w + 2 * x);
        i10.push_back((2 * y + 1) * g.w + 2 * x);
        i01.push_back((2 * y) * g.w + 2 * x + 1);
        i11.push_back((2 * y + 1) * g.w + 2 * x + 1);
      }
    std::vector<Tensor<T>> parts = {gather_rows(ctx, g.tokens, i00),
                                    gather_rows(ctx, g.tokens, i10),
                                    gather_rows(ctx, g.tokens, i01),
                                    gather_rows(ctx, g.tokens, i11)};
    Tensor<T> merged = concat(ctx, parts, 1);  // [ho*wo, 4D]
    merged = reduce.forward(ctx, norm.forward(ctx, merged));
    return TokenGrid<T>(merged, ho, wo);
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    norm.collect(p + ".norm", out);
    reduce.collect(p + ".reduce", out);
  }
};

// Four-stage hierarchical transformer branch. Stage outputs are
// H/4 x W/4 x C, H/8 x W/8 x 2C, H/16 xW/16 x 4C, H/32 x W/32 x 8C.
template <typename T>
struct BodyEncoder {
  PatchEmbed<T> embed;
  std::vector<std::vector<SwinBlockPair<T>>> stages;  // [4][depth/2]
  std::vector<PatchMerge<T>> merges;                  // 3

  BodyEncoder() = default;
  BodyEncoder(int img_h, int img_w, int base_dim, int patch, int window,
              const std::vector<int>& depths, const std::vector<int>& heads,
              bool rel_bias, Rng& rng)
      : embed(img_h, img_w, patch, base_dim, rng) {
    if (depths.size() != 4 || heads.size() != 4)
      throw ConfigError("body encoder: need 4 stage depths and 4 head counts");
    for (int s = 0; s < 4; ++s) {
      if (depths[static_cast<std::size_t>(s)] % 2 != 0)
        throw ConfigError("body encoder: stage depths must be even (W/SW pairs)");
      const int dim = base_dim << s;
      const int gh = (img_h / patch) >> s;
      const int gw = (img_w / patch) >> s;
      // Window shrinks to the grid when the grid is smaller.
      const int ws = std::min(window, std::min(gh, gw));
      if (gh % ws != 0 || gw % ws != 0)
        throw ConfigError("body encoder: stage " + std::to_string(s) + " grid " +
                          std::to_string(gh) + "x" + std::to_string(gw) +
                          " not divisible by window " + std::to_string(ws));
      if (dim % heads[static_cast<std::size_t>(s)] != 0)
        throw ConfigError("body encoder: stage dim not divisible by heads");
      std::vector<SwinBlockPair<T>> blocks;
      for (int b = 0; b < depths[static_cast<std::size_t>(s)] / 2; ++b)
        blocks.emplace_back(dim, heads[static_cast<std::size_t>(s)], ws, rel_bias, rng);
      stages.push_back(std::move(blocks));
      if (s < 3) merges.emplace_back(dim, rng);
    }
  }

  std::vector<TokenGrid<T>> forward(Ctx<T>& ctx, const Tensor<T>& image) const {
    std::vector<TokenGrid<T>> outs;
    TokenGrid<T> g = embed.forward(ctx, image);
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t b = 0; b < stages[s].size(); ++b)
        g = stages[s][b].forward(ctx, g,
                                 "body.s" + std::to_string(s) + ".p" + std::to_string(b));
      outs.push_back(g);
      if (s < 3) g = merges[s].forward(ctx, g);
    }
    return outs;
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    embed.collect(p + ".embed", out);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t b = 0; b < stages[s].size(); ++b)
        stages[s][b].collect(p + ".s" + std::to_string(s) + ".p" + std::to_string(b), out);
      if (s < merges.size()) merges[s].collect(p + ".merge" + std::to_string(s), out);
    }
  }
};

}  // namespace befunet
