#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "befunet/body_encoder.hpp"
#include "befunet/dlf.hpp"
#include "befunet/edge_encoder.hpp"
#include "befunet/grid.hpp"
#include "befunet/lcaf.hpp"
#include "befunet/nn.hpp"
#include "befunet/ops.hpp"

namespace befunet {

struct ModelConfig {
  int height = 64, width = 64;
  int base_dim = 16;  // C
  int patch = 4;
  int window = 2;  // M
  int lca_h = 2, lca_w = 2;
  std::array<int, 4> depths = {2, 2, 2, 2};
  std::array<int, 4> heads = {1, 2, 4, 8};
  int dlf_s_depth = 1, dlf_l_depth = 1, dlf_heads = 2;
  int num_classes = 3;
  bool use_edge_encoder = true, use_lcaf = true, use_dlf = true;
  LcafResidual lcaf_residual = LcafResidual::kBody;
  DlfInject dlf_inject = DlfInject::kAdd;
  bool rel_pos_bias = false;
  double lambda1 = 0.6, lambda2 = 0.4, gamma = 0.2;
  double edge_lambda = 1.1, eta = 0.3;

  // Desk-scale default.
  static ModelConfig tiny() { return ModelConfig{}; }

  // Full-scale hyperparameters (224x224, C=96, 9 classes).
  static ModelConfig paper() {
    ModelConfig c;
    c.height = c.width = 224;
    c.base_dim = 96;
    c.window = 7;
    c.lca_h = c.lca_w = 7;
    c.depths = {2, 2, 6, 2};
    c.heads = {3, 6, 12, 24};
    c.num_classes = 9;
    return c;
  }

  void validate() const {
    if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0)
      throw ConfigError("height/width must be positive multiples of 32");
    if (base_dim <= 0) throw ConfigError("base_dim must be positive");
    if (patch != 4) throw ConfigError("patch must be 4 (stage ladder assumes 4x)");
    if (num_classes < 2) throw ConfigError("classes must be >= 2");
    if (use_lcaf && !use_edge_encoder)
      throw ConfigError("use_lcaf requires use_edge_encoder");
    if (window < 1 || lca_h < 1 || lca_w < 1)
      throw ConfigError("window and lca windows must be >= 1");
    for (int s = 0; s < 4; ++s) {
      const int gh = (height / 4) >> s;
      const int gw = (width / 4) >> s;
      const int dim = base_dim << s;
      if (depths[static_cast<std::size_t>(s)] < 2 ||
          depths[static_cast<std::size_t>(s)] % 2 != 0)
        throw ConfigError("depths must be even and >= 2");
      // Windows shrink to the grid when the grid is smaller.
      const int ws = std::min(window, std::min(gh, gw));
      if (gh % ws != 0 || gw % ws != 0)
        throw ConfigError("window must divide every stage grid");
      if (use_lcaf && (gh % std::min(lca_h, gh) != 0 || gw % std::min(lca_w, gw) != 0))
        throw ConfigError("lca_h/lca_w must divide every stage grid");
      if (dim % heads[static_cast<std::size_t>(s)] != 0)
        throw ConfigError("heads must divide the stage dim");
    }
    if (use_dlf) {
      if (dlf_s_depth < 1 || dlf_l_depth < 1)
        throw ConfigError("dlf_s_depth/dlf_l_depth must be >= 1");
      if (base_dim % dlf_heads != 0 || (base_dim * 8) % dlf_heads != 0)
        throw ConfigError("dlf_heads must divide the level dims");
    }
    if (lambda1 < 0 || lambda1 > 1 || lambda2 < 0 || lambda2 > 1 || gamma < 0 ||
        gamma > 1)
      throw ConfigError("lambda1/lambda2/gamma must lie in [0,1]");
    if (edge_lambda <= 0) throw ConfigError("edge_lambda must be positive");
    if (eta <= 0 || eta >= 1) throw ConfigError("eta must lie in (0,1)");
  }
};

template <typename T>
struct ModelOutput {
  Tensor<T> logits;                  // [H,W,K]
  std::vector<Tensor<T>> side_maps;  // 4 x [H,W,1] when the edge branch is on
};

// Upsample 2x, concatenate the skip, then two 3x3 conv+ReLU.
template <typename T>
struct UpBlock {
  Tensor<T> w1, b1, w2, b2;

  UpBlock() = default;
  UpBlock(int in_ch, int out_ch, Rng& rng) {
    w1 = fan_in_uniform<T>(rng, {3, 3, in_ch, out_ch}, 9 * in_ch);
    b1 = zero_param<T>({out_ch});
    w2 = fan_in_uniform<T>(rng, {3, 3, out_ch, out_ch}, 9 * out_ch);
    b2 = zero_param<T>({out_ch});
  }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& skip) const {
    Tensor<T> up = upsample_nearest(ctx, x, 2);
    Tensor<T> cat = concat(ctx, {up, skip}, 2);
    Tensor<T> y = relu(ctx, conv2d(ctx, cat, w1, b1, 1, 1));
    return relu(ctx, conv2d(ctx, y, w2, b2, 1, 1));
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    out.push_back({p + ".w1", w1});
    out.push_back({p + ".b1", b1});
    out.push_back({p + ".w2", w2});
    out.push_back({p + ".b2", b2});
  }
};

// U-shaped decoder over the four fused stages: start at the deepest map,
// three up-blocks against the shallower skips, then a 4x upsample and a
// 1x1 projection to class logits at input resolution.
template <typename T>
struct Decoder {
  std::vector<UpBlock<T>> ups;  // 3
  Tensor<T> head_w, head_b;

  Decoder() = default;
  Decoder(int base_dim, int num_classes, Rng& rng) {
    const int c = base_dim;
    ups.emplace_back(8 * c + 4 * c, 4 * c, rng);
    ups.emplace_back(4 * c + 2 * c, 2 * c, rng);
    ups.emplace_back(2 * c + c, c, rng);
    head_w = fan_in_uniform<T>(rng, {1, 1, c, num_classes}, c);
    head_b = zero_param<T>({num_classes});
  }

  // maps: stage 1..4 spatial maps, shallowest first.
  Tensor<T> forward(Ctx<T>& ctx, const std::vector<Tensor<T>>& maps) const {
    detail::check(maps.size() == 4, "decoder: expects 4 stage maps");
    Tensor<T> x = maps[3];
    x = ups[0].forward(ctx, x, maps[2]);
    x = ups[1].forward(ctx, x, maps[1]);
    x = ups[2].forward(ctx, x, maps[0]);
    x = upsample_nearest(ctx, x, 4);
    return conv2d(ctx, x, head_w, head_b, 1, 0);
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    for (std::size_t i = 0; i < ups.size(); ++i)
      ups[i].collect(p + ".up" + std::to_string(i), out);
    out.push_back({p + ".head.w", head_w});
    out.push_back({p + ".head.b", head_b});
  }
};

// Full network: dual-branch encoder, per-stage LCAF fusion, DLF across
// the shallowest and deepest fused levels, U-shaped decoder. The
// edge / LCAF / DLF blocks are the ablation toggles; with the edge branch
// on but LCAF off, fusion degenerates to an elementwise sum.
template <typename T>
struct Befunet {
  ModelConfig cfg;
  std::unique_ptr<EdgeEncoder<T>> edge;
  BodyEncoder<T> body;
  std::vector<Lcaf<T>> lcafs;
  std::unique_ptr<Dlf<T>> dlf;
  Decoder<T> decoder;

  explicit Befunet(const ModelConfig& c, Rng& rng) : cfg(c) {
    cfg.validate();
    if (cfg.use_edge_encoder)
      edge = std::make_unique<EdgeEncoder<T>>(cfg.base_dim, cfg.height, cfg.width, rng);
    body = BodyEncoder<T>(cfg.height, cfg.width, cfg.base_dim, cfg.patch, cfg.window,
                          {cfg.depths[0], cfg.depths[1], cfg.depths[2], cfg.depths[3]},
                          {cfg.heads[0], cfg.heads[1], cfg.heads[2], cfg.heads[3]},
                          cfg.rel_pos_bias, rng);
    if (cfg.use_lcaf) {
      for (int s = 0; s < 4; ++s) {
        const int gh = (cfg.height / 4) >> s;
        const int gw = (cfg.width / 4) >> s;
        LcafConfig lc;
        lc.win_h = std::min(cfg.lca_h, gh);
        lc.win_w = std::min(cfg.lca_w, gw);
        lc.residual = cfg.lcaf_residual;
        lc.heads = cfg.heads[static_cast<std::size_t>(s)];
        lcafs.emplace_back(cfg.base_dim << s, lc, rng);
      }
    }
    if (cfg.use_dlf) {
      DlfConfig dc;
      dc.s_depth = cfg.dlf_s_depth;
      dc.l_depth = cfg.dlf_l_depth;
      dc.heads = cfg.dlf_heads;
      dc.inject = cfg.dlf_inject;
      const int ts = (cfg.height / 4) * (cfg.width / 4);
      const int tl = (cfg.height / 32) * (cfg.width / 32);
      dlf = std::make_unique<Dlf<T>>(ts, cfg.base_dim, tl, cfg.base_dim * 8, dc, rng);
    }
    decoder = Decoder<T>(cfg.base_dim, cfg.num_classes, rng);
  }

  ModelOutput<T> forward(Ctx<T>& ctx, const Tensor<T>& image) const {
    detail::check(image.rank() == 3 && image.dim(0) == cfg.height &&
                      image.dim(1) == cfg.width && image.dim(2) == 3,
                  "forward: image must be [" + std::to_string(cfg.height) + "," +
                      std::to_string(cfg.width) + ",3]");
    std::vector<TokenGrid<T>> body_stages = body.forward(ctx, image);

    ModelOutput<T> out;
    std::vector<TokenGrid<T>> fused;
    if (edge) {
      std::vector<EdgeStageOutput<T>> edge_stages = edge->forward(ctx, image);
      for (int s = 0; s < 4; ++s) {
        const auto& e = edge_stages[static_cast<std::size_t>(s)];
        out.side_maps.push_back(e.side_map);
        if (cfg.use_lcaf) {
          fused.push_back(lcafs[static_cast<std::size_t>(s)].forward(
              ctx, e.features, body_stages[static_cast<std::size_t>(s)], nullptr,
              "lcaf.s" + std::to_string(s)));
        } else {
          fused.emplace_back(
              add(ctx, e.features.tokens, body_stages[static_cast<std::size_t>(s)].tokens),
              e.features.h, e.features.w);
        }
      }
    } else {
      fused = body_stages;
    }

    TokenGrid<T> z_s = fused[0];
    TokenGrid<T> z_l = fused[3];
    if (dlf) {
      auto zz = dlf->forward(ctx, fused[0], fused[3]);
      z_s = zz.first;
      z_l = zz.second;
    }

    std::vector<Tensor<T>> maps = {grid_to_map(ctx, z_s), grid_to_map(ctx, fused[1]),
                                   grid_to_map(ctx, fused[2]), grid_to_map(ctx, z_l)};
    out.logits = decoder.forward(ctx, maps);
    return out;
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    if (edge) edge->collect("edge", out);
    body.collect("body", out);
    for (std::size_t s = 0; s < lcafs.size(); ++s)
      lcafs[s].collect("lcaf.s" + std::to_string(s), out);
    if (dlf) dlf->collect("dlf", out);
    decoder.collect("decoder", out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }
};

struct AblationToggles {
  bool edge_encoder = false;
  bool lcaf = false;
  bool dlf = false;
};

// Table-style ablation builder: baseline is the body encoder plus the
// plain-concatenation decoder; toggles add their modules. LCAF without
// the edge encoder is rejected.
template <typename T>
Befunet<T> build_ablation(ModelConfig cfg, const AblationToggles& t, Rng& rng) {
  if (t.lcaf && !t.edge_encoder)
    throw ConfigError("ablation: LCAF requires the edge encoder");
  cfg.use_edge_encoder = t.edge_encoder;
  cfg.use_lcaf = t.lcaf;
  cfg.use_dlf = t.dlf;
  return Befunet<T>(cfg, rng);
}

}  // namespace befunet
