#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "befunet/attention.hpp"
#include "befunet/grid.hpp"
#include "befunet/nn.hpp"
#include "befunet/ops.hpp"

namespace befunet {

// Closed-form multiply-add counts for fusing an h x w token grid of
// C channels: global cross-attention is quadratic in token count, local
// cross-attention with an (h_l, w_l) window is linear.
//   gca = 4*h*w*C^2 + 2*(h*w)^2*C
//   lca = 4*h*w*C^2 + 2*h_l*w_l*h*w*C
struct AttentionCost {
  std::uint64_t gca = 0;
  std::uint64_t lca = 0;
};

inline AttentionCost attention_cost(std::int64_t h, std::int64_t w, std::int64_t c,
                                    std::int64_t hl, std::int64_t wl) {
  if (h <= 0 || w <= 0 || c <= 0 || hl <= 0 || wl <= 0)
    throw ConfigError("attention_cost: all arguments must be positive");
  const std::uint64_t hw = static_cast<std::uint64_t>(h) * static_cast<std::uint64_t>(w);
  const std::uint64_t c2 = static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(c);
  AttentionCost out;
  out.gca = 4 * hw * c2 + 2 * hw * hw * static_cast<std::uint64_t>(c);
  out.lca = 4 * hw * c2 +
            2 * static_cast<std::uint64_t>(hl) * static_cast<std::uint64_t>(wl) * hw *
                static_cast<std::uint64_t>(c);
  return out;
}

// Measured multiply-adds, split into the projection path (Q,K,V,O) and
// the score/value attention path. Filled when a counter is attached.
struct LcafCost {
  std::uint64_t projection_macs = 0;
  std::uint64_t attention_macs = 0;
};

enum class LcafResidual { kBody, kEdge, kSum };

struct LcafConfig {
  int win_h = 2;
  int win_w = 2;
  int heads = 1;
  LcafResidual residual = LcafResidual::kBody;
};

// Local Cross-Attention Fusion. Edge tokens provide the queries, body
// tokens the keys and values; attention never crosses the (win_h, win_w)
// window boundary, which makes the score/value cost linear in token
// count. Output keeps the body stage shape.
template <typename T>
struct Lcaf {
  int dim = 0;
  LcafConfig cfg;
  LinearLayer<T> wq, wk, wv, wo;
  Mlp<T> ffn;

  Lcaf() = default;
  Lcaf(int dim_, const LcafConfig& cfg_, Rng& rng)
      : dim(dim_),
        cfg(cfg_),
        wq(dim_, dim_, rng),
        wk(dim_, dim_, rng),
        wv(dim_, dim_, rng),
        wo(dim_, dim_, rng),
        ffn(dim_, 4, rng) {
    if (dim_ % cfg.heads != 0)
      throw ConfigError("lcaf: dim " + std::to_string(dim_) +
                        " not divisible by heads " + std::to_string(cfg.heads));
  }

  // Windowed softmax(Q_edge K_body^T / sqrt(d_k)) V_body with heads
  // concatenated; no output projection, no residual.
  Tensor<T> local_cross_attention(Ctx<T>& ctx, const TokenGrid<T>& edge,
                                  const TokenGrid<T>& body, LcafCost* cost = nullptr,
                                  const std::string& tag = "lca") const {
    detail::check(edge.tokens.shape() == body.tokens.shape() && edge.h == body.h &&
                      edge.w == body.w,
                  "lcaf: edge and body grids must have identical shape");
    const auto wins = window_indices(body.h, body.w, cfg.win_h, cfg.win_w);
    const std::uint64_t before_proj = ctx.counter ? ctx.counter->multiply_adds : 0;
    Tensor<T> q = wq.forward(ctx, edge.tokens);
    Tensor<T> k = wk.forward(ctx, body.tokens);
    Tensor<T> v = wv.forward(ctx, body.tokens);
    if (ctx.counter && cost)
      cost->projection_macs += ctx.counter->multiply_adds - before_proj;
    const std::uint64_t before_attn = ctx.counter ? ctx.counter->multiply_adds : 0;
    std::vector<Tensor<T>> outs;
    outs.reserve(wins.size());
    for (std::size_t wi = 0; wi < wins.size(); ++wi) {
      Tensor<T> qw = gather_rows(ctx, q, wins[wi]);
      Tensor<T> kw = gather_rows(ctx, k, wins[wi]);
      Tensor<T> vw = gather_rows(ctx, v, wins[wi]);
      outs.push_back(mha_core(ctx, qw, kw, vw, cfg.heads, nullptr,
                              tag + ".win" + std::to_string(wi)));
    }
    if (ctx.counter && cost) {
      // mha_core scores+values are the matmuls; the per-head scale ops also
      // count, subtract them to leave the dot-product path alone.
      const std::uint64_t scale_macs =
          static_cast<std::uint64_t>(body.count()) * cfg.win_h * cfg.win_w * cfg.heads;
      cost->attention_macs += ctx.counter->multiply_adds - before_attn - scale_macs;
    }
    Tensor<T> joined = outs.size() == 1 ? outs[0] : concat_rows(ctx, outs);
    return gather_rows(ctx, joined, inverse_window_order(wins, body.count()));
  }

  // M-LCA: heads concatenated, projected by Wo, plus the residual source.
  Tensor<T> m_lca(Ctx<T>& ctx, const TokenGrid<T>& edge, const TokenGrid<T>& body,
                  LcafCost* cost = nullptr, const std::string& tag = "lca") const {
    Tensor<T> attn = local_cross_attention(ctx, edge, body, cost, tag);
    const std::uint64_t before = ctx.counter ? ctx.counter->multiply_adds : 0;
    Tensor<T> projected = wo.forward(ctx, attn);
    if (ctx.counter && cost)
      cost->projection_macs += ctx.counter->multiply_adds - before;
    Tensor<T> residual;
    switch (cfg.residual) {
      case LcafResidual::kBody: residual = body.tokens; break;
      case LcafResidual::kEdge: residual = edge.tokens; break;
      case LcafResidual::kSum: residual = add(ctx, edge.tokens, body.tokens); break;
    }
    return add(ctx, residual, projected);
  }

  // X_f = FFN(M-LCA) + M-LCA.
  TokenGrid<T> forward(Ctx<T>& ctx, const TokenGrid<T>& edge, const TokenGrid<T>& body,
                       LcafCost* cost = nullptr, const std::string& tag = "lcaf") const {
    Tensor<T> fused = m_lca(ctx, edge, body, cost, tag);
    Tensor<T> out = add(ctx, fused, ffn.forward(ctx, fused));
    return TokenGrid<T>(out, body.h, body.w);
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    wq.collect(p + ".wq", out);
    wk.collect(p + ".wk", out);
    wv.collect(p + ".wv", out);
    wo.collect(p + ".wo", out);
    ffn.collect(p + ".ffn", out);
  }
};

}  // namespace befunet
