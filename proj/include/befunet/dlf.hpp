#pragma once

#include <string>
#include <utility>
#include <vector>

#include "befunet/attention.hpp"
#include "befunet/grid.hpp"
#include "befunet/nn.hpp"
#include "befunet/ops.hpp"

namespace befunet {

enum class DlfInject { kAdd, kConcatProject };

struct DlfConfig {
  int s_depth = 1;  // encoders after the small (shallow) level
  int l_depth = 1;  // encoders after the large (deep) level
  int heads = 2;
  DlfInject inject = DlfInject::kAdd;
};

// CLS = GAP(Norm(P)): mean over layer-normalized tokens, shape [1, D].
template <typename T>
Tensor<T> make_class_token(Ctx<T>& ctx, const Tensor<T>& tokens,
                           const LayerNormLayer<T>& norm) {
  if (tokens.dim(0) < 1) throw ContractError("make_class_token: empty token set");
  return mean_rows(ctx, norm.forward(ctx, tokens));
}

// Single-query multi-head cross-attention:
// y = cls + Wo(MCA(LN([cls || tokens]))) with the query taken from the
// cls row alone, so the score matrix is 1 x (N+1) and cost is linear.
template <typename T>
struct ClsCrossAttention {
  int heads = 1;
  LayerNormLayer<T> norm;
  LinearLayer<T> wq, wk, wv, wo;

  ClsCrossAttention() = default;
  ClsCrossAttention(int dim, int heads_, Rng& rng)
      : heads(heads_),
        norm(dim),
        wq(dim, dim, rng),
        wk(dim, dim, rng),
        wv(dim, dim, rng),
        wo(dim, dim, rng) {}

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& cls, const Tensor<T>& tokens,
                    const std::string& tag) const {
    detail::check(cls.rank() == 2 && cls.dim(0) == 1, "cls must be [1,D]");
    detail::check(cls.dim(1) == tokens.dim(1),
                  "cls dim " + std::to_string(cls.dim(1)) + " != token dim " +
                      std::to_string(tokens.dim(1)));
    Tensor<T> seq = concat_rows(ctx, {cls, tokens});
    Tensor<T> ln = norm.forward(ctx, seq);
    Tensor<T> q = wq.forward(ctx, narrow(ctx, ln, 0, 0, 1));
    Tensor<T> attn = mha_core(ctx, q, wk.forward(ctx, ln), wv.forward(ctx, ln), heads,
                              nullptr, tag);
    return add(ctx, cls, wo.forward(ctx, attn));
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    norm.collect(p + ".norm", out);
    wq.collect(p + ".wq", out);
    wk.collect(p + ".wk", out);
    wv.collect(p + ".wv", out);
    wo.collect(p + ".wo", out);
  }
};

template <typename T>
struct DlfLevel {
  LayerNormLayer<T> cls_norm;
  Tensor<T> pos;  // [N+1, D], zero-init
  std::vector<EncoderLayer<T>> encoders;

  DlfLevel() = default;
  DlfLevel(int tokens, int dim, int depth, int heads, Rng& rng) : cls_norm(dim) {
    pos = zero_param<T>({tokens + 1, dim});
    for (int i = 0; i < depth; ++i) encoders.emplace_back(dim, heads, rng);
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    cls_norm.collect(p + ".cls_norm", out);
    out.push_back({p + ".pos", pos});
    for (std::size_t i = 0; i < encoders.size(); ++i)
      encoders[i].collect(p + ".enc" + std::to_string(i), out);
  }
};

// Double-Level Fusion: the shallowest and deepest fused levels exchange
// information through swapped class tokens. Per level: prepend CLS, add
// positional embedding, run the level's encoders, project the CLS to the
// other level's dim, cross-attend against the other level's tokens, then
// back-project and inject into the level's own tokens (broadcast add by
// default; concat-project optional). Class tokens are discarded.
template <typename T>
struct Dlf {
  int dim_s = 0, dim_l = 0;
  DlfConfig cfg;
  DlfLevel<T> small, large;
  LinearLayer<T> f_s;  // D_s -> D_l
  LinearLayer<T> f_l;  // D_l -> D_s
  ClsCrossAttention<T> mca_s;  // runs at D_l
  ClsCrossAttention<T> mca_l;  // runs at D_s
  LinearLayer<T> g_s;  // D_l -> D_s back-projection
  LinearLayer<T> g_l;  // D_s -> D_l back-projection
  LinearLayer<T> inj_s, inj_l;  // 2D -> D, concat-project mode only

  Dlf() = default;
  Dlf(int tokens_s, int dim_s_, int tokens_l, int dim_l_, const DlfConfig& cfg_,
      Rng& rng)
      : dim_s(dim_s_),
        dim_l(dim_l_),
        cfg(cfg_),
        small(tokens_s, dim_s_, cfg_.s_depth, cfg_.heads, rng),
        large(tokens_l, dim_l_, cfg_.l_depth, cfg_.heads, rng),
        f_s(dim_s_, dim_l_, rng),
        f_l(dim_l_, dim_s_, rng),
        mca_s(dim_l_, cfg_.heads, rng),
        mca_l(dim_s_, cfg_.heads, rng),
        g_s(dim_l_, dim_s_, rng),
        g_l(dim_s_, dim_l_, rng) {
    if (cfg.s_depth < 1 || cfg.l_depth < 1)
      throw ConfigError("dlf: encoder depths must be >= 1");
    if (dim_s_ % cfg.heads != 0 || dim_l_ % cfg.heads != 0)
      throw ConfigError("dlf: level dims must be divisible by heads");
    if (cfg.inject == DlfInject::kConcatProject) {
      inj_s = LinearLayer<T>(2 * dim_s_, dim_s_, rng);
      inj_l = LinearLayer<T>(2 * dim_l_, dim_l_, rng);
    }
  }

  std::pair<TokenGrid<T>, TokenGrid<T>> forward(Ctx<T>& ctx, const TokenGrid<T>& p_s,
                                                const TokenGrid<T>& p_l) const {
    detail::check(p_s.dim() == dim_s && p_l.dim() == dim_l, "dlf: level dim mismatch");
    detail::check(p_s.count() + 1 == small.pos.dim(0) &&
                      p_l.count() + 1 == large.pos.dim(0),
                  "dlf: token count mismatch with positional embedding");
    // Per-level encoding with prepended class token.
    auto encode = [&](const TokenGrid<T>& p, const DlfLevel<T>& level,
                      const std::string& tag) {
      Tensor<T> cls = make_class_token(ctx, p.tokens, level.cls_norm);
      Tensor<T> seq = concat_rows(ctx, {cls, p.tokens});
      seq = add(ctx, seq, level.pos);
      for (std::size_t i = 0; i < level.encoders.size(); ++i)
        seq = level.encoders[i].forward(ctx, seq, tag + ".enc" + std::to_string(i));
      Tensor<T> cls_out = narrow(ctx, seq, 0, 0, 1);
      Tensor<T> toks = narrow(ctx, seq, 0, 1, seq.dim(0) - 1);
      return std::pair<Tensor<T>, Tensor<T>>(cls_out, toks);
    };
    auto [cls_s, toks_s] = encode(p_s, small, "dlf.s");
    auto [cls_l, toks_l] = encode(p_l, large, "dlf.l");

    // Swap: each level's class token queries the other level's tokens.
    Tensor<T> y_s = mca_s.forward(ctx, f_s.forward(ctx, cls_s), toks_l, "dlf.mca_s");
    Tensor<T> y_l = mca_l.forward(ctx, f_l.forward(ctx, cls_l), toks_s, "dlf.mca_l");

    Tensor<T> back_s = g_s.forward(ctx, y_s);  // [1, D_s]
    Tensor<T> back_l = g_l.forward(ctx, y_l);  // [1, D_l]

    auto inject = [&](const Tensor<T>& toks, const Tensor<T>& row,
                      const LinearLayer<T>& proj) {
      Tensor<T> rows = broadcast_rows(ctx, row, toks.dim(0));
      if (cfg.inject == DlfInject::kAdd) return add(ctx, toks, rows);
      return proj.forward(ctx, concat(ctx, {toks, rows}, 1));
    };
    Tensor<T> z_s = inject(toks_s, back_s, inj_s);
    Tensor<T> z_l = inject(toks_l, back_l, inj_l);
    return {TokenGrid<T>(z_s, p_s.h, p_s.w), TokenGrid<T>(z_l, p_l.h, p_l.w)};
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    small.collect(p + ".small", out);
    large.collect(p + ".large", out);
    f_s.collect(p + ".f_s", out);
    f_l.collect(p + ".f_l", out);
    mca_s.collect(p + ".mca_s", out);
    mca_l.collect(p + ".mca_l", out);
    g_s.collect(p + ".g_s", out);
    g_l.collect(p + ".g_l", out);
    if (cfg.inject == DlfInject::kConcatProject) {
      inj_s.collect(p + ".inj_s", out);
      inj_l.collect(p + ".inj_l", out);
    }
  }
};

}  // namespace befunet
