#pragma once

#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include "befunet/nn.hpp"
#include "befunet/ops.hpp"

namespace befunet {

// Multi-head scaled dot-product attention core. q is [Nq, dim], k and v
// are [Nk, dim]; heads operate on dim/heads channel slices and the head
// outputs are concatenated (no output projection here, callers own Wo).
// score_bias, when present, holds additive [Nq, Nk] terms applied before
// softmax: one entry shared across heads, or one entry per head.
template <typename T>
Tensor<T> mha_core(Ctx<T>& ctx, const Tensor<T>& q, const Tensor<T>& k,
                   const Tensor<T>& v, int heads,
                   const std::vector<Tensor<std::type_identity_t<T>>>* score_bias = nullptr,
                   const std::string& probe_tag = "") {
  const int dim = q.dim(1);
  detail::check(k.dim(1) == dim && v.dim(1) == dim, "mha_core: dim mismatch");
  detail::check(k.dim(0) == v.dim(0), "mha_core: key/value count mismatch");
  if (dim % heads != 0)
    throw ConfigError("attention dim " + std::to_string(dim) +
                      " not divisible by heads " + std::to_string(heads));
  const int dh = dim / heads;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Tensor<T>> head_outs;
  head_outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor<T> qh = narrow(ctx, q, 1, h * dh, dh);
    Tensor<T> kh = narrow(ctx, k, 1, h * dh, dh);
    Tensor<T> vh = narrow(ctx, v, 1, h * dh, dh);
    Tensor<T> scores = scale(ctx, matmul(ctx, qh, transpose2d(ctx, kh)), inv_sqrt_dh);
    if (score_bias && !score_bias->empty()) {
      const Tensor<T>& b =
          score_bias->size() == 1 ? (*score_bias)[0]
                                  : (*score_bias)[static_cast<std::size_t>(h)];
      scores = add(ctx, scores, b);
    }
    Tensor<T> probs = softmax_rows(ctx, scores);
    if (ctx.probe) {
      AttnRecord<T> rec;
      rec.tag = probe_tag.empty() ? "attn" : probe_tag;
      rec.rows = probs.dim(0);
      rec.cols = probs.dim(1);
      rec.probs = probs.value();
      ctx.probe->records.push_back(std::move(rec));
    }
    head_outs.push_back(matmul(ctx, probs, vh));
  }
  return heads == 1 ? head_outs[0] : concat(ctx, head_outs, 1);
}

// Standard pre-norm transformer encoder layer with global self-attention:
// x = x + Wo(MHA(LN(x))); x = x + MLP(LN(x)).
template <typename T>
struct EncoderLayer {
  int heads = 1;
  LayerNormLayer<T> norm1, norm2;
  LinearLayer<T> wq, wk, wv, wo;
  Mlp<T> mlp;

  EncoderLayer() = default;
  EncoderLayer(int dim, int heads_, Rng& rng)
      : heads(heads_),
        norm1(dim),
        norm2(dim),
        wq(dim, dim, rng),
        wk(dim, dim, rng),
        wv(dim, dim, rng),
        wo(dim, dim, rng),
        mlp(dim, 4, rng) {}

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x, const std::string& tag) const {
    Tensor<T> n = norm1.forward(ctx, x);
    Tensor<T> attn = mha_core(ctx, wq.forward(ctx, n), wk.forward(ctx, n),
                              wv.forward(ctx, n), heads, nullptr, tag);
    Tensor<T> z = add(ctx, x, wo.forward(ctx, attn));
    return add(ctx, z, mlp.forward(ctx, norm2.forward(ctx, z)));
  }

  void collect(const std::string& p, ParamList<T>& out) const {
    norm1.collect(p + ".norm1", out);
    norm2.collect(p + ".norm2", out);
    wq.collect(p + ".wq", out);
    wk.collect(p + ".wk", out);
    wv.collect(p + ".wv", out);
    wo.collect(p + ".wo", out);
    mlp.collect(p + ".mlp", out);
  }
};

}  // namespace befunet
