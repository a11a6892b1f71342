#pragma once

#include <vector>

#include "befunet/model.hpp"
#include "befunet/ops.hpp"

namespace befunet {

// Loss conventions: predictions are clamped to [1e-7, 1-1e-7] before any
// log; every loss is negated where needed so the minimum is 0; BCE and
// Dice are means over pixels (resolution-independent weighting), the edge
// loss is a bare sum over pixels and maps.
inline constexpr double kPredClamp = 1e-7;
inline constexpr double kDiceEps = 1e-6;

template <typename T>
struct LossWeights {
  T lambda1 = T(0.6);
  T lambda2 = T(0.4);
  T gamma = T(0.2);
  T edge_lambda = T(1.1);  // scales the negative-class weight alpha
  T eta = T(0.3);          // consensus threshold for the ignore band
};

// Fraction of pixels counted as negatives (consensus below eta) across a
// batch of edge targets; beta in the annotator-robust loss.
template <typename T>
T edge_beta(const std::vector<Tensor<T>>& targets, T eta) {
  std::size_t neg = 0, total = 0;
  for (const auto& t : targets) {
    for (const T v : t.value())
      if (v < eta) ++neg;
    total += t.numel();
  }
  if (total == 0) throw ContractError("edge_beta: no target pixels");
  return static_cast<T>(neg) / static_cast<T>(total);
}

// Annotator-robust edge loss over one sample's side maps with an explicit
// batch-level beta. Per pixel i of map j with target value t:
//   t == 0      : alpha * log(1 - y),  alpha = lambda * (1 - beta)
//   0 < t < eta : ignored
//   t >= eta    : beta * log(y)
// summed over pixels and maps, negated so perfect predictions give 0.
template <typename T>
Tensor<T> edge_loss_with_beta(Ctx<T>& ctx, const std::vector<Tensor<T>>& side_maps,
                              const Tensor<T>& target, T beta, T lambda, T eta) {
  detail::check(!side_maps.empty(), "edge_loss: no side maps");
  const T alpha = lambda * (T(1) - beta);
  Tensor<T> neg_w = Tensor<T>::zeros(target.shape());
  Tensor<T> pos_w = Tensor<T>::zeros(target.shape());
  for (std::size_t i = 0; i < target.numel(); ++i) {
    const T t = target.value()[i];
    if (t == T(0))
      neg_w.value()[i] = alpha;
    else if (t >= eta)
      pos_w.value()[i] = beta;
  }
  Tensor<T> total;
  for (const auto& m : side_maps) {
    detail::check(m.shape() == target.shape(),
                  "edge_loss: map " + detail::shape_str(m.shape()) +
                      " vs target " + detail::shape_str(target.shape()));
    Tensor<T> y = clamp(ctx, m, T(kPredClamp), T(1) - T(kPredClamp));
    Tensor<T> one_minus = add_scalar(ctx, neg(ctx, y), T(1));
    Tensor<T> term = add(ctx, mul(ctx, neg_w, log_elem(ctx, one_minus)),
                         mul(ctx, pos_w, log_elem(ctx, y)));
    Tensor<T> s = sum_all(ctx, term);
    total = total.defined() ? add(ctx, total, s) : s;
  }
  return neg(ctx, total);
}

// Single-sample form: beta computed from this target alone.
template <typename T>
Tensor<T> edge_loss(Ctx<T>& ctx, const std::vector<Tensor<T>>& side_maps,
                    const Tensor<T>& target, T lambda, T eta) {
  const T beta = edge_beta<T>({target}, eta);
  return edge_loss_with_beta(ctx, side_maps, target, beta, lambda, eta);
}

// Mean over pixels of -[(1-t) log(1-y) + t log(y)].
template <typename T>
Tensor<T> bce_loss(Ctx<T>& ctx, const Tensor<T>& pred, const Tensor<T>& target) {
  detail::check(pred.shape() == target.shape(), "bce_loss: shape mismatch");
  Tensor<T> y = clamp(ctx, pred, T(kPredClamp), T(1) - T(kPredClamp));
  Tensor<T> one_minus_y = add_scalar(ctx, neg(ctx, y), T(1));
  Tensor<T> one_minus_t = add_scalar(ctx, neg(ctx, target), T(1));
  Tensor<T> ll = add(ctx, mul(ctx, one_minus_t, log_elem(ctx, one_minus_y)),
                     mul(ctx, target, log_elem(ctx, y)));
  return neg(ctx, mean_all(ctx, ll));
}

// 1 - (2*sum(y*t) + eps) / (sum(y) + sum(t) + eps).
template <typename T>
Tensor<T> dice_loss(Ctx<T>& ctx, const Tensor<T>& pred, const Tensor<T>& target) {
  detail::check(pred.shape() == target.shape(), "dice_loss: shape mismatch");
  Tensor<T> inter = sum_all(ctx, mul(ctx, pred, target));
  Tensor<T> denom = add(ctx, sum_all(ctx, pred), sum_all(ctx, target));
  Tensor<T> num = add_scalar(ctx, scale(ctx, inter, T(2)), T(kDiceEps));
  Tensor<T> ratio = div(ctx, num, add_scalar(ctx, denom, T(kDiceEps)));
  return add_scalar(ctx, neg(ctx, ratio), T(1));
}

// Multi-class body loss on [H,W,K] logits against a one-hot [H,W,K]
// target: softmax cross-entropy plus per-class one-vs-rest Dice averaged
// over the K classes, combined as lambda1 * CE + lambda2 * Dice.
template <typename T>
Tensor<T> body_loss(Ctx<T>& ctx, const Tensor<T>& logits, const Tensor<T>& onehot,
                    T lambda1, T lambda2) {
  detail::check(logits.shape() == onehot.shape(), "body_loss: shape mismatch");
  const int k = logits.dim(logits.rank() - 1);
  const std::size_t pixels = logits.numel() / static_cast<std::size_t>(k);
  Tensor<T> probs = softmax_rows(ctx, logits);
  Tensor<T> lp = log_elem(ctx, clamp(ctx, probs, T(kPredClamp), T(1)));
  Tensor<T> ce = scale(ctx, sum_all(ctx, mul(ctx, onehot, lp)),
                       T(-1) / static_cast<T>(pixels));
  Tensor<T> flat_p = reshape(ctx, probs, {static_cast<int>(pixels), k});
  Tensor<T> flat_t = reshape(ctx, onehot, {static_cast<int>(pixels), k});
  Tensor<T> dice_sum;
  for (int c = 0; c < k; ++c) {
    Tensor<T> d = dice_loss(ctx, narrow(ctx, flat_p, 1, c, 1),
                            narrow(ctx, flat_t, 1, c, 1));
    dice_sum = dice_sum.defined() ? add(ctx, dice_sum, d) : d;
  }
  Tensor<T> dice_avg = scale(ctx, dice_sum, T(1) / static_cast<T>(k));
  return add(ctx, scale(ctx, ce, lambda1), scale(ctx, dice_avg, lambda2));
}

// L = L_body + gamma * L_edge. The edge term is dropped when the model
// has no side maps (edge branch off) or gamma is zero.
template <typename T>
Tensor<T> total_loss_with_beta(Ctx<T>& ctx, const ModelOutput<T>& out,
                               const Tensor<T>& onehot, const Tensor<T>& edge_target,
                               T beta, const LossWeights<T>& w) {
  Tensor<T> loss = body_loss(ctx, out.logits, onehot, w.lambda1, w.lambda2);
  if (!out.side_maps.empty() && w.gamma != T(0)) {
    Tensor<T> el = edge_loss_with_beta(ctx, out.side_maps, edge_target, beta,
                                       w.edge_lambda, w.eta);
    loss = add(ctx, loss, scale(ctx, el, w.gamma));
  }
  return loss;
}

template <typename T>
Tensor<T> total_loss(Ctx<T>& ctx, const ModelOutput<T>& out, const Tensor<T>& onehot,
                     const Tensor<T>& edge_target, const LossWeights<T>& w) {
  T beta = T(0);
  if (!out.side_maps.empty() && w.gamma != T(0))
    beta = edge_beta<T>({edge_target}, w.eta);
  return total_loss_with_beta(ctx, out, onehot, edge_target, beta, w);
}

}  // namespace befunet
