#pragma once

#include <string>
#include <utility>
#include <vector>

#include "befunet/ops.hpp"
#include "befunet/tensor.hpp"

namespace befunet {

// Pixel difference convolution: the kernel response is a weighted sum of
// differences between pixel pairs inside the footprint instead of raw
// pixel values. Each pair (i, i') contributes w[i] * (x[i] - x[i']).
// The vanilla variant has an empty pair set and degenerates to ordinary
// convolution.
enum class PdcVariant { kCentral, kAngular, kRadial, kVanilla };

inline const char* pdc_variant_name(PdcVariant v) {
  switch (v) {
    case PdcVariant::kCentral: return "central";
    case PdcVariant::kAngular: return "angular";
    case PdcVariant::kRadial: return "radial";
    case PdcVariant::kVanilla: return "vanilla";
  }
  return "?";
}

struct PdcPairs {
  int k = 3;                                 // footprint side
  std::vector<std::pair<int, int>> pairs;    // (i, i') flattened positions
};

// Pair layouts follow the PiDiNet convention:
//  - central: every off-center position differenced against the center.
//  - angular: the eight ring positions differenced clockwise.
//  - radial: 5x5; outer-ring positions differenced against the radially
//    aligned inner-ring position.
inline PdcPairs pdc_pairs(PdcVariant v) {
  PdcPairs p;
  switch (v) {
    case PdcVariant::kVanilla:
      p.k = 3;
      break;
    case PdcVariant::kCentral: {
      p.k = 3;
      for (int i = 0; i < 9; ++i)
        if (i != 4) p.pairs.emplace_back(i, 4);
      break;
    }
    case PdcVariant::kAngular: {
      p.k = 3;
      const int ring[8] = {0, 1, 2, 5, 8, 7, 6, 3};
      for (int j = 0; j < 8; ++j) p.pairs.emplace_back(ring[j], ring[(j + 1) % 8]);
      break;
    }
    case PdcVariant::kRadial: {
      p.k = 5;
      const int outer[8] = {0, 2, 4, 14, 24, 22, 20, 10};
      const int inner[8] = {6, 7, 8, 13, 18, 17, 16, 11};
      for (int j = 0; j < 8; ++j) p.pairs.emplace_back(outer[j], inner[j]);
      break;
    }
  }
  return p;
}

inline void validate_pairs(const PdcPairs& p) {
  const int k2 = p.k * p.k;
  for (const auto& [a, b] : p.pairs)
    if (a < 0 || a >= k2 || b < 0 || b >= k2)
      throw ConfigError("PDC pair references position outside the " +
                        std::to_string(p.k) + "x" + std::to_string(p.k) + " footprint");
}

// Rewrites pair-difference weights as an equivalent dense kernel:
// eff[p, ...] = sum over pairs (i,i') of w[i, ...] * (delta(p,i) - delta(p,i')).
// Linear in w, so the convolution downstream differentiates through it.
// For an empty pair set the kernel is returned unchanged (vanilla case).
template <typename T>
Tensor<T> pdc_effective_kernel(Ctx<T>& ctx, const Tensor<T>& w, const PdcPairs& p) {
  if (p.pairs.empty()) return w;
  detail::check(w.rank() >= 2 && w.dim(0) == p.k && w.dim(1) == p.k,
                "pdc_effective_kernel: kernel footprint mismatch");
  const std::size_t rest = w.numel() / static_cast<std::size_t>(p.k * p.k);
  Tensor<T> eff = Tensor<T>::zeros(w.shape());
  for (const auto& [i, ip] : p.pairs) {
    const T* src = w.value().data() + static_cast<std::size_t>(i) * rest;
    T* dst_i = eff.value().data() + static_cast<std::size_t>(i) * rest;
    T* dst_ip = eff.value().data() + static_cast<std::size_t>(ip) * rest;
    for (std::size_t r = 0; r < rest; ++r) {
      dst_i[r] += src[r];
      dst_ip[r] -= src[r];
    }
  }
  if (detail::want_grad(ctx, {&w})) {
    eff.mark_tracked();
    Tensor<T> tw = w, te = eff;
    auto pairs = std::make_shared<std::vector<std::pair<int, int>>>(p.pairs);
    ctx.tape->record([tw, te, pairs, rest]() mutable {
      const std::vector<T>& ge = te.grad();
      std::vector<T>& gw = tw.grad();
      for (const auto& [i, ip] : *pairs)
        for (std::size_t r = 0; r < rest; ++r)
          gw[static_cast<std::size_t>(i) * rest + r] +=
              ge[static_cast<std::size_t>(i) * rest + r] -
              ge[static_cast<std::size_t>(ip) * rest + r];
    });
  }
  return eff;
}

template <typename T>
struct PdcKernel {
  Tensor<T> w;  // [k,k,Ci,Co] full or [k,k,C] depthwise
  PdcPairs pairs;
  PdcVariant variant = PdcVariant::kVanilla;
};

// Full-channel PDC convolution, x [H,W,Ci] -> [Ho,Wo,Co]. Padding is
// replicate: border differences against the clamped edge pixel vanish on
// constant regions, so no spurious border edges appear.
template <typename T>
Tensor<T> pdc_forward(Ctx<T>& ctx, const Tensor<T>& x, const PdcKernel<T>& k,
                      int stride = 1, int pad = -1) {
  validate_pairs(k.pairs);
  if (pad < 0) pad = k.pairs.k / 2;
  Tensor<T> eff = pdc_effective_kernel(ctx, k.w, k.pairs);
  const PadMode mode =
      k.pairs.pairs.empty() ? PadMode::kZero : PadMode::kReplicate;
  return conv2d(ctx, x, eff, stride, pad, mode);
}

template <typename T>
Tensor<T> depthwise_pdc(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& w,
                        const Tensor<T>& bias, const PdcPairs& p, int pad = -1) {
  validate_pairs(p);
  if (pad < 0) pad = p.k / 2;
  Tensor<T> eff = pdc_effective_kernel(ctx, w, p);
  const PadMode mode = p.pairs.empty() ? PadMode::kZero : PadMode::kReplicate;
  return depthwise_conv2d(ctx, x, eff, bias, /*stride=*/1, pad, mode);
}

}  // namespace befunet
