#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "befunet/rng.hpp"
#include "befunet/tensor.hpp"

namespace befunet {

// Central finite-difference gradient verification. The numeric side uses
// forward evaluations only, so it is independent of every backward path
// it checks. Comparison follows standard gradcheck practice:
// |analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|).
struct GradCheckOptions {
  double eps = 1e-5;
  double rtol = 1e-4;
  double atol = 1e-7;
  int max_coords_per_tensor = 0;  // 0 = check every coordinate
  std::uint64_t seed = 17;        // coordinate sampling when capped
};

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "tensor#k[coord]: analytic=.. numeric=.."
};

// forward: repeatedly callable Ctx<double>& -> scalar Tensor<double>.
// wrt: tracked tensors (normally parameters) whose gradients to verify.
template <typename Fwd>
GradCheckReport check_gradients(Fwd&& forward, const std::vector<Tensor<double>>& wrt,
                                const GradCheckOptions& opt = {}) {
  for (const auto& t : wrt)
    if (!t.tracked())
      throw ContractError("check_gradients: all wrt tensors must be tracked");
  for (auto t : wrt) t.zero_grad();

  Tape<double> tape;
  Ctx<double> ctx;
  ctx.tape = &tape;
  Tensor<double> loss = forward(ctx);
  tape.backward(loss);

  GradCheckReport rep;
  Rng rng(opt.seed);
  Ctx<double> plain;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor<double> t = wrt[ti];
    const std::size_t n = t.numel();
    std::vector<std::size_t> coords;
    if (opt.max_coords_per_tensor > 0 &&
        n > static_cast<std::size_t>(opt.max_coords_per_tensor)) {
      for (int i = 0; i < opt.max_coords_per_tensor; ++i)
        coords.push_back(static_cast<std::size_t>(rng.next_u64() % n));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    } else {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    }
    for (std::size_t c : coords) {
      const double orig = t.value()[c];
      t.value()[c] = orig + opt.eps;
      const double lp = forward(plain).item();
      t.value()[c] = orig - opt.eps;
      const double lm = forward(plain).item();
      t.value()[c] = orig;
      const double numeric = (lp - lm) / (2.0 * opt.eps);
      const double analytic = t.grad()[c];
      const double abs_err = std::abs(analytic - numeric);
      const double mag = std::max(std::abs(analytic), std::abs(numeric));
      const double rel = abs_err <= opt.atol ? 0.0 : abs_err / mag;
      ++rep.coords_checked;
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "tensor#" + std::to_string(ti) + "[" + std::to_string(c) +
                    "]: analytic=" + std::to_string(analytic) +
                    " numeric=" + std::to_string(numeric);
      }
      if (abs_err > opt.atol + opt.rtol * mag) rep.pass = false;
    }
  }
  return rep;
}

}  // namespace befunet
