#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "befunet/ops.hpp"
#include "befunet/rng.hpp"
#include "befunet/tensor.hpp"

namespace befunet {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> fan_in_uniform(Rng& rng, std::vector<int> shape, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> data(detail::shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::param(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> zero_param(std::vector<int> shape) {
  std::vector<T> data(detail::shape_numel(shape), T(0));
  return Tensor<T>::param(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> const_param(std::vector<int> shape, T v) {
  std::vector<T> data(detail::shape_numel(shape), v);
  return Tensor<T>::param(std::move(shape), std::move(data));
}

template <typename T>
struct LinearLayer {
  Tensor<T> w;
  Tensor<T> b;

  LinearLayer() = default;
  LinearLayer(int din, int dout, Rng& rng, bool bias = true) {
    w = fan_in_uniform<T>(rng, {din, dout}, din);
    if (bias) b = zero_param<T>({dout});
  }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) const {
    return linear(ctx, x, w, b);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".w", w});
    if (b.defined()) out.push_back({prefix + ".b", b});
  }
};

template <typename T>
struct LayerNormLayer {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNormLayer() = default;
  explicit LayerNormLayer(int dim) {
    gamma = const_param<T>({dim}, T(1));
    beta = zero_param<T>({dim});
  }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) const {
    return layer_norm_rows(ctx, x, gamma, beta);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

// Two-layer MLP with GELU, hidden = dim * ratio.
template <typename T>
struct Mlp {
  LinearLayer<T> fc1;
  LinearLayer<T> fc2;

  Mlp() = default;
  Mlp(int dim, int ratio, Rng& rng)
      : fc1(dim, dim * ratio, rng), fc2(dim * ratio, dim, rng) {}

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) const {
    return fc2.forward(ctx, gelu(ctx, fc1.forward(ctx, x)));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

}  // namespace befunet
