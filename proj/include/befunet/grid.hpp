#pragma once

#include <vector>

#include "befunet/ops.hpp"
#include "befunet/tensor.hpp"

namespace befunet {

// Tokens laid out on an (h, w) grid, row-major: tokens is [h*w, dim].
template <typename T>
struct TokenGrid {
  Tensor<T> tokens;
  int h = 0;
  int w = 0;

  TokenGrid() = default;
  TokenGrid(Tensor<T> t, int h_, int w_) : tokens(std::move(t)), h(h_), w(w_) {
    if (tokens.rank() != 2 || tokens.dim(0) != h * w)
      throw ShapeError("TokenGrid: token count " + std::to_string(tokens.dim(0)) +
                       " != " + std::to_string(h) + "x" + std::to_string(w));
  }

  int count() const { return h * w; }
  int dim() const { return tokens.dim(1); }
};

template <typename T>
TokenGrid<T> map_to_grid(Ctx<T>& ctx, const Tensor<T>& map) {
  // [H,W,C] -> tokens [H*W, C]; same memory order.
  return TokenGrid<T>(reshape(ctx, map, {map.dim(0) * map.dim(1), map.dim(2)}),
                      map.dim(0), map.dim(1));
}

template <typename T>
Tensor<T> grid_to_map(Ctx<T>& ctx, const TokenGrid<T>& g) {
  return reshape(ctx, g.tokens, {g.h, g.w, g.dim()});
}

// Row indices of each (mh x mw) window, windows in row-major order,
// rows within a window in row-major order.
inline std::vector<std::vector<int>> window_indices(int h, int w, int mh, int mw) {
  if (h % mh != 0 || w % mw != 0)
    throw ConfigError("grid " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by window " + std::to_string(mh) + "x" +
                      std::to_string(mw));
  std::vector<std::vector<int>> out;
  for (int wy = 0; wy < h / mh; ++wy)
    for (int wx = 0; wx < w / mw; ++wx) {
      std::vector<int> idx;
      idx.reserve(static_cast<std::size_t>(mh) * mw);
      for (int y = 0; y < mh; ++y)
        for (int x = 0; x < mw; ++x)
          idx.push_back((wy * mh + y) * w + (wx * mw + x));
      out.push_back(std::move(idx));
    }
  return out;
}

// Flattened window-major order -> original order permutation. Entry i of
// the result is the row (in windowed order) holding original token i.
inline std::vector<int> inverse_window_order(const std::vector<std::vector<int>>& wins,
                                             int total) {
  std::vector<int> inv(static_cast<std::size_t>(total));
  int pos = 0;
  for (const auto& win : wins)
    for (int i : win) inv[static_cast<std::size_t>(i)] = pos++;
  return inv;
}

// Cyclic roll: output row (y,x) takes input row ((y+sy) mod h, (x+sx) mod w).
inline std::vector<int> roll_indices(int h, int w, int sy, int sx) {
  std::vector<int> idx(static_cast<std::size_t>(h) * w);
  const int my = ((sy % h) + h) % h;
  const int mx = ((sx % w) + w) % w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      idx[static_cast<std::size_t>(y) * w + x] = ((y + my) % h) * w + ((x + mx) % w);
  return idx;
}

}  // namespace befunet
