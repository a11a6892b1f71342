#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "befunet/data.hpp"
#include "befunet/gradcheck.hpp"
#include "befunet/losses.hpp"
#include "befunet/model.hpp"

namespace befunet {

struct SuiteLine {
  std::string name;
  bool pass = false;
  double max_rel_err = 0;
  std::size_t coords = 0;
};

namespace detail_suite {

inline Tensor<double> rand_param(Rng& rng, std::vector<int> shape, double lo = -1.0,
                                 double hi = 1.0) {
  std::vector<double> v(detail::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::param(std::move(shape), std::move(v));
}

inline Tensor<double> rand_const(Rng& rng, std::vector<int> shape, double lo = -1.0,
                                 double hi = 1.0) {
  std::vector<double> v(detail::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from_data(std::move(shape), std::move(v));
}

template <typename Fwd>
SuiteLine run_one(const std::string& name, Fwd&& fwd,
                  const std::vector<Tensor<double>>& wrt, const GradCheckOptions& opt) {
  const GradCheckReport rep = check_gradients(fwd, wrt, opt);
  return {name, rep.pass, rep.max_rel_err, rep.coords_checked};
}

// Move every parameter to a generic point. Zero-initialized biases leave
// ReLU inputs sitting exactly on the kink (PDC outputs vanish on the flat
// zero patches ReLU produces), where central differences are undefined.
inline void jitter_params(ParamList<double>& params, Rng& rng, double amp = 0.05) {
  for (auto& p : params)
    for (auto& v : p.tensor.value()) v += rng.uniform(-amp, amp);
}

}  // namespace detail_suite

// Per-op finite-difference checks, `trials` random instances per op.
inline std::vector<SuiteLine> gradcheck_ops(const GradCheckOptions& opt,
                                            int trials = 50) {
  using detail_suite::rand_const;
  using detail_suite::rand_param;
  std::vector<SuiteLine> lines;
  struct OpCase {
    std::string name;
    std::function<std::pair<std::function<Tensor<double>(Ctx<double>&)>,
                            std::vector<Tensor<double>>>(Rng&)>
        build;
  };
  std::vector<OpCase> cases;
  cases.push_back({"add_sub_mul_div", [](Rng& rng) {
    auto a = rand_param(rng, {3, 4});
    auto b = rand_param(rng, {3, 4}, 0.5, 2.0);
    auto w = rand_const(rng, {3, 4});
    auto f = [a, b, w](Ctx<double>& ctx) {
      auto y = add(ctx, mul(ctx, a, b), div(ctx, sub(ctx, a, b), b));
      return sum_all(ctx, mul(ctx, y, w));
    };
    return std::make_pair(std::function<Tensor<double>(Ctx<double>&)>(f),
                          std::vector<Tensor<double>>{a, b});
  }});
  cases.push_back({"matmul_linear", [](Rng& rng) {
    auto a = rand_param(rng, {3, 5});
    auto b = rand_param(rng, {5, 2});
    auto bias = rand_param(rng, {2});
    auto w = rand_const(rng, {3, 2});
    auto f = [a, b, bias, w](Ctx<double>& ctx) {
      return sum_all(ctx, mul(ctx, linear(ctx, a, b, bias), w));
    };
    return std::make_pair(std::function<Tensor<double>(Ctx<double>&)>(f),
                          std::vector<Tensor<double>>{a, b, bias});
  }});
  cases.push_back({"activations", [](Rng& rng) {
    auto x = rand_param(rng, {8}, -2.0, 2.0);
    for (auto& v : x.value())
      if (std::abs(v) < 0.05) v += 0.1;
    auto w = rand_const(rng, {8});
    auto f = [x, w](Ctx<double>& ctx) {
      auto y = add(ctx, gelu(ctx, x), add(ctx, relu(ctx, x), sigmoid(ctx, x)));
      return sum_all(ctx, mul(ctx, y, w));
    };
    return std::make_pair(std::function<Tensor<double>(Ctx<double>&)>(f),
                          std::vector<Tensor<double>>{x});
  }});
  cases.push_back({"softmax", [](Rng& rng) {
    auto x = rand_param(rng, {3, 5}, -3.0, 3.0);
    auto w = rand_const(rng, {3, 5});
    auto f = [x, w](Ctx<double>& ctx) {
      return sum_all(ctx, mul(ctx, softmax_rows(ctx, x), w));
    };
    return std::make_pair(std::function<Tensor<double>(Ctx<double>&)>(f),
                          std::vector<Tensor<double>>{x});
  }});
  cases.push_back({"layer_norm", [](Rng& rng) {
    auto x = rand_param(rng, {3, 6}, -2.0, 2.0);
    auto g = rand_param(rng, {6}, 0.5, 1.5);
    auto b = rand_param(rng, {6});
    auto w = rand_const(rng, {3, 6});
    auto f = [x, g, b, w](Ctx<double>& ctx) {
      return sum_all(ctx, mul(ctx, layer_norm_rows(ctx, x, g, b), w));
    };
    return std::make_pair(std::function<Tensor<double>(Ctx<double>&)>(f),
                          std::vector<Tensor<double>>{x, g, b});
  }});
  cases.push_back({"conv2d", [](Rng& rng) {
    auto x = rand_param(rng, {5, 5, 2});
    auto w = rand_param(rng, {3, 3, 2, 3});
    auto b = rand_param(rng, {3});
    auto m = rand_const(rng, {3, 3, 3});
    auto f = [x, w, b, m](Ctx<double>& ctx) {
      return sum_all(ctx, mul(ctx, conv2d(ctx, x, w, b, 2, 1), m));
    };
    return std::make_pair(std::function<Tensor<double>(Ctx<double>&)>(f),
                          std::vector<Tensor<double>>{x, w, b});
  }});
  cases.push_back({"depthwise_conv2d", [](Rng& rng) {
    auto x = rand_param(rng, {5, 5, 3});
    auto w = rand_param(rng, {3, 3, 3});
    auto b = rand_param(rng, {3});
    auto m = rand_const(rng, {5, 5, 3});
    auto f = [x, w, b, m](Ctx<double>& ctx) {
      return sum_all(ctx, mul(ctx, depthwise_conv2d(ctx, x, w, b, 1, 1), m));
    };
    return std::make_pair(std::function<Tensor<double>(Ctx<double>&)>(f),
                          std::vector<Tensor<double>>{x, w, b});
  }});
  cases.push_back({"maxpool_upsample", [](Rng& rng) {
    auto x = rand_param(rng, {4, 4, 2});
    auto m = rand_const(rng, {4, 4, 2});
    auto f = [x, m](Ctx<double>& ctx) {
      auto y = upsample_nearest(ctx, maxpool2d(ctx, x, 2, 2), 2);
      return sum_all(ctx, mul(ctx, y, m));
    };
    return std::make_pair(std::function<Tensor<double>(Ctx<double>&)>(f),
                          std::vector<Tensor<double>>{x});
  }});
  cases.push_back({"concat_gather_narrow", [](Rng& rng) {
    auto a = rand_param(rng, {3, 4});
    auto b = rand_param(rng, {2, 4});
    auto m = rand_const(rng, {3, 4});
    auto f = [a, b, m](Ctx<double>& ctx) {
      auto cat = concat_rows(ctx, {a, b});
      auto picked = gather_rows(ctx, cat, {4, 0, 2});
      auto slice = narrow(ctx, picked, 1, 0, 4);
      return sum_all(ctx, mul(ctx, slice, m));
    };
    return std::make_pair(std::function<Tensor<double>(Ctx<double>&)>(f),
                          std::vector<Tensor<double>>{a, b});
  }});
  cases.push_back({"reductions", [](Rng& rng) {
    auto x = rand_param(rng, {4, 3});
    auto m = rand_const(rng, {1, 3});
    auto f = [x, m](Ctx<double>& ctx) {
      auto mr = mean_rows(ctx, x);
      return add(ctx, sum_all(ctx, mul(ctx, mr, m)), mean_all(ctx, x));
    };
    return std::make_pair(std::function<Tensor<double>(Ctx<double>&)>(f),
                          std::vector<Tensor<double>>{x});
  }});

  Rng seed_rng(opt.seed ^ 0x5eedull);
  for (const auto& c : cases) {
    SuiteLine worst{c.name, true, 0.0, 0};
    for (int t = 0; t < trials; ++t) {
      Rng rng(seed_rng.next_u64());
      auto [f, wrt] = c.build(rng);
      const auto rep = check_gradients(f, wrt, opt);
      worst.coords += rep.coords_checked;
      if (rep.max_rel_err > worst.max_rel_err) worst.max_rel_err = rep.max_rel_err;
      if (!rep.pass) {
        worst.pass = false;
        break;
      }
    }
    lines.push_back(worst);
  }
  return lines;
}

inline std::vector<SuiteLine> gradcheck_edge(const GradCheckOptions& opt) {
  using detail_suite::rand_const;
  using detail_suite::rand_param;
  std::vector<SuiteLine> lines;
  {
    Rng rng(opt.seed ^ 1);
    PdcBlock<double> block(3, PdcVariant::kCentral, rng);
    ParamList<double> bp;
    block.collect("b", bp);
    detail_suite::jitter_params(bp, rng);
    auto x = rand_param(rng, {5, 5, 3});
    auto m = rand_const(rng, {5, 5, 3});
    std::vector<Tensor<double>> wrt = {x, block.dw_w, block.dw_b, block.pw_w,
                                       block.pw_b};
    lines.push_back(detail_suite::run_one(
        "edge.pdc_block",
        [&block, x, m](Ctx<double>& ctx) {
          return sum_all(ctx, mul(ctx, block.forward(ctx, x), m));
        },
        wrt, opt));
  }
  {
    Rng rng(opt.seed ^ 2);
    EdgeEncoder<double> enc(4, 32, 32, rng);
    auto img = rand_param(rng, {32, 32, 3}, 0.0, 1.0);
    GradCheckOptions capped = opt;
    capped.max_coords_per_tensor = 3;
    ParamList<double> params;
    enc.collect("edge", params);
    detail_suite::jitter_params(params, rng);
    std::vector<Tensor<double>> wrt = {img};
    for (const auto& p : params) wrt.push_back(p.tensor);
    Rng mr = rng.fork(3);
    lines.push_back(detail_suite::run_one(
        "edge.encoder",
        [&enc, img, mr](Ctx<double>& ctx) mutable {
          auto outs = enc.forward(ctx, img);
          Rng local = mr;
          Tensor<double> acc;
          for (const auto& o : outs) {
            auto wf = rand_const(local, o.features.tokens.shape());
            auto wm = rand_const(local, o.side_map.shape());
            auto term = add(ctx, sum_all(ctx, mul(ctx, o.features.tokens, wf)),
                            sum_all(ctx, mul(ctx, o.side_map, wm)));
            acc = acc.defined() ? add(ctx, acc, term) : term;
          }
          return acc;
        },
        wrt, capped));
  }
  return lines;
}

inline std::vector<SuiteLine> gradcheck_body(const GradCheckOptions& opt) {
  using detail_suite::rand_const;
  using detail_suite::rand_param;
  std::vector<SuiteLine> lines;
  {
    Rng rng(opt.seed ^ 4);
    SwinBlockPair<double> pair(8, 2, 2, false, rng);
    auto x = rand_param(rng, {16, 8});
    auto m = rand_const(rng, {16, 8});
    ParamList<double> params;
    pair.collect("pair", params);
    detail_suite::jitter_params(params, rng);
    std::vector<Tensor<double>> wrt = {x};
    for (const auto& p : params) wrt.push_back(p.tensor);
    lines.push_back(detail_suite::run_one(
        "body.swin_block_pair",
        [&pair, x, m](Ctx<double>& ctx) {
          TokenGrid<double> g(x, 4, 4);
          return sum_all(ctx, mul(ctx, pair.forward(ctx, g, "gc").tokens, m));
        },
        wrt, opt));
  }
  {
    Rng rng(opt.seed ^ 5);
    BodyEncoder<double> enc(32, 32, 8, 4, 2, {2, 2, 2, 2}, {1, 2, 4, 8}, false, rng);
    auto img = rand_param(rng, {32, 32, 3}, 0.0, 1.0);
    GradCheckOptions capped = opt;
    capped.max_coords_per_tensor = 2;
    ParamList<double> params;
    enc.collect("body", params);
    detail_suite::jitter_params(params, rng);
    std::vector<Tensor<double>> wrt = {img};
    for (const auto& p : params) wrt.push_back(p.tensor);
    Rng mr = rng.fork(3);
    lines.push_back(detail_suite::run_one(
        "body.encoder",
        [&enc, img, mr](Ctx<double>& ctx) mutable {
          auto outs = enc.forward(ctx, img);
          Rng local = mr;
          Tensor<double> acc;
          for (const auto& g : outs) {
            auto w = rand_const(local, g.tokens.shape());
            auto term = sum_all(ctx, mul(ctx, g.tokens, w));
            acc = acc.defined() ? add(ctx, acc, term) : term;
          }
          return acc;
        },
        wrt, capped));
  }
  return lines;
}

inline std::vector<SuiteLine> gradcheck_lcaf(const GradCheckOptions& opt) {
  using detail_suite::rand_const;
  using detail_suite::rand_param;
  std::vector<SuiteLine> lines;
  Rng rng(opt.seed ^ 6);
  LcafConfig lc;
  lc.win_h = lc.win_w = 2;
  lc.heads = 2;
  Lcaf<double> lcaf(8, lc, rng);
  auto xe = rand_param(rng, {16, 8});
  auto xb = rand_param(rng, {16, 8});
  auto m = rand_const(rng, {16, 8});
  ParamList<double> params;
  lcaf.collect("lcaf", params);
  detail_suite::jitter_params(params, rng);
  std::vector<Tensor<double>> wrt = {xe, xb};
  for (const auto& p : params) wrt.push_back(p.tensor);
  lines.push_back(detail_suite::run_one(
      "lcaf.forward",
      [&lcaf, xe, xb, m](Ctx<double>& ctx) {
        TokenGrid<double> ge(xe, 4, 4), gb(xb, 4, 4);
        return sum_all(ctx, mul(ctx, lcaf.forward(ctx, ge, gb).tokens, m));
      },
      wrt, opt));
  return lines;
}

inline std::vector<SuiteLine> gradcheck_dlf(const GradCheckOptions& opt) {
  using detail_suite::rand_const;
  using detail_suite::rand_param;
  std::vector<SuiteLine> lines;
  Rng rng(opt.seed ^ 7);
  DlfConfig dc;
  dc.heads = 2;
  Dlf<double> dlf(16, 4, 4, 8, dc, rng);
  auto ps = rand_param(rng, {16, 4});
  auto pl = rand_param(rng, {4, 8});
  auto ms = rand_const(rng, {16, 4});
  auto ml = rand_const(rng, {4, 8});
  ParamList<double> params;
  dlf.collect("dlf", params);
  detail_suite::jitter_params(params, rng);
  std::vector<Tensor<double>> wrt = {ps, pl};
  for (const auto& p : params) wrt.push_back(p.tensor);
  lines.push_back(detail_suite::run_one(
      "dlf.forward",
      [&dlf, ps, pl, ms, ml](Ctx<double>& ctx) {
        TokenGrid<double> gs(ps, 4, 4), gl(pl, 2, 2);
        auto [zs, zl] = dlf.forward(ctx, gs, gl);
        return add(ctx, sum_all(ctx, mul(ctx, zs.tokens, ms)),
                   sum_all(ctx, mul(ctx, zl.tokens, ml)));
      },
      wrt, opt));
  return lines;
}

inline std::vector<SuiteLine> gradcheck_losses(const GradCheckOptions& opt) {
  using detail_suite::rand_const;
  using detail_suite::rand_param;
  std::vector<SuiteLine> lines;
  {
    Rng rng(opt.seed ^ 8);
    auto x = rand_param(rng, {4, 4, 1}, -2.0, 2.0);
    Tensor<double> target = Tensor<double>::zeros({4, 4, 1});
    for (auto& v : target.value()) {
      const double r = rng.next_double();
      v = r < 0.3 ? 1.0 : (r < 0.45 ? 0.15 : 0.0);  // pos / ignore band / neg
    }
    lines.push_back(detail_suite::run_one(
        "losses.edge_loss",
        [x, target](Ctx<double>& ctx) {
          std::vector<Tensor<double>> maps = {sigmoid(ctx, x)};
          return edge_loss(ctx, maps, target, 1.1, 0.3);
        },
        {x}, opt));
  }
  {
    Rng rng(opt.seed ^ 9);
    auto x = rand_param(rng, {3, 3}, -2.0, 2.0);
    Tensor<double> target = Tensor<double>::zeros({3, 3});
    for (auto& v : target.value()) v = rng.uniform_int(0, 1);
    lines.push_back(detail_suite::run_one(
        "losses.bce_dice",
        [x, target](Ctx<double>& ctx) {
          auto p = sigmoid(ctx, x);
          return add(ctx, bce_loss(ctx, p, target), dice_loss(ctx, p, target));
        },
        {x}, opt));
  }
  {
    Rng rng(opt.seed ^ 10);
    auto logits = rand_param(rng, {4, 4, 3}, -1.5, 1.5);
    Tensor<double> onehot = Tensor<double>::zeros({4, 4, 3});
    for (int p = 0; p < 16; ++p) onehot.value()[p * 3 + rng.uniform_int(0, 2)] = 1.0;
    lines.push_back(detail_suite::run_one(
        "losses.body_loss",
        [logits, onehot](Ctx<double>& ctx) {
          return body_loss(ctx, logits, onehot, 0.6, 0.4);
        },
        {logits}, opt));
  }
  return lines;
}

// End-to-end: full tiny model on a 32x32 synthetic sample, sampled
// parameter coordinates.
inline std::vector<SuiteLine> gradcheck_model(const GradCheckOptions& opt) {
  std::vector<SuiteLine> lines;
  ModelConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.base_dim = 8;
  cfg.window = 2;
  cfg.lca_h = cfg.lca_w = 2;
  cfg.num_classes = 2;
  Rng rng(opt.seed ^ 11);
  Befunet<double> model(cfg, rng);
  const auto samples = generate_synthetic(1, 32, 32, 2, opt.seed ^ 12);
  const Tensor<double> img = image_tensor<double>(samples[0]);
  const Tensor<double> onehot = onehot_tensor<double>(samples[0], 2);
  const Tensor<double> edge_t = edge_target_tensor<double>(samples[0]);
  LossWeights<double> lw;
  GradCheckOptions capped = opt;
  capped.max_coords_per_tensor = 3;
  ParamList<double> params = model.parameters();
  Rng jr = rng.fork(99);
  detail_suite::jitter_params(params, jr);
  std::vector<Tensor<double>> wrt;
  for (const auto& p : params) wrt.push_back(p.tensor);
  lines.push_back(detail_suite::run_one(
      "model.full_tiny_32",
      [&model, img, onehot, edge_t, lw](Ctx<double>& ctx) {
        ModelOutput<double> out = model.forward(ctx, img);
        return total_loss(ctx, out, onehot, edge_t, lw);
      },
      wrt, capped));
  return lines;
}

inline std::vector<SuiteLine> run_gradcheck_suite(const std::string& module,
                                                  const GradCheckOptions& opt,
                                                  int op_trials = 50) {
  std::vector<SuiteLine> lines;
  auto append = [&lines](std::vector<SuiteLine> more) {
    for (auto& l : more) lines.push_back(std::move(l));
  };
  const bool all = module == "all";
  if (all || module == "ops" || module == "tensor-core")
    append(gradcheck_ops(opt, op_trials));
  else if (!all && module != "edge" && module != "edge-encoder" && module != "body" &&
           module != "body-encoder" && module != "lcaf" && module != "lcaf-fusion" &&
           module != "dlf" && module != "dlf-fusion" && module != "losses" &&
           module != "model" && module != "model-assembly")
    throw ConfigError("unknown gradcheck module: " + module);
  if (all || module == "edge" || module == "edge-encoder") append(gradcheck_edge(opt));
  if (all || module == "body" || module == "body-encoder") append(gradcheck_body(opt));
  if (all || module == "lcaf" || module == "lcaf-fusion") append(gradcheck_lcaf(opt));
  if (all || module == "dlf" || module == "dlf-fusion") append(gradcheck_dlf(opt));
  if (all || module == "losses") append(gradcheck_losses(opt));
  if (all || module == "model" || module == "model-assembly")
    append(gradcheck_model(opt));
  return lines;
}

}  // namespace befunet
