#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "befunet/checkpoint.hpp"
#include "befunet/config.hpp"
#include "befunet/data.hpp"
#include "befunet/losses.hpp"
#include "befunet/metrics.hpp"
#include "befunet/model.hpp"

namespace befunet {

// Decoupled weight decay Adam.
template <typename T>
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.01;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m, v;

  void init(const ParamList<T>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.tensor.numel(), 0.0);
      v.emplace_back(p.tensor.numel(), 0.0);
    }
    t = 0;
  }

  void zero_grad(ParamList<T>& params) {
    for (auto& p : params) p.tensor.zero_grad();
  }

  void step(ParamList<T>& params) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& val = params[i].tensor.value();
      const auto& grad = params[i].tensor.grad();
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double g = static_cast<double>(grad[j]);
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
        const double mh = m[i][j] / bc1;
        const double vh = v[i][j] / bc2;
        double x = static_cast<double>(val[j]);
        x -= lr * weight_decay * x;  // decoupled decay
        x -= lr * mh / (std::sqrt(vh) + eps);
        val[j] = static_cast<T>(x);
      }
    }
  }
};

// ReduceLROnPlateau: halve when the watched loss fails to improve for
// `patience` consecutive epochs.
struct PlateauScheduler {
  double factor = 0.5;
  int patience = 5;
  double min_lr = 1e-6;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  // Returns the (possibly reduced) learning rate.
  double step(double watched, double lr) {
    if (watched < best - 1e-12) {
      best = watched;
      bad_epochs = 0;
    } else if (++bad_epochs > patience) {
      lr = std::max(min_lr, lr * factor);
      bad_epochs = 0;
    }
    return lr;
  }
};

template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits) {
  const int k = logits.dim(logits.rank() - 1);
  const std::size_t pixels = logits.numel() / static_cast<std::size_t>(k);
  std::vector<std::uint8_t> out(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    int best = 0;
    T bv = logits.value()[p * k];
    for (int c = 1; c < k; ++c) {
      const T v = logits.value()[p * k + c];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    out[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// Mean over foreground classes of the binary Dice between predicted and
// ground-truth label maps (empty-vs-empty counts 1).
inline double foreground_dice(const std::vector<std::uint8_t>& pred,
                              const std::vector<std::uint8_t>& gt, int h, int w,
                              int num_classes) {
  double acc = 0;
  for (int c = 1; c < num_classes; ++c)
    acc += dice(class_mask(pred, h, w, c), class_mask(gt, h, w, c));
  return acc / static_cast<double>(num_classes - 1);
}

template <typename T>
std::vector<std::uint8_t> predict_labels(const Befunet<T>& model, const Sample& s) {
  Ctx<T> ctx;
  ModelOutput<T> out = model.forward(ctx, image_tensor<T>(s));
  return argmax_labels(out.logits);
}

struct EpochStat {
  int epoch = 0;
  double train_loss = 0, train_dice = 0;
  double val_loss = 0, val_dice = 0;
};

struct TrainResult {
  std::vector<EpochStat> epochs;
  double best_val_dice = 0;
  std::string best_checkpoint;
  std::string csv;  // "epoch,split,loss,dice" lines
};

namespace detail_train {

inline std::string csv_line(int epoch, const char* split, double loss, double dice_v) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%d,%s,%.9g,%.9g\n", epoch, split, loss, dice_v);
  return buf;
}

}  // namespace detail_train

// Single-threaded training loop. Per batch: one tape, per-sample losses
// averaged, beta for the edge loss computed over the batch targets.
// Writes best.ckpt (epoch-best val Dice) and metrics.csv when out_dir is
// non-empty. Throws on non-finite loss.
template <typename T>
TrainResult train_model(Befunet<T>& model, const std::vector<Sample>& train_set,
                        const std::vector<Sample>& val_set, const RunConfig& rc,
                        std::ostream* echo = nullptr) {
  if (train_set.empty()) throw ConfigError("train: empty training set");
  ParamList<T> params = model.parameters();
  AdamW<T> opt;
  opt.lr = rc.lr;
  opt.weight_decay = rc.weight_decay;
  opt.init(params);
  PlateauScheduler sched;

  LossWeights<T> lw;
  lw.lambda1 = static_cast<T>(model.cfg.lambda1);
  lw.lambda2 = static_cast<T>(model.cfg.lambda2);
  lw.gamma = static_cast<T>(model.cfg.gamma);
  lw.edge_lambda = static_cast<T>(model.cfg.edge_lambda);
  lw.eta = static_cast<T>(model.cfg.eta);
  const bool edge_on = model.cfg.use_edge_encoder && model.cfg.gamma != 0.0;
  const int k = model.cfg.num_classes;

  std::string out_dir = rc.out_dir;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  // Precompute tensors once; samples are immutable during training.
  struct Prepared {
    Tensor<T> image, onehot, edge;
  };
  auto prepare = [&](const std::vector<Sample>& set) {
    std::vector<Prepared> out;
    out.reserve(set.size());
    for (const auto& s : set)
      out.push_back({image_tensor<T>(s), onehot_tensor<T>(s, k),
                     edge_target_tensor<T>(s)});
    return out;
  };
  const auto train_prep = prepare(train_set);
  const auto val_prep = prepare(val_set);

  double val_beta = 0;
  if (edge_on && !val_set.empty()) {
    std::vector<Tensor<T>> vt;
    for (const auto& p : val_prep) vt.push_back(p.edge);
    val_beta = edge_beta<T>(vt, lw.eta);
  }

  Rng rng(rc.seed);
  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= rc.epochs; ++epoch) {
    // Fisher-Yates with the run RNG keeps epochs reproducible.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

    double epoch_loss = 0;
    double epoch_dice = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(rc.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(rc.batch_size));
      T batch_beta = T(0);
      if (edge_on) {
        std::vector<Tensor<T>> bt;
        for (std::size_t i = start; i < end; ++i)
          bt.push_back(train_prep[order[i]].edge);
        batch_beta = edge_beta<T>(bt, lw.eta);
      }
      Tape<T> tape;
      Ctx<T> ctx;
      ctx.tape = &tape;
      Tensor<T> batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        const auto& p = train_prep[order[i]];
        ModelOutput<T> out = model.forward(ctx, p.image);
        Tensor<T> l =
            total_loss_with_beta(ctx, out, p.onehot, p.edge, batch_beta, lw);
        batch_loss = batch_loss.defined() ? add(ctx, batch_loss, l) : l;
        epoch_dice += foreground_dice(argmax_labels(out.logits),
                                      train_set[order[i]].mask, model.cfg.height,
                                      model.cfg.width, k);
        ++seen;
      }
      batch_loss = scale(ctx, batch_loss, T(1) / static_cast<T>(end - start));
      const double lv = static_cast<double>(batch_loss.item());
      if (!std::isfinite(lv))
        throw ContractError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch));
      epoch_loss += lv * static_cast<double>(end - start);
      opt.zero_grad(params);
      tape.backward(batch_loss);
      opt.step(params);
    }
    epoch_loss /= static_cast<double>(seen);
    epoch_dice /= static_cast<double>(seen);

    // Validation pass, no tape.
    double val_loss = 0, val_dice = 0;
    if (!val_set.empty()) {
      Ctx<T> vctx;
      for (std::size_t i = 0; i < val_prep.size(); ++i) {
        const auto& p = val_prep[i];
        ModelOutput<T> out = model.forward(vctx, p.image);
        Tensor<T> l = total_loss_with_beta(vctx, out, p.onehot, p.edge,
                                           static_cast<T>(val_beta), lw);
        val_loss += static_cast<double>(l.item());
        val_dice += foreground_dice(argmax_labels(out.logits), val_set[i].mask,
                                    model.cfg.height, model.cfg.width, k);
      }
      val_loss /= static_cast<double>(val_set.size());
      val_dice /= static_cast<double>(val_set.size());
      if (!std::isfinite(val_loss))
        throw ContractError("training diverged: non-finite validation loss at epoch " +
                            std::to_string(epoch));
    }

    EpochStat st{epoch, epoch_loss, epoch_dice, val_loss, val_dice};
    result.epochs.push_back(st);
    result.csv += detail_train::csv_line(epoch, "train", epoch_loss, epoch_dice);
    result.csv += detail_train::csv_line(epoch, "val", val_loss, val_dice);
    if (echo)
      (*echo) << "epoch " << epoch << " train_loss=" << epoch_loss
              << " train_dice=" << epoch_dice << " val_loss=" << val_loss
              << " val_dice=" << val_dice << " lr=" << opt.lr << "\n";

    const bool first_epoch = epoch == 1;
    if (!val_set.empty() && (first_epoch || val_dice > result.best_val_dice)) {
      result.best_val_dice = val_dice;
      if (!out_dir.empty()) {
        result.best_checkpoint = out_dir + "/best.ckpt";
        save_checkpoint(model.parameters(), result.best_checkpoint);
      }
    }
    opt.lr = sched.step(val_set.empty() ? epoch_loss : val_loss, opt.lr);
  }

  if (!out_dir.empty()) {
    std::ofstream csv(out_dir + "/metrics.csv");
    csv << result.csv;
    save_checkpoint(model.parameters(), out_dir + "/last.ckpt");
  }
  return result;
}

}  // namespace befunet
