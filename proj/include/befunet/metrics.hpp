#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "befunet/common.hpp"

namespace befunet {

struct UndefinedMetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Binary mask on an h x w pixel grid, row-major, values 0/1.
struct BinaryMask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  bool empty_mask() const {
    for (auto b : v)
      if (b) return false;
    return true;
  }
};

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
};

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("confusion: mask sizes differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
    if (p && g) ++c.tp;
    else if (p && !g) ++c.fp;
    else if (!p && g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Ratio conventions: empty-vs-empty counts as perfect agreement (1);
// empty-vs-nonempty scores 0.
inline double dice(const BinaryMask& pred, const BinaryMask& gt) {
  const ConfusionCounts c = confusion(pred, gt);
  if (c.tp + c.fp + c.fn == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

inline double iou(const BinaryMask& pred, const BinaryMask& gt) {
  const ConfusionCounts c = confusion(pred, gt);
  if (c.tp + c.fp + c.fn == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
}

inline double se(const BinaryMask& pred, const BinaryMask& gt) {
  const ConfusionCounts c = confusion(pred, gt);
  if (c.tp + c.fn == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline double sp(const BinaryMask& pred, const BinaryMask& gt) {
  const ConfusionCounts c = confusion(pred, gt);
  if (c.tn + c.fp == 0) return 1.0;
  return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

inline double acc(const BinaryMask& pred, const BinaryMask& gt) {
  const ConfusionCounts c = confusion(pred, gt);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

// Boundary pixels: on the mask and adjacent (8-connectivity) to a
// non-mask pixel or the image border.
inline std::vector<std::pair<int, int>> boundary_points(const BinaryMask& m) {
  std::vector<std::pair<int, int>> pts;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!m.v[static_cast<std::size_t>(y) * m.w + x]) continue;
      bool boundary = false;
      for (int dy = -1; dy <= 1 && !boundary; ++dy)
        for (int dx = -1; dx <= 1 && !boundary; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w)
            boundary = true;  // image border counts as complement
          else if (!m.v[static_cast<std::size_t>(ny) * m.w + nx])
            boundary = true;
        }
      if (boundary) pts.emplace_back(y, x);
    }
  return pts;
}

namespace detail_metrics {

inline std::vector<double> directed_distances(
    const std::vector<std::pair<int, int>>& from,
    const std::vector<std::pair<int, int>>& to) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& [ay, ax] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [by, bx] : to) {
      const double dy = ay - by, dx = ax - bx;
      best = std::min(best, dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

// Nearest-rank percentile of a distance multiset.
inline double percentile(std::vector<double> d, int pct) {
  std::sort(d.begin(), d.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(pct / 100.0 * static_cast<double>(d.size())));
  return d[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace detail_metrics

// Symmetric percentile Hausdorff distance between boundary point sets,
// Euclidean pixel metric. percentile 100 gives the classic Hausdorff
// distance, 95 the HD95 convention used in segmentation tables.
inline double hausdorff(const BinaryMask& pred, const BinaryMask& gt,
                        int percentile = 100) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("hausdorff: mask sizes differ");
  if (percentile != 95 && percentile != 100)
    throw ConfigError("hausdorff: percentile must be 95 or 100");
  if (pred.empty_mask() || gt.empty_mask())
    throw UndefinedMetricError("hausdorff undefined for an empty mask");
  const auto bp = boundary_points(pred);
  const auto bg = boundary_points(gt);
  const double d1 =
      detail_metrics::percentile(detail_metrics::directed_distances(bp, bg), percentile);
  const double d2 =
      detail_metrics::percentile(detail_metrics::directed_distances(bg, bp), percentile);
  return std::max(d1, d2);
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation report.
// ---------------------------------------------------------------------------

struct ClassMetrics {
  int class_id = 0;
  double dice = 0, iou = 0, se = 0, sp = 0, acc = 0;
  double hd95 = std::numeric_limits<double>::quiet_NaN();
  double hd = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
  std::vector<ClassMetrics> per_class;  // foreground classes, ascending id
  double mean_dice = 0, mean_iou = 0;
  double mean_hd95 = std::numeric_limits<double>::quiet_NaN();

  static std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
  }

  std::string text_table() const {
    std::string s = "class     dice      iou       se        sp        acc       hd95      hd\n";
    for (const auto& c : per_class) {
      char line[200];
      std::snprintf(line, sizeof(line), "%-9d %-9s %-9s %-9s %-9s %-9s %-9s %-9s\n",
                    c.class_id, fmt(c.dice).c_str(), fmt(c.iou).c_str(),
                    fmt(c.se).c_str(), fmt(c.sp).c_str(), fmt(c.acc).c_str(),
                    fmt(c.hd95).c_str(), fmt(c.hd).c_str());
      s += line;
    }
    s += "mean dice=" + fmt(mean_dice) + " iou=" + fmt(mean_iou) +
         " hd95=" + fmt(mean_hd95) + "\n";
    return s;
  }

  // Machine-readable "metric,class,value" lines, 6 significant digits.
  std::string csv_lines() const {
    std::string s;
    for (const auto& c : per_class) {
      const std::string cid = std::to_string(c.class_id);
      s += "dice," + cid + "," + fmt(c.dice) + "\n";
      s += "iou," + cid + "," + fmt(c.iou) + "\n";
      s += "se," + cid + "," + fmt(c.se) + "\n";
      s += "sp," + cid + "," + fmt(c.sp) + "\n";
      s += "acc," + cid + "," + fmt(c.acc) + "\n";
      s += "hd95," + cid + "," + fmt(c.hd95) + "\n";
      s += "hd," + cid + "," + fmt(c.hd) + "\n";
    }
    s += "dice,mean," + fmt(mean_dice) + "\n";
    s += "iou,mean," + fmt(mean_iou) + "\n";
    s += "hd95,mean," + fmt(mean_hd95) + "\n";
    return s;
  }
};

inline BinaryMask class_mask(const std::vector<std::uint8_t>& labels, int h, int w,
                             int cls) {
  BinaryMask m;
  m.h = h;
  m.w = w;
  m.v.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) m.v[i] = labels[i] == cls ? 1 : 0;
  return m;
}

// Aggregate per-class metrics over (prediction, ground-truth) label-map
// pairs. Ratio metrics average over samples; Hausdorff averages over the
// samples where it is defined and stays NaN when it never is.
inline EvalReport evaluate_predictions(
    const std::vector<std::vector<std::uint8_t>>& preds,
    const std::vector<std::vector<std::uint8_t>>& gts, int h, int w, int num_classes) {
  if (preds.size() != gts.size() || preds.empty())
    throw ShapeError("evaluate_predictions: need equal nonempty prediction/gt lists");
  EvalReport rep;
  double hd95_acc = 0;
  int hd95_n = 0;
  for (int cls = 1; cls < num_classes; ++cls) {
    ClassMetrics cm;
    cm.class_id = cls;
    double hd95_sum = 0, hd_sum = 0;
    int hd_defined = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const BinaryMask pm = class_mask(preds[i], h, w, cls);
      const BinaryMask gm = class_mask(gts[i], h, w, cls);
      cm.dice += dice(pm, gm);
      cm.iou += iou(pm, gm);
      cm.se += se(pm, gm);
      cm.sp += sp(pm, gm);
      cm.acc += acc(pm, gm);
      try {
        const double h95 = hausdorff(pm, gm, 95);
        const double h100 = hausdorff(pm, gm, 100);
        hd95_sum += h95;
        hd_sum += h100;
        ++hd_defined;
      } catch (const UndefinedMetricError&) {
        // missing value for this sample
      }
    }
    const double n = static_cast<double>(preds.size());
    cm.dice /= n;
    cm.iou /= n;
    cm.se /= n;
    cm.sp /= n;
    cm.acc /= n;
    if (hd_defined > 0) {
      cm.hd95 = hd95_sum / hd_defined;
      cm.hd = hd_sum / hd_defined;
      hd95_acc += cm.hd95;
      ++hd95_n;
    }
    rep.per_class.push_back(cm);
    rep.mean_dice += cm.dice;
    rep.mean_iou += cm.iou;
  }
  const double k = static_cast<double>(rep.per_class.size());
  rep.mean_dice /= k;
  rep.mean_iou /= k;
  if (hd95_n > 0) rep.mean_hd95 = hd95_acc / hd95_n;
  return rep;
}

}  // namespace befunet
