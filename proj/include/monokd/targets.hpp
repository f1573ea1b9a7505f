// Ground-truth encoding for the detector: class heatmaps with size-adaptive
// Gaussians plus per-center regression targets in the exact spaces the heads
// predict (so decode(encode(labels)) reproduces the labels).
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "monokd/data_io.hpp"
#include "monokd/detector.hpp"

namespace monokd {

// Largest Gaussian radius such that a box shifted by it still overlaps the
// original at the given IoU; the classic three-case quadratic bound.
inline double gaussian_radius(double height, double width, double min_overlap = 0.7) {
  const double a1 = 1, b1 = height + width;
  const double c1 = width * height * (1 - min_overlap) / (1 + min_overlap);
  const double r1 = (b1 + std::sqrt(std::max(0.0, b1 * b1 - 4 * a1 * c1))) / 2;

  const double a2 = 4, b2 = 2 * (height + width), c2 = (1 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(std::max(0.0, b2 * b2 - 4 * a2 * c2))) / (2 * a2);

  const double a3 = 4 * min_overlap, b3 = -2 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1) * width * height;
  const double r3 = (b3 + std::sqrt(std::max(0.0, b3 * b3 - 4 * a3 * c3))) / (2 * a3);
  return std::min({r1, r2, r3});
}

struct CenterTarget {
  int cls = 0;
  int cu = 0, cv = 0;          // feature cell
  double off2d_u = 0, off2d_v = 0;
  double size2d_w = 0, size2d_h = 0;  // feature cells
  double off3d_u = 0, off3d_v = 0;
  double z = 0;                // meters
  double dims_res[3] = {0, 0, 0};
  int bin = 0;
  double resid = 0;            // alpha minus bin center, wrapped
  double alpha = 0;
};

struct EncodedTargets {
  int stride = 4;
  int n_classes = 3;
  int hf = 0, wf = 0;
  int n_skipped = 0;  // labeled objects whose center fell outside the grid
  std::vector<double> heatmap;  // n_classes * hf * wf
  std::vector<CenterTarget> centers;

  double heat_at(int k, int v, int u) const {
    return heatmap[(static_cast<std::size_t>(k) * hf + v) * wf + u];
  }
};

inline int multibin_assign(double alpha, int n_bins) {
  // bins partition [-pi, pi) uniformly
  const double t = (wrap_angle(alpha) + M_PI) / (2.0 * M_PI) * n_bins;
  return std::min(n_bins - 1, std::max(0, static_cast<int>(t)));
}

inline EncodedTargets encode_targets(const std::vector<ObjectLabel>& labels,
                                     const CameraCalib& calib, int img_w, int img_h,
                                     const ModelConfig& cfg, int stride = 4) {
  if (img_w % stride || img_h % stride)
    throw ConfigInvalid("encode_targets: image size not divisible by stride");
  EncodedTargets t;
  t.stride = stride;
  t.n_classes = cfg.n_classes;
  t.hf = img_h / stride;
  t.wf = img_w / stride;
  t.heatmap.assign(static_cast<std::size_t>(cfg.n_classes) * t.hf * t.wf, 0.0);

  // cell -> index into t.centers, to resolve collisions by keeping the nearest
  std::vector<int> owner(static_cast<std::size_t>(t.hf) * t.wf, -1);

  for (const auto& obj : labels) {
    if (obj.is_dontcare()) continue;
    const int k = class_id(obj.class_name);
    if (k < 0 || k >= cfg.n_classes) continue;

    const double cu2 = (obj.left + obj.right) / 2 / stride;
    const double cv2 = (obj.top + obj.bottom) / 2 / stride;
    const int cu = static_cast<int>(std::floor(cu2));
    const int cv = static_cast<int>(std::floor(cv2));
    if (cu < 0 || cu >= t.wf || cv < 0 || cv >= t.hf) {
      ++t.n_skipped;
      continue;
    }

    // paint the heatmap (max-combined with whatever is already there)
    const double bw = (obj.right - obj.left) / stride;
    const double bh = (obj.bottom - obj.top) / stride;
    const int r = std::max(0, static_cast<int>(gaussian_radius(bh, bw)));
    const double sigma = (2.0 * r + 1.0) / 6.0;
    for (int dv = -r; dv <= r; ++dv)
      for (int du = -r; du <= r; ++du) {
        const int v = cv + dv, u = cu + du;
        if (v < 0 || v >= t.hf || u < 0 || u >= t.wf) continue;
        const double g = std::exp(-(du * du + dv * dv) / (2 * sigma * sigma));
        auto& cell = t.heatmap[(static_cast<std::size_t>(k) * t.hf + v) * t.wf + u];
        cell = std::max(cell, g);
      }

    CenterTarget c;
    c.cls = k;
    c.cu = cu;
    c.cv = cv;
    c.off2d_u = cu2 - cu;
    c.off2d_v = cv2 - cv;
    c.size2d_w = bw;
    c.size2d_h = bh;

    // projected true 3D center (label y is the bottom face)
    const auto pp = project_rect(calib, obj.x, obj.y - obj.h / 2, obj.z);
    c.off3d_u = pp.u / stride - cu;
    c.off3d_v = pp.v / stride - cv;
    c.z = pp.z;

    const auto prior = class_dims_prior(k);
    c.dims_res[0] = std::log(obj.h / prior[0]);
    c.dims_res[1] = std::log(obj.w / prior[1]);
    c.dims_res[2] = std::log(obj.l / prior[2]);

    c.bin = multibin_assign(obj.alpha, cfg.n_bins);
    c.resid = wrap_angle(obj.alpha - multibin_center(c.bin, cfg.n_bins));
    c.alpha = wrap_angle(obj.alpha);

    auto& own = owner[static_cast<std::size_t>(cv) * t.wf + cu];
    if (own < 0) {
      own = static_cast<int>(t.centers.size());
      t.centers.push_back(c);
    } else if (c.z < t.centers[own].z) {
      t.centers[own] = c;  // nearer object wins the shared cell
    }
  }
  return t;
}

// Head maps populated with exact target values at each center cell; the
// inverse of decode up to floating point. Useful for round-trip tests and as
// a perfect-prediction fixture.
inline DetectorModel::HeadOutputs targets_to_heads(const EncodedTargets& t,
                                                   const ModelConfig& cfg) {
  DetectorModel::HeadOutputs ho;
  const int H = t.hf, W = t.wf;
  ho.heatmap = Tensor::from({cfg.n_classes, H, W}, t.heatmap);
  ho.offset2d = Tensor::zeros({2, H, W});
  ho.size2d = Tensor::zeros({2, H, W});
  ho.offset3d = Tensor::zeros({2, H, W});
  ho.depth = Tensor::zeros({2, H, W});
  ho.dims = Tensor::zeros({3, H, W});
  ho.orientation = Tensor::zeros({cfg.orientation_channels(), H, W});
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  const auto put = [&](Tensor& m, int c, const CenterTarget& ct, double val) {
    m.value_mut()[c * hw + static_cast<std::size_t>(ct.cv) * W + ct.cu] = val;
  };
  for (const auto& c : t.centers) {
    put(ho.offset2d, 0, c, c.off2d_u);
    put(ho.offset2d, 1, c, c.off2d_v);
    put(ho.size2d, 0, c, c.size2d_w);
    put(ho.size2d, 1, c, c.size2d_h);
    put(ho.offset3d, 0, c, c.off3d_u);
    put(ho.offset3d, 1, c, c.off3d_v);
    put(ho.depth, 0, c, -std::log(c.z));
    put(ho.dims, 0, c, c.dims_res[0]);
    put(ho.dims, 1, c, c.dims_res[1]);
    put(ho.dims, 2, c, c.dims_res[2]);
    for (int b = 0; b < cfg.n_bins; ++b)
      put(ho.orientation, 2 * b + 1, c, b == c.bin ? -4.0 : 4.0);  // "out" logit
    for (int b = 0; b < cfg.n_bins; ++b)
      if (b == c.bin) put(ho.orientation, 2 * b, c, 4.0);          // "in" logit
    put(ho.orientation, 2 * cfg.n_bins + 2 * c.bin, c, std::sin(c.resid));
    put(ho.orientation, 2 * cfg.n_bins + 2 * c.bin + 1, c, std::cos(c.resid));
  }
  return ho;
}

}  // namespace monokd
