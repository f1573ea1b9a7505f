// Training objectives: supervised detection loss on the student heads plus
// the three cross-model transfer losses (affinity of pooled regions, masked
// feature imitation, masked head imitation) and their weighted combination.
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "monokd/detector.hpp"
#include "monokd/geom_depth.hpp"
#include "monokd/targets.hpp"
#include "monokd/tensor.hpp"

namespace monokd {

struct MaskConfig {
  double tau = 0.3;         // threshold carving the Gaussian response mask
  bool weighted_of = false; // Gaussian-weighted box mask instead of binary fill
};

struct ForegroundMasks {
  int stride = 4;
  int hf = 0, wf = 0;
  std::vector<double> m_of;  // box-fill mask (binary, or weighted under the flag)
  std::vector<double> m_or;  // thresholded Gaussian response mask, binary
  int n_pos = 0;             // nonzero pixels of m_of
};

// Both masks live at the head/fused stride. m_of fills each 2D box; m_or
// keeps pixels whose elliptical Gaussian response (sigma from the box
// diagonal, squashed vertically by the box aspect) reaches tau. DontCare
// boxes punch holes in both.
inline ForegroundMasks build_masks(const std::vector<ObjectLabel>& labels, int img_w, int img_h,
                                   int stride = 4, const MaskConfig& mc = {}) {
  if (img_w % stride || img_h % stride)
    throw ConfigInvalid("build_masks: image size not divisible by stride");
  if (!(mc.tau > 0 && mc.tau < 1)) throw ConfigInvalid("build_masks: tau must be in (0,1)");
  ForegroundMasks m;
  m.stride = stride;
  m.hf = img_h / stride;
  m.wf = img_w / stride;
  m.m_of.assign(static_cast<std::size_t>(m.hf) * m.wf, 0.0);
  m.m_or.assign(static_cast<std::size_t>(m.hf) * m.wf, 0.0);

  for (const auto& obj : labels) {
    if (obj.is_dontcare()) continue;
    if (class_id(obj.class_name) < 0) continue;
    const double cx = (obj.left + obj.right) / 2 / stride;
    const double cy = (obj.top + obj.bottom) / 2 / stride;
    const double bw = (obj.right - obj.left) / stride;
    const double bh = (obj.bottom - obj.top) / stride;
    if (bw <= 0 || bh <= 0) continue;
    const double sigma_b = std::sqrt(bw * bw + bh * bh) / 6.0;
    const double aspect = bh > 0 ? (bw / bh) * (bw / bh) : 1.0;

    const int u0 = std::max(0, static_cast<int>(std::floor(obj.left / stride)));
    const int u1 = std::min(m.wf - 1, static_cast<int>(std::ceil(obj.right / stride)) - 1);
    const int v0 = std::max(0, static_cast<int>(std::floor(obj.top / stride)));
    const int v1 = std::min(m.hf - 1, static_cast<int>(std::ceil(obj.bottom / stride)) - 1);
    for (int v = v0; v <= v1; ++v)
      for (int u = u0; u <= u1; ++u) {
        auto& cell = m.m_of[static_cast<std::size_t>(v) * m.wf + u];
        if (mc.weighted_of) {
          const double g = std::exp(-((u - cx) * (u - cx) + (v - cy) * (v - cy) * aspect) /
                                    (2 * sigma_b * sigma_b));
          cell = std::max(cell, g);
        } else {
          cell = 1.0;
        }
      }

    // the Gaussian support can exceed the box; scan its bounding window
    const int ru = static_cast<int>(std::ceil(sigma_b * std::sqrt(-2 * std::log(mc.tau)))) + 1;
    const int rv = static_cast<int>(std::ceil(ru / std::sqrt(std::max(aspect, 1e-12)))) + 1;
    const int ci = static_cast<int>(std::floor(cx)), cj = static_cast<int>(std::floor(cy));
    for (int v = std::max(0, cj - rv); v <= std::min(m.hf - 1, cj + rv); ++v)
      for (int u = std::max(0, ci - ru); u <= std::min(m.wf - 1, ci + ru); ++u) {
        const double g = std::exp(-((u - cx) * (u - cx) + (v - cy) * (v - cy) * aspect) /
                                  (2 * sigma_b * sigma_b));
        if (g >= mc.tau) m.m_or[static_cast<std::size_t>(v) * m.wf + u] = 1.0;
      }
  }

  for (const auto& obj : labels) {
    if (!obj.is_dontcare()) continue;
    const int u0 = std::max(0, static_cast<int>(std::floor(obj.left / stride)));
    const int u1 = std::min(m.wf - 1, static_cast<int>(std::ceil(obj.right / stride)) - 1);
    const int v0 = std::max(0, static_cast<int>(std::floor(obj.top / stride)));
    const int v1 = std::min(m.hf - 1, static_cast<int>(std::ceil(obj.bottom / stride)) - 1);
    for (int v = v0; v <= v1; ++v)
      for (int u = u0; u <= u1; ++u) {
        m.m_of[static_cast<std::size_t>(v) * m.wf + u] = 0.0;
        m.m_or[static_cast<std::size_t>(v) * m.wf + u] = 0.0;
      }
  }

  for (double v : m.m_of)
    if (v > 0) ++m.n_pos;
  return m;
}

// Max-pool a stride-4 mask down to a coarser block resolution.
inline std::vector<double> downsample_mask(const std::vector<double>& mask, int hf, int wf,
                                           int factor) {
  if (factor == 1) return mask;
  const int h2 = hf / factor, w2 = wf / factor;
  std::vector<double> out(static_cast<std::size_t>(h2) * w2, 0.0);
  for (int v = 0; v < h2; ++v)
    for (int u = 0; u < w2; ++u) {
      double m = 0;
      for (int dv = 0; dv < factor; ++dv)
        for (int du = 0; du < factor; ++du)
          m = std::max(m, mask[static_cast<std::size_t>(v * factor + dv) * wf + u * factor + du]);
      out[static_cast<std::size_t>(v) * w2 + u] = m;
    }
  return out;
}

// Pairwise cosine similarities between the R*R average-pooled region vectors
// of a feature block. Zero regions contribute zero rows/columns.
inline Tensor affinity(const Tensor& block, int regions) {
  if (block.shape().size() != 3) throw ShapeMismatch("affinity", shape_str(block.shape()), "CHW");
  if (block.shape()[1] < regions || block.shape()[2] < regions)
    throw ShapeMismatch("affinity", shape_str(block.shape()), "H,W >= regions");
  Tensor pooled = region_pool(block, regions);                       // (C,R,R)
  Tensor flat = reshape(pooled, {block.shape()[0], regions * regions});
  Tensor unit = l2_normalize(flat, 0);                               // columns to unit norm
  return matmul(unit, unit, true, false);                            // (K,K)
}

// The three transfer losses consume the last three backbone blocks (strides
// 4, 8, 16). Low-level block 1 is excluded: its content differs too much
// between input modalities to be worth matching.
namespace distdetail {

inline std::array<std::pair<Tensor, Tensor>, 3> paired_blocks(const DetectorModel::Features& s,
                                                              const DetectorModel::Features& t,
                                                              const FusionModule* fusion) {
  std::array<std::pair<Tensor, Tensor>, 3> out;
  for (int i = 0; i < 3; ++i) {
    Tensor tb = t.blocks[i + 1].detach();
    Tensor sb = s.blocks[i + 1];
    if (sb.shape() != tb.shape())
      throw ShapeMismatch("distill blocks", shape_str(tb.shape()), shape_str(sb.shape()));
    if (fusion) sb = fusion->fuse(i + 2, sb, tb);
    out[i] = {sb, tb};
  }
  return out;
}

}  // namespace distdetail

inline Tensor loss_sf(const DetectorModel::Features& student, const DetectorModel::Features& teacher,
                      const FusionModule* fusion, int regions = 8) {
  const auto pairs = distdetail::paired_blocks(student, teacher, fusion);
  Tensor total = Tensor::scalar(0.0);
  for (const auto& [sb, tb] : pairs) {
    const int r = std::min({regions, sb.shape()[1], sb.shape()[2]});
    Tensor diff = abs(sub(affinity(tb, r), affinity(sb, r)));
    total = add(total, scale(sum(diff), 1.0 / (static_cast<double>(r) * r * r * r)));
  }
  return scale(total, 1.0 / 3.0);
}

inline Tensor loss_of(const DetectorModel::Features& student, const DetectorModel::Features& teacher,
                      const FusionModule* fusion, const ForegroundMasks& masks) {
  const auto pairs = distdetail::paired_blocks(student, teacher, fusion);
  Tensor total = Tensor::scalar(0.0);
  for (int i = 0; i < 3; ++i) {
    const auto& [sb, tb] = pairs[i];
    const int factor = masks.hf / sb.shape()[1];
    if (factor * sb.shape()[1] != masks.hf || factor * sb.shape()[2] != masks.wf)
      throw ShapeMismatch("loss_of mask", shape_str(sb.shape()), "mask stride multiple");
    auto mk = downsample_mask(masks.m_of, masks.hf, masks.wf, factor);
    int n_pos = 0;
    for (double v : mk)
      if (v > 0) ++n_pos;
    if (n_pos == 0) continue;
    Tensor mask = Tensor::from({1, sb.shape()[1], sb.shape()[2]}, mk);
    Tensor sq = square(sub(sb, tb));
    total = add(total, scale(sum(mul_spatial(sq, mask)), 1.0 / n_pos));
  }
  return scale(total, 1.0 / 3.0);
}

inline Tensor loss_or(const DetectorModel::HeadOutputs& student,
                      const DetectorModel::HeadOutputs& teacher, const ForegroundMasks& masks) {
  const auto sh = student.seven();
  const auto th = teacher.seven();
  const int H = sh[0]->shape()[1], W = sh[0]->shape()[2];
  if (H != masks.hf || W != masks.wf)
    throw ShapeMismatch("loss_or", shape_str(sh[0]->shape()), "mask resolution");
  int n_or = 0;
  for (double v : masks.m_or)
    if (v > 0) ++n_or;
  if (n_or == 0) return Tensor::scalar(0.0);
  Tensor mask = Tensor::from({1, H, W}, masks.m_or);
  Tensor total = Tensor::scalar(0.0);
  for (int i = 0; i < 7; ++i) {
    if (sh[i]->shape() != th[i]->shape())
      throw ShapeMismatch("loss_or head", shape_str(th[i]->shape()), shape_str(sh[i]->shape()));
    Tensor diff = abs(sub(*sh[i], th[i]->detach()));
    const double denom = static_cast<double>(sh[i]->shape()[0]) * n_or;
    total = add(total, scale(sum(mul_spatial(diff, mask)), 1.0 / denom));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Supervised loss on the student heads.
// ---------------------------------------------------------------------------

struct SrcLoss {
  Tensor total;
  double focal = 0, offset2d = 0, size2d = 0, offset3d = 0, depth = 0, dims = 0, orientation = 0;
};

namespace distdetail {

// constant (non-trainable) map builders at head resolution
inline Tensor const_map(int c, int h, int w) { return Tensor::zeros({c, h, w}); }

inline void put(Tensor& t, int c, int v, int u, double val) {
  const auto& s = t.shape();
  t.value_mut()[(static_cast<std::size_t>(c) * s[1] + v) * s[2] + u] = val;
}

}  // namespace distdetail

inline SrcLoss loss_src(const DetectorModel::HeadOutputs& heads, const EncodedTargets& tgt,
                        const ModelConfig& cfg) {
  using distdetail::const_map;
  using distdetail::put;
  const int K = cfg.n_classes, B = cfg.n_bins;
  const int H = tgt.hf, W = tgt.wf;
  if (heads.heatmap.shape() != Shape{K, H, W})
    throw ShapeMismatch("loss_src", shape_str(heads.heatmap.shape()), shape_str({K, H, W}));
  const double n_ctr = std::max<std::size_t>(1, tgt.centers.size());
  const double eps = 1e-12;

  // penalty-reduced focal: at annotated centers -(1-p)^2 log p, elsewhere
  // -(1-t)^4 p^2 log(1-p), normalized by the center count
  Tensor pos_mask = const_map(K, H, W);
  Tensor neg_wt = Tensor::from({K, H, W}, tgt.heatmap);
  {
    auto& nw = neg_wt.value_mut();
    for (auto& v : nw) v = std::pow(1.0 - v, 4.0);
    for (const auto& c : tgt.centers) {
      put(pos_mask, c.cls, c.cv, c.cu, 1.0);
      put(neg_wt, c.cls, c.cv, c.cu, 0.0);
    }
  }
  Tensor p = heads.heatmap;
  Tensor one_minus_p = add_scalar(neg(p), 1.0);
  Tensor pos_term = mul(pos_mask, mul(square(one_minus_p), log(add_scalar(p, eps))));
  Tensor neg_term = mul(neg_wt, mul(square(p), log(add_scalar(one_minus_p, eps))));
  Tensor focal = scale(sum(add(pos_term, neg_term)), -1.0 / n_ctr);

  // L1 regression at centers; channels summed, centers averaged
  Tensor ctr_mask = const_map(1, H, W);
  Tensor t_off2d = const_map(2, H, W), t_size2d = const_map(2, H, W);
  Tensor t_off3d = const_map(2, H, W), t_dims = const_map(3, H, W);
  Tensor t_z = const_map(1, H, W);
  for (const auto& c : tgt.centers) {
    put(ctr_mask, 0, c.cv, c.cu, 1.0);
    put(t_off2d, 0, c.cv, c.cu, c.off2d_u);
    put(t_off2d, 1, c.cv, c.cu, c.off2d_v);
    put(t_size2d, 0, c.cv, c.cu, c.size2d_w);
    put(t_size2d, 1, c.cv, c.cu, c.size2d_h);
    put(t_off3d, 0, c.cv, c.cu, c.off3d_u);
    put(t_off3d, 1, c.cv, c.cu, c.off3d_v);
    put(t_dims, 0, c.cv, c.cu, c.dims_res[0]);
    put(t_dims, 1, c.cv, c.cu, c.dims_res[1]);
    put(t_dims, 2, c.cv, c.cu, c.dims_res[2]);
    put(t_z, 0, c.cv, c.cu, c.z);
  }
  const auto center_l1 = [&](const Tensor& pred, const Tensor& target) {
    return scale(sum(mul_spatial(abs(sub(pred, target)), ctr_mask)), 1.0 / n_ctr);
  };
  Tensor l_off2d = center_l1(heads.offset2d, t_off2d);
  Tensor l_size2d = center_l1(heads.size2d, t_size2d);
  Tensor l_off3d = center_l1(heads.offset3d, t_off3d);
  Tensor l_dims = center_l1(heads.dims, t_dims);

  // depth with predicted aleatoric scale: sqrt(2) e^{-s} |z - z*| + s
  Tensor d_raw = slice_channels(heads.depth, 0, 1);
  Tensor s_log = slice_channels(heads.depth, 1, 2);
  Tensor z_pred = exp(neg(d_raw));
  Tensor depth_pp = add(mul(scale(exp(neg(s_log)), std::sqrt(2.0)), abs(sub(z_pred, t_z))), s_log);
  Tensor l_depth = scale(sum(mul(depth_pp, ctr_mask)), 1.0 / n_ctr);

  // MultiBin: per-bin two-way cross entropy plus sin/cos residual L1 on the
  // assigned bin
  Tensor l_orient = Tensor::scalar(0.0);
  for (int b = 0; b < B; ++b) {
    Tensor w_in = const_map(1, H, W), w_out = const_map(1, H, W);
    Tensor t_sin = const_map(1, H, W), t_cos = const_map(1, H, W);
    bool any_in = false;
    for (const auto& c : tgt.centers) {
      if (c.bin == b) {
        put(w_in, 0, c.cv, c.cu, 1.0);
        put(t_sin, 0, c.cv, c.cu, std::sin(c.resid));
        put(t_cos, 0, c.cv, c.cu, std::cos(c.resid));
        any_in = true;
      } else {
        put(w_out, 0, c.cv, c.cu, 1.0);
      }
    }
    Tensor in_l = slice_channels(heads.orientation, 2 * b, 2 * b + 1);
    Tensor out_l = slice_channels(heads.orientation, 2 * b + 1, 2 * b + 2);
    Tensor lse = log(add(exp(in_l), exp(out_l)));
    Tensor ce = sub(sum(mul(lse, ctr_mask)), add(sum(mul(in_l, w_in)), sum(mul(out_l, w_out))));
    l_orient = add(l_orient, ce);
    if (any_in) {
      Tensor rs = slice_channels(heads.orientation, 2 * B + 2 * b, 2 * B + 2 * b + 1);
      Tensor rc = slice_channels(heads.orientation, 2 * B + 2 * b + 1, 2 * B + 2 * b + 2);
      Tensor res = add(sum(mul(abs(sub(rs, t_sin)), w_in)), sum(mul(abs(sub(rc, t_cos)), w_in)));
      l_orient = add(l_orient, res);
    }
  }
  l_orient = scale(l_orient, 1.0 / n_ctr);

  SrcLoss out;
  out.focal = focal.item();
  out.offset2d = l_off2d.item();
  out.size2d = l_size2d.item();
  out.offset3d = l_off3d.item();
  out.depth = l_depth.item();
  out.dims = l_dims.item();
  out.orientation = l_orient.item();
  out.total = add(add(add(focal, l_off2d), add(l_size2d, l_off3d)),
                  add(add(l_depth, l_dims), l_orient));
  return out;
}

// L1 between the dense side-branch depth (stride-4 map, same exp(-x)
// parameterization as the main head) and the densified ground truth sampled
// at cell centers.
inline Tensor auxiliary_depth_loss(const Tensor& aux_raw, const DepthMap& dense, int stride = 4) {
  if (aux_raw.shape().size() != 3 || aux_raw.shape()[0] != 1)
    throw ShapeMismatch("aux depth", shape_str(aux_raw.shape()), "(1,H,W)");
  const int H = aux_raw.shape()[1], W = aux_raw.shape()[2];
  if (H * stride != dense.height || W * stride != dense.width)
    throw ShapeMismatch("aux depth", "depth map size", "stride * head size");
  std::vector<double> gt(static_cast<std::size_t>(H) * W, 0.0);
  std::vector<double> msk(static_cast<std::size_t>(H) * W, 0.0);
  int n_valid = 0;
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      const std::size_t src = dense.idx(v * stride + stride / 2, u * stride + stride / 2);
      if (!dense.valid[src]) continue;
      gt[static_cast<std::size_t>(v) * W + u] = dense.depth[src];
      msk[static_cast<std::size_t>(v) * W + u] = 1.0;
      ++n_valid;
    }
  if (n_valid == 0) throw EmptyInput("auxiliary_depth_loss: no valid ground-truth cells");
  Tensor pred = exp(neg(aux_raw));
  Tensor diff = abs(sub(pred, Tensor::from({1, H, W}, gt)));
  return scale(sum(mul(diff, Tensor::from({1, H, W}, msk))), 1.0 / n_valid);
}

// ---------------------------------------------------------------------------
// Combination.
// ---------------------------------------------------------------------------

struct LossWeights {
  double l1 = 1.0, l2 = 1.0, l3 = 1.0;  // scene-feature, object-feature, object-response
};

struct LossReport {
  Tensor total;
  double l_src = 0, l_sf = 0, l_of = 0, l_or = 0, total_value = 0;
  SrcLoss src;
};

inline LossReport total_loss(const SrcLoss& src, const Tensor& sf, const Tensor& of,
                             const Tensor& orr, const LossWeights& w) {
  for (double v : {src.total.item(), sf.item(), of.item(), orr.item(), w.l1, w.l2, w.l3})
    if (!std::isfinite(v)) throw NonFinite("total_loss term");
  LossReport r;
  r.src = src;
  r.l_src = src.total.item();
  r.l_sf = sf.item();
  r.l_of = of.item();
  r.l_or = orr.item();
  r.total = add(add(add(src.total, scale(sf, w.l1)), scale(of, w.l2)), scale(orr, w.l3));
  r.total_value = r.total.item();
  return r;
}

}  // namespace monokd
