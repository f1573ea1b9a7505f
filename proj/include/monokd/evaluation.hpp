#pragma once

// KITTI-protocol metrics: rotated-rectangle IoU in the ground plane (and its
// 3D extension), AP sampled at 40 recall positions per class and difficulty,
// orientation similarity, plus two analysis tools: cross-model recombination
// of detection components and a least-squares fit of depth error against
// ground-truth depth.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "monokd/common.hpp"
#include "monokd/data_io.hpp"
#include "monokd/dataset.hpp"
#include "monokd/detector.hpp"

namespace monokd {

// y is the box bottom (label convention, camera y points down).
struct Box3D {
  double x = 0, y = 0, z = 0;
  double h = 0, w = 0, l = 0;
  double ry = 0;
};

inline Box3D box_of(const ObjectLabel& o) { return {o.x, o.y, o.z, o.h, o.w, o.l, o.ry}; }
inline Box3D box_of(const Detection& d) { return {d.x, d.y + d.h / 2, d.z, d.h, d.w, d.l, d.ry}; }

namespace evdetail {

constexpr double kAreaEps = 1e-12;

using Pt = std::array<double, 2>;  // (x, z) in the ground plane
using Poly = std::vector<Pt>;

// Same local-corner order as corners3d, so IoU and rendering agree on what a
// box covers.
inline Poly bev_corners(const Box3D& b) {
  const double c = std::cos(b.ry), s = std::sin(b.ry);
  const double xs[4] = {b.l / 2, b.l / 2, -b.l / 2, -b.l / 2};
  const double zs[4] = {b.w / 2, -b.w / 2, -b.w / 2, b.w / 2};
  Poly p(4);
  for (int i = 0; i < 4; ++i) p[i] = {c * xs[i] + s * zs[i] + b.x, -s * xs[i] + c * zs[i] + b.z};
  return p;
}

inline double signed_area(const Poly& p) {
  double a = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u[0] * v[1] - v[0] * u[1];
  }
  return a / 2;
}

inline void make_ccw(Poly& p) {
  if (signed_area(p) < 0) std::reverse(p.begin(), p.end());
}

// Clip subject against the half-plane left of a->b (clip polygon is CCW).
inline Poly clip_edge(const Poly& subj, const Pt& a, const Pt& b) {
  Poly out;
  const auto side = [&](const Pt& p) {
    return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
  };
  const std::size_t n = subj.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Pt& cur = subj[i];
    const Pt& nxt = subj[(i + 1) % n];
    const double sc = side(cur), sn = side(nxt);
    if (sc >= -kAreaEps) out.push_back(cur);
    if ((sc > kAreaEps && sn < -kAreaEps) || (sc < -kAreaEps && sn > kAreaEps)) {
      const double t = sc / (sc - sn);
      out.push_back({cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])});
    }
  }
  return out;
}

inline double convex_intersection_area(Poly a, Poly b) {
  make_ccw(a);
  make_ccw(b);
  Poly clipped = a;
  for (std::size_t i = 0; i < b.size() && !clipped.empty(); ++i)
    clipped = clip_edge(clipped, b[i], b[(i + 1) % b.size()]);
  if (clipped.size() < 3) return 0.0;
  const double area = std::abs(signed_area(clipped));
  return area < kAreaEps ? 0.0 : area;
}

inline double rect_iou(double l1, double t1, double r1, double b1, double l2, double t2, double r2,
                       double b2) {
  const double iw = std::min(r1, r2) - std::max(l1, l2);
  const double ih = std::min(b1, b2) - std::max(t1, t2);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = (r1 - l1) * (b1 - t1) + (r2 - l2) * (b2 - t2) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Fraction of the detection box covered, used for DontCare exemption.
inline double cover_fraction(double l1, double t1, double r1, double b1, double l2, double t2,
                             double r2, double b2) {
  const double iw = std::min(r1, r2) - std::max(l1, l2);
  const double ih = std::min(b1, b2) - std::max(t1, t2);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double area = (r1 - l1) * (b1 - t1);
  return area > 0 ? iw * ih / area : 0.0;
}

}  // namespace evdetail

inline double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter =
      evdetail::convex_intersection_area(evdetail::bev_corners(a), evdetail::bev_corners(b));
  const double uni = a.w * a.l + b.w * b.l - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double iou_3d(const Box3D& a, const Box3D& b) {
  const double inter_bev =
      evdetail::convex_intersection_area(evdetail::bev_corners(a), evdetail::bev_corners(b));
  // y points down: a box spans [y - h, y]
  const double overlap_y = std::min(a.y, b.y) - std::max(a.y - a.h, b.y - b.h);
  if (overlap_y <= 0 || inter_bev <= 0) return 0.0;
  const double inter = inter_bev * overlap_y;
  const double uni = a.h * a.w * a.l + b.h * b.w * b.l - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------------------
// Difficulty buckets. The stock thresholds assume KITTI's 375-row images; the
// scaled preset shrinks the pixel minima proportionally for small renders.
// ---------------------------------------------------------------------------

struct DifficultyPreset {
  std::array<double, 3> min_height{40.0, 25.0, 25.0};
  std::array<int, 3> max_occlusion{0, 1, 2};
  std::array<double, 3> max_truncation{0.15, 0.30, 0.50};

  static DifficultyPreset kitti() { return {}; }
  static DifficultyPreset scaled(int img_h) {
    DifficultyPreset p;
    for (auto& mh : p.min_height) mh *= img_h / 375.0;
    return p;
  }
};

// 0/1/2 = easy/moderate/hard; 3 = fails even the hard gate (always ignored).
inline int difficulty_of(const ObjectLabel& o, const DifficultyPreset& p) {
  const double hpx = o.bottom - o.top;
  for (int d = 0; d < 3; ++d)
    if (hpx >= p.min_height[d] && o.occlusion <= p.max_occlusion[d] &&
        o.truncation <= p.max_truncation[d])
      return d;
  return 3;
}

enum class Metric { k3D, kBEV, k2D, kAOS };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::k3D: return "3d";
    case Metric::kBEV: return "bev";
    case Metric::k2D: return "2d";
    case Metric::kAOS: return "aos";
  }
  return "3d";
}

inline Metric parse_metric(const std::string& s) {
  if (s == "3d") return Metric::k3D;
  if (s == "bev") return Metric::kBEV;
  if (s == "2d") return Metric::k2D;
  if (s == "aos") return Metric::kAOS;
  throw ConfigInvalid("unknown metric '" + s + "' (3d|bev|2d|aos)");
}

// ---------------------------------------------------------------------------
// Scene matching. Detections are walked in descending score; each may claim
// the best still-unmatched ground truth at or above the IoU threshold.
// Ground truth harder than the requested difficulty and DontCare regions
// absorb detections without making them false positives.
// ---------------------------------------------------------------------------

namespace evdetail {

enum DetKind { kFp = 0, kTp = 1, kIgnoredDet = 2 };

struct MatchedDet {
  double score = 0;
  DetKind kind = kFp;
  double similarity = 0;  // (1 + cos dAlpha)/2 for matched pairs
  double gt_z = 0, abs_dz = 0;
};

struct SceneMatch {
  int n_valid_gt = 0;
  std::vector<MatchedDet> dets;
};

inline double pair_overlap(const Detection& d, const ObjectLabel& g, Metric metric) {
  switch (metric) {
    case Metric::k3D: return iou_3d(box_of(d), box_of(g));
    case Metric::kBEV: return iou_bev(box_of(d), box_of(g));
    case Metric::k2D:
    case Metric::kAOS:
      return rect_iou(d.left, d.top, d.right, d.bottom, g.left, g.top, g.right, g.bottom);
  }
  return 0;
}

inline SceneMatch match_scene(const std::vector<Detection>& dets,
                              const std::vector<ObjectLabel>& labels, int cls, int difficulty,
                              Metric metric, double iou_threshold,
                              const DifficultyPreset& preset) {
  SceneMatch out;
  // Partition ground truth.
  std::vector<const ObjectLabel*> valid_gt, ignored_gt, dontcare;
  for (const auto& g : labels) {
    if (g.is_dontcare()) {
      dontcare.push_back(&g);
      continue;
    }
    if (class_id(g.class_name) != cls) continue;
    if (difficulty_of(g, preset) <= difficulty) valid_gt.push_back(&g);
    else ignored_gt.push_back(&g);
  }
  out.n_valid_gt = static_cast<int>(valid_gt.size());

  std::vector<const Detection*> ds;
  for (const auto& d : dets)
    if (d.class_id == cls) ds.push_back(&d);
  std::stable_sort(ds.begin(), ds.end(),
                   [](const Detection* a, const Detection* b) { return a->score > b->score; });

  std::vector<char> gt_used(valid_gt.size(), 0), ign_used(ignored_gt.size(), 0);
  for (const Detection* d : ds) {
    MatchedDet md;
    md.score = d->score;
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t i = 0; i < valid_gt.size(); ++i) {
      if (gt_used[i]) continue;
      const double o = pair_overlap(*d, *valid_gt[i], metric);
      if (o >= best_iou) {
        best_iou = o;
        best = static_cast<int>(i);
      }
    }
    if (best >= 0) {
      gt_used[best] = 1;
      md.kind = kTp;
      md.similarity = (1.0 + std::cos(d->alpha - valid_gt[best]->alpha)) / 2.0;
      md.gt_z = valid_gt[best]->z;
      md.abs_dz = std::abs(d->z - valid_gt[best]->z);
      out.dets.push_back(md);
      continue;
    }
    // Too small to be judged at this difficulty.
    if (d->bottom - d->top < preset.min_height[difficulty]) {
      md.kind = kIgnoredDet;
      out.dets.push_back(md);
      continue;
    }
    bool absorbed = false;
    for (std::size_t i = 0; i < ignored_gt.size() && !absorbed; ++i) {
      if (ign_used[i]) continue;
      if (pair_overlap(*d, *ignored_gt[i], metric) >= iou_threshold) {
        ign_used[i] = 1;
        absorbed = true;
      }
    }
    for (std::size_t i = 0; i < dontcare.size() && !absorbed; ++i)
      if (cover_fraction(d->left, d->top, d->right, d->bottom, dontcare[i]->left, dontcare[i]->top,
                         dontcare[i]->right, dontcare[i]->bottom) > 0.5)
        absorbed = true;
    md.kind = absorbed ? kIgnoredDet : kFp;
    out.dets.push_back(md);
  }
  return out;
}

}  // namespace evdetail

// ---------------------------------------------------------------------------
// AP at 40 recall positions.
// ---------------------------------------------------------------------------

struct ApResult {
  bool defined = false;  // false = no ground truth for this class/difficulty
  double ap = std::numeric_limits<double>::quiet_NaN();
  int n_gt = 0;
  int n_tp = 0, n_fp = 0;
  std::array<double, 40> precision{};  // interpolated, at recall (k+1)/40
};

inline ApResult ap_r40(const std::vector<std::vector<Detection>>& dets_per_scene,
                       const std::vector<std::vector<ObjectLabel>>& labels_per_scene, int cls,
                       int difficulty, Metric metric, double iou_threshold,
                       const DifficultyPreset& preset = DifficultyPreset::kitti()) {
  if (dets_per_scene.size() != labels_per_scene.size())
    throw ConfigInvalid("ap_r40: detections and labels cover different scene counts");
  if (!(iou_threshold > 0 && iou_threshold <= 1))
    throw ConfigInvalid("ap_r40: iou threshold must be in (0,1]");

  ApResult res;
  std::vector<evdetail::MatchedDet> all;
  for (std::size_t s = 0; s < dets_per_scene.size(); ++s) {
    const auto m = evdetail::match_scene(dets_per_scene[s], labels_per_scene[s], cls, difficulty,
                                         metric, iou_threshold, preset);
    res.n_gt += m.n_valid_gt;
    all.insert(all.end(), m.dets.begin(), m.dets.end());
  }
  if (res.n_gt == 0) return res;  // undefined; caller must check .defined
  res.defined = true;

  std::stable_sort(all.begin(), all.end(),
                   [](const evdetail::MatchedDet& a, const evdetail::MatchedDet& b) {
                     return a.score > b.score;
                   });

  // Raw PR points at every counted detection rank.
  std::vector<double> recall, value;
  int tp = 0, counted = 0;
  double sim_sum = 0;
  for (const auto& d : all) {
    if (d.kind == evdetail::kIgnoredDet) continue;
    ++counted;
    if (d.kind == evdetail::kTp) {
      ++tp;
      sim_sum += d.similarity;
    } else {
      ++res.n_fp;
    }
    recall.push_back(static_cast<double>(tp) / res.n_gt);
    value.push_back((metric == Metric::kAOS ? sim_sum : static_cast<double>(tp)) / counted);
  }
  res.n_tp = tp;

  double total = 0;
  for (int k = 0; k < 40; ++k) {
    const double r = (k + 1) / 40.0;
    double best = 0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r) best = std::max(best, value[i]);
    res.precision[k] = best;
    total += best;
  }
  res.ap = total / 40.0 * 100.0;
  return res;
}

// ---------------------------------------------------------------------------
// Cross-model recombination: match two models' detections scene by scene and
// build composites that take location, dimensions, orientation, and
// confidence each from a chosen side. Unmatched detections fall back to the
// side chosen for location.
// ---------------------------------------------------------------------------

struct CrossSelector {
  // false = model A, true = model B
  bool loc = false, dim = false, ori = false, con = false;

  bool identity_a() const { return !loc && !dim && !ori && !con; }
};

inline std::vector<Detection> cross_compose(const std::vector<Detection>& a,
                                            const std::vector<Detection>& b,
                                            const CrossSelector& sel, double match_iou = 0.5) {
  struct Pair {
    double iou;
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (a[i].class_id != b[j].class_id) continue;
      const double o = evdetail::rect_iou(a[i].left, a[i].top, a[i].right, a[i].bottom, b[j].left,
                                          b[j].top, b[j].right, b[j].bottom);
      if (o >= match_iou) pairs.push_back({o, i, j});
    }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& p, const Pair& q) { return p.iou > q.iou; });

  std::vector<int> match_a(a.size(), -1), match_b(b.size(), -1);
  for (const auto& p : pairs)
    if (match_a[p.i] < 0 && match_b[p.j] < 0) {
      match_a[p.i] = static_cast<int>(p.j);
      match_b[p.j] = static_cast<int>(p.i);
    }

  std::vector<Detection> out;
  const auto composite = [&](const Detection& da, const Detection& db) {
    Detection c = sel.loc ? db : da;  // carries 2D box and 3D position
    const Detection& dim_src = sel.dim ? db : da;
    c.h = dim_src.h;
    c.w = dim_src.w;
    c.l = dim_src.l;
    const Detection& ori_src = sel.ori ? db : da;
    c.ry = ori_src.ry;
    c.alpha = ori_src.alpha;
    c.score = (sel.con ? db : da).score;
    return c;
  };
  for (std::size_t i = 0; i < a.size(); ++i)
    if (match_a[i] >= 0) out.push_back(composite(a[i], b[match_a[i]]));
  if (!sel.loc) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (match_a[i] < 0) out.push_back(a[i]);
  } else {
    for (std::size_t j = 0; j < b.size(); ++j)
      if (match_b[j] < 0) out.push_back(b[j]);
  }
  return out;
}

inline std::vector<std::vector<Detection>> cross_compose_scenes(
    const std::vector<std::vector<Detection>>& a, const std::vector<std::vector<Detection>>& b,
    const CrossSelector& sel, double match_iou = 0.5) {
  if (a.size() != b.size())
    throw ConfigInvalid("cross_compose: models were evaluated on different scene counts");
  std::vector<std::vector<Detection>> out(a.size());
  for (std::size_t s = 0; s < a.size(); ++s) out[s] = cross_compose(a[s], b[s], sel, match_iou);
  return out;
}

inline ApResult cross_model_eval(const std::vector<std::vector<Detection>>& a,
                                 const std::vector<std::vector<Detection>>& b,
                                 const std::vector<std::vector<ObjectLabel>>& labels,
                                 const CrossSelector& sel, int cls, int difficulty, Metric metric,
                                 double iou_threshold,
                                 const DifficultyPreset& preset = DifficultyPreset::kitti()) {
  return ap_r40(cross_compose_scenes(a, b, sel), labels, cls, difficulty, metric, iou_threshold,
                preset);
}

// ---------------------------------------------------------------------------
// Depth-error fit: least-squares line through (gt depth, |depth error|) of
// 2D-matched detections, plus the raw scatter as CSV.
// ---------------------------------------------------------------------------

struct DepthFit {
  double slope = 0, intercept = 0;
  int n = 0;
  std::string scatter_csv;  // "gt_z,abs_dz" rows
};

inline DepthFit depth_error_fit(const std::vector<std::vector<Detection>>& dets_per_scene,
                                const std::vector<std::vector<ObjectLabel>>& labels_per_scene,
                                int cls, double match_iou = 0.5,
                                const DifficultyPreset& preset = DifficultyPreset::kitti()) {
  if (dets_per_scene.size() != labels_per_scene.size())
    throw ConfigInvalid("depth_error_fit: detections and labels cover different scene counts");
  std::vector<std::array<double, 2>> pts;
  for (std::size_t s = 0; s < dets_per_scene.size(); ++s) {
    const auto m = evdetail::match_scene(dets_per_scene[s], labels_per_scene[s], cls, 2,
                                         Metric::k2D, match_iou, preset);
    for (const auto& d : m.dets)
      if (d.kind == evdetail::kTp) pts.push_back({d.gt_z, d.abs_dz});
  }
  if (pts.size() < 2) throw InsufficientData("depth_error_fit: need at least 2 matched pairs");

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::ostringstream csv;
  csv << "gt_z,abs_dz\n";
  for (const auto& p : pts) {
    sx += p[0];
    sy += p[1];
    sxx += p[0] * p[0];
    sxy += p[0] * p[1];
    csv << p[0] << ',' << p[1] << '\n';
  }
  const double n = static_cast<double>(pts.size());
  const double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-12)
    throw InsufficientData("depth_error_fit: all matches at one depth, line is degenerate");
  DepthFit fit;
  fit.n = static_cast<int>(pts.size());
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  fit.scatter_csv = csv.str();
  return fit;
}

// ---------------------------------------------------------------------------
// Dataset-level driver: run the detector over scenes and collect per-scene
// detections ready for ap_r40.
// ---------------------------------------------------------------------------

enum class InputKind { kRgb, kDepth };

struct EvalConfig {
  std::array<double, 3> iou_thresholds{0.7, 0.5, 0.25};  // per class
  DifficultyPreset preset = DifficultyPreset::kitti();
  double conf_threshold = 0.1;
  double nms_iou = 0.5;
  int max_dets = 64;
  int stride = 4;
  InputKind input = InputKind::kRgb;
  TeacherInput teacher_input = TeacherInput::kDense;  // used when input = kDepth

  void validate() const {
    for (double t : iou_thresholds)
      if (!(t > 0 && t <= 1)) throw ConfigInvalid("eval: iou thresholds must be in (0,1]");
    if (!(conf_threshold >= 0 && conf_threshold < 1))
      throw ConfigInvalid("eval: conf_threshold must be in [0,1)");
    if (!(nms_iou > 0 && nms_iou <= 1)) throw ConfigInvalid("eval: nms_iou must be in (0,1]");
    if (max_dets < 1) throw ConfigInvalid("eval: max_dets must be >= 1");
  }
};

inline std::vector<Detection> detect_sample(const DetectorModel& model, const SceneSample& s,
                                            const EvalConfig& ec) {
  NoGradGuard guard(model.params());
  const std::vector<double> data = ec.input == InputKind::kRgb
                                       ? s.scene.rgb
                                       : teacher_input_channels(s.teacher_map(ec.teacher_input));
  const Tensor x = Tensor::from({3, s.scene.height, s.scene.width}, data);
  const auto feats = model.forward_backbone(x);
  const auto heads = model.forward_heads(feats.fused);
  auto dets = decode(heads, s.scene.calib, model.config(), ec.conf_threshold, ec.stride,
                     ec.max_dets);
  return nms2d(dets, ec.nms_iou);
}

inline std::vector<std::vector<Detection>> detect_dataset(const DetectorModel& model,
                                                          const SyntheticDataset& ds,
                                                          const EvalConfig& ec) {
  ec.validate();
  std::vector<std::vector<Detection>> out;
  out.reserve(ds.size());
  for (int i = 0; i < ds.size(); ++i) out.push_back(detect_sample(model, ds.sample(i), ec));
  return out;
}

inline std::vector<std::vector<ObjectLabel>> dataset_labels(const SyntheticDataset& ds) {
  std::vector<std::vector<ObjectLabel>> out;
  out.reserve(ds.size());
  for (int i = 0; i < ds.size(); ++i) out.push_back(ds.sample(i).scene.objects);
  return out;
}

// Report table: one AP value per (metric row, difficulty column), columns in
// moderate/easy/hard order.
struct ApTable {
  int cls = 0;
  double iou_threshold = 0;
  // rows: 3d, bev, 2d, aos; columns: moderate, easy, hard
  std::array<std::array<ApResult, 3>, 4> cells;

  static constexpr std::array<Metric, 4> kRows{Metric::k3D, Metric::kBEV, Metric::k2D,
                                               Metric::kAOS};
  static constexpr std::array<int, 3> kCols{1, 0, 2};  // moderate, easy, hard
};

inline ApTable ap_table(const std::vector<std::vector<Detection>>& dets,
                        const std::vector<std::vector<ObjectLabel>>& labels, int cls,
                        double iou_threshold, const DifficultyPreset& preset) {
  ApTable t;
  t.cls = cls;
  t.iou_threshold = iou_threshold;
  for (std::size_t r = 0; r < ApTable::kRows.size(); ++r)
    for (std::size_t c = 0; c < ApTable::kCols.size(); ++c)
      t.cells[r][c] =
          ap_r40(dets, labels, cls, ApTable::kCols[c], ApTable::kRows[r], iou_threshold, preset);
  return t;
}

inline std::string format_ap_cell(const ApResult& r) {
  if (!r.defined) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", r.ap);
  return buf;
}

inline std::string format_ap_table(const ApTable& t) {
  std::ostringstream os;
  os << class_name_of(t.cls) << " @ IoU " << t.iou_threshold << "\n";
  os << "metric   Mod.     Easy     Hard\n";
  static const char* row_names[4] = {"3d  ", "bev ", "2d  ", "aos "};
  for (std::size_t r = 0; r < 4; ++r) {
    os << row_names[r];
    for (std::size_t c = 0; c < 3; ++c) {
      const std::string cell = format_ap_cell(t.cells[r][c]);
      os << ' ';
      os.width(8);
      os << std::left << cell;
    }
    os << "\n";
  }
  return os.str();
}

inline std::string ap_table_csv(const ApTable& t) {
  std::ostringstream os;
  os << "class,iou,metric,moderate,easy,hard\n";
  for (std::size_t r = 0; r < 4; ++r) {
    os << class_name_of(t.cls) << ',' << t.iou_threshold << ',' << to_string(ApTable::kRows[r]);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto& cell = t.cells[r][c];
      os << ',' << (cell.defined ? std::to_string(cell.ap) : "n/a");
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace monokd
