// The compact anchor-free monocular 3D detector shared by teacher and
// student: a 4-block strided backbone with top-down fusion to stride 4, seven
// prediction heads, box decoding with uncertainty-normalized confidence, 2D
// NMS, and the per-block attention fusion used during distillation.
#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "monokd/data_io.hpp"
#include "monokd/tensor.hpp"

namespace monokd {

enum class ScoreMode { HeatTimesExpNegSigma, HeatOnly };

struct ModelConfig {
  std::array<int, 4> channels{16, 32, 64, 128};
  int fused_channels = 64;
  int head_hidden = 32;
  int n_classes = 3;
  int n_bins = 4;
  double depth_init = 25.0;       // initial depth prediction, sets the head bias
  double sigma_score_clamp = 5.0; // cap on sigma inside the confidence factor
  ScoreMode score_mode = ScoreMode::HeatTimesExpNegSigma;
  bool aux_depth = false;         // dense depth side branch (control experiment)

  void validate() const {
    for (int c : channels)
      if (c < 1) throw ConfigInvalid("model: channels must be positive");
    if (fused_channels < 1 || head_hidden < 1)
      throw ConfigInvalid("model: fused/head channels must be positive");
    if (n_classes < 1) throw ConfigInvalid("model: need at least one class");
    if (n_bins < 2) throw ConfigInvalid("model: MultiBin needs at least two bins");
    if (!(depth_init > 0)) throw ConfigInvalid("model: depth_init must be positive");
    if (sigma_score_clamp < 0) throw ConfigInvalid("model: sigma clamp must be nonnegative");
  }

  int orientation_channels() const { return 4 * n_bins; }

  std::string to_text() const {
    std::string s;
    s += "channels=" + std::to_string(channels[0]) + "," + std::to_string(channels[1]) + "," +
         std::to_string(channels[2]) + "," + std::to_string(channels[3]) + "\n";
    s += "fused_channels=" + std::to_string(fused_channels) + "\n";
    s += "head_hidden=" + std::to_string(head_hidden) + "\n";
    s += "n_classes=" + std::to_string(n_classes) + "\n";
    s += "n_bins=" + std::to_string(n_bins) + "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "depth_init=%.17g\n", depth_init);
    s += buf;
    std::snprintf(buf, sizeof buf, "sigma_score_clamp=%.17g\n", sigma_score_clamp);
    s += buf;
    s += std::string("score_mode=") +
         (score_mode == ScoreMode::HeatTimesExpNegSigma ? "heat_exp_neg_sigma" : "heat_only") +
         "\n";
    s += std::string("aux_depth=") + (aux_depth ? "1" : "0") + "\n";
    return s;
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig cfg;
    for (const auto& line : iodetail::split_lines(text)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "channels") {
        if (std::sscanf(val.c_str(), "%d,%d,%d,%d", &cfg.channels[0], &cfg.channels[1],
                        &cfg.channels[2], &cfg.channels[3]) != 4)
          throw ConfigInvalid("model config: bad channels line");
      } else if (key == "fused_channels") cfg.fused_channels = std::stoi(val);
      else if (key == "head_hidden") cfg.head_hidden = std::stoi(val);
      else if (key == "n_classes") cfg.n_classes = std::stoi(val);
      else if (key == "n_bins") cfg.n_bins = std::stoi(val);
      else if (key == "depth_init") cfg.depth_init = std::stod(val);
      else if (key == "sigma_score_clamp") cfg.sigma_score_clamp = std::stod(val);
      else if (key == "score_mode")
        cfg.score_mode = val == "heat_only" ? ScoreMode::HeatOnly : ScoreMode::HeatTimesExpNegSigma;
      else if (key == "aux_depth") cfg.aux_depth = val == "1";
    }
    cfg.validate();
    return cfg;
  }

  bool operator==(const ModelConfig&) const = default;
};

struct Detection {
  int class_id = 0;
  double score = 0;
  double left = 0, top = 0, right = 0, bottom = 0;
  double x = 0, y = 0, z = 0;  // true 3D center, camera frame
  double h = 0, w = 0, l = 0;
  double ry = 0;
  double alpha = 0;
  double depth_sigma = 1.0;

  bool operator==(const Detection&) const = default;
};

// KITTI label row for a detection; label y is the box-bottom coordinate.
inline ObjectLabel detection_to_label(const Detection& d) {
  ObjectLabel o;
  o.class_name = class_name_of(d.class_id);
  o.alpha = d.alpha;
  o.left = d.left;
  o.top = d.top;
  o.right = d.right;
  o.bottom = d.bottom;
  o.h = d.h;
  o.w = d.w;
  o.l = d.l;
  o.x = d.x;
  o.y = d.y + d.h / 2;
  o.z = d.z;
  o.ry = d.ry;
  o.score = d.score;
  return o;
}

class DetectorModel {
 public:
  struct Features {
    std::array<Tensor, 4> blocks;  // strides 2, 4, 8, 16
    Tensor fused;                  // stride 4
  };
  struct HeadOutputs {
    Tensor heatmap;      // (K,H,W), post-sigmoid
    Tensor offset2d;     // (2,H,W)
    Tensor size2d;       // (2,H,W): width, height in feature cells
    Tensor offset3d;     // (2,H,W)
    Tensor depth;        // (2,H,W): raw depth param, log sigma
    Tensor dims;         // (3,H,W): log residuals on (h,w,l) priors
    Tensor orientation;  // (4B,H,W): 2B bin logits then 2B sin/cos residuals
    Tensor aux;          // (1,H,W) raw aux depth param; undefined unless enabled

    std::array<const Tensor*, 7> seven() const {
      return {&heatmap, &offset2d, &size2d, &offset3d, &depth, &dims, &orientation};
    }
  };

  DetectorModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    build(seed);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  Features forward_backbone(const Tensor& input) const {
    if (input.shape().size() != 3 || input.shape()[0] != 3 || input.shape()[1] % 16 ||
        input.shape()[2] % 16)
      throw ShapeMismatch("backbone", shape_str(input.shape()), "(3,16m,16n)");
    Features f;
    Tensor x = input;
    for (int b = 0; b < 4; ++b) {
      const std::string base = "backbone.block" + std::to_string(b + 1);
      x = relu(conv(base + ".conv1", x, 2, 1));
      x = relu(conv(base + ".conv2", x, 1, 1));
      f.blocks[b] = x;
    }
    Tensor top = conv("fuse.lateral4", f.blocks[3], 1, 0);
    top = add(upsample_x2(top), conv("fuse.lateral3", f.blocks[2], 1, 0));
    top = add(upsample_x2(top), conv("fuse.lateral2", f.blocks[1], 1, 0));
    f.fused = relu(top);
    return f;
  }

  HeadOutputs forward_heads(const Tensor& fused) const {
    HeadOutputs h;
    h.heatmap = sigmoid(head("heatmap", fused));
    h.offset2d = head("offset2d", fused);
    h.size2d = head("size2d", fused);
    h.offset3d = head("offset3d", fused);
    h.depth = head("depth", fused);
    h.dims = head("dims", fused);
    h.orientation = head("orientation", fused);
    if (cfg_.aux_depth) h.aux = head("aux_depth", fused);
    return h;
  }

 private:
  Tensor conv(const std::string& name, const Tensor& x, int stride, int pad) const {
    return conv2d(x, ps_.at(name + ".w").tensor, ps_.at(name + ".b").tensor, stride, pad);
  }
  Tensor head(const std::string& name, const Tensor& fused) const {
    Tensor x = relu(conv("head." + name + ".conv", fused, 1, 1));
    return conv("head." + name + ".out", x, 1, 0);
  }

  void add_conv(Rng& rng, const std::string& name, int oc, int ic, int k, double w_std,
                double bias0 = 0.0, double bias_rest = 0.0) {
    std::vector<double> w(static_cast<std::size_t>(oc) * ic * k * k);
    for (auto& v : w) v = rng.normal() * w_std;
    ps_.add(name + ".w", {oc, ic, k, k}, std::move(w));
    std::vector<double> b(oc, bias_rest);
    b[0] = bias0;
    ps_.add(name + ".b", {oc}, std::move(b));
  }

  void build(std::uint64_t seed) {
    Rng rng(mix_seed(seed, "detector-init"));
    auto he = [](int ic, int k) { return std::sqrt(2.0 / (ic * k * k)); };

    int in_c = 3;
    for (int b = 0; b < 4; ++b) {
      const int out_c = cfg_.channels[b];
      const std::string base = "backbone.block" + std::to_string(b + 1);
      add_conv(rng, base + ".conv1", out_c, in_c, 3, he(in_c, 3));
      add_conv(rng, base + ".conv2", out_c, out_c, 3, he(out_c, 3));
      in_c = out_c;
    }
    add_conv(rng, "fuse.lateral4", cfg_.fused_channels, cfg_.channels[3], 1, he(cfg_.channels[3], 1));
    add_conv(rng, "fuse.lateral3", cfg_.fused_channels, cfg_.channels[2], 1, he(cfg_.channels[2], 1));
    add_conv(rng, "fuse.lateral2", cfg_.fused_channels, cfg_.channels[1], 1, he(cfg_.channels[1], 1));

    const double heat_bias = std::log(0.1 / 0.9);      // rare-positive prior
    const double depth_bias = -std::log(cfg_.depth_init);
    struct HeadSpec {
      const char* name;
      int out;
      double bias0;
      double bias_rest;
    };
    const HeadSpec specs[] = {
        {"heatmap", cfg_.n_classes, heat_bias, heat_bias},
        {"offset2d", 2, 0, 0},
        {"size2d", 2, 0, 0},
        {"offset3d", 2, 0, 0},
        {"depth", 2, depth_bias, 0},  // channel 1 is log sigma, starts at 0
        {"dims", 3, 0, 0},
        {"orientation", cfg_.orientation_channels(), 0, 0},
    };
    for (const auto& s : specs) {
      const std::string base = std::string("head.") + s.name;
      add_conv(rng, base + ".conv", cfg_.head_hidden, cfg_.fused_channels, 3,
               he(cfg_.fused_channels, 3));
      add_conv(rng, base + ".out", s.out, cfg_.head_hidden, 1, 0.01, s.bias0, s.bias_rest);
    }
    if (cfg_.aux_depth) {
      add_conv(rng, "head.aux_depth.conv", cfg_.head_hidden, cfg_.fused_channels, 3,
               he(cfg_.fused_channels, 3));
      add_conv(rng, "head.aux_depth.out", 1, cfg_.head_hidden, 1, 0.01, depth_bias);
    }
  }

  ModelConfig cfg_;
  ParamStore ps_;
};

// ---------------------------------------------------------------------------
// Decoding. Peaks are 3x3 local maxima of the class heatmaps above the
// confidence threshold; depth comes from the raw head value via
// 1/sigmoid(d) - 1 (equivalently exp(-d)); the box score is the heatmap value
// normalized by depth uncertainty.
// ---------------------------------------------------------------------------

inline double multibin_center(int bin, int n_bins) {
  return -M_PI + (bin + 0.5) * 2.0 * M_PI / n_bins;
}

inline std::vector<Detection> decode(const DetectorModel::HeadOutputs& ho,
                                     const CameraCalib& calib, const ModelConfig& cfg,
                                     double conf_threshold, int stride = 4, int max_dets = 64) {
  const auto& heat = ho.heatmap.value();
  const int K = ho.heatmap.shape()[0];
  const int H = ho.heatmap.shape()[1];
  const int W = ho.heatmap.shape()[2];
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  const auto at = [&](const Tensor& t, int c, int v, int u) {
    return t.value()[static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(v) * W + u];
  };

  std::vector<Detection> dets;
  for (int k = 0; k < K; ++k)
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u) {
        const double s = heat[k * hw + static_cast<std::size_t>(v) * W + u];
        if (s < conf_threshold) continue;
        bool peak = true;
        for (int dv = -1; dv <= 1 && peak; ++dv)
          for (int du = -1; du <= 1 && peak; ++du) {
            if (!dv && !du) continue;
            const int nv = v + dv, nu = u + du;
            if (nv < 0 || nv >= H || nu < 0 || nu >= W) continue;
            if (heat[k * hw + static_cast<std::size_t>(nv) * W + nu] > s) peak = false;
          }
        if (!peak) continue;

        Detection d;
        d.class_id = k;
        const double sigma = std::exp(at(ho.depth, 1, v, u));
        d.depth_sigma = sigma;
        d.score = cfg.score_mode == ScoreMode::HeatTimesExpNegSigma
                      ? s * std::exp(-std::clamp(sigma, 0.0, cfg.sigma_score_clamp))
                      : s;

        const double cu2 = (u + at(ho.offset2d, 0, v, u)) * stride;
        const double cv2 = (v + at(ho.offset2d, 1, v, u)) * stride;
        const double bw = at(ho.size2d, 0, v, u) * stride;
        const double bh = at(ho.size2d, 1, v, u) * stride;
        d.left = cu2 - bw / 2;
        d.right = cu2 + bw / 2;
        d.top = cv2 - bh / 2;
        d.bottom = cv2 + bh / 2;

        d.z = std::exp(-at(ho.depth, 0, v, u));  // 1/sigmoid(x) - 1
        const double u3 = (u + at(ho.offset3d, 0, v, u)) * stride;
        const double v3 = (v + at(ho.offset3d, 1, v, u)) * stride;
        const auto ctr = backproject_pixel(calib, u3, v3, d.z);
        d.x = ctr[0];
        d.y = ctr[1];

        const auto prior = class_dims_prior(k);
        d.h = prior[0] * std::exp(at(ho.dims, 0, v, u));
        d.w = prior[1] * std::exp(at(ho.dims, 1, v, u));
        d.l = prior[2] * std::exp(at(ho.dims, 2, v, u));

        int best_bin = 0;
        double best_conf = -1e30;
        for (int b = 0; b < cfg.n_bins; ++b) {
          const double conf = at(ho.orientation, 2 * b, v, u) - at(ho.orientation, 2 * b + 1, v, u);
          if (conf > best_conf) {
            best_conf = conf;
            best_bin = b;
          }
        }
        const double rs = at(ho.orientation, 2 * cfg.n_bins + 2 * best_bin, v, u);
        const double rc = at(ho.orientation, 2 * cfg.n_bins + 2 * best_bin + 1, v, u);
        d.alpha = wrap_angle(multibin_center(best_bin, cfg.n_bins) + std::atan2(rs, rc));
        d.ry = wrap_angle(d.alpha + std::atan2(d.x, d.z));
        dets.push_back(d);
      }

  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (static_cast<int>(dets.size()) > max_dets) dets.resize(max_dets);
  return dets;
}

inline double iou2d(const Detection& a, const Detection& b) {
  const double iw = std::min(a.right, b.right) - std::max(a.left, b.left);
  const double ih = std::min(a.bottom, b.bottom) - std::max(a.top, b.top);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double ua = (a.right - a.left) * (a.bottom - a.top) +
                    (b.right - b.left) * (b.bottom - b.top) - inter;
  return ua > 0 ? inter / ua : 0.0;
}

// Greedy per-class suppression; input must already be sorted by score.
inline std::vector<Detection> nms2d(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<Detection> sorted = dets;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : sorted) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (k.class_id == d.class_id && iou2d(k, d) >= iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Attention fusion: per block, a 1x1 conv on the concatenated pair yields two
// logits whose per-pixel softmax weights blend student and teacher features.
// Zero initialization makes the blend start at an even 0.5 / 0.5.
// ---------------------------------------------------------------------------

class FusionModule {
 public:
  explicit FusionModule(const ModelConfig& cfg) {
    for (int b = 2; b <= 4; ++b) {
      const int c = cfg.channels[b - 1];
      const std::string base = "fusion.block" + std::to_string(b);
      ps_.add(base + ".w", {2, 2 * c, 1, 1}, std::vector<double>(2 * 2 * c, 0.0));
      ps_.add(base + ".b", {2}, {0.0, 0.0});
    }
  }

  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  // block_index is 2, 3, or 4 (the distilled blocks).
  Tensor fuse(int block_index, const Tensor& student, const Tensor& teacher) const {
    if (student.shape() != teacher.shape())
      throw ShapeMismatch("fuse", shape_str(teacher.shape()), shape_str(student.shape()));
    const std::string base = "fusion.block" + std::to_string(block_index);
    Tensor logits = conv2d(concat_channels(student, teacher), ps_.at(base + ".w").tensor,
                           ps_.at(base + ".b").tensor, 1, 0);
    Tensor wgt = softmax(logits, 0);
    Tensor ws = slice_channels(wgt, 0, 1);
    Tensor wt = slice_channels(wgt, 1, 2);
    return add(mul_spatial(student, ws), mul_spatial(teacher, wt));
  }

 private:
  ParamStore ps_;
};

}  // namespace monokd
