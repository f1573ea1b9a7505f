#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <set>

#include "monokd/detector.hpp"
#include "monokd/gradcheck.hpp"
#include "monokd/targets.hpp"

using namespace monokd;

namespace {

Tensor rand_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0,
                   bool req = false) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(s, std::move(v), req);
}

void zero_params(ParamStore& ps) {
  for (auto& p : ps.params())
    for (auto& v : p.tensor.value_mut()) v = 0.0;
}

CameraCalib test_calib(int w = 1280, int h = 384, double f = 700.0) {
  SyntheticConfig cfg;
  cfg.width = w;
  cfg.height = h;
  cfg.focal = f;
  return synthetic_calib(cfg);
}

// build a label from 3D pose; box2d from projected cuboid corners
ObjectLabel make_label(const std::string& cls, double x, double y_bottom, double z, double h,
                       double w, double l, double ry, const CameraCalib& calib) {
  ObjectLabel o;
  o.class_name = cls;
  o.x = x;
  o.y = y_bottom;
  o.z = z;
  o.h = h;
  o.w = w;
  o.l = l;
  o.ry = ry;
  o.alpha = wrap_angle(ry - std::atan2(x, z));
  double lo_u = 1e30, hi_u = -1e30, lo_v = 1e30, hi_v = -1e30;
  for (const auto& c : corners3d(o)) {
    const auto p = project_rect(calib, c[0], c[1], c[2]);
    lo_u = std::min(lo_u, p.u);
    hi_u = std::max(hi_u, p.u);
    lo_v = std::min(lo_v, p.v);
    hi_v = std::max(hi_v, p.v);
  }
  o.left = lo_u;
  o.right = hi_u;
  o.top = lo_v;
  o.bottom = hi_v;
  return o;
}

}  // namespace

TEST_CASE("backbone produces the documented stride pyramid") {
  ModelConfig cfg;
  DetectorModel model(cfg, 7);
  Rng rng(11);
  Tensor img = rand_tensor({3, 96, 320}, rng, 0.0, 1.0);
  auto f = model.forward_backbone(img);
  CHECK(f.blocks[0].shape() == Shape{16, 48, 160});
  CHECK(f.blocks[1].shape() == Shape{32, 24, 80});
  CHECK(f.blocks[2].shape() == Shape{64, 12, 40});
  CHECK(f.blocks[3].shape() == Shape{128, 6, 20});
  CHECK(f.fused.shape() == Shape{64, 24, 80});

  CHECK_THROWS_AS(model.forward_backbone(rand_tensor({3, 50, 320}, rng)), ShapeMismatch);
  CHECK_THROWS_AS(model.forward_backbone(rand_tensor({1, 96, 320}, rng)), ShapeMismatch);
}

TEST_CASE("zero parameters give zero features and a flat 0.5 heatmap") {
  ModelConfig cfg;
  cfg.channels = {4, 8, 12, 16};
  cfg.fused_channels = 8;
  cfg.head_hidden = 4;
  DetectorModel model(cfg, 3);
  zero_params(model.params());

  Rng rng(5);
  auto f = model.forward_backbone(rand_tensor({3, 32, 32}, rng));
  for (int b = 0; b < 4; ++b)
    for (double v : f.blocks[b].value()) CHECK(v == 0.0);
  auto h = model.forward_heads(f.fused);
  for (double v : h.heatmap.value()) CHECK(v == 0.5);
  for (double v : h.offset2d.value()) CHECK(v == 0.0);
  for (double v : h.orientation.value()) CHECK(v == 0.0);
}

TEST_CASE("head outputs have the documented channel counts") {
  ModelConfig cfg;
  cfg.channels = {4, 6, 8, 10};
  cfg.fused_channels = 6;
  cfg.head_hidden = 4;
  cfg.aux_depth = true;
  DetectorModel model(cfg, 1);
  Rng rng(2);
  auto f = model.forward_backbone(rand_tensor({3, 32, 48}, rng));
  auto h = model.forward_heads(f.fused);
  const int H = 8, W = 12;
  CHECK(h.heatmap.shape() == Shape{3, H, W});
  CHECK(h.offset2d.shape() == Shape{2, H, W});
  CHECK(h.size2d.shape() == Shape{2, H, W});
  CHECK(h.offset3d.shape() == Shape{2, H, W});
  CHECK(h.depth.shape() == Shape{2, H, W});
  CHECK(h.dims.shape() == Shape{3, H, W});
  CHECK(h.orientation.shape() == Shape{16, H, W});
  CHECK(h.aux.shape() == Shape{1, H, W});

  for (double v : h.heatmap.value()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("fresh models start near the configured priors") {
  ModelConfig cfg;
  cfg.depth_init = 25.0;
  DetectorModel model(cfg, 42);
  const auto& hb = model.params().at("head.heatmap.out.b").tensor.value();
  for (double v : hb) CHECK(v == Catch::Approx(std::log(0.1 / 0.9)));
  const auto& db = model.params().at("head.depth.out.b").tensor.value();
  CHECK(db[0] == Catch::Approx(-std::log(25.0)));
  CHECK(db[1] == 0.0);

  // with tiny head weights the initial depth decode sits near depth_init
  Rng rng(9);
  auto f = model.forward_backbone(rand_tensor({3, 32, 32}, rng, 0.0, 1.0));
  auto h = model.forward_heads(f.fused);
  const double z0 = std::exp(-h.depth.value()[0]);
  CHECK(z0 > 10.0);
  CHECK(z0 < 60.0);
}

TEST_CASE("teacher and student expose identical parameter manifests") {
  ModelConfig cfg;
  DetectorModel teacher(cfg, 1), student(cfg, 2);
  const auto& tp = teacher.params().params();
  const auto& sp = student.params().params();
  REQUIRE(tp.size() == sp.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    CHECK(tp[i].name == sp[i].name);
    CHECK(tp[i].tensor.shape() == sp[i].tensor.shape());
    if (tp[i].tensor.value() != sp[i].tensor.value()) any_diff = true;
  }
  CHECK(any_diff);  // different seeds, different weights

  ModelConfig other = cfg;
  other.fused_channels = 32;
  DetectorModel third(other, 1);
  CHECK(third.params().params().size() == tp.size());
  CHECK(third.params().at("fuse.lateral4.w").tensor.shape() !=
        teacher.params().at("fuse.lateral4.w").tensor.shape());
}

TEST_CASE("decode inverts the target encoding for every class and bin") {
  const auto calib = test_calib();
  ModelConfig cfg;

  std::vector<ObjectLabel> labels;
  const char* names[3] = {"Car", "Pedestrian", "Cyclist"};
  int i = 0;
  for (int k = 0; k < 3; ++k)
    for (int b = 0; b < 4; ++b) {
      const double z = 18.0 + 7.0 * (i % 4);
      const double x = -12.0 + 2.1 * i;
      const auto pr = class_dims_prior(k);
      const double alpha = multibin_center(b, 4) + 0.25;
      const double ry = wrap_angle(alpha + std::atan2(x, z));
      labels.push_back(make_label(names[k], x, 1.65, z, pr[0] * 1.07, pr[1] * 0.93, pr[2] * 1.02,
                                  ry, calib));
      ++i;
    }

  auto tgt = encode_targets(labels, calib, 1280, 384, cfg);
  REQUIRE(tgt.centers.size() == labels.size());
  auto ho = targets_to_heads(tgt, cfg);
  auto dets = decode(ho, calib, cfg, 0.5);
  REQUIRE(dets.size() == labels.size());

  for (const auto& gt : labels) {
    double best = 1e30;
    const Detection* match = nullptr;
    for (const auto& d : dets) {
      const double dist = std::hypot(d.x - gt.x, d.z - gt.z);
      if (d.class_id == class_id(gt.class_name) && dist < best) {
        best = dist;
        match = &d;
      }
    }
    REQUIRE(match != nullptr);
    CHECK(match->x == Catch::Approx(gt.x).margin(1e-3));
    CHECK(match->y + match->h / 2 == Catch::Approx(gt.y).margin(1e-3));
    CHECK(match->z == Catch::Approx(gt.z).margin(1e-3));
    CHECK(match->h == Catch::Approx(gt.h).margin(1e-3));
    CHECK(match->w == Catch::Approx(gt.w).margin(1e-3));
    CHECK(match->l == Catch::Approx(gt.l).margin(1e-3));
    CHECK(std::abs(wrap_angle(match->ry - gt.ry)) < 1e-3);
    CHECK(std::abs(wrap_angle(match->alpha - gt.alpha)) < 1e-3);
    CHECK(match->left == Catch::Approx(gt.left).margin(1e-3));
    CHECK(match->bottom == Catch::Approx(gt.bottom).margin(1e-3));
  }
}

TEST_CASE("decoded boxes satisfy the basic invariants on random heads") {
  ModelConfig cfg;
  const auto calib = test_calib(320, 96, 200.0);
  Rng rng(31);
  DetectorModel::HeadOutputs ho;
  const int H = 24, W = 80;
  std::vector<double> heat(static_cast<std::size_t>(3) * H * W);
  for (auto& v : heat) v = rng.uniform(0.0, 1.0);
  ho.heatmap = Tensor::from({3, H, W}, heat);
  ho.offset2d = rand_tensor({2, H, W}, rng, 0.0, 1.0);
  ho.size2d = rand_tensor({2, H, W}, rng, 0.5, 6.0);
  ho.offset3d = rand_tensor({2, H, W}, rng, 0.0, 1.0);
  ho.depth = rand_tensor({2, H, W}, rng, -4.0, 1.0);
  ho.dims = rand_tensor({3, H, W}, rng, -0.3, 0.3);
  ho.orientation = rand_tensor({16, H, W}, rng, -2.0, 2.0);

  auto dets = decode(ho, calib, cfg, 0.4, 4, 1000);
  REQUIRE(!dets.empty());
  for (std::size_t d = 1; d < dets.size(); ++d) CHECK(dets[d - 1].score >= dets[d].score);
  for (const auto& d : dets) {
    CHECK(d.z > 0.0);
    CHECK(d.h > 0.0);
    CHECK(d.w > 0.0);
    CHECK(d.l > 0.0);
    CHECK(d.score > 0.0);
    CHECK(d.score <= 1.0);
    CHECK(d.right >= d.left);
    CHECK(d.bottom >= d.top);
    CHECK(d.alpha >= -M_PI);
    CHECK(d.alpha < M_PI);
    CHECK(d.ry >= -M_PI);
    CHECK(d.ry < M_PI);
  }
}

TEST_CASE("score decreases with predicted depth uncertainty, with a clamp") {
  ModelConfig cfg;
  const auto calib = test_calib(320, 96, 200.0);
  const int H = 8, W = 8;
  auto mk = [&](double log_sigma) {
    DetectorModel::HeadOutputs ho;
    ho.heatmap = Tensor::zeros({3, H, W});
    ho.heatmap.value_mut()[3 * W + 3] = 0.9;
    ho.offset2d = Tensor::zeros({2, H, W});
    ho.size2d = Tensor::zeros({2, H, W});
    ho.offset3d = Tensor::zeros({2, H, W});
    ho.depth = Tensor::zeros({2, H, W});
    ho.depth.value_mut()[static_cast<std::size_t>(H) * W + 3 * W + 3] = log_sigma;
    ho.dims = Tensor::zeros({3, H, W});
    ho.orientation = Tensor::zeros({16, H, W});
    return decode(ho, calib, cfg, 0.5).at(0).score;
  };
  const double s0 = mk(-3.0), s1 = mk(0.0), s2 = mk(1.0);
  CHECK(s0 > s1);
  CHECK(s1 > s2);
  CHECK(mk(10.0) == Catch::Approx(0.9 * std::exp(-5.0)));  // sigma clamped at 5
  CHECK(mk(40.0) == Catch::Approx(mk(10.0)));

  ModelConfig heat_only = cfg;
  heat_only.score_mode = ScoreMode::HeatOnly;
  DetectorModel::HeadOutputs ho;
  ho.heatmap = Tensor::zeros({3, H, W});
  ho.heatmap.value_mut()[3 * W + 3] = 0.9;
  ho.offset2d = Tensor::zeros({2, H, W});
  ho.size2d = Tensor::zeros({2, H, W});
  ho.offset3d = Tensor::zeros({2, H, W});
  ho.depth = Tensor::zeros({2, H, W});
  ho.dims = Tensor::zeros({3, H, W});
  ho.orientation = Tensor::zeros({16, H, W});
  CHECK(decode(ho, calib, heat_only, 0.5).at(0).score == Catch::Approx(0.9));
}

TEST_CASE("nms matches a brute-force greedy reference") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Detection> dets;
    for (int i = 0; i < 40; ++i) {
      Detection d;
      d.class_id = static_cast<int>(rng.uniform_int(0, 2));
      d.score = rng.uniform(0.0, 1.0);
      d.left = rng.uniform(0.0, 200.0);
      d.top = rng.uniform(0.0, 80.0);
      d.right = d.left + rng.uniform(5.0, 60.0);
      d.bottom = d.top + rng.uniform(5.0, 40.0);
      dets.push_back(d);
    }
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    const double thr = 0.5;
    auto kept = nms2d(dets, thr);

    // reference: independent greedy pass with its own IoU arithmetic
    std::vector<Detection> ref;
    for (const auto& d : dets) {
      bool ok = true;
      for (const auto& k : ref) {
        if (k.class_id != d.class_id) continue;
        const double iw = std::min(k.right, d.right) - std::max(k.left, d.left);
        const double ih = std::min(k.bottom, d.bottom) - std::max(k.top, d.top);
        const double inter = std::max(0.0, iw) * std::max(0.0, ih);
        const double uni = (k.right - k.left) * (k.bottom - k.top) +
                           (d.right - d.left) * (d.bottom - d.top) - inter;
        if (inter / uni >= thr) {
          ok = false;
          break;
        }
      }
      if (ok) ref.push_back(d);
    }
    REQUIRE(kept.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(kept[i].score == ref[i].score);
  }
}

TEST_CASE("zero-initialized fusion averages student and teacher exactly") {
  ModelConfig cfg;
  cfg.channels = {4, 6, 8, 10};
  FusionModule fm(cfg);
  Rng rng(13);
  for (int b = 2; b <= 4; ++b) {
    const int c = cfg.channels[b - 1];
    Tensor s = rand_tensor({c, 6, 8}, rng);
    Tensor t = rand_tensor({c, 6, 8}, rng);
    Tensor f = fm.fuse(b, s, t);
    for (std::size_t i = 0; i < f.numel(); ++i)
      CHECK(f.value()[i] == Catch::Approx(0.5 * (s.value()[i] + t.value()[i])).margin(1e-12));
  }
  CHECK_THROWS_AS(fm.fuse(2, rand_tensor({4, 6, 8}, rng), rand_tensor({4, 6, 10}, rng)),
                  ShapeMismatch);
}

TEST_CASE("fusion output is differentiable w.r.t. student and the gate") {
  ModelConfig cfg;
  cfg.channels = {4, 6, 8, 10};
  FusionModule fm(cfg);
  Rng rng(17);
  // nonzero gate so the softmax path carries gradient
  for (auto& p : fm.params().params())
    for (auto& v : p.tensor.value_mut()) v = rng.uniform(-0.5, 0.5);

  Tensor t = rand_tensor({8, 4, 4}, rng);
  Tensor s_leaf = rand_tensor({8, 4, 4}, rng, -1.0, 1.0, true);
  auto rep = grad_check([&](const Tensor&) { return sum(fm.fuse(3, s_leaf, t)); }, s_leaf);
  INFO(rep.max_rel_err);
  CHECK(rep.pass);

  Tensor& gate_w = fm.params().at("fusion.block3.w").tensor;
  auto rep2 = grad_check([&](const Tensor&) { return sum(fm.fuse(3, s_leaf, t)); }, gate_w);
  INFO(rep2.max_rel_err);
  CHECK(rep2.pass);
}

TEST_CASE("gaussian radius solves its quadratics and shrinks with overlap") {
  const double h = 14.0, w = 22.0;
  for (double mo : {0.5, 0.7, 0.9}) {
    const double r = gaussian_radius(h, w, mo);
    CHECK(r > 0.0);
    // r is the smallest of the three quadratic roots; each quadratic must be
    // satisfied by its own root, so check r against all three and require the
    // minimum to hit one of them
    const double c1 = w * h * (1 - mo) / (1 + mo);
    const double q1 = r * r - (h + w) * r + c1;
    const double q2 = 4 * r * r - 2 * (h + w) * r + (1 - mo) * w * h;
    const double q3 = 4 * mo * r * r + 2 * mo * (h + w) * r + (mo - 1) * w * h;
    const double closest = std::min({std::abs(q1), std::abs(q2), std::abs(q3)});
    CHECK(closest < 1e-9 * w * h);
  }
  CHECK(gaussian_radius(h, w, 0.9) < gaussian_radius(h, w, 0.7));
  CHECK(gaussian_radius(h, w, 0.7) < gaussian_radius(h, w, 0.5));
  CHECK(gaussian_radius(2 * h, 2 * w, 0.7) > gaussian_radius(h, w, 0.7));
}

TEST_CASE("target encoding: peaks, ranges, collisions, dontcare") {
  const auto calib = test_calib();
  ModelConfig cfg;
  std::vector<ObjectLabel> labels;
  labels.push_back(make_label("Car", -4.0, 1.6, 22.0, 1.5, 1.6, 3.9, 0.4, calib));
  labels.push_back(make_label("Pedestrian", 3.0, 1.6, 15.0, 1.8, 0.6, 0.8, -1.2, calib));
  ObjectLabel dc;
  dc.class_name = "DontCare";
  dc.left = 0;
  dc.top = 0;
  dc.right = 60;
  dc.bottom = 40;
  labels.push_back(dc);

  auto tgt = encode_targets(labels, calib, 1280, 384, cfg);
  REQUIRE(tgt.centers.size() == 2);
  for (const auto& c : tgt.centers) {
    CHECK(tgt.heat_at(c.cls, c.cv, c.cu) == 1.0);
    CHECK(c.off2d_u >= 0.0);
    CHECK(c.off2d_u < 1.0);
    CHECK(c.off2d_v >= 0.0);
    CHECK(c.off2d_v < 1.0);
    CHECK(c.z > 0.0);
  }
  for (double v : tgt.heatmap) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // same-cell collision: nearer object keeps the cell
  auto near_lbl = make_label("Car", -4.0, 1.6, 21.0, 1.5, 1.6, 3.9, 0.4, calib);
  auto far_lbl = make_label("Car", -4.0 * 22.0 / 21.0, 1.6 * 22.0 / 21.0, 22.0, 1.5, 1.6, 3.9,
                            0.4, calib);
  auto t2 = encode_targets({far_lbl, near_lbl}, calib, 1280, 384, cfg);
  if (t2.centers.size() == 1) CHECK(t2.centers[0].z == Catch::Approx(21.0).margin(0.1));

  // multibin assignment round trip
  for (int b = 0; b < 4; ++b) {
    for (double off : {-0.7, 0.0, 0.7}) {
      const double alpha = wrap_angle(multibin_center(b, 4) + off);
      const int got = multibin_assign(alpha, 4);
      CHECK(std::abs(wrap_angle(alpha - multibin_center(got, 4))) <= M_PI / 4 + 1e-12);
    }
  }
}

TEST_CASE("detection to label conversion restores the bottom-anchored y") {
  Detection d;
  d.class_id = 2;
  d.score = 0.71;
  d.x = 1.0;
  d.y = 0.8;
  d.z = 19.0;
  d.h = 1.7;
  d.w = 0.6;
  d.l = 1.8;
  d.ry = 0.3;
  d.alpha = 0.25;
  const auto o = detection_to_label(d);
  CHECK(o.class_name == "Cyclist");
  CHECK(o.y == Catch::Approx(0.8 + 0.85));
  CHECK(o.score == Catch::Approx(0.71));
  CHECK(o.has_score());
}

TEST_CASE("model config text round trip and validation") {
  ModelConfig cfg;
  cfg.channels = {6, 12, 24, 48};
  cfg.fused_channels = 16;
  cfg.head_hidden = 8;
  cfg.depth_init = 29.5;
  cfg.score_mode = ScoreMode::HeatOnly;
  cfg.aux_depth = true;
  const auto back = ModelConfig::from_text(cfg.to_text());
  CHECK(back == cfg);

  ModelConfig bad;
  bad.n_bins = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigInvalid);
  bad = ModelConfig{};
  bad.depth_init = -2.0;
  CHECK_THROWS_AS(bad.validate(), ConfigInvalid);
}

TEST_CASE("backbone and heads are differentiable end to end") {
  ModelConfig cfg;
  cfg.channels = {2, 3, 4, 5};
  cfg.fused_channels = 3;
  cfg.head_hidden = 2;
  DetectorModel model(cfg, 99);
  Rng rng(100);
  Tensor img = rand_tensor({3, 16, 16}, rng, 0.0, 1.0);

  Tensor& w = model.params().at("backbone.block1.conv1.w").tensor;
  auto rep = grad_check(
      [&](const Tensor&) {
        auto f = model.forward_backbone(img);
        auto h = model.forward_heads(f.fused);
        return add(sum(h.heatmap), add(sum(h.depth), sum(h.orientation)));
      },
      w, 1e-5, 2e-5);
  INFO(rep.max_rel_err);
  CHECK(rep.pass);
}
