#pragma once

// Rendering for eval artifacts: detection overlays on the scene image, a
// top-down sketch of boxes in the ground plane, and a bare-bones scatter
// plot. Everything is an 8-bit RGB buffer encoded to PNG.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "monokd/data_io.hpp"
#include "monokd/detector.hpp"
#include "monokd/evaluation.hpp"
#include "monokd/io_png.hpp"

namespace monokd {

struct Canvas {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major

  static Canvas filled(int w, int h, std::array<std::uint8_t, 3> color) {
    Canvas c;
    c.width = w;
    c.height = h;
    c.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < c.rgb.size(); i += 3) {
      c.rgb[i] = color[0];
      c.rgb[i + 1] = color[1];
      c.rgb[i + 2] = color[2];
    }
    return c;
  }

  // Planar [0,1] doubles to interleaved bytes.
  static Canvas from_chw(const std::vector<double>& chw, int w, int h) {
    Canvas c;
    c.width = w;
    c.height = h;
    c.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    for (std::size_t i = 0; i < plane; ++i)
      for (int ch = 0; ch < 3; ++ch)
        c.rgb[3 * i + ch] = static_cast<std::uint8_t>(
            std::lround(std::clamp(chw[ch * plane + i], 0.0, 1.0) * 255.0));
    return c;
  }

  void set(int x, int y, std::array<std::uint8_t, 3> color) {
    if (x < 0 || x >= width || y < 0 || y >= height) return;
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = color[0];
    rgb[i + 1] = color[1];
    rgb[i + 2] = color[2];
  }

  void line(double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> color) {
    const int steps = 1 + static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0)));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      set(static_cast<int>(std::lround(x0 + t * (x1 - x0))),
          static_cast<int>(std::lround(y0 + t * (y1 - y0))), color);
    }
  }

  void rect(double l, double t, double r, double b, std::array<std::uint8_t, 3> color) {
    line(l, t, r, t, color);
    line(r, t, r, b, color);
    line(r, b, l, b, color);
    line(l, b, l, t, color);
  }

  std::vector<std::uint8_t> to_png() const { return png_encode_rgb8(rgb, width, height); }
};

inline constexpr std::array<std::uint8_t, 3> kGtColor{230, 230, 230};
inline constexpr std::array<std::uint8_t, 3> kClassColors[3] = {
    {60, 200, 60}, {230, 90, 90}, {90, 120, 230}};

// Scene image with ground-truth boxes in light gray and detections colored by
// class; detection brightness tracks confidence.
inline std::vector<std::uint8_t> render_detection_overlay(const SyntheticScene& scene,
                                                          const std::vector<Detection>& dets,
                                                          bool draw_gt = true) {
  Canvas c = Canvas::from_chw(scene.rgb, scene.width, scene.height);
  if (draw_gt)
    for (const auto& g : scene.objects)
      if (!g.is_dontcare()) c.rect(g.left, g.top, g.right, g.bottom, kGtColor);
  for (const auto& d : dets) {
    auto color = kClassColors[d.class_id % 3];
    const double f = 0.4 + 0.6 * std::clamp(d.score, 0.0, 1.0);
    for (auto& ch : color) ch = static_cast<std::uint8_t>(ch * f);
    c.rect(d.left, d.top, d.right, d.bottom, color);
  }
  return c.to_png();
}

// Ground-plane sketch: camera at the bottom center, z up, x right. Ground
// truth in gray, detections colored by class.
inline std::vector<std::uint8_t> render_bev_sketch(const std::vector<Detection>& dets,
                                                   const std::vector<ObjectLabel>& gts,
                                                   double range_x = 20.0, double range_z = 50.0,
                                                   int px_per_m = 8) {
  const int w = static_cast<int>(2 * range_x * px_per_m);
  const int h = static_cast<int>(range_z * px_per_m);
  Canvas c = Canvas::filled(w, h, {24, 24, 32});
  // faint range rings every 10 m
  for (int ring = 10; ring <= range_z; ring += 10) {
    const int y = h - 1 - ring * px_per_m;
    for (int x = 0; x < w; x += 4) c.set(x, y, {52, 52, 64});
  }
  const auto to_px = [&](double x, double z) {
    return std::array<double, 2>{(x + range_x) * px_per_m, h - 1 - z * px_per_m};
  };
  const auto draw_box = [&](const Box3D& b, std::array<std::uint8_t, 3> color) {
    const auto corners = evdetail::bev_corners(b);
    for (int i = 0; i < 4; ++i) {
      const auto p = to_px(corners[i][0], corners[i][1]);
      const auto q = to_px(corners[(i + 1) % 4][0], corners[(i + 1) % 4][1]);
      c.line(p[0], p[1], q[0], q[1], color);
    }
    // heading tick from the center through the front edge midpoint
    const auto ctr = to_px(b.x, b.z);
    const auto front = to_px((corners[0][0] + corners[1][0]) / 2, (corners[0][1] + corners[1][1]) / 2);
    c.line(ctr[0], ctr[1], front[0], front[1], color);
  };
  for (const auto& g : gts)
    if (!g.is_dontcare()) draw_box(box_of(g), kGtColor);
  for (const auto& d : dets) draw_box(box_of(d), kClassColors[d.class_id % 3]);
  return c.to_png();
}

// Scatter of (x, y) points with a fitted line, for the depth-error figure.
inline std::vector<std::uint8_t> render_scatter(const std::vector<std::array<double, 2>>& pts,
                                                double slope, double intercept, int w = 480,
                                                int h = 320) {
  Canvas c = Canvas::filled(w, h, {255, 255, 255});
  double xmax = 1, ymax = 1;
  for (const auto& p : pts) {
    xmax = std::max(xmax, p[0]);
    ymax = std::max(ymax, p[1]);
  }
  xmax *= 1.05;
  ymax *= 1.05;
  const int m = 24;  // margin for axes
  const auto to_px = [&](double x, double y) {
    return std::array<double, 2>{m + x / xmax * (w - m - 4), h - m - y / ymax * (h - m - 4)};
  };
  c.line(m, h - m, w - 2, h - m, {0, 0, 0});
  c.line(m, h - m, m, 2, {0, 0, 0});
  for (const auto& p : pts) {
    const auto q = to_px(p[0], p[1]);
    const int qx = static_cast<int>(q[0]), qy = static_cast<int>(q[1]);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) c.set(qx + dx, qy + dy, {60, 90, 200});
  }
  const auto p0 = to_px(0, intercept);
  const auto p1 = to_px(xmax, slope * xmax + intercept);
  c.line(p0[0], p0[1], p1[0], p1[1], {200, 60, 60});
  return c.to_png();
}

}  // namespace monokd
