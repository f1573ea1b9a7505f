// LiDAR-to-image projection, sparse depth densification, reduced-beam
// simulation, the 16-bit depth PNG convention, and the synthetic LiDAR
// ray-caster that turns a scene depth buffer into a point cloud.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "monokd/data_io.hpp"
#include "monokd/io_png.hpp"

namespace monokd {

struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;        // meters; 0 where invalid
  std::vector<std::uint8_t> valid;  // 0/1

  static DepthMap empty(int w, int h) {
    DepthMap m;
    m.width = w;
    m.height = h;
    m.depth.assign(static_cast<std::size_t>(w) * h, 0.0);
    m.valid.assign(static_cast<std::size_t>(w) * h, 0);
    return m;
  }
  std::size_t idx(int v, int u) const { return static_cast<std::size_t>(v) * width + u; }
  std::size_t n_valid() const {
    std::size_t n = 0;
    for (auto b : valid) n += b;
    return n;
  }
};

struct BeamModel {
  int n_beams = 64;
  double elevation_min = deg2rad(-24.9);
  double elevation_max = deg2rad(2.0);

  void validate() const {
    if (n_beams < 1) throw ConfigInvalid("beam model: n_beams must be >= 1");
    if (!(elevation_max > elevation_min)) throw ConfigInvalid("beam model: empty elevation span");
  }
};

// ---------------------------------------------------------------------------
// Projection. Points go lidar -> camera -> rectified -> pixel; rectified z is
// the stored depth, nearest point wins per pixel.
// ---------------------------------------------------------------------------

inline DepthMap project_lidar(const PointCloud& cloud, const CameraCalib& calib, int width,
                              int height) {
  calib.validate();
  if (width < 1 || height < 1) throw ConfigInvalid("project_lidar: empty image");
  DepthMap map = DepthMap::empty(width, height);
  for (const auto& p : cloud.points) {
    const auto rect = lidar_to_rect(calib, p.x, p.y, p.z);
    if (rect[2] <= 0.0) continue;
    const PixelPoint pp = project_rect(calib, rect[0], rect[1], rect[2]);
    if (!(pp.u >= 0.0 && pp.u < width && pp.v >= 0.0 && pp.v < height)) continue;
    const int u = static_cast<int>(pp.u);
    const int v = static_cast<int>(pp.v);
    const std::size_t i = map.idx(v, u);
    if (!map.valid[i] || pp.z < map.depth[i]) {
      map.depth[i] = pp.z;
      map.valid[i] = 1;
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// Densification: four classical passes. Valid input pixels are never altered
// and every emitted value is one of (or the median of) existing depths, so
// outputs stay inside the input's valid range.
//   1. min-dilate with a radius-2 diamond, filling invalid pixels only
//   2. min-fill over a 5x5 square, closing remaining small holes
//   3. multi-source BFS: leftover holes copy their nearest valid depth
//   4. 3x3 lower-median smoothing applied to originally-invalid pixels only
// ---------------------------------------------------------------------------

inline DepthMap densify(const DepthMap& sparse) {
  const int W = sparse.width, H = sparse.height;
  if (sparse.n_valid() == 0) throw EmptyInput("densify: no valid pixels");

  DepthMap out = sparse;

  // pass 1: diamond min-dilate
  {
    const DepthMap& in = sparse;
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u) {
        const std::size_t i = in.idx(v, u);
        if (in.valid[i]) continue;
        double best = 0;
        bool found = false;
        for (int dv = -2; dv <= 2; ++dv)
          for (int du = -2 + std::abs(dv); du <= 2 - std::abs(dv); ++du) {
            const int nv = v + dv, nu = u + du;
            if (nv < 0 || nv >= H || nu < 0 || nu >= W) continue;
            const std::size_t j = in.idx(nv, nu);
            if (in.valid[j] && (!found || in.depth[j] < best)) {
              best = in.depth[j];
              found = true;
            }
          }
        if (found) {
          out.depth[i] = best;
          out.valid[i] = 1;
        }
      }
  }

  // pass 2: 5x5 square min-fill over the result of pass 1
  {
    const DepthMap in = out;
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u) {
        const std::size_t i = in.idx(v, u);
        if (in.valid[i]) continue;
        double best = 0;
        bool found = false;
        for (int dv = -2; dv <= 2; ++dv)
          for (int du = -2; du <= 2; ++du) {
            const int nv = v + dv, nu = u + du;
            if (nv < 0 || nv >= H || nu < 0 || nu >= W) continue;
            const std::size_t j = in.idx(nv, nu);
            if (in.valid[j] && (!found || in.depth[j] < best)) {
              best = in.depth[j];
              found = true;
            }
          }
        if (found) {
          out.depth[i] = best;
          out.valid[i] = 1;
        }
      }
  }

  // pass 3: large holes copy the nearest valid value (4-connected BFS from
  // all valid pixels at once; deterministic visit order)
  {
    std::deque<std::size_t> queue;
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u)
        if (out.valid[out.idx(v, u)]) queue.push_back(out.idx(v, u));
    const int dv[4] = {-1, 1, 0, 0};
    const int du[4] = {0, 0, -1, 1};
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      const int v = static_cast<int>(i) / W, u = static_cast<int>(i) % W;
      for (int k = 0; k < 4; ++k) {
        const int nv = v + dv[k], nu = u + du[k];
        if (nv < 0 || nv >= H || nu < 0 || nu >= W) continue;
        const std::size_t j = out.idx(nv, nu);
        if (!out.valid[j]) {
          out.depth[j] = out.depth[i];
          out.valid[j] = 1;
          queue.push_back(j);
        }
      }
    }
  }

  // pass 4: lower-median smoothing of originally-invalid pixels, reading the
  // pre-median map so the pass order cannot leak into results
  {
    const DepthMap in = out;
    double window[9];
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u) {
        const std::size_t i = in.idx(v, u);
        if (sparse.valid[i]) continue;
        int n = 0;
        for (int dv = -1; dv <= 1; ++dv)
          for (int du = -1; du <= 1; ++du) {
            const int nv = v + dv, nu = u + du;
            if (nv < 0 || nv >= H || nu < 0 || nu >= W) continue;
            window[n++] = in.depth[in.idx(nv, nu)];
          }
        std::sort(window, window + n);
        out.depth[i] = window[(n - 1) / 2];
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reduced-beam simulation: bucket points by elevation into n_beams uniform
// bins and keep bins whose index is a multiple of keep_every.
// ---------------------------------------------------------------------------

inline PointCloud simulate_beams(const PointCloud& cloud, const BeamModel& model, int keep_every) {
  model.validate();
  if (keep_every < 1) throw ConfigInvalid("simulate_beams: keep_every must be >= 1");
  PointCloud out;
  const double span = model.elevation_max - model.elevation_min;
  for (const auto& p : cloud.points) {
    const double elev = std::atan2(p.z, std::sqrt(p.x * p.x + p.y * p.y));
    if (elev < model.elevation_min || elev > model.elevation_max) continue;
    int bin = static_cast<int>((elev - model.elevation_min) / span * model.n_beams);
    if (bin == model.n_beams) bin = model.n_beams - 1;  // top edge closes the last bin
    if (bin % keep_every == 0) out.points.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// 16-bit depth PNG convention: stored = round(depth * 256), 0 marks invalid.
// A valid depth that rounds to 0 is clamped up to 1 so validity survives the
// round trip.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_depth_png16(const DepthMap& map) {
  std::vector<std::uint16_t> pix(map.depth.size(), 0);
  for (std::size_t i = 0; i < map.depth.size(); ++i) {
    if (!map.valid[i]) continue;
    const long long v = std::llround(map.depth[i] * 256.0);
    if (v >= 65536) throw DepthOutOfRange(map.depth[i]);
    pix[i] = static_cast<std::uint16_t>(std::max(1LL, v));
  }
  return png_encode_gray16(pix, map.width, map.height);
}

inline DepthMap decode_depth_png16(const std::vector<std::uint8_t>& bytes) {
  const PngImage img = png_decode(bytes);
  if (img.channels != 1 || img.bit_depth != 16)
    throw IoError("depth png must be 16-bit grayscale");
  DepthMap map = DepthMap::empty(img.width, img.height);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u) {
      const std::uint16_t s = img.sample16(v, u);
      if (s == 0) continue;
      const std::size_t i = map.idx(v, u);
      map.depth[i] = s / 256.0;
      map.valid[i] = 1;
    }
  return map;
}

// ---------------------------------------------------------------------------
// Synthetic LiDAR: cast beam rays through the scene's depth buffer and return
// the hits as a point cloud in the LiDAR frame, ready for project_lidar.
// ---------------------------------------------------------------------------

inline PointCloud simulate_scene_cloud(const SyntheticScene& scene, const BeamModel& model,
                                       int azimuth_steps = 0) {
  model.validate();
  const CameraCalib& c = scene.calib;
  if (azimuth_steps <= 0) azimuth_steps = (scene.width * 3) / 2;
  // horizontal span that covers the image frustum
  const double a_max = std::atan((scene.width / 2.0) / c.fx()) * 1.05;
  PointCloud cloud;
  for (int b = 0; b < model.n_beams; ++b) {
    const double elev = model.elevation_min + (b + 0.5) * (model.elevation_max - model.elevation_min) /
                                                  model.n_beams;
    for (int a = 0; a < azimuth_steps; ++a) {
      const double az = -a_max + (a + 0.5) * (2 * a_max) / azimuth_steps;
      // lidar frame: x forward, y left, z up
      const double dl[3] = {std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                            std::sin(elev)};
      // direction in camera frame (rotation part of Tr only)
      const auto& t = c.tr_velo_to_cam;
      const double dc[3] = {t[0] * dl[0] + t[1] * dl[1] + t[2] * dl[2],
                            t[4] * dl[0] + t[5] * dl[1] + t[6] * dl[2],
                            t[8] * dl[0] + t[9] * dl[1] + t[10] * dl[2]};
      if (dc[2] <= 1e-6) continue;
      const double u = c.fx() * dc[0] / dc[2] + c.cx();
      const double v = c.fy() * dc[1] / dc[2] + c.cy();
      if (!(u >= 0 && u < scene.width && v >= 0 && v < scene.height)) continue;
      const int ui = static_cast<int>(u), vi = static_cast<int>(v);
      const double z = scene.gt_depth[static_cast<std::size_t>(vi) * scene.width + ui];
      // sample at the pixel center so reprojection lands in the same cell
      const auto rect = backproject_pixel(c, ui + 0.5, vi + 0.5, z);
      const auto l = rect_to_lidar(c, rect[0], rect[1], rect[2]);
      cloud.points.push_back({l[0], l[1], l[2], 0.5});
    }
  }
  return cloud;
}

// Teacher input: three channels derived from the depth map so the teacher
// shares the student's architecture. Channel 0 is depth normalized by 80 m,
// channel 1 inverse depth (finer resolution nearby), channel 2 a horizontal
// gradient that exposes surface slant and silhouette edges. Invalid pixels
// stay zero. Values are plain doubles; the caller wraps them in a tensor.
inline std::vector<double> teacher_input_channels(const DepthMap& dense, double norm = 80.0) {
  const int H = dense.height, W = dense.width;
  const std::size_t n = dense.depth.size();
  std::vector<double> out(3 * n, 0.0);
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      const std::size_t i = dense.idx(v, u);
      if (!dense.valid[i]) continue;
      const double d = dense.depth[i];
      out[i] = std::clamp(d / norm, 0.0, 1.0);
      out[n + i] = std::clamp(4.0 / std::max(d, 1e-6), 0.0, 1.0);
      const std::size_t il = dense.idx(v, u > 0 ? u - 1 : u);
      const std::size_t ir = dense.idx(v, u + 1 < W ? u + 1 : u);
      const double dl = dense.valid[il] ? dense.depth[il] : d;
      const double dr = dense.valid[ir] ? dense.depth[ir] : d;
      out[2 * n + i] = std::clamp(0.5 + (dr - dl) / 8.0, 0.0, 1.0);
    }
  return out;
}

}  // namespace monokd
