// KITTI-format calibration / label / velodyne parsing, and the deterministic
// synthetic driving-scene generator used for end-to-end experiments.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "monokd/common.hpp"

namespace monokd {

static_assert(std::endian::native == std::endian::little,
              "velodyne records are little-endian f32");

// ---------------------------------------------------------------------------
// Domain types.
// ---------------------------------------------------------------------------

struct CameraCalib {
  std::array<double, 12> p2{};             // 3x4 row-major
  std::array<double, 9> r0_rect{};         // 3x3 row-major
  std::array<double, 12> tr_velo_to_cam{}; // 3x4 row-major

  double fx() const { return p2[0]; }
  double cx() const { return p2[2]; }
  double tx() const { return p2[3]; }
  double fy() const { return p2[5]; }
  double cy() const { return p2[6]; }
  double ty() const { return p2[7]; }
  double tz() const { return p2[11]; }

  void validate() const {
    for (double v : p2)
      if (!std::isfinite(v)) throw ConfigInvalid("calib: non-finite P2 entry");
    for (double v : r0_rect)
      if (!std::isfinite(v)) throw ConfigInvalid("calib: non-finite R0_rect entry");
    for (double v : tr_velo_to_cam)
      if (!std::isfinite(v)) throw ConfigInvalid("calib: non-finite Tr entry");
    if (std::fabs(p2[8]) > 1e-9 || std::fabs(p2[9]) > 1e-9 || std::fabs(p2[10] - 1.0) > 1e-9)
      throw ConfigInvalid("calib: P2 third row must be (0,0,1,t)");
    // R0 orthonormality: R R^T = I within 1e-4
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += r0_rect[i * 3 + k] * r0_rect[j * 3 + k];
        if (std::fabs(s - (i == j ? 1.0 : 0.0)) > 1e-4)
          throw ConfigInvalid("calib: R0_rect not orthonormal");
      }
  }
};

struct LidarPoint {
  double x = 0, y = 0, z = 0, reflectance = 0;
};

struct PointCloud {
  std::vector<LidarPoint> points;
};

struct ObjectLabel {
  std::string class_name;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  double left = 0, top = 0, right = 0, bottom = 0;  // 2D box, pixels
  double h = 0, w = 0, l = 0;                       // meters
  double x = 0, y = 0, z = 0;                       // bottom-center, camera frame
  double ry = 0.0;
  double score = std::numeric_limits<double>::quiet_NaN();  // detections only

  bool is_dontcare() const { return class_name == "DontCare"; }
  bool has_score() const { return !std::isnan(score); }
};

inline int class_id(const std::string& name) {
  if (name == "Car") return 0;
  if (name == "Pedestrian") return 1;
  if (name == "Cyclist") return 2;
  return -1;
}

inline const char* class_name_of(int id) {
  static const char* names[3] = {"Car", "Pedestrian", "Cyclist"};
  return (id >= 0 && id < 3) ? names[id] : "DontCare";
}

// Mean (h, w, l) per class; residual-based dimension decoding multiplies these.
inline std::array<double, 3> class_dims_prior(int id) {
  switch (id) {
    case 0: return {1.53, 1.63, 3.88};
    case 1: return {1.76, 0.66, 0.84};
    case 2: return {1.74, 0.60, 1.76};
    default: throw ConfigInvalid("dims prior: unknown class id " + std::to_string(id));
  }
}

// ---------------------------------------------------------------------------
// Geometry helpers shared by projection, rendering, and evaluation.
// ---------------------------------------------------------------------------

struct PixelPoint {
  double u = 0, v = 0, z = 0;  // z is rectified-camera depth
};

inline std::array<double, 3> lidar_to_rect(const CameraCalib& c, double x, double y, double z) {
  const auto& t = c.tr_velo_to_cam;
  const double cx = t[0] * x + t[1] * y + t[2] * z + t[3];
  const double cy = t[4] * x + t[5] * y + t[6] * z + t[7];
  const double cz = t[8] * x + t[9] * y + t[10] * z + t[11];
  const auto& r = c.r0_rect;
  return {r[0] * cx + r[1] * cy + r[2] * cz, r[3] * cx + r[4] * cy + r[5] * cz,
          r[6] * cx + r[7] * cy + r[8] * cz};
}

inline std::array<double, 3> rect_to_lidar(const CameraCalib& c, double x, double y, double z) {
  // Stored R0 matrices are orthonormal only to file precision, so invert
  // exactly (adjugate over determinant) rather than transposing.
  const auto& r = c.r0_rect;
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  if (std::fabs(det) < 1e-12) throw ConfigInvalid("calib: R0_rect singular");
  const double inv[9] = {
      (r[4] * r[8] - r[5] * r[7]) / det, (r[2] * r[7] - r[1] * r[8]) / det,
      (r[1] * r[5] - r[2] * r[4]) / det, (r[5] * r[6] - r[3] * r[8]) / det,
      (r[0] * r[8] - r[2] * r[6]) / det, (r[2] * r[3] - r[0] * r[5]) / det,
      (r[3] * r[7] - r[4] * r[6]) / det, (r[1] * r[6] - r[0] * r[7]) / det,
      (r[0] * r[4] - r[1] * r[3]) / det};
  const double cx = inv[0] * x + inv[1] * y + inv[2] * z;
  const double cy = inv[3] * x + inv[4] * y + inv[5] * z;
  const double cz = inv[6] * x + inv[7] * y + inv[8] * z;
  const auto& t = c.tr_velo_to_cam;
  const double m[9] = {t[0], t[1], t[2], t[4], t[5], t[6], t[8], t[9], t[10]};
  const double dt = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                    m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (std::fabs(dt) < 1e-12) throw ConfigInvalid("calib: Tr rotation singular");
  const double mi[9] = {
      (m[4] * m[8] - m[5] * m[7]) / dt, (m[2] * m[7] - m[1] * m[8]) / dt,
      (m[1] * m[5] - m[2] * m[4]) / dt, (m[5] * m[6] - m[3] * m[8]) / dt,
      (m[0] * m[8] - m[2] * m[6]) / dt, (m[2] * m[3] - m[0] * m[5]) / dt,
      (m[3] * m[7] - m[4] * m[6]) / dt, (m[1] * m[6] - m[0] * m[7]) / dt,
      (m[0] * m[4] - m[1] * m[3]) / dt};
  const double dx = cx - t[3], dy = cy - t[7], dz = cz - t[11];
  return {mi[0] * dx + mi[1] * dy + mi[2] * dz, mi[3] * dx + mi[4] * dy + mi[5] * dz,
          mi[6] * dx + mi[7] * dy + mi[8] * dz};
}

// Rectified camera point -> pixel. The homogeneous divisor is z + t3; the
// depth carried along is the rectified z itself.
inline PixelPoint project_rect(const CameraCalib& c, double x, double y, double z) {
  const auto& p = c.p2;
  const double w = p[8] * x + p[9] * y + p[10] * z + p[11];
  PixelPoint out;
  out.u = (p[0] * x + p[1] * y + p[2] * z + p[3]) / w;
  out.v = (p[4] * x + p[5] * y + p[6] * z + p[7]) / w;
  out.z = z;
  return out;
}

// Pixel + rectified depth -> rectified camera point (pinhole P2 with offsets).
inline std::array<double, 3> backproject_pixel(const CameraCalib& c, double u, double v,
                                               double z) {
  const double w = z + c.tz();
  const double x = (u * w - c.cx() * z - c.tx()) / c.fx();
  const double y = (v * w - c.cy() * z - c.ty()) / c.fy();
  return {x, y, z};
}

// The 8 box corners in the rectified camera frame. Index order: bottom ring
// 0..3 (+l+w, +l-w, -l-w, -l+w halves), then the top ring 4..7 above them.
inline std::array<std::array<double, 3>, 8> corners3d(const ObjectLabel& o) {
  const double c = std::cos(o.ry), s = std::sin(o.ry);
  const double xs[4] = {o.l / 2, o.l / 2, -o.l / 2, -o.l / 2};
  const double zs[4] = {o.w / 2, -o.w / 2, -o.w / 2, o.w / 2};
  std::array<std::array<double, 3>, 8> out;
  for (int i = 0; i < 8; ++i) {
    const double lx = xs[i % 4];
    const double lz = zs[i % 4];
    const double ly = (i < 4) ? 0.0 : -o.h;  // y down: top ring is -h
    out[i] = {c * lx + s * lz + o.x, ly + o.y, -s * lx + c * lz + o.z};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text parsing. Column numbers are 1-based character offsets of the token
// that failed to parse.
// ---------------------------------------------------------------------------

namespace iodetail {

struct Tok {
  std::string text;
  int line;
  int col;
};

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

inline std::vector<Tok> tokenize(const std::string& line, int line_no, std::size_t from = 0) {
  std::vector<Tok> toks;
  std::size_t i = from;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    toks.push_back({line.substr(i, j - i), line_no, static_cast<int>(i + 1)});
    i = j;
  }
  return toks;
}

inline double parse_double(const Tok& t) {
  const char* s = t.text.c_str();
  char* end = nullptr;
  double v = std::strtod(s, &end);
  if (end != s + t.text.size() || t.text.empty()) throw MalformedNumber(t.line, t.col);
  return v;
}

}  // namespace iodetail

inline CameraCalib parse_calib(const std::string& text) {
  CameraCalib c;
  bool have_p2 = false, have_r0 = false, have_tr = false;
  const auto lines = iodetail::split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::string& line = lines[li];
    const std::size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    const auto toks = iodetail::tokenize(line, static_cast<int>(li + 1), colon + 1);
    auto fill = [&](double* dst, std::size_t n) {
      if (toks.size() != n)
        throw MalformedNumber(static_cast<int>(li + 1), static_cast<int>(line.size() + 1));
      for (std::size_t i = 0; i < n; ++i) dst[i] = iodetail::parse_double(toks[i]);
    };
    if (key == "P2") {
      fill(c.p2.data(), 12);
      have_p2 = true;
    } else if (key == "R0_rect") {
      fill(c.r0_rect.data(), 9);
      have_r0 = true;
    } else if (key == "Tr_velo_to_cam") {
      fill(c.tr_velo_to_cam.data(), 12);
      have_tr = true;
    }  // unknown keys ignored
  }
  if (!have_p2) throw MissingKey("P2");
  if (!have_r0) throw MissingKey("R0_rect");
  if (!have_tr) throw MissingKey("Tr_velo_to_cam");
  c.validate();
  return c;
}

inline std::string serialize_calib(const CameraCalib& c) {
  auto row = [](const char* key, const double* v, std::size_t n) {
    std::string s = key;
    s += ":";
    char buf[32];
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof buf, " %.17g", v[i]);
      s += buf;
    }
    return s + "\n";
  };
  return row("P2", c.p2.data(), 12) + row("R0_rect", c.r0_rect.data(), 9) +
         row("Tr_velo_to_cam", c.tr_velo_to_cam.data(), 12);
}

inline std::vector<ObjectLabel> parse_labels(const std::string& text) {
  std::vector<ObjectLabel> out;
  const auto lines = iodetail::split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const auto toks = iodetail::tokenize(lines[li], static_cast<int>(li + 1));
    if (toks.empty()) continue;
    if (toks.size() < 15) throw FieldCount(static_cast<int>(li + 1));
    ObjectLabel o;
    o.class_name = toks[0].text;
    o.truncation = iodetail::parse_double(toks[1]);
    o.occlusion = static_cast<int>(iodetail::parse_double(toks[2]));
    o.alpha = iodetail::parse_double(toks[3]);
    o.left = iodetail::parse_double(toks[4]);
    o.top = iodetail::parse_double(toks[5]);
    o.right = iodetail::parse_double(toks[6]);
    o.bottom = iodetail::parse_double(toks[7]);
    o.h = iodetail::parse_double(toks[8]);
    o.w = iodetail::parse_double(toks[9]);
    o.l = iodetail::parse_double(toks[10]);
    o.x = iodetail::parse_double(toks[11]);
    o.y = iodetail::parse_double(toks[12]);
    o.z = iodetail::parse_double(toks[13]);
    o.ry = iodetail::parse_double(toks[14]);
    if (toks.size() >= 16) o.score = iodetail::parse_double(toks[15]);
    out.push_back(std::move(o));
  }
  return out;
}

inline std::string serialize_labels(const std::vector<ObjectLabel>& labels) {
  std::string out;
  char buf[512];
  for (const auto& o : labels) {
    std::snprintf(buf, sizeof buf,
                  "%s %.10g %d %.10g %.10g %.10g %.10g %.10g %.10g %.10g %.10g %.10g %.10g %.10g "
                  "%.10g",
                  o.class_name.c_str(), o.truncation, o.occlusion, o.alpha, o.left, o.top, o.right,
                  o.bottom, o.h, o.w, o.l, o.x, o.y, o.z, o.ry);
    out += buf;
    if (o.has_score()) {
      std::snprintf(buf, sizeof buf, " %.10g", o.score);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

inline PointCloud read_velodyne(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() % 16 != 0) throw TruncatedRecord(bytes.size());
  PointCloud pc;
  pc.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    float f[4];
    std::memcpy(f, bytes.data() + i * 16, 16);
    pc.points[i] = {f[0], f[1], f[2], f[3]};
  }
  return pc;
}

inline std::vector<std::uint8_t> write_velodyne(const PointCloud& pc) {
  std::vector<std::uint8_t> bytes(pc.points.size() * 16);
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    const float f[4] = {static_cast<float>(pc.points[i].x), static_cast<float>(pc.points[i].y),
                        static_cast<float>(pc.points[i].z),
                        static_cast<float>(pc.points[i].reflectance)};
    std::memcpy(bytes.data() + i * 16, f, 16);
  }
  return bytes;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark scenes. A scene is a pure function of (seed, config):
// cuboid objects standing on a ground plane, shaded RGB, exact depth buffer
// and exact labels. Object depth uses a billboard convention (each object
// pixel stores the 3D-center depth) so labels and depth agree exactly.
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  int width = 320;
  int height = 96;
  double focal = 200.0;
  int min_objects = 2;
  int max_objects = 5;
  double min_depth = 8.0;
  double max_depth = 60.0;
  double car_frac = 0.70;
  double ped_frac = 0.15;
  double cyc_frac = 0.15;
  double background_depth = 80.0;
  double cam_height_min = 1.35;  // per-scene ground-plane distance below camera
  double cam_height_max = 1.95;
  double dims_sigma = 0.08;      // log-normal spread around class size priors
  double albedo_jitter = 0.15;
  double min_center_sep = 12.0;  // pixels between projected 3D centers

  void validate() const {
    if (width < 16 || height < 16 || width % 16 || height % 16)
      throw ConfigInvalid("synthetic: width/height must be positive multiples of 16");
    if (focal <= 0) throw ConfigInvalid("synthetic: focal must be positive");
    if (min_objects < 0 || max_objects < min_objects)
      throw ConfigInvalid("synthetic: bad object count range");
    if (!(0 < min_depth && min_depth < max_depth && max_depth < background_depth))
      throw ConfigInvalid("synthetic: need 0 < min_depth < max_depth < background_depth");
    if (background_depth >= 255.0)
      throw ConfigInvalid("synthetic: background_depth must stay below the 255 m depth encoding");
    if (car_frac < 0 || ped_frac < 0 || cyc_frac < 0 || car_frac + ped_frac + cyc_frac <= 0)
      throw ConfigInvalid("synthetic: class mix must be nonnegative and not all zero");
    if (!(0 < cam_height_min && cam_height_min <= cam_height_max))
      throw ConfigInvalid("synthetic: bad camera height range");
    if (dims_sigma < 0 || albedo_jitter < 0 || min_center_sep < 0)
      throw ConfigInvalid("synthetic: negative jitter");
  }
};

struct SyntheticScene {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;       // 3*H*W planar, values in [0,1]
  std::vector<double> gt_depth;  // H*W meters
  std::vector<ObjectLabel> objects;
  CameraCalib calib;
  std::uint64_t seed = 0;
};

namespace iodetail {

// Position-keyed noise so textures do not depend on rng draw order.
inline double hash_noise(std::uint64_t seed, int x, int y, int k) {
  std::uint64_t h = splitmix64(seed ^ (static_cast<std::uint64_t>(x) << 40) ^
                               (static_cast<std::uint64_t>(y) << 20) ^
                               static_cast<std::uint64_t>(k));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline bool inside_convex_quad(const double qu[4], const double qv[4], double pu, double pv) {
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const int j = (i + 1) % 4;
    const double cr = (qu[j] - qu[i]) * (pv - qv[i]) - (qv[j] - qv[i]) * (pu - qu[i]);
    if (cr > 1e-12) {
      if (sign < 0) return false;
      sign = 1;
    } else if (cr < -1e-12) {
      if (sign > 0) return false;
      sign = -1;
    }
  }
  return true;
}

}  // namespace iodetail

inline CameraCalib synthetic_calib(const SyntheticConfig& cfg) {
  CameraCalib c;
  c.p2 = {cfg.focal, 0, cfg.width / 2.0, 0, 0, cfg.focal, cfg.height / 2.0, 0, 0, 0, 1, 0};
  c.r0_rect = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  // lidar (x fwd, y left, z up) -> camera (x right, y down, z fwd)
  c.tr_velo_to_cam = {0, -1, 0, -4.07e-3, 0, 0, -1, -7.63e-2, 1, 0, 0, -2.72e-1};
  return c;
}

inline SyntheticScene generate_synthetic_scene(std::uint64_t seed, const SyntheticConfig& cfg) {
  cfg.validate();
  const int W = cfg.width, H = cfg.height;
  const double cy = H / 2.0, f = cfg.focal;

  SyntheticScene scene;
  scene.width = W;
  scene.height = H;
  scene.seed = seed;
  scene.calib = synthetic_calib(cfg);
  scene.rgb.assign(3 * static_cast<std::size_t>(H) * W, 0.0);
  scene.gt_depth.assign(static_cast<std::size_t>(H) * W, cfg.background_depth);

  Rng rng(mix_seed(seed, "scene"));
  const double cam_h = rng.uniform(cfg.cam_height_min, cfg.cam_height_max);
  const double sky_base = 0.55 + 0.10 * rng.uniform();
  const double ground_albedo = 0.30 + 0.15 * rng.uniform();

  auto px = [&](int c, int v, int u) -> double& {
    return scene.rgb[(static_cast<std::size_t>(c) * H + v) * W + u];
  };

  // Background: sky above the horizon row, ground plane below. Ground shading
  // is a function of the row only, so pixel intensities betray nothing about
  // the per-scene camera height (depth from shading stays ambiguous).
  for (int v = 0; v < H; ++v) {
    const double vc = v + 0.5;
    double r, g, b;
    if (vc > cy) {
      const double z = std::min(f * cam_h / (vc - cy), cfg.background_depth);
      for (int u = 0; u < W; ++u) scene.gt_depth[v * W + u] = z;
      const double s = ground_albedo * (0.55 + 0.45 * (vc - cy) / (H - cy));
      r = s;
      g = s * 0.98;
      b = s * 0.92;
    } else {
      const double t = vc / cy;
      const double s = sky_base + 0.12 * t;
      r = s * 0.90;
      g = s * 0.97;
      b = s * 1.08;
    }
    for (int u = 0; u < W; ++u) {
      const double n = 0.04 * (iodetail::hash_noise(seed, u, v, 7) - 0.5);
      px(0, v, u) = std::clamp(r + n, 0.0, 1.0);
      px(1, v, u) = std::clamp(g + n, 0.0, 1.0);
      px(2, v, u) = std::clamp(b + n, 0.0, 1.0);
    }
  }

  // Place objects with rejection sampling: all 8 corners must project inside
  // the frame and projected centers must stay separated.
  const int n_target =
      cfg.max_objects > cfg.min_objects
          ? static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects))
          : cfg.min_objects;
  const double mix_total = cfg.car_frac + cfg.ped_frac + cfg.cyc_frac;
  std::vector<PixelPoint> centers;
  for (int i = 0; i < n_target; ++i) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double pick = rng.uniform() * mix_total;
      const int cls = pick < cfg.car_frac ? 0 : (pick < cfg.car_frac + cfg.ped_frac ? 1 : 2);
      const auto prior = class_dims_prior(cls);
      ObjectLabel o;
      o.class_name = class_name_of(cls);
      o.h = prior[0] * std::exp(rng.normal() * cfg.dims_sigma);
      o.w = prior[1] * std::exp(rng.normal() * cfg.dims_sigma);
      o.l = prior[2] * std::exp(rng.normal() * cfg.dims_sigma);
      o.z = rng.uniform(cfg.min_depth, cfg.max_depth);
      o.x = rng.uniform(-0.9, 0.9) * (W / 2.0) / f * o.z;
      o.y = cam_h;  // bottom face on the ground plane
      if (cls == 0) {
        // traffic mostly follows the road axis, with some cross traffic
        const double pick_dir = rng.uniform();
        const double base = pick_dir < 0.375 ? 0.0
                            : pick_dir < 0.75 ? M_PI
                            : pick_dir < 0.875 ? M_PI / 2
                                               : -M_PI / 2;
        o.ry = wrap_angle(base + rng.uniform(-0.35, 0.35));
      } else {
        o.ry = rng.uniform(-M_PI, M_PI);
      }
      o.alpha = wrap_angle(o.ry - std::atan2(o.x, o.z));

      const auto cs = corners3d(o);
      double lo_u = 1e30, hi_u = -1e30, lo_v = 1e30, hi_v = -1e30;
      bool ok = true;
      for (const auto& cpt : cs) {
        if (cpt[2] <= 0.5) {
          ok = false;
          break;
        }
        const PixelPoint pp = project_rect(scene.calib, cpt[0], cpt[1], cpt[2]);
        lo_u = std::min(lo_u, pp.u);
        hi_u = std::max(hi_u, pp.u);
        lo_v = std::min(lo_v, pp.v);
        hi_v = std::max(hi_v, pp.v);
      }
      if (!ok || lo_u < 1.0 || hi_u >= W - 1.0 || lo_v < 1.0 || hi_v >= H - 1.0) continue;
      const PixelPoint ctr = project_rect(scene.calib, o.x, o.y - o.h / 2, o.z);
      for (const auto& c0 : centers)
        if (std::hypot(ctr.u - c0.u, ctr.v - c0.v) < cfg.min_center_sep) {
          ok = false;
          break;
        }
      if (!ok) continue;
      o.left = lo_u;
      o.top = lo_v;
      o.right = hi_u;
      o.bottom = hi_v;
      centers.push_back(ctr);
      scene.objects.push_back(std::move(o));
      break;
    }
  }

  // Painter's rendering, far to near. Each covered pixel stores the true
  // depth of its face plane, so the buffer carries the depth ramp a real
  // range sensor would see across a rotated box.
  std::vector<int> order(scene.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scene.objects[a].z > scene.objects[b].z; });

  const double ldir[3] = {0.25, 0.80, 0.35};  // light travel direction, camera frame
  const double lnorm = std::sqrt(ldir[0] * ldir[0] + ldir[1] * ldir[1] + ldir[2] * ldir[2]);

  struct FacePix {
    double r, g, b;
  };
  std::vector<std::vector<std::size_t>> masks(scene.objects.size());
  std::vector<std::vector<double>> face_depths(scene.objects.size());

  for (int oi : order) {
    const ObjectLabel& o = scene.objects[oi];
    const int cls = class_id(o.class_name);
    const double base[3][3] = {{0.60, 0.15, 0.15}, {0.15, 0.35, 0.60}, {0.15, 0.55, 0.20}};
    double albedo[3];
    for (int c = 0; c < 3; ++c)
      albedo[c] = std::clamp(
          base[cls][c] * (1.0 + rng.uniform(-cfg.albedo_jitter, cfg.albedo_jitter)), 0.02, 1.0);

    const auto cs = corners3d(o);
    // faces: corner indices + outward normal in the object frame
    static const int faces[6][4] = {{0, 1, 5, 4}, {3, 2, 6, 7}, {0, 3, 7, 4},
                                    {1, 2, 6, 5}, {4, 5, 6, 7}, {0, 1, 2, 3}};
    static const double fnorm[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 0, 1},
                                       {0, 0, -1}, {0, -1, 0}, {0, 1, 0}};
    const double cr = std::cos(o.ry), sr = std::sin(o.ry);

    struct Visible {
      int idx;
      double depth;
      double n[3], c[3];  // camera-frame face normal and center
    };
    std::vector<Visible> vis;
    for (int fi = 0; fi < 6; ++fi) {
      Visible vf;
      vf.idx = fi;
      vf.n[0] = cr * fnorm[fi][0] + sr * fnorm[fi][2];
      vf.n[1] = fnorm[fi][1];
      vf.n[2] = -sr * fnorm[fi][0] + cr * fnorm[fi][2];
      vf.c[0] = vf.c[1] = vf.c[2] = 0;
      for (int k = 0; k < 4; ++k)
        for (int d = 0; d < 3; ++d) vf.c[d] += cs[faces[fi][k]][d] / 4.0;
      vf.depth = vf.c[2];
      if (vf.n[0] * vf.c[0] + vf.n[1] * vf.c[1] + vf.n[2] * vf.c[2] < 0) vis.push_back(vf);
    }
    std::sort(vis.begin(), vis.end(),
              [](const Visible& a, const Visible& b) { return a.depth > b.depth; });

    std::vector<std::size_t> covered;
    std::vector<FacePix> colors;
    std::vector<double> depths;
    std::vector<std::size_t> where(static_cast<std::size_t>(H) * W, SIZE_MAX);
    for (const auto& vf : vis) {
      const int fi = vf.idx;
      const double nx = vf.n[0], ny = vf.n[1], nz = vf.n[2];
      double lam = 0.30 + 0.70 * std::max(0.0, -(nx * ldir[0] + ny * ldir[1] + nz * ldir[2]) / lnorm);
      // per-face tints make the heading recoverable from color alone
      double tint[3] = {1, 1, 1};
      if (fi == 0) {  // heading face: bright and warm
        lam *= 1.25;
        tint[0] = 1.35; tint[1] = 0.72; tint[2] = 0.72;
      } else if (fi == 1) {  // rear face: dark and cool
        lam *= 0.85;
        tint[0] = 0.70; tint[1] = 0.85; tint[2] = 1.15;
      } else if (fi == 2) {  // left flank greenish, right bluish
        tint[0] = 0.85; tint[1] = 1.15; tint[2] = 0.85;
      } else if (fi == 3) {
        tint[0] = 0.90; tint[1] = 0.90; tint[2] = 1.20;
      }
      const double n_dot_c = nx * vf.c[0] + ny * vf.c[1] + nz * vf.c[2];
      double fz_lo = 1e30, fz_hi = -1e30;
      for (int k = 0; k < 4; ++k) {
        fz_lo = std::min(fz_lo, cs[faces[fi][k]][2]);
        fz_hi = std::max(fz_hi, cs[faces[fi][k]][2]);
      }
      double qu[4], qv[4];
      double blo_u = 1e30, bhi_u = -1e30, blo_v = 1e30, bhi_v = -1e30;
      for (int k = 0; k < 4; ++k) {
        const auto& cpt = cs[faces[fi][k]];
        const PixelPoint pp = project_rect(scene.calib, cpt[0], cpt[1], cpt[2]);
        qu[k] = pp.u;
        qv[k] = pp.v;
        blo_u = std::min(blo_u, pp.u);
        bhi_u = std::max(bhi_u, pp.u);
        blo_v = std::min(blo_v, pp.v);
        bhi_v = std::max(bhi_v, pp.v);
      }
      const int u0 = std::max(0, static_cast<int>(std::floor(blo_u)));
      const int u1 = std::min(W - 1, static_cast<int>(std::ceil(bhi_u)));
      const int v0 = std::max(0, static_cast<int>(std::floor(blo_v)));
      const int v1 = std::min(H - 1, static_cast<int>(std::ceil(bhi_v)));
      for (int v = v0; v <= v1; ++v)
        for (int u = u0; u <= u1; ++u) {
          if (!iodetail::inside_convex_quad(qu, qv, u + 0.5, v + 0.5)) continue;
          // ray-plane intersection at the pixel center gives the face depth
          const double du = (u + 0.5 - scene.calib.cx()) / scene.calib.fx();
          const double dv = (v + 0.5 - scene.calib.cy()) / scene.calib.fy();
          const double denom = nx * du + ny * dv + nz;
          double zf = std::fabs(denom) > 1e-9 ? n_dot_c / denom : vf.c[2];
          zf = std::clamp(zf, fz_lo, fz_hi);
          const std::size_t p = static_cast<std::size_t>(v) * W + u;
          FacePix fp;
          const double n = 1.0 + 0.06 * (iodetail::hash_noise(seed, u, v, 11 + oi) - 0.5);
          fp.r = std::clamp(albedo[0] * lam * tint[0] * n, 0.0, 1.0);
          fp.g = std::clamp(albedo[1] * lam * tint[1] * n, 0.0, 1.0);
          fp.b = std::clamp(albedo[2] * lam * tint[2] * n, 0.0, 1.0);
          if (where[p] == SIZE_MAX) {
            where[p] = covered.size();
            covered.push_back(p);
            colors.push_back(fp);
            depths.push_back(zf);
          } else if (zf < depths[where[p]]) {
            colors[where[p]] = fp;
            depths[where[p]] = zf;
          }
        }
    }
    for (std::size_t k = 0; k < covered.size(); ++k) {
      const std::size_t p = covered[k];
      if (depths[k] < scene.gt_depth[p]) {
        scene.gt_depth[p] = depths[k];
        scene.rgb[p] = colors[k].r;
        scene.rgb[static_cast<std::size_t>(H) * W + p] = colors[k].g;
        scene.rgb[2 * static_cast<std::size_t>(H) * W + p] = colors[k].b;
      }
    }
    masks[oi] = std::move(covered);
    face_depths[oi] = std::move(depths);
  }

  // Occlusion level from the fraction of silhouette pixels that survived.
  for (std::size_t oi = 0; oi < scene.objects.size(); ++oi) {
    std::size_t visible = 0;
    for (std::size_t k = 0; k < masks[oi].size(); ++k)
      if (scene.gt_depth[masks[oi][k]] == face_depths[oi][k]) ++visible;
    const double frac = masks[oi].empty() ? 0.0 : double(visible) / double(masks[oi].size());
    scene.objects[oi].occlusion = frac >= 0.85 ? 0 : (frac >= 0.5 ? 1 : (frac > 0.0 ? 2 : 3));
  }
  return scene;
}

}  // namespace monokd
