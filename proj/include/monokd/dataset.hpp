#pragma once

// In-memory dataset of synthetic scenes plus the depth-map variants a teacher
// can train on, and the horizontal-flip augmentation shared by training and
// the data tools. Scenes are pure functions of (dataset seed, index), so two
// processes building the same config get bit-identical samples.

#include <cstdint>
#include <string>
#include <vector>

#include "monokd/common.hpp"
#include "monokd/data_io.hpp"
#include "monokd/geom_depth.hpp"

namespace monokd {

enum class TeacherInput { kDense, kSparse, kBeams16, kBeams32 };

inline const char* to_string(TeacherInput t) {
  switch (t) {
    case TeacherInput::kDense: return "dense";
    case TeacherInput::kSparse: return "sparse";
    case TeacherInput::kBeams16: return "beams16";
    case TeacherInput::kBeams32: return "beams32";
  }
  return "dense";
}

inline TeacherInput parse_teacher_input(const std::string& s) {
  if (s == "dense") return TeacherInput::kDense;
  if (s == "sparse") return TeacherInput::kSparse;
  if (s == "beams16") return TeacherInput::kBeams16;
  if (s == "beams32") return TeacherInput::kBeams32;
  throw ConfigInvalid("unknown teacher input '" + s + "' (dense|sparse|beams16|beams32)");
}

struct SceneSample {
  SyntheticScene scene;
  DepthMap sparse;   // 64-beam cloud projected into the image
  DepthMap dense;    // sparse map densified
  DepthMap beams16;  // densified projections of reduced-beam clouds
  DepthMap beams32;  // (empty unless the dataset was built with_beams)

  const DepthMap& teacher_map(TeacherInput which) const {
    const DepthMap* m = &dense;
    switch (which) {
      case TeacherInput::kDense: m = &dense; break;
      case TeacherInput::kSparse: m = &sparse; break;
      case TeacherInput::kBeams16: m = &beams16; break;
      case TeacherInput::kBeams32: m = &beams32; break;
    }
    if (m->width == 0)
      throw EmptyInput("scene sample was built without reduced-beam depth maps");
    return *m;
  }
};

inline SceneSample make_scene_sample(SyntheticScene scene, bool with_beams = false,
                                     const BeamModel& beams = {}) {
  SceneSample s;
  const PointCloud cloud = simulate_scene_cloud(scene, beams);
  s.sparse = project_lidar(cloud, scene.calib, scene.width, scene.height);
  s.dense = densify(s.sparse);
  if (with_beams) {
    const PointCloud c32 = simulate_beams(cloud, beams, 2);
    const PointCloud c16 = simulate_beams(cloud, beams, 4);
    s.beams32 = densify(project_lidar(c32, scene.calib, scene.width, scene.height));
    s.beams16 = densify(project_lidar(c16, scene.calib, scene.width, scene.height));
  }
  s.scene = std::move(scene);
  return s;
}

struct DatasetConfig {
  SyntheticConfig synth;
  int n_scenes = 0;
  std::uint64_t seed = 7;
  bool with_beams = false;

  void validate() const {
    synth.validate();
    if (n_scenes < 0) throw ConfigInvalid("dataset: n_scenes must be >= 0");
  }
};

class SyntheticDataset {
 public:
  explicit SyntheticDataset(const DatasetConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    samples_.reserve(cfg.n_scenes);
    for (int i = 0; i < cfg.n_scenes; ++i) samples_.push_back(make_scene_sample(
        generate_synthetic_scene(scene_seed(cfg.seed, i), cfg.synth), cfg.with_beams));
  }

  static std::uint64_t scene_seed(std::uint64_t dataset_seed, int index) {
    return mix_seed(mix_seed(dataset_seed, "scene"), static_cast<std::uint64_t>(index));
  }

  int size() const { return static_cast<int>(samples_.size()); }
  const SceneSample& sample(int i) const { return samples_.at(i); }
  const DatasetConfig& config() const { return cfg_; }

  // Hash of the ground truth everything downstream consumes; goes into run
  // manifests so a result can be tied to the exact data it saw.
  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : samples_) {
      h = fnv1a64(s.scene.rgb.data(), s.scene.rgb.size() * sizeof(double), h);
      h = fnv1a64(s.scene.gt_depth.data(), s.scene.gt_depth.size() * sizeof(double), h);
      const std::string labels = serialize_labels(s.scene.objects);
      h = fnv1a64(labels.data(), labels.size(), h);
    }
    return h;
  }

 private:
  DatasetConfig cfg_;
  std::vector<SceneSample> samples_;
};

// ---------------------------------------------------------------------------
// Horizontal flip. With the synthetic calib (cx = W/2) mirroring pixel j to
// W-1-j is exactly the continuous map u -> W-u at pixel centers, so flipped
// labels stay consistent with the flipped image to the last bit.
// ---------------------------------------------------------------------------

inline void flip_chw_inplace(std::vector<double>& data, int channels, int height, int width) {
  if (data.size() != static_cast<std::size_t>(channels) * height * width)
    throw ShapeMismatch("flip_chw", std::to_string(data.size()),
                        std::to_string(static_cast<std::size_t>(channels) * height * width));
  for (int c = 0; c < channels; ++c)
    for (int v = 0; v < height; ++v) {
      double* row = data.data() + (static_cast<std::size_t>(c) * height + v) * width;
      for (int u = 0; u < width / 2; ++u) std::swap(row[u], row[width - 1 - u]);
    }
}

inline DepthMap flip_depth(const DepthMap& m) {
  DepthMap out = DepthMap::empty(m.width, m.height);
  for (int v = 0; v < m.height; ++v)
    for (int u = 0; u < m.width; ++u) {
      const std::size_t src = m.idx(v, m.width - 1 - u);
      const std::size_t dst = out.idx(v, u);
      out.depth[dst] = m.depth[src];
      out.valid[dst] = m.valid[src];
    }
  return out;
}

inline ObjectLabel flip_label(const ObjectLabel& o, int img_w) {
  ObjectLabel f = o;
  f.left = img_w - o.right;
  f.right = img_w - o.left;
  if (o.is_dontcare()) return f;  // 3D fields are placeholders there
  f.x = -o.x;
  f.ry = wrap_angle(M_PI - o.ry);
  f.alpha = wrap_angle(f.ry - std::atan2(f.x, f.z));
  return f;
}

inline std::vector<ObjectLabel> flip_labels(const std::vector<ObjectLabel>& labels, int img_w) {
  std::vector<ObjectLabel> out;
  out.reserve(labels.size());
  for (const auto& o : labels) out.push_back(flip_label(o, img_w));
  return out;
}

}  // namespace monokd
