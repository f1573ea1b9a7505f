#pragma once

// Two-phase training. Phase one fits the teacher on projected-LiDAR depth
// input with the detection loss alone; phase two trains the RGB student with
// the same detection loss plus whichever distillation terms are switched on,
// guided by the frozen teacher. One seed drives initialization, data order,
// and augmentation through separate mixed streams, so a run is a pure
// function of (dataset, config, seed).

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "monokd/checkpoint.hpp"
#include "monokd/common.hpp"
#include "monokd/dataset.hpp"
#include "monokd/detector.hpp"
#include "monokd/distill.hpp"
#include "monokd/targets.hpp"
#include "monokd/tensor.hpp"

namespace monokd {

enum class Phase { kTeacher, kStudent };

inline const char* to_string(Phase p) { return p == Phase::kTeacher ? "teacher" : "student"; }

inline Phase parse_phase(const std::string& s) {
  if (s == "teacher") return Phase::kTeacher;
  if (s == "student") return Phase::kStudent;
  throw ConfigInvalid("unknown phase '" + s + "' (teacher|student)");
}

// "or" is an operator token in C++, hence the orr spelling.
struct TrainSwitches {
  bool sf = false, of = false, orr = false, ff = false, aux_depth = false;

  bool needs_teacher() const { return sf || of || orr; }
};

struct TrainConfig {
  ModelConfig model;
  int epochs = 40;
  double base_lr = 1.25e-4;
  std::vector<int> decay_epochs{24, 32};
  double decay_factor = 0.1;
  int warmup_epochs = 2;
  int batch_size = 4;
  std::uint64_t seed = 0;
  LossWeights weights;  // scales for the sf/of/or terms when switched on
  TrainSwitches switches;
  TeacherInput teacher_input = TeacherInput::kDense;
  double flip_prob = 0.5;
  double aux_weight = 1.0;
  int sf_regions = 8;
  bool cache_teacher = true;  // memoize frozen-teacher outputs per (scene, flip)

  void validate() const {
    model.validate();
    if (epochs < 1) throw ConfigInvalid("train: epochs must be >= 1");
    if (!(base_lr > 0)) throw ConfigInvalid("train: base_lr must be positive");
    if (!(decay_factor > 0)) throw ConfigInvalid("train: decay_factor must be positive");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
      if (decay_epochs[i] >= epochs)
        throw ConfigInvalid("train: decay epochs must be < epochs");
      if (i && decay_epochs[i] <= decay_epochs[i - 1])
        throw ConfigInvalid("train: decay epochs must be strictly increasing");
    }
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
      throw ConfigInvalid("train: warmup_epochs must be in [0, epochs)");
    if (batch_size < 1) throw ConfigInvalid("train: batch_size must be >= 1");
    if (flip_prob < 0 || flip_prob > 1) throw ConfigInvalid("train: flip_prob must be in [0,1]");
    if (switches.ff && !(switches.sf || switches.of))
      throw ConfigInvalid("train: ff gates the feature terms, enable sf or of with it");
    if (switches.aux_depth && !model.aux_depth)
      throw ConfigInvalid("train: aux_depth switch requires model.aux_depth");
    if (sf_regions < 1) throw ConfigInvalid("train: sf_regions must be >= 1");
  }
};

// Linear warmup from base_lr/10, then piecewise-constant decay. Caller keeps
// epoch within [0, epochs).
inline double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < cfg.warmup_epochs) {
    const double lo = cfg.base_lr / 10.0;
    return lo + (cfg.base_lr - lo) * (static_cast<double>(epoch) / cfg.warmup_epochs);
  }
  double lr = cfg.base_lr;
  for (int d : cfg.decay_epochs)
    if (epoch >= d) lr *= cfg.decay_factor;
  return lr;
}

// ---------------------------------------------------------------------------
// Adam with bias correction. Moments are stored per parameter in store order;
// the step reads gradients straight off the parameter tensors.
// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m, v;
};

inline void adam_step(ParamStore& ps, AdamState& st, double lr) {
  auto& params = ps.params();
  if (st.m.empty()) {
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.m[i].assign(params[i].tensor.numel(), 0.0);
      st.v[i].assign(params[i].tensor.numel(), 0.0);
    }
  }
  if (st.m.size() != params.size()) throw ArchMismatch("adam state does not match store");
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    auto node = p.tensor.node();
    node->ensure_grad();
    auto& val = node->value;
    const auto& g = node->grad;
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t k = 0; k < val.size(); ++k) {
      m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
      v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
      val[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Run products.
// ---------------------------------------------------------------------------

struct TrainResult {
  Phase phase = Phase::kTeacher;
  std::shared_ptr<DetectorModel> model;
  std::shared_ptr<FusionModule> fusion;  // null unless ff was on
  std::string csv_log;
  std::vector<double> epoch_mean_total;
  std::uint64_t params_hash = 0;
  int steps = 0;
};

inline void save_model_checkpoint(const std::string& path, const DetectorModel& model) {
  save_checkpoint(path, model.params(), model.config().to_text());
}

inline DetectorModel model_from_checkpoint(const LoadedCheckpoint& ck) {
  DetectorModel model(ModelConfig::from_text(ck.config_text), 0);
  apply_params(model.params(), ck);
  return model;
}

namespace trdetail {

inline std::vector<int> epoch_order(int n, std::uint64_t seed, int epoch) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(mix_seed(seed, "order"), static_cast<std::uint64_t>(epoch)));
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(0, i));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

inline Tensor input_tensor(const std::vector<double>& chw, int h, int w) {
  return Tensor::from({3, h, w}, chw);
}

struct FrozenTeacher {
  DetectorModel::Features feats;
  DetectorModel::HeadOutputs heads;
  bool ready = false;
};

// Per-(scene, flip) memo of everything that is constant across epochs.
struct SampleCache {
  std::vector<char> has_tgt;
  std::vector<EncodedTargets> tgt;
  std::vector<char> has_masks;
  std::vector<ForegroundMasks> masks;
  std::vector<FrozenTeacher> teacher;

  explicit SampleCache(int n)
      : has_tgt(2 * n, 0), tgt(2 * n), has_masks(2 * n, 0), masks(2 * n), teacher(2 * n) {}

  static std::size_t key(int idx, bool flip) { return 2 * static_cast<std::size_t>(idx) + flip; }
};

inline std::vector<ObjectLabel> labels_for(const SceneSample& s, bool flip) {
  return flip ? flip_labels(s.scene.objects, s.scene.width) : s.scene.objects;
}

inline std::vector<double> rgb_for(const SceneSample& s, bool flip) {
  std::vector<double> rgb = s.scene.rgb;
  if (flip) flip_chw_inplace(rgb, 3, s.scene.height, s.scene.width);
  return rgb;
}

inline std::vector<double> depth_input_for(const SceneSample& s, TeacherInput which, bool flip) {
  const DepthMap& m = s.teacher_map(which);
  if (m.width != s.scene.width || m.height != s.scene.height)
    throw ConfigInvalid(std::string("dataset has no '") + to_string(which) +
                        "' depth maps; rebuild it with beam variants enabled");
  return flip ? teacher_input_channels(flip_depth(m)) : teacher_input_channels(m);
}

inline DetectorModel::Features detach_features(const DetectorModel::Features& f) {
  DetectorModel::Features out;
  for (int i = 0; i < 4; ++i) out.blocks[i] = f.blocks[i].detach();
  out.fused = f.fused.detach();
  return out;
}

inline DetectorModel::HeadOutputs detach_heads(const DetectorModel::HeadOutputs& h, bool aux) {
  DetectorModel::HeadOutputs out;
  out.heatmap = h.heatmap.detach();
  out.offset2d = h.offset2d.detach();
  out.size2d = h.size2d.detach();
  out.offset3d = h.offset3d.detach();
  out.depth = h.depth.detach();
  out.dims = h.dims.detach();
  out.orientation = h.orientation.detach();
  if (aux) out.aux = h.aux.detach();
  return out;
}

}  // namespace trdetail

// ---------------------------------------------------------------------------
// The shared loop. The teacher phase feeds depth input and optimizes the
// detection loss alone. The student phase feeds RGB; when no distillation
// switch is on it never touches a teacher, which is what makes the zero-
// weight run bit-identical to a plain no-teacher baseline.
// ---------------------------------------------------------------------------

inline TrainResult train_model(const SyntheticDataset& ds, const TrainConfig& cfg, Phase phase,
                               const DetectorModel* teacher = nullptr,
                               std::ostream* progress = nullptr,
                               const LoadedCheckpoint* warm_start = nullptr) {
  cfg.validate();
  if (ds.size() == 0) throw EmptyInput("train: dataset is empty");
  const bool use_teacher = phase == Phase::kStudent && cfg.switches.needs_teacher();
  const bool use_fusion = phase == Phase::kStudent && cfg.switches.ff;
  const bool use_aux = phase == Phase::kStudent && cfg.switches.aux_depth;
  if (use_teacher) {
    if (!teacher) throw ConfigInvalid("train: distillation switches are on but no teacher given");
    if (!(teacher->config() == cfg.model))
      throw ArchMismatch("teacher model config differs from student model config");
  }

  const char* init_salt = phase == Phase::kTeacher ? "teacher-init" : "student-init";
  TrainResult res;
  res.phase = phase;
  res.model = std::make_shared<DetectorModel>(cfg.model, mix_seed(cfg.seed, init_salt));
  if (warm_start) {
    if (!(ModelConfig::from_text(warm_start->config_text) == cfg.model))
      throw ArchMismatch("warm-start checkpoint model config differs from configured model");
    apply_params(res.model->params(), *warm_start);
  }
  if (use_fusion) res.fusion = std::make_shared<FusionModule>(cfg.model);

  // Hard-freeze the teacher: no gradient tracking at all during its forwards.
  std::optional<NoGradGuard> freeze;
  if (use_teacher) freeze.emplace(teacher->params());

  trdetail::SampleCache cache(ds.size());
  AdamState opt, fusion_opt;
  std::ostringstream csv;
  csv << "step,epoch,lr,focal,off2d,size2d,off3d,depth,dims,orient,l_src,l_sf,l_of,l_or,l_aux,"
         "total\n";

  const int n = ds.size();
  const int stride = 4;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    const std::vector<int> order = trdetail::epoch_order(n, cfg.seed, epoch);
    Rng aug(mix_seed(mix_seed(cfg.seed, "aug"), static_cast<std::uint64_t>(epoch)));
    double epoch_total = 0.0;
    int epoch_batches = 0;

    for (int begin = 0; begin < n; begin += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n - begin);
      res.model->params().zero_grad();
      if (use_fusion) res.fusion->params().zero_grad();

      LossReport acc;  // accumulated logged values for this batch
      double acc_aux = 0.0;
      for (int bi = 0; bi < bsz; ++bi) {
        const int idx = order[begin + bi];
        const bool flip = aug.uniform() < cfg.flip_prob;
        const SceneSample& s = ds.sample(idx);
        const std::size_t ck = trdetail::SampleCache::key(idx, flip);

        if (!cache.has_tgt[ck]) {
          cache.tgt[ck] = encode_targets(trdetail::labels_for(s, flip), s.scene.calib,
                                         s.scene.width, s.scene.height, cfg.model, stride);
          cache.has_tgt[ck] = 1;
        }
        const EncodedTargets& tgt = cache.tgt[ck];

        const std::vector<double> input_data =
            phase == Phase::kTeacher ? trdetail::depth_input_for(s, cfg.teacher_input, flip)
                                     : trdetail::rgb_for(s, flip);
        const Tensor x = trdetail::input_tensor(input_data, s.scene.height, s.scene.width);
        const DetectorModel::Features feats = res.model->forward_backbone(x);
        const DetectorModel::HeadOutputs heads = res.model->forward_heads(feats.fused);

        LossReport rep;
        try {
          const SrcLoss src = loss_src(heads, tgt, cfg.model);
          if (use_teacher) {
            if (!cache.has_masks[ck]) {
              cache.masks[ck] = build_masks(trdetail::labels_for(s, flip), s.scene.width,
                                            s.scene.height, stride);
              cache.has_masks[ck] = 1;
            }
            trdetail::FrozenTeacher& ft = cache.teacher[ck];
            if (!ft.ready) {
              const Tensor tx = trdetail::input_tensor(
                  trdetail::depth_input_for(s, cfg.teacher_input, flip), s.scene.height,
                  s.scene.width);
              const DetectorModel::Features tf = teacher->forward_backbone(tx);
              const DetectorModel::HeadOutputs th = teacher->forward_heads(tf.fused);
              ft.feats = trdetail::detach_features(tf);
              ft.heads = trdetail::detach_heads(th, cfg.model.aux_depth);
              ft.ready = true;
            }
            FusionModule* fusion = use_fusion ? res.fusion.get() : nullptr;
            const Tensor zero = Tensor::scalar(0.0);
            const Tensor sf =
                cfg.switches.sf ? loss_sf(feats, ft.feats, fusion, cfg.sf_regions) : zero;
            const Tensor of =
                cfg.switches.of ? loss_of(feats, ft.feats, fusion, cache.masks[ck]) : zero;
            const Tensor orr = cfg.switches.orr ? loss_or(heads, ft.heads, cache.masks[ck]) : zero;
            rep = total_loss(src, sf, of, orr, cfg.weights);
            if (!cfg.cache_teacher) ft = trdetail::FrozenTeacher{};
          } else {
            rep.src = src;
            rep.total = src.total;
            rep.l_src = src.total.value()[0];
            rep.total_value = rep.l_src;
          }
          if (use_aux) {
            const DepthMap dense =
                flip ? flip_depth(s.dense) : s.dense;  // aux supervises from LiDAR depth
            const Tensor aux = auxiliary_depth_loss(heads.aux, dense, stride);
            const double av = aux.value()[0];
            if (!std::isfinite(av)) throw NonFinite("aux depth loss");
            acc_aux += av;
            rep.total = add(rep.total, scale(aux, cfg.aux_weight));
            rep.total_value += cfg.aux_weight * av;
          }
        } catch (const NonFinite&) {
          throw Diverged(res.steps);
        }
        if (!std::isfinite(rep.total_value)) throw Diverged(res.steps);

        backward(scale(rep.total, 1.0 / bsz));

        acc.l_src += rep.l_src;
        acc.l_sf += rep.l_sf;
        acc.l_of += rep.l_of;
        acc.l_or += rep.l_or;
        acc.total_value += rep.total_value;
        acc.src.focal += rep.src.focal;
        acc.src.offset2d += rep.src.offset2d;
        acc.src.size2d += rep.src.size2d;
        acc.src.offset3d += rep.src.offset3d;
        acc.src.depth += rep.src.depth;
        acc.src.dims += rep.src.dims;
        acc.src.orientation += rep.src.orientation;
      }

      adam_step(res.model->params(), opt, lr);
      if (use_fusion) adam_step(res.fusion->params(), fusion_opt, lr);

      const double inv = 1.0 / bsz;
      csv << res.steps << ',' << epoch << ',' << lr << ',' << acc.src.focal * inv << ','
          << acc.src.offset2d * inv << ',' << acc.src.size2d * inv << ',' << acc.src.offset3d * inv
          << ',' << acc.src.depth * inv << ',' << acc.src.dims * inv << ','
          << acc.src.orientation * inv << ',' << acc.l_src * inv << ',' << acc.l_sf * inv << ','
          << acc.l_of * inv << ',' << acc.l_or * inv << ',' << acc_aux * inv << ','
          << acc.total_value * inv << '\n';
      epoch_total += acc.total_value * inv;
      ++epoch_batches;
      ++res.steps;
    }

    res.epoch_mean_total.push_back(epoch_total / epoch_batches);
    if (progress)
      (*progress) << "epoch " << epoch + 1 << "/" << cfg.epochs << " lr " << lr << " mean total "
                  << res.epoch_mean_total.back() << "\n";
  }

  res.csv_log = csv.str();
  res.params_hash = params_hash(res.model->params());
  return res;
}

inline TrainResult train_teacher(const SyntheticDataset& ds, const TrainConfig& cfg,
                                 std::ostream* progress = nullptr,
                                 const LoadedCheckpoint* warm_start = nullptr) {
  return train_model(ds, cfg, Phase::kTeacher, nullptr, progress, warm_start);
}

inline TrainResult train_student(const SyntheticDataset& ds, const TrainConfig& cfg,
                                 const DetectorModel* teacher = nullptr,
                                 std::ostream* progress = nullptr,
                                 const LoadedCheckpoint* warm_start = nullptr) {
  return train_model(ds, cfg, Phase::kStudent, teacher, progress, warm_start);
}

inline TrainResult train_student(const SyntheticDataset& ds, const TrainConfig& cfg,
                                 const LoadedCheckpoint& teacher_ck,
                                 std::ostream* progress = nullptr) {
  DetectorModel teacher = model_from_checkpoint(teacher_ck);
  return train_model(ds, cfg, Phase::kStudent, &teacher, progress);
}

}  // namespace monokd
