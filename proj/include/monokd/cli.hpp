#pragma once

// Batch entry point. Subcommands cover the whole pipeline: prepare renders
// the synthetic benchmark to disk in KITTI layout, train runs either phase,
// eval produces AP tables and figures from a checkpoint, ablate sweeps the
// distillation switch grid, and depth-tools exposes the projection stack on
// raw files. cli_main is a plain function so tests can drive it in-process.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "monokd/checkpoint.hpp"
#include "monokd/common.hpp"
#include "monokd/config.hpp"
#include "monokd/data_io.hpp"
#include "monokd/dataset.hpp"
#include "monokd/detector.hpp"
#include "monokd/evaluation.hpp"
#include "monokd/geom_depth.hpp"
#include "monokd/io_png.hpp"
#include "monokd/training.hpp"
#include "monokd/viz.hpp"

namespace monokd {

inline constexpr const char* kToolName = "monokd";
inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Config keys -> domain structs.
// ---------------------------------------------------------------------------

inline SyntheticConfig synth_from_kv(const KvConfig& kv) {
  SyntheticConfig s;
  s.width = kv.integer("data.width", s.width);
  s.height = kv.integer("data.height", s.height);
  s.focal = kv.num("data.focal", s.focal);
  s.min_objects = kv.integer("data.min_objects", s.min_objects);
  s.max_objects = kv.integer("data.max_objects", s.max_objects);
  s.min_depth = kv.num("data.min_depth", s.min_depth);
  s.max_depth = kv.num("data.max_depth", s.max_depth);
  s.background_depth = kv.num("data.background_depth", s.background_depth);
  s.car_frac = kv.num("data.car_frac", s.car_frac);
  s.ped_frac = kv.num("data.ped_frac", s.ped_frac);
  s.cyc_frac = kv.num("data.cyc_frac", s.cyc_frac);
  s.min_center_sep = kv.num("data.min_center_sep", s.min_center_sep);
  return s;
}

inline DatasetConfig dataset_from_kv(const KvConfig& kv, const std::string& split) {
  DatasetConfig d;
  d.synth = synth_from_kv(kv);
  const std::uint64_t base = kv.uint("data.seed", 7);
  if (split == "train") {
    d.n_scenes = kv.integer("data.n_train", 200);
    d.seed = base;
  } else if (split == "val") {
    d.n_scenes = kv.integer("data.n_val", 100);
    d.seed = mix_seed(base, "val");
  } else {
    throw ConfigInvalid("unknown split '" + split + "' (train|val)");
  }
  d.with_beams = kv.flag("data.with_beams", false);
  return d;
}

inline ModelConfig model_from_kv(const KvConfig& kv) {
  ModelConfig m;
  const auto ch = kv.int_list("model.channels", {m.channels[0], m.channels[1], m.channels[2],
                                                 m.channels[3]});
  if (ch.size() != 4) throw ConfigInvalid("model.channels: expected 4 comma-separated values");
  for (int i = 0; i < 4; ++i) m.channels[i] = ch[i];
  m.fused_channels = kv.integer("model.fused_channels", m.fused_channels);
  m.head_hidden = kv.integer("model.head_hidden", m.head_hidden);
  m.n_classes = kv.integer("model.n_classes", m.n_classes);
  m.n_bins = kv.integer("model.n_bins", m.n_bins);
  m.depth_init = kv.num("model.depth_init", m.depth_init);
  m.sigma_score_clamp = kv.num("model.sigma_score_clamp", m.sigma_score_clamp);
  const std::string sm = kv.str("model.score_mode", "heat_sigma");
  if (sm == "heat_only") m.score_mode = ScoreMode::HeatOnly;
  else if (sm == "heat_sigma") m.score_mode = ScoreMode::HeatTimesExpNegSigma;
  else throw ConfigInvalid("model.score_mode: expected heat_sigma|heat_only");
  m.aux_depth = kv.flag("model.aux_depth", m.aux_depth);
  return m;
}

inline TrainConfig train_from_kv(const KvConfig& kv) {
  TrainConfig t;
  t.model = model_from_kv(kv);
  t.epochs = kv.integer("train.epochs", t.epochs);
  t.base_lr = kv.num("train.base_lr", t.base_lr);
  t.decay_epochs = kv.int_list("train.decay_epochs", t.decay_epochs);
  t.decay_factor = kv.num("train.decay_factor", t.decay_factor);
  t.warmup_epochs = kv.integer("train.warmup_epochs", t.warmup_epochs);
  t.batch_size = kv.integer("train.batch_size", t.batch_size);
  t.weights.l1 = kv.num("train.weights.sf", t.weights.l1);
  t.weights.l2 = kv.num("train.weights.of", t.weights.l2);
  t.weights.l3 = kv.num("train.weights.or", t.weights.l3);
  t.switches.sf = kv.flag("train.switch.sf", t.switches.sf);
  t.switches.of = kv.flag("train.switch.of", t.switches.of);
  t.switches.orr = kv.flag("train.switch.or", t.switches.orr);
  t.switches.ff = kv.flag("train.switch.ff", t.switches.ff);
  t.switches.aux_depth = kv.flag("train.switch.aux_depth", t.switches.aux_depth);
  t.teacher_input = parse_teacher_input(kv.str("train.teacher_input", "dense"));
  t.flip_prob = kv.num("train.flip_prob", t.flip_prob);
  t.aux_weight = kv.num("train.aux_weight", t.aux_weight);
  t.sf_regions = kv.integer("train.sf_regions", t.sf_regions);
  t.cache_teacher = kv.flag("train.cache_teacher", t.cache_teacher);
  return t;
}

inline EvalConfig eval_from_kv(const KvConfig& kv) {
  EvalConfig e;
  e.iou_thresholds[0] = kv.num("eval.iou.car", e.iou_thresholds[0]);
  e.iou_thresholds[1] = kv.num("eval.iou.pedestrian", e.iou_thresholds[1]);
  e.iou_thresholds[2] = kv.num("eval.iou.cyclist", e.iou_thresholds[2]);
  e.conf_threshold = kv.num("eval.conf_threshold", e.conf_threshold);
  e.nms_iou = kv.num("eval.nms_iou", e.nms_iou);
  e.max_dets = kv.integer("eval.max_dets", e.max_dets);
  const std::string preset = kv.str("eval.difficulty", "kitti");
  if (preset == "kitti") e.preset = DifficultyPreset::kitti();
  else if (preset == "scaled") e.preset = DifficultyPreset::scaled(kv.integer("data.height", 96));
  else throw ConfigInvalid("eval.difficulty: expected kitti|scaled");
  return e;
}

// ---------------------------------------------------------------------------
// Argument handling.
// ---------------------------------------------------------------------------

namespace clidetail {

struct Args {
  std::string command;
  std::map<std::string, std::string> options;
  std::set<std::string> flags;
  std::vector<std::string> sets;

  bool has(const std::string& k) const { return options.count(k) || flags.count(k); }
  std::string opt(const std::string& k, const std::string& fallback = "") const {
    const auto it = options.find(k);
    return it == options.end() ? fallback : it->second;
  }
  std::string require(const std::string& k) const {
    const auto it = options.find(k);
    if (it == options.end()) throw ConfigInvalid(command + " requires --" + k);
    return it->second;
  }
};

inline const std::set<std::string>& bool_flags() {
  static const std::set<std::string> f{"depth-error", "help", "version", "no-figures"};
  return f;
}

inline Args parse_args(const std::vector<std::string>& argv) {
  Args a;
  std::size_t i = 0;
  if (i < argv.size() && argv[i][0] != '-') a.command = argv[i++];
  for (; i < argv.size(); ++i) {
    const std::string& s = argv[i];
    if (s.rfind("--", 0) != 0) throw ConfigInvalid("unexpected argument '" + s + "'");
    const std::string key = s.substr(2);
    if (bool_flags().count(key)) {
      a.flags.insert(key);
      continue;
    }
    if (i + 1 >= argv.size()) throw ConfigInvalid("--" + key + " expects a value");
    const std::string val = argv[++i];
    if (key == "set") a.sets.push_back(val);
    else a.options[key] = val;
  }
  return a;
}

inline KvConfig resolve_config(const Args& a) {
  KvConfig kv;
  const std::string path = a.opt("config");
  if (!path.empty()) kv = KvConfig::from_text(read_text_file(path));
  for (const auto& s : a.sets) kv.apply_override(s);  // CLI beats file
  return kv;
}

// Output root override comes from the environment only.
inline std::filesystem::path resolve_out(const Args& a) {
  std::filesystem::path p = a.require("out");
  if (p.is_relative()) {
    if (const char* root = std::getenv("MONOKD_OUT_ROOT")) p = std::filesystem::path(root) / p;
  }
  return p;
}

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

inline std::string join_args(const std::vector<std::string>& argv) {
  std::string s;
  for (const auto& a : argv) {
    if (!s.empty()) s += ' ';
    s += a;
  }
  return s;
}

inline void write_manifest(const std::filesystem::path& dir, const std::string& command_line,
                           const KvConfig& kv,
                           const std::vector<std::pair<std::string, std::string>>& inputs,
                           const std::vector<std::string>& outputs, double wall_seconds) {
  std::ostringstream os;
  os << "tool=" << kToolName << ' ' << kToolVersion << '\n';
  os << "command=" << command_line << '\n';
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", wall_seconds);
  os << "wall_seconds=" << buf << '\n';
  os << "[config]\n" << kv.to_text();
  os << "[inputs]\n";
  for (const auto& [k, v] : inputs) os << k << '=' << v << '\n';
  os << "[outputs]\n";
  for (const auto& o : outputs) os << o << '\n';
  write_text_file((dir / "manifest.txt").string(), os.str());
}

inline std::string file_hash(const std::string& path) {
  const auto bytes = read_binary_file(path);
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

inline std::string scene_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", i);
  return buf;
}

inline std::string detections_csv(const std::vector<std::vector<Detection>>& dets) {
  std::ostringstream os;
  os << "scene,class,score,left,top,right,bottom,x,y,z,h,w,l,ry,alpha\n";
  for (std::size_t s = 0; s < dets.size(); ++s)
    for (const auto& d : dets[s])
      os << s << ',' << class_name_of(d.class_id) << ',' << d.score << ',' << d.left << ','
         << d.top << ',' << d.right << ',' << d.bottom << ',' << d.x << ',' << d.y << ',' << d.z
         << ',' << d.h << ',' << d.w << ',' << d.l << ',' << d.ry << ',' << d.alpha << '\n';
  return os.str();
}

}  // namespace clidetail

// ---------------------------------------------------------------------------
// prepare: render both splits to a KITTI-shaped directory tree.
// ---------------------------------------------------------------------------

inline int cmd_prepare(const clidetail::Args& args, std::ostream& out) {
  namespace fs = std::filesystem;
  clidetail::Stopwatch watch;
  const KvConfig kv = clidetail::resolve_config(args);
  const fs::path root = clidetail::resolve_out(args);

  std::vector<std::string> outputs;
  std::vector<std::pair<std::string, std::string>> inputs;
  for (const std::string split : {"train", "val"}) {
    const DatasetConfig dc = dataset_from_kv(kv, split);
    if (dc.n_scenes <= 0) throw ConfigInvalid("prepare: data.n_" + split + " must be positive");
    const SyntheticDataset ds(dc);
    inputs.emplace_back("dataset_" + split, hex64(ds.content_hash()));

    const fs::path base = root / split;
    for (const char* sub : {"image_2", "label_2", "calib", "velodyne", "depth_sparse",
                            "depth_dense"})
      fs::create_directories(base / sub);

    std::ostringstream index;
    for (int i = 0; i < ds.size(); ++i) {
      const SceneSample& s = ds.sample(i);
      const std::string id = clidetail::scene_id(i);
      index << id << '\n';

      Canvas img = Canvas::from_chw(s.scene.rgb, s.scene.width, s.scene.height);
      write_binary_file((base / "image_2" / (id + ".png")).string(), img.to_png());
      write_text_file((base / "label_2" / (id + ".txt")).string(),
                      serialize_labels(s.scene.objects));
      write_text_file((base / "calib" / (id + ".txt")).string(), serialize_calib(s.scene.calib));
      const PointCloud cloud = simulate_scene_cloud(s.scene, BeamModel{});
      write_binary_file((base / "velodyne" / (id + ".bin")).string(), write_velodyne(cloud));
      write_binary_file((base / "depth_sparse" / (id + ".png")).string(),
                        encode_depth_png16(s.sparse));
      write_binary_file((base / "depth_dense" / (id + ".png")).string(),
                        encode_depth_png16(s.dense));
    }
    write_text_file((root / (std::string(split) + ".txt")).string(), index.str());
    outputs.push_back((base).string());
    out << "prepare: wrote " << ds.size() << " " << split << " scenes\n";
  }

  std::ostringstream priors;
  for (int k = 0; k < 3; ++k) {
    const auto p = class_dims_prior(k);
    priors << class_name_of(k) << ' ' << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
  }
  write_text_file((root / "priors.txt").string(), priors.str());
  outputs.push_back((root / "priors.txt").string());

  clidetail::write_manifest(root, clidetail::join_args({"prepare"}), kv, inputs, outputs,
                            watch.seconds());
  return 0;
}

// ---------------------------------------------------------------------------
// train: one phase, one run directory.
// ---------------------------------------------------------------------------

inline int cmd_train(const clidetail::Args& args, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  clidetail::Stopwatch watch;
  const KvConfig kv = clidetail::resolve_config(args);
  const fs::path dir = clidetail::resolve_out(args);
  const Phase phase = parse_phase(args.require("phase"));
  if (!args.has("seed")) throw ConfigInvalid("train requires --seed (no silent nondeterminism)");

  // Exhaustive validation pass: collect every problem before giving up.
  std::vector<std::string> problems;
  TrainConfig cfg;
  try {
    cfg = train_from_kv(kv);
  } catch (const std::exception& e) {
    problems.push_back(e.what());
  }
  if (problems.empty()) {
    cfg.seed = std::stoull(args.require("seed"));
    try {
      cfg.validate();
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }
  DatasetConfig dc;
  try {
    dc = dataset_from_kv(kv, "train");
    if (dc.n_scenes <= 0) throw ConfigInvalid("train: data.n_train must be positive");
    dc.validate();
  } catch (const std::exception& e) {
    problems.push_back(e.what());
  }
  if (phase == Phase::kStudent && cfg.switches.needs_teacher() && !args.has("teacher"))
    problems.push_back("student phase with distillation switches needs --teacher <checkpoint>");
  if (!problems.empty()) {
    for (const auto& p : problems) err << "error: " << p << '\n';
    return 1;
  }

  if (phase == Phase::kTeacher &&
      (cfg.switches.sf || cfg.switches.of || cfg.switches.orr || cfg.switches.ff)) {
    err << "warning: distillation switches/weights are ignored in the teacher phase\n";
    cfg.switches = TrainSwitches{};
  }
  if (cfg.switches.needs_teacher() &&
      (cfg.teacher_input == TeacherInput::kBeams16 || cfg.teacher_input == TeacherInput::kBeams32))
    dc.with_beams = true;
  if (phase == Phase::kTeacher &&
      (cfg.teacher_input == TeacherInput::kBeams16 || cfg.teacher_input == TeacherInput::kBeams32))
    dc.with_beams = true;

  const SyntheticDataset ds(dc);
  std::vector<std::pair<std::string, std::string>> inputs;
  inputs.emplace_back("dataset_train", hex64(ds.content_hash()));

  LoadedCheckpoint teacher_ck;
  bool have_teacher = false;
  if (args.has("teacher")) {
    teacher_ck = load_checkpoint(args.opt("teacher"));
    have_teacher = true;
    inputs.emplace_back("teacher_checkpoint", clidetail::file_hash(args.opt("teacher")));
  }
  LoadedCheckpoint warm_ck;
  const LoadedCheckpoint* warm = nullptr;
  if (args.has("warm-start")) {
    warm_ck = load_checkpoint(args.opt("warm-start"));
    warm = &warm_ck;
    inputs.emplace_back("warm_start_checkpoint", clidetail::file_hash(args.opt("warm-start")));
  }

  fs::create_directories(dir);
  TrainResult res = [&] {
    if (phase == Phase::kTeacher) return train_teacher(ds, cfg, &out, warm);
    if (have_teacher) {
      DetectorModel teacher = model_from_checkpoint(teacher_ck);
      return train_model(ds, cfg, Phase::kStudent, &teacher, &out, warm);
    }
    return train_model(ds, cfg, Phase::kStudent, nullptr, &out, warm);
  }();

  const fs::path ckpt = dir / "checkpoint.ckpt";
  save_model_checkpoint(ckpt.string(), *res.model);
  write_text_file((dir / "train_log.csv").string(), res.csv_log);
  std::vector<std::string> outputs{ckpt.string(), (dir / "train_log.csv").string()};
  if (res.fusion) {
    const fs::path fck = dir / "fusion.ckpt";
    save_checkpoint(fck.string(), res.fusion->params(), cfg.model.to_text());
    outputs.push_back(fck.string());
  }
  out << "train: " << to_string(phase) << " done, " << res.steps << " steps, params "
      << hex64(res.params_hash) << "\n";
  clidetail::write_manifest(dir, "train --phase " + std::string(to_string(phase)), kv, inputs,
                            outputs, watch.seconds());
  return 0;
}

// ---------------------------------------------------------------------------
// eval: AP tables, overlays, optional cross-model and depth-error analyses.
// ---------------------------------------------------------------------------

inline int cmd_eval(const clidetail::Args& args, std::ostream& out) {
  namespace fs = std::filesystem;
  clidetail::Stopwatch watch;
  const KvConfig kv = clidetail::resolve_config(args);
  const fs::path dir = clidetail::resolve_out(args);
  const std::string split = args.opt("split", "val");
  EvalConfig ec = eval_from_kv(kv);
  const std::string input_kind = args.opt("input", "rgb");
  if (input_kind == "depth") ec.input = InputKind::kDepth;
  else if (input_kind != "rgb") throw ConfigInvalid("--input expects rgb|depth");
  ec.teacher_input = parse_teacher_input(kv.str("train.teacher_input", "dense"));

  DatasetConfig dc = dataset_from_kv(kv, split);
  if (dc.n_scenes <= 0) throw ConfigInvalid("eval: data.n_" + split + " must be positive");
  if (ec.input == InputKind::kDepth && (ec.teacher_input == TeacherInput::kBeams16 ||
                                        ec.teacher_input == TeacherInput::kBeams32))
    dc.with_beams = true;
  const SyntheticDataset ds(dc);

  const std::string ckpt_path = args.require("checkpoint");
  const LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  const DetectorModel model = model_from_checkpoint(ck);

  std::vector<std::pair<std::string, std::string>> inputs;
  inputs.emplace_back("dataset_" + split, hex64(ds.content_hash()));
  inputs.emplace_back("checkpoint", clidetail::file_hash(ckpt_path));

  const auto dets = detect_dataset(model, ds, ec);
  const auto labels = dataset_labels(ds);

  fs::create_directories(dir);
  std::vector<std::string> outputs;
  std::ostringstream all_csv;
  for (int cls = 0; cls < model.config().n_classes && cls < 3; ++cls) {
    const ApTable table = ap_table(dets, labels, cls, ec.iou_thresholds[cls], ec.preset);
    const std::string text = format_ap_table(table);
    out << text;
    std::string cname = class_name_of(cls);
    for (auto& c : cname) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const fs::path p = dir / ("ap_" + cname + ".txt");
    write_text_file(p.string(), text);
    outputs.push_back(p.string());
    all_csv << ap_table_csv(table);
  }
  write_text_file((dir / "ap.csv").string(), all_csv.str());
  outputs.push_back((dir / "ap.csv").string());
  write_text_file((dir / "detections.csv").string(), clidetail::detections_csv(dets));
  outputs.push_back((dir / "detections.csv").string());

  if (!args.has("no-figures")) {
    const int n_fig = std::min<int>(kv.integer("eval.n_figures", 4), ds.size());
    for (int i = 0; i < n_fig; ++i) {
      const auto& s = ds.sample(i);
      const fs::path op = dir / ("overlay_" + clidetail::scene_id(i) + ".png");
      write_binary_file(op.string(), render_detection_overlay(s.scene, dets[i]));
      const fs::path bp = dir / ("bev_" + clidetail::scene_id(i) + ".png");
      write_binary_file(bp.string(),
                        render_bev_sketch(dets[i], s.scene.objects, 20.0,
                                          dc.synth.background_depth));
      outputs.push_back(op.string());
      outputs.push_back(bp.string());
    }
  }

  if (args.has("cross")) {
    const LoadedCheckpoint bck = load_checkpoint(args.opt("cross"));
    const DetectorModel model_b = model_from_checkpoint(bck);
    inputs.emplace_back("cross_checkpoint", clidetail::file_hash(args.opt("cross")));
    const auto dets_b = detect_dataset(model_b, ds, ec);
    std::ostringstream cc;
    cc << "loc,dim,ori,con,ap3d_moderate\n";
    for (int mask = 0; mask < 16; ++mask) {
      CrossSelector sel;
      sel.loc = mask & 1;
      sel.dim = mask & 2;
      sel.ori = mask & 4;
      sel.con = mask & 8;
      const ApResult r = cross_model_eval(dets, dets_b, labels, sel, 0, 1, Metric::k3D,
                                          ec.iou_thresholds[0], ec.preset);
      cc << (sel.loc ? 'B' : 'A') << ',' << (sel.dim ? 'B' : 'A') << ',' << (sel.ori ? 'B' : 'A')
         << ',' << (sel.con ? 'B' : 'A') << ',' << (r.defined ? std::to_string(r.ap) : "n/a")
         << '\n';
    }
    write_text_file((dir / "cross.csv").string(), cc.str());
    outputs.push_back((dir / "cross.csv").string());
  }

  if (args.flags.count("depth-error")) {
    try {
      const DepthFit fit = depth_error_fit(dets, labels, 0, 0.5, ec.preset);
      std::ostringstream ft;
      ft << "n=" << fit.n << "\nslope=" << fit.slope << "\nintercept=" << fit.intercept << "\n";
      write_text_file((dir / "depth_fit.txt").string(), ft.str());
      write_text_file((dir / "depth_scatter.csv").string(), fit.scatter_csv);
      outputs.push_back((dir / "depth_fit.txt").string());
      outputs.push_back((dir / "depth_scatter.csv").string());
      if (!args.has("no-figures")) {
        std::vector<std::array<double, 2>> pts;
        std::istringstream ss(fit.scatter_csv);
        std::string line;
        std::getline(ss, line);  // header
        while (std::getline(ss, line)) {
          const auto comma = line.find(',');
          pts.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
        }
        write_binary_file((dir / "depth_scatter.png").string(),
                          render_scatter(pts, fit.slope, fit.intercept));
        outputs.push_back((dir / "depth_scatter.png").string());
      }
      out << "depth fit: slope " << fit.slope << " intercept " << fit.intercept << " over "
          << fit.n << " pairs\n";
    } catch (const InsufficientData& e) {
      // Not enough matched pairs to fit a line; record that instead of failing
      // the whole evaluation.
      write_text_file((dir / "depth_fit.txt").string(), std::string("n=0\nundefined: ") +
                                                            e.what() + "\n");
      outputs.push_back((dir / "depth_fit.txt").string());
      out << "depth fit: undefined (" << e.what() << ")\n";
    }
  }

  clidetail::write_manifest(dir, "eval --split " + split, kv, inputs, outputs, watch.seconds());
  return 0;
}

// ---------------------------------------------------------------------------
// ablate: the switch grid, rows a-i. Trains one teacher, then one student per
// row, evaluating each on the val split.
// ---------------------------------------------------------------------------

inline int cmd_ablate(const clidetail::Args& args, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  clidetail::Stopwatch watch;
  const KvConfig kv = clidetail::resolve_config(args);
  const fs::path dir = clidetail::resolve_out(args);
  if (!args.has("seed")) throw ConfigInvalid("ablate requires --seed (no silent nondeterminism)");

  TrainConfig base = train_from_kv(kv);
  base.seed = std::stoull(args.require("seed"));
  base.switches = TrainSwitches{};
  base.validate();

  const DatasetConfig tc = [&] {
    DatasetConfig d = dataset_from_kv(kv, "train");
    if (d.n_scenes <= 0) throw ConfigInvalid("ablate: data.n_train must be positive");
    return d;
  }();
  const DatasetConfig vc = dataset_from_kv(kv, "val");
  if (vc.n_scenes <= 0) throw ConfigInvalid("ablate: data.n_val must be positive");
  const SyntheticDataset train_ds(tc);
  const SyntheticDataset val_ds(vc);

  EvalConfig ec = eval_from_kv(kv);
  const auto val_labels = dataset_labels(val_ds);

  out << "ablate: training teacher\n";
  const TrainResult teacher = train_teacher(train_ds, base, nullptr);
  fs::create_directories(dir);
  save_model_checkpoint((dir / "teacher.ckpt").string(), *teacher.model);

  struct Row {
    const char* name;
    TrainSwitches sw;
  };
  const Row rows[9] = {
      {"a", {}},
      {"b", {.sf = true}},
      {"c", {.of = true}},
      {"d", {.orr = true}},
      {"e", {.sf = true, .of = true}},
      {"f", {.sf = true, .orr = true}},
      {"g", {.of = true, .orr = true}},
      {"h", {.sf = true, .of = true, .orr = true}},
      {"i", {.sf = true, .of = true, .orr = true, .ff = true}},
  };

  std::ostringstream summary;
  summary << "row,sf,of,or,ff,ap3d_mod,ap3d_easy,ap3d_hard,apbev_mod\n";
  std::vector<std::string> outputs{(dir / "teacher.ckpt").string()};
  for (const Row& row : rows) {
    TrainConfig cfg = base;
    cfg.switches = row.sw;
    out << "ablate: row " << row.name << "\n";
    const TrainResult res =
        cfg.switches.needs_teacher()
            ? train_student(train_ds, cfg, teacher.model.get(), nullptr)
            : train_student(train_ds, cfg, nullptr, nullptr);
    const fs::path rdir = dir / (std::string("row_") + row.name);
    fs::create_directories(rdir);
    save_model_checkpoint((rdir / "checkpoint.ckpt").string(), *res.model);
    write_text_file((rdir / "train_log.csv").string(), res.csv_log);
    outputs.push_back((rdir / "checkpoint.ckpt").string());

    const auto dets = detect_dataset(*res.model, val_ds, ec);
    const auto ap = [&](int difficulty, Metric m) {
      const ApResult r =
          ap_r40(dets, val_labels, 0, difficulty, m, ec.iou_thresholds[0], ec.preset);
      return r.defined ? r.ap : -1.0;
    };
    summary << row.name << ',' << row.sw.sf << ',' << row.sw.of << ',' << row.sw.orr << ','
            << row.sw.ff << ',' << ap(1, Metric::k3D) << ',' << ap(0, Metric::k3D) << ','
            << ap(2, Metric::k3D) << ',' << ap(1, Metric::kBEV) << '\n';
  }
  write_text_file((dir / "ablate.csv").string(), summary.str());
  outputs.push_back((dir / "ablate.csv").string());
  out << read_text_file((dir / "ablate.csv").string());

  std::vector<std::pair<std::string, std::string>> inputs;
  inputs.emplace_back("dataset_train", hex64(train_ds.content_hash()));
  inputs.emplace_back("dataset_val", hex64(val_ds.content_hash()));
  clidetail::write_manifest(dir, "ablate", kv, inputs, outputs, watch.seconds());
  (void)err;
  return 0;
}

// ---------------------------------------------------------------------------
// depth-tools: project | densify | beams on raw files.
// ---------------------------------------------------------------------------

inline int cmd_depth_tools(const clidetail::Args& args, std::ostream& out) {
  namespace fs = std::filesystem;
  const std::string op = args.require("op");
  const fs::path out_path = clidetail::resolve_out(args);
  fs::create_directories(out_path.parent_path().empty() ? "." : out_path.parent_path());

  if (op == "project") {
    const PointCloud cloud = read_velodyne(read_binary_file(args.require("velodyne")));
    const CameraCalib calib = parse_calib(read_text_file(args.require("calib")));
    const int w = std::stoi(args.require("width"));
    const int h = std::stoi(args.require("height"));
    const DepthMap sparse = project_lidar(cloud, calib, w, h);
    write_binary_file(out_path.string(), encode_depth_png16(sparse));
    out << "project: " << sparse.n_valid() << " valid pixels of " << w * h << "\n";
    return 0;
  }
  if (op == "densify") {
    const DepthMap sparse = decode_depth_png16(read_binary_file(args.require("in")));
    const DepthMap dense = densify(sparse);
    write_binary_file(out_path.string(), encode_depth_png16(dense));
    out << "densify: " << sparse.n_valid() << " -> " << dense.n_valid() << " valid pixels\n";
    return 0;
  }
  if (op == "beams") {
    const PointCloud cloud = read_velodyne(read_binary_file(args.require("velodyne")));
    const int keep = std::stoi(args.require("keep-every"));
    const PointCloud reduced = simulate_beams(cloud, BeamModel{}, keep);
    write_binary_file(out_path.string(), write_velodyne(reduced));
    out << "beams: " << cloud.points.size() << " -> " << reduced.points.size() << " points\n";
    return 0;
  }
  throw ConfigInvalid("depth-tools --op expects project|densify|beams");
}

// ---------------------------------------------------------------------------
// Dispatch.
// ---------------------------------------------------------------------------

inline const char* cli_usage() {
  return "usage: monokd <command> [options]\n"
         "commands:\n"
         "  prepare     --config FILE --out DIR [--set k=v ...]\n"
         "  train       --config FILE --out DIR --seed N --phase teacher|student\n"
         "              [--teacher CKPT] [--warm-start CKPT] [--set k=v ...]\n"
         "  eval        --checkpoint CKPT --config FILE --out DIR [--split train|val]\n"
         "              [--input rgb|depth] [--cross CKPT] [--depth-error] [--no-figures]\n"
         "  ablate      --config FILE --out DIR --seed N [--set k=v ...]\n"
         "  depth-tools --op project|densify|beams --out FILE [--velodyne BIN] [--calib TXT]\n"
         "              [--width N] [--height N] [--in PNG] [--keep-every N]\n"
         "options: --jobs N caps worker threads (runs are single-process deterministic)\n"
         "environment: MONOKD_OUT_ROOT prefixes relative --out paths\n";
}

inline int cli_main(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  try {
    const clidetail::Args args = clidetail::parse_args(argv);
    if (args.flags.count("help") || args.command == "help") {
      out << cli_usage();
      return 0;
    }
    if (args.flags.count("version")) {
      out << kToolName << ' ' << kToolVersion << '\n';
      return 0;
    }
    if (args.command.empty()) {
      err << cli_usage();
      return 2;
    }
    if (args.has("jobs") && std::stoi(args.opt("jobs")) < 1)
      throw ConfigInvalid("--jobs must be >= 1");

    if (args.command == "prepare") return cmd_prepare(args, out);
    if (args.command == "train") return cmd_train(args, out, err);
    if (args.command == "eval") return cmd_eval(args, out);
    if (args.command == "ablate") return cmd_ablate(args, out, err);
    if (args.command == "depth-tools") return cmd_depth_tools(args, out);
    throw ConfigInvalid("unknown command '" + args.command + "'");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace monokd
