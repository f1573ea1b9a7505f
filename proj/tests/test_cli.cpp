#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "monokd/cli.hpp"

using namespace monokd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;

  TempDir() {
    path = fs::temp_directory_path() /
           ("monokd_cli_" + std::to_string(Catch::rngSeed()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = cli_main(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// shared micro config: everything as small as the validators allow
std::string micro_cfg(const TempDir& dir) {
  const std::string path = dir.str("micro.cfg");
  write_text_file(path,
                  "data.width = 64\n"
                  "data.height = 48\n"
                  "data.focal = 60\n"
                  "data.seed = 7\n"
                  "data.n_train = 3\n"
                  "data.n_val = 2\n"
                  "data.min_objects = 1\n"
                  "data.max_objects = 2\n"
                  "data.min_depth = 6\n"
                  "data.max_depth = 20\n"
                  "data.background_depth = 30\n"
                  "data.min_center_sep = 6\n"
                  "model.channels = 4,6,8,10\n"
                  "model.fused_channels = 8\n"
                  "model.head_hidden = 6\n"
                  "train.epochs = 2\n"
                  "train.base_lr = 1e-4\n"
                  "train.decay_epochs =\n"
                  "train.warmup_epochs = 1\n"
                  "train.batch_size = 2\n"
                  "eval.difficulty = scaled\n"
                  "eval.iou.car = 0.25\n");
  return path;
}

std::uint64_t tree_hash(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "manifest.txt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, root).string();
    h = fnv1a64(rel.data(), rel.size(), h);
    const auto bytes = read_binary_file(f.string());
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

}  // namespace

TEST_CASE("kv config parses, validates, and merges") {
  const KvConfig kv = KvConfig::from_text(
      "# comment\n"
      "a.b = 3\n"
      "  c =  hello world \n"
      "\n"
      "flag1 = true\n"
      "flag0 = off\n"
      "list = 1,2,3\n");
  REQUIRE(kv.integer("a.b", 0) == 3);
  REQUIRE(kv.str("c", "") == "hello world");
  REQUIRE(kv.flag("flag1", false));
  REQUIRE(!kv.flag("flag0", true));
  REQUIRE(kv.int_list("list", {}) == std::vector<int>{1, 2, 3});
  REQUIRE(kv.num("missing", 2.5) == 2.5);
  REQUIRE_THROWS_AS(kv.require("missing"), MissingKey);

  SECTION("line numbers in parse errors") {
    try {
      KvConfig::from_text("x = 1\nbroken line\n");
      FAIL("expected throw");
    } catch (const ConfigInvalid& e) {
      REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SECTION("bad numbers are rejected") {
    const KvConfig bad = KvConfig::from_text("x = nope\n");
    REQUIRE_THROWS_AS(bad.num("x", 0.0), ConfigInvalid);
    REQUIRE_THROWS_AS(bad.integer("x", 0), ConfigInvalid);
  }
  SECTION("overrides win") {
    KvConfig base = KvConfig::from_text("x = 1\ny = 2\n");
    base.apply_override("x=10");
    REQUIRE(base.integer("x", 0) == 10);
    REQUIRE(base.integer("y", 0) == 2);
    REQUIRE_THROWS_AS(base.apply_override("no_equals_sign"), ConfigInvalid);
  }
  SECTION("to_text round trips") {
    const KvConfig again = KvConfig::from_text(kv.to_text());
    REQUIRE(again.to_text() == kv.to_text());
  }
}

TEST_CASE("canvas drawing stays inside bounds and encodes to png") {
  Canvas c = Canvas::filled(20, 10, {0, 0, 0});
  c.set(-5, -5, {255, 0, 0});   // silently clipped
  c.set(25, 15, {255, 0, 0});
  c.rect(-10, -10, 30, 20, {0, 255, 0});
  c.line(-5, 5, 25, 5, {0, 0, 255});
  const auto png = c.to_png();
  const PngImage img = png_decode(png);
  REQUIRE(img.width == 20);
  REQUIRE(img.height == 10);
  REQUIRE(img.channels == 3);
  // the horizontal line must be present in row 5
  REQUIRE(img.sample8(5, 10, 2) == 255);
}

TEST_CASE("canvas from_chw converts planar unit floats to bytes") {
  // 2x2 image: distinct channel values
  std::vector<double> chw = {0.0, 1.0, 0.5, 0.25,   // r
                             1.0, 0.0, 0.5, 0.75,   // g
                             0.2, 0.4, 0.6, 0.8};   // b
  const Canvas c = Canvas::from_chw(chw, 2, 2);
  REQUIRE(c.rgb[0] == 0);
  REQUIRE(c.rgb[1] == 255);
  REQUIRE(c.rgb[2] == static_cast<std::uint8_t>(0.2 * 255 + 0.5));
  REQUIRE(c.rgb[3] == 255);  // pixel (0,1) r channel
}

TEST_CASE("cli reports version, help, and usage errors") {
  REQUIRE(run({"--version"}).out.find(kToolVersion) != std::string::npos);
  REQUIRE(run({"--help"}).code == 0);
  REQUIRE(run({}).code == 2);

  const CliRun unknown = run({"frobnicate"});
  REQUIRE(unknown.code == 1);
  REQUIRE(unknown.err.rfind("error: ", 0) == 0);
  REQUIRE(std::count(unknown.err.begin(), unknown.err.end(), '\n') == 1);  // single line

  const CliRun dangling = run({"train", "--seed"});
  REQUIRE(dangling.code == 1);
  REQUIRE(dangling.err.find("expects a value") != std::string::npos);
}

TEST_CASE("prepare writes the dataset tree deterministically") {
  TempDir dir;
  const std::string cfg = micro_cfg(dir);
  const CliRun r = run({"prepare", "--config", cfg, "--out", dir.str("d1")});
  REQUIRE(r.code == 0);

  for (const char* p :
       {"train.txt", "val.txt", "priors.txt", "manifest.txt", "train/image_2/000000.png",
        "train/label_2/000002.txt", "train/calib/000001.txt", "train/velodyne/000000.bin",
        "train/depth_sparse/000002.png", "train/depth_dense/000000.png",
        "val/image_2/000001.png"})
    REQUIRE(fs::exists(dir.path / "d1" / p));

  // index files enumerate the scenes
  REQUIRE(read_text_file(dir.str("d1/train.txt")) == "000000\n000001\n000002\n");
  REQUIRE(read_text_file(dir.str("d1/val.txt")) == "000000\n000001\n");

  // depth png encodes true depth to 1/256 m
  const DepthMap dense = decode_depth_png16(read_binary_file(dir.str("d1/train/depth_dense/000000.png")));
  REQUIRE(dense.width == 64);
  REQUIRE(dense.n_valid() > 0);

  // rerun lands bit-identically
  const CliRun again = run({"prepare", "--config", cfg, "--out", dir.str("d2")});
  REQUIRE(again.code == 0);
  REQUIRE(tree_hash(dir.path / "d1") == tree_hash(dir.path / "d2"));

  // labels parse back
  const auto labels = parse_labels(read_text_file(dir.str("d1/train/label_2/000000.txt")));
  REQUIRE(!labels.empty());
}

TEST_CASE("train subcommand validates, trains, and logs") {
  TempDir dir;
  const std::string cfg = micro_cfg(dir);

  SECTION("seed is mandatory") {
    const CliRun r =
        run({"train", "--config", cfg, "--out", dir.str("t"), "--phase", "teacher"});
    REQUIRE(r.code == 1);
    REQUIRE(r.err.find("--seed") != std::string::npos);
  }
  SECTION("student with switches but no teacher is refused") {
    const CliRun r = run({"train", "--config", cfg, "--out", dir.str("t"), "--phase", "student",
                          "--seed", "1", "--set", "train.switch.sf=1"});
    REQUIRE(r.code == 1);
    REQUIRE(r.err.find("--teacher") != std::string::npos);
  }
  SECTION("validation lists every problem at once") {
    const CliRun r = run({"train", "--config", cfg, "--out", dir.str("t"), "--phase", "student",
                          "--seed", "1", "--set", "train.epochs=0", "--set",
                          "data.n_train=0"});
    REQUIRE(r.code == 1);
    REQUIRE(r.err.find("epochs") != std::string::npos);
    REQUIRE(r.err.find("n_train") != std::string::npos);
  }
  SECTION("teacher phase ignores distillation switches with a warning") {
    const CliRun r = run({"train", "--config", cfg, "--out", dir.str("t"), "--phase", "teacher",
                          "--seed", "1", "--set", "train.switch.sf=1"});
    REQUIRE(r.code == 0);
    REQUIRE(r.err.find("warning") != std::string::npos);
    REQUIRE(fs::exists(dir.path / "t" / "checkpoint.ckpt"));
  }
  SECTION("full teacher then student with all terms") {
    const CliRun t = run({"train", "--config", cfg, "--out", dir.str("teach"), "--phase",
                          "teacher", "--seed", "3"});
    REQUIRE(t.code == 0);
    REQUIRE(t.out.find("epoch 1/2") != std::string::npos);

    const CliRun s = run({"train", "--config", cfg, "--out", dir.str("stud"), "--phase",
                          "student", "--seed", "4", "--teacher", dir.str("teach/checkpoint.ckpt"),
                          "--set", "train.switch.sf=1", "--set", "train.switch.of=1", "--set",
                          "train.switch.or=1", "--set", "train.switch.ff=1"});
    REQUIRE(s.code == 0);
    REQUIRE(fs::exists(dir.path / "stud" / "checkpoint.ckpt"));
    REQUIRE(fs::exists(dir.path / "stud" / "fusion.ckpt"));
    REQUIRE(fs::exists(dir.path / "stud" / "train_log.csv"));
    REQUIRE(fs::exists(dir.path / "stud" / "manifest.txt"));

    const std::string log = read_text_file(dir.str("stud/train_log.csv"));
    REQUIRE(log.rfind("step,", 0) == 0);
    REQUIRE(std::count(log.begin(), log.end(), '\n') == 1 + 2 * 2);  // header + 2 epochs x 2 steps

    const std::string manifest = read_text_file(dir.str("stud/manifest.txt"));
    REQUIRE(manifest.find("tool=monokd") != std::string::npos);
    REQUIRE(manifest.find("[config]") != std::string::npos);
    REQUIRE(manifest.find("teacher_checkpoint=") != std::string::npos);
    REQUIRE(manifest.find("checkpoint.ckpt") != std::string::npos);

    // same seeds reproduce the same checkpoint bytes
    const CliRun s2 = run({"train", "--config", cfg, "--out", dir.str("stud2"), "--phase",
                           "student", "--seed", "4", "--teacher",
                           dir.str("teach/checkpoint.ckpt"), "--set", "train.switch.sf=1",
                           "--set", "train.switch.of=1", "--set", "train.switch.or=1", "--set",
                           "train.switch.ff=1"});
    REQUIRE(s2.code == 0);
    REQUIRE(read_binary_file(dir.str("stud/checkpoint.ckpt")) ==
            read_binary_file(dir.str("stud2/checkpoint.ckpt")));
  }
}

TEST_CASE("set overrides beat the config file") {
  TempDir dir;
  const std::string cfg = micro_cfg(dir);
  const CliRun r = run({"train", "--config", cfg, "--out", dir.str("t"), "--phase", "teacher",
                        "--seed", "1", "--set", "train.epochs=1", "--set",
                        "train.warmup_epochs=0"});
  REQUIRE(r.code == 0);
  const std::string log = read_text_file(dir.str("t/train_log.csv"));
  REQUIRE(std::count(log.begin(), log.end(), '\n') == 1 + 2);  // one epoch only
  const std::string manifest = read_text_file(dir.str("t/manifest.txt"));
  REQUIRE(manifest.find("train.epochs=1") != std::string::npos);
}

TEST_CASE("eval produces tables, figures, and analyses") {
  TempDir dir;
  const std::string cfg = micro_cfg(dir);
  REQUIRE(run({"train", "--config", cfg, "--out", dir.str("t"), "--phase", "teacher", "--seed",
               "5"})
              .code == 0);

  const CliRun e = run({"eval", "--checkpoint", dir.str("t/checkpoint.ckpt"), "--config", cfg,
                        "--out", dir.str("e"), "--split", "val", "--input", "depth", "--cross",
                        dir.str("t/checkpoint.ckpt"), "--depth-error"});
  REQUIRE(e.code == 0);
  for (const char* p : {"ap_car.txt", "ap_pedestrian.txt", "ap_cyclist.txt", "ap.csv",
                        "detections.csv", "cross.csv", "depth_fit.txt", "manifest.txt",
                        "overlay_000000.png", "bev_000000.png"})
    REQUIRE(fs::exists(dir.path / "e" / p));

  REQUIRE(e.out.find("Mod.") != std::string::npos);

  // cross table covers all 16 selector combinations
  const std::string cross = read_text_file(dir.str("e/cross.csv"));
  REQUIRE(std::count(cross.begin(), cross.end(), '\n') == 17);

  // identical checkpoints: every cross row carries the same ap
  std::istringstream is(cross);
  std::string line;
  std::getline(is, line);
  std::set<std::string> aps;
  while (std::getline(is, line)) aps.insert(line.substr(line.rfind(',') + 1));
  REQUIRE(aps.size() == 1);

  SECTION("figures can be disabled") {
    const CliRun quiet = run({"eval", "--checkpoint", dir.str("t/checkpoint.ckpt"), "--config",
                              cfg, "--out", dir.str("q"), "--no-figures"});
    REQUIRE(quiet.code == 0);
    REQUIRE(!fs::exists(dir.path / "q" / "overlay_000000.png"));
  }
  SECTION("missing checkpoint is a clean error") {
    const CliRun bad =
        run({"eval", "--checkpoint", dir.str("nope.ckpt"), "--config", cfg, "--out",
             dir.str("x")});
    REQUIRE(bad.code == 1);
    REQUIRE(bad.err.rfind("error: ", 0) == 0);
  }
}

TEST_CASE("depth-tools round trips through files") {
  TempDir dir;
  const std::string cfg = micro_cfg(dir);
  REQUIRE(run({"prepare", "--config", cfg, "--out", dir.str("d")}).code == 0);

  const std::string vel = dir.str("d/train/velodyne/000000.bin");
  const std::string cal = dir.str("d/train/calib/000000.txt");

  const CliRun proj = run({"depth-tools", "--op", "project", "--velodyne", vel, "--calib", cal,
                           "--width", "64", "--height", "48", "--out", dir.str("sp.png")});
  REQUIRE(proj.code == 0);

  // the projected map equals the prepared sparse artifact byte for byte
  REQUIRE(read_binary_file(dir.str("sp.png")) ==
          read_binary_file(dir.str("d/train/depth_sparse/000000.png")));

  const CliRun dd = run({"depth-tools", "--op", "densify", "--in", dir.str("sp.png"), "--out",
                         dir.str("dn.png")});
  REQUIRE(dd.code == 0);
  REQUIRE(read_binary_file(dir.str("dn.png")) ==
          read_binary_file(dir.str("d/train/depth_dense/000000.png")));

  const CliRun bm = run({"depth-tools", "--op", "beams", "--velodyne", vel, "--keep-every", "4",
                         "--out", dir.str("b16.bin")});
  REQUIRE(bm.code == 0);
  const PointCloud all = read_velodyne(read_binary_file(vel));
  const PointCloud b16 = read_velodyne(read_binary_file(dir.str("b16.bin")));
  REQUIRE(b16.points.size() < all.points.size());
  REQUIRE(!b16.points.empty());

  const CliRun bad = run({"depth-tools", "--op", "transmogrify", "--out", dir.str("z")});
  REQUIRE(bad.code == 1);
}

TEST_CASE("ablate writes the switch grid summary") {
  TempDir dir;
  const std::string cfg = micro_cfg(dir);
  // keep the grid cheap: one epoch, two scenes
  const CliRun r = run({"ablate", "--config", cfg, "--out", dir.str("ab"), "--seed", "2",
                        "--set", "data.n_train=2", "--set", "data.n_val=2", "--set",
                        "train.epochs=1", "--set", "train.warmup_epochs=0"});
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(dir.path / "ab" / "teacher.ckpt"));
  const std::string csv = read_text_file(dir.str("ab/ablate.csv"));
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 10);  // header + rows a..i
  REQUIRE(csv.find("\na,0,0,0,0,") != std::string::npos);
  REQUIRE(csv.find("\ni,1,1,1,1,") != std::string::npos);
  for (const char* row : {"row_a", "row_e", "row_i"})
    REQUIRE(fs::exists(dir.path / "ab" / row / "checkpoint.ckpt"));
}

TEST_CASE("relative outputs respect the environment root") {
  TempDir dir;
  const std::string cfg = micro_cfg(dir);
  setenv("MONOKD_OUT_ROOT", dir.str("rooted").c_str(), 1);
  const CliRun r = run({"prepare", "--config", cfg, "--out", "ds", "--set", "data.n_train=1",
                        "--set", "data.n_val=1"});
  unsetenv("MONOKD_OUT_ROOT");
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(dir.path / "rooted" / "ds" / "train.txt"));
}
