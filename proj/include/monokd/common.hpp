// Shared plumbing: typed errors, deterministic RNG helpers, hashing, angles.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace monokd {

// ---------------------------------------------------------------------------
// Errors. One exception type per contract failure so tests can catch them
// individually. All carry a human-readable message.
// ---------------------------------------------------------------------------

struct MissingKey : std::runtime_error {
  explicit MissingKey(const std::string& key)
      : std::runtime_error("missing key: " + key), key(key) {}
  std::string key;
};

struct MalformedNumber : std::runtime_error {
  MalformedNumber(int line, int column)
      : std::runtime_error("malformed number at line " + std::to_string(line) +
                           ", column " + std::to_string(column)),
        line(line), column(column) {}
  int line, column;
};

struct FieldCount : std::runtime_error {
  explicit FieldCount(int line)
      : std::runtime_error("wrong field count at line " + std::to_string(line)),
        line(line) {}
  int line;
};

struct TruncatedRecord : std::runtime_error {
  explicit TruncatedRecord(std::size_t nbytes)
      : std::runtime_error("byte length " + std::to_string(nbytes) +
                           " is not a whole number of records"),
        nbytes(nbytes) {}
  std::size_t nbytes;
};

struct ConfigInvalid : std::runtime_error {
  explicit ConfigInvalid(const std::string& what) : std::runtime_error("invalid config: " + what) {}
};

struct EmptyInput : std::runtime_error {
  explicit EmptyInput(const std::string& what) : std::runtime_error("empty input: " + what) {}
};

struct DepthOutOfRange : std::runtime_error {
  explicit DepthOutOfRange(double depth)
      : std::runtime_error("depth " + std::to_string(depth) + " m not representable") {}
};

struct ShapeMismatch : std::runtime_error {
  ShapeMismatch(const std::string& op, const std::string& got, const std::string& expected)
      : std::runtime_error(op + ": got " + got + ", expected " + expected) {}
};

struct NotScalar : std::runtime_error {
  NotScalar() : std::runtime_error("backward requires a scalar loss") {}
};

struct NonFinite : std::runtime_error {
  explicit NonFinite(const std::string& term) : std::runtime_error("non-finite value in " + term) {}
};

struct Diverged : std::runtime_error {
  explicit Diverged(int step)
      : std::runtime_error("training diverged (non-finite loss) at step " + std::to_string(step)) {}
};

struct ArchMismatch : std::runtime_error {
  explicit ArchMismatch(const std::string& what) : std::runtime_error("architecture mismatch: " + what) {}
};

struct InsufficientData : std::runtime_error {
  explicit InsufficientData(const std::string& what) : std::runtime_error("insufficient data: " + what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Deterministic randomness. All draws go through these helpers so results do
// not depend on the standard library's distribution implementations.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Mixes a base seed with a salt (stream id) into an independent seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t mix_seed(std::uint64_t seed, const std::string& salt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : salt) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(seed, h);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  // Box-Muller; consumes two uniforms per pair, caches the second.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Hashing (FNV-1a 64) for content fingerprints in manifests.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = d[h & 0xf];
    h >>= 4;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Angles.
// ---------------------------------------------------------------------------

// Wraps to [-pi, pi).
inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a - M_PI;
}

inline double deg2rad(double d) { return d * M_PI / 180.0; }

// ---------------------------------------------------------------------------
// Small file helpers. Writes go through a temp file + rename so readers never
// observe a half-written artifact.
// ---------------------------------------------------------------------------

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::uint8_t> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_atomic(const std::string& path, const void* data, std::size_t n) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + tmp);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("rename failed: " + path);
}

inline void write_text_file(const std::string& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

inline void write_binary_file(const std::string& path, const std::vector<std::uint8_t>& data) {
  write_file_atomic(path, data.data(), data.size());
}

}  // namespace monokd
