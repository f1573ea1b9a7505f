#pragma once

// Binary checkpoints for parameter stores. A checkpoint is a self-describing
// blob: a free-form config text block, then every parameter (name, trainable
// flag, shape, raw f64 values) in store order, then an FNV-1a hash of all
// preceding bytes so corruption is detected on load. Writes are atomic.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "monokd/common.hpp"
#include "monokd/tensor.hpp"

namespace monokd {

inline constexpr char kCheckpointMagic[8] = {'M', 'K', 'C', 'K', 'P', 'T', '0', '1'};

namespace ckdetail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t pos = 0;

  void need(std::size_t k) const {
    if (pos + k > n) throw TruncatedRecord(n);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return p[pos++];
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p + pos), k);
    pos += k;
    return s;
  }
};

}  // namespace ckdetail

inline std::vector<std::uint8_t> serialize_params(const ParamStore& ps,
                                                  const std::string& config_text) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
  ckdetail::put_u32(out, static_cast<std::uint32_t>(config_text.size()));
  out.insert(out.end(), config_text.begin(), config_text.end());
  ckdetail::put_u32(out, static_cast<std::uint32_t>(ps.size()));
  for (const auto& p : ps.params()) {
    ckdetail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    out.push_back(p.trainable ? 1 : 0);
    const auto& shape = p.tensor.shape();
    ckdetail::put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) ckdetail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.tensor.value()) ckdetail::put_f64(out, v);
  }
  ckdetail::put_u64(out, fnv1a64(out.data(), out.size()));
  return out;
}

struct LoadedParam {
  std::string name;
  bool trainable = true;
  Shape shape;
  std::vector<double> value;
};

struct LoadedCheckpoint {
  std::string config_text;
  std::vector<LoadedParam> params;
  std::uint64_t content_hash = 0;  // hash stored in the file (bytes before the trailer)
};

inline LoadedCheckpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 + 8) throw TruncatedRecord(bytes.size());
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw IoError("checkpoint: bad magic, not a checkpoint file");
  const std::uint64_t expect = fnv1a64(bytes.data(), bytes.size() - 8);
  ckdetail::Reader tail{bytes.data() + bytes.size() - 8, 8};
  if (tail.u64() != expect)
    throw IoError("checkpoint: content hash mismatch, file is corrupt");

  ckdetail::Reader r{bytes.data(), bytes.size() - 8};
  r.pos = 8;
  LoadedCheckpoint ck;
  ck.content_hash = expect;
  ck.config_text = r.str(r.u32());
  const std::uint32_t n_params = r.u32();
  ck.params.reserve(n_params);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    LoadedParam lp;
    lp.name = r.str(r.u32());
    lp.trainable = r.u8() != 0;
    const std::uint32_t ndim = r.u32();
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const std::uint32_t dim = r.u32();
      lp.shape.push_back(static_cast<int>(dim));
      count *= dim;
    }
    lp.value.reserve(count);
    for (std::size_t k = 0; k < count; ++k) lp.value.push_back(r.f64());
    ck.params.push_back(std::move(lp));
  }
  if (r.pos != r.n) throw TruncatedRecord(bytes.size());
  return ck;
}

inline void save_checkpoint(const std::string& path, const ParamStore& ps,
                            const std::string& config_text) {
  write_binary_file(path, serialize_params(ps, config_text));
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_binary_file(path));
}

// Copies loaded values into an existing store. The manifest must match
// exactly: same parameter count, same names in the same order, same shapes
// and trainable flags. Anything else means the checkpoint belongs to a
// different architecture.
inline void apply_params(ParamStore& ps, const LoadedCheckpoint& ck) {
  auto& params = ps.params();
  if (params.size() != ck.params.size())
    throw ArchMismatch("checkpoint has " + std::to_string(ck.params.size()) +
                       " parameters, store has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& lp = ck.params[i];
    auto& p = params[i];
    if (p.name != lp.name)
      throw ArchMismatch("parameter " + std::to_string(i) + " is '" + p.name +
                         "' in store but '" + lp.name + "' in checkpoint");
    if (p.tensor.shape() != lp.shape)
      throw ArchMismatch("shape mismatch for parameter '" + p.name + "'");
    if (p.trainable != lp.trainable)
      throw ArchMismatch("trainable flag mismatch for parameter '" + p.name + "'");
    p.tensor.value_mut() = lp.value;
  }
}

// Content hash of the current parameter values (config text excluded), for
// run manifests and bit-identity checks between training runs.
inline std::uint64_t params_hash(const ParamStore& ps) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : ps.params()) {
    h = fnv1a64(p.name.data(), p.name.size(), h);
    const auto& v = p.tensor.value();
    h = fnv1a64(v.data(), v.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace monokd
