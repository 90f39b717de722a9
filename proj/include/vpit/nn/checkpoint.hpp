#ifndef VPIT_NN_CHECKPOINT_HPP
#define VPIT_NN_CHECKPOINT_HPP

// Binary layout (all integers little-endian u32, values little-endian
// IEEE-754 binary32):
//
//   magic    "VPITCKPT"            8 bytes
//   version  u32                   currently 1
//   hlen     u32, header bytes     plain-text config snapshot
//   count    u32                   number of blobs
//   blob:    u32 name length, name bytes,
//            u32 rank, rank x u32 dims,
//            prod(dims) x f32 values
//
// See docs/formats.md.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vpit/nn/adam.hpp"
#include "vpit/nn/model.hpp"
#include "vpit/nn/tensor.hpp"

namespace vpit::nn {

inline constexpr char kCheckpointMagic[8] = {'V', 'P', 'I', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> blobs;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : blobs) {
      if (n == name) return &t;
    }
    return nullptr;
  }

  const Tensor& get(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw CheckpointError("checkpoint has no blob named '" + name + "'");
    return *t;
  }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, double v) { put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

inline double get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

inline std::string get_bytes(std::istream& is, std::uint32_t n) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(ck.config_text.size()));
  os.write(ck.config_text.data(), static_cast<std::streamsize>(ck.config_text.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(ck.blobs.size()));
  for (const auto& [name, t] : ck.blobs) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.values()) detail::put_f32(os, v);
  }
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, ck);
  if (!os) throw CheckpointError("failed writing checkpoint: " + path);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_text = detail::get_bytes(is, detail::get_u32(is));
  const std::uint32_t count = detail::get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = detail::get_bytes(is, detail::get_u32(is));
    const std::uint32_t rank = detail::get_u32(is);
    if (rank > 4) throw CheckpointError("blob '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u32(is);
    Tensor t(shape);
    for (double& v : t.values()) v = detail::get_f32(is);
    ck.blobs.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

/// Rounds every value to the nearest binary32, the precision at which
/// parameters are persisted.
inline void quantize_f32(Tensor& t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

inline void quantize_f32(SiamModel& m) {
  for (auto& p : parameters(m)) quantize_f32(*p.tensor);
}

inline void add_model_blobs(Checkpoint& ck, const SiamModel& model) {
  SiamModel copy = model;
  for (auto& p : parameters(copy)) ck.blobs.emplace_back(p.name, *p.tensor);
  Tensor strides({copy.fgn.layers.size()});
  for (std::size_t i = 0; i < copy.fgn.layers.size(); ++i) strides[i] = static_cast<double>(copy.fgn.layers[i].stride);
  ck.blobs.emplace_back("meta.fgn_strides", std::move(strides));
}

inline SiamModel model_from_checkpoint(const Checkpoint& ck) {
  SiamModel m;
  m.encoder.weight = ck.get("encoder.weight");
  m.encoder.bias = ck.get("encoder.bias");
  const Tensor& strides = ck.get("meta.fgn_strides");
  for (std::size_t i = 0; i < strides.size(); ++i) {
    m.fgn.layers.push_back({ck.get("fgn." + std::to_string(i) + ".weight"), ck.get("fgn." + std::to_string(i) + ".bias"),
                            static_cast<std::size_t>(strides[i])});
  }
  m.head.scale = ck.get("head.scale");
  m.head.bias = ck.get("head.bias");
  check_encoder(m.encoder);
  return m;
}

inline void add_optimizer_blobs(Checkpoint& ck, const SiamModel& model, const AdamState& state) {
  ck.blobs.emplace_back("meta.step", Tensor({1}, static_cast<double>(state.step)));
  if (state.slots.empty()) return;
  SiamModel copy = model;
  const auto params = parameters(copy);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ck.blobs.emplace_back("adam.m." + params[i].name, state.slots[i].m);
    ck.blobs.emplace_back("adam.v." + params[i].name, state.slots[i].v);
  }
}

inline AdamState optimizer_from_checkpoint(const Checkpoint& ck, const SiamModel& model) {
  AdamState st;
  if (const Tensor* s = ck.find("meta.step")) st.step = static_cast<std::int64_t>((*s)[0]);
  SiamModel copy = model;
  for (const auto& p : parameters(copy)) {
    const Tensor* m = ck.find("adam.m." + p.name);
    const Tensor* v = ck.find("adam.v." + p.name);
    if (!m || !v) return AdamState{st.step, {}};
    st.slots.push_back({*m, *v});
  }
  return st;
}

}  // namespace vpit::nn

#endif  // VPIT_NN_CHECKPOINT_HPP
