#pragma once

// Single-file checkpoint: versioned header, string metadata, named parameter
// entries (shape + row-major 64-bit little-endian values) and optional
// optimizer state. Every scalar is written through explicit little-endian
// byte encoding, so files are byte-stable across platforms.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "maskcap/errors.hpp"
#include "maskcap/nn.hpp"
#include "maskcap/optim.hpp"

namespace maskcap {

namespace ckpt_detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_i64(std::ostream& os, std::int64_t v) { put_u64(os, static_cast<std::uint64_t>(v)); }

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw CorruptionError("checkpoint: unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw CorruptionError("checkpoint: unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::int64_t get_i64(std::istream& is) { return static_cast<std::int64_t>(get_u64(is)); }

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw CorruptionError("checkpoint: unexpected end of file");
  return s;
}

}  // namespace ckpt_detail

constexpr char kCheckpointMagic[4] = {'M', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::map<std::string, std::string> meta;
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::vector<Entry> params;
  bool has_optimizer = false;
  OptimizerState optimizer;                 // moments in `opt_moments`
  std::vector<std::string> opt_param_names;  // aligned with optimizer.m / .v
};

inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const std::map<std::string, std::string>& meta,
                            const OptimizerState* opt = nullptr) {
  using namespace ckpt_detail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint '" + path + "' for writing");
  os.write(kCheckpointMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_str(os, k);
    put_str(os, v);
  }
  put_u64(os, static_cast<std::uint64_t>(store.all().size()));
  for (const Parameter* p : store.all()) {
    put_str(os, p->name);
    put_u32(os, static_cast<std::uint32_t>(p->shape.size()));
    for (int d : p->shape) put_i64(os, d);
    for (double v : p->value) put_f64(os, v);
  }
  os.put(opt != nullptr ? '\x01' : '\x00');
  if (opt != nullptr) {
    if (opt->m.size() != store.all().size())
      throw ContractViolation("save_checkpoint: optimizer not bound to this store");
    put_i64(os, opt->step);
    put_i64(os, opt->total_steps);
    put_f64(os, opt->lr);
    put_f64(os, opt->beta1);
    put_f64(os, opt->beta2);
    put_f64(os, opt->eps);
    put_f64(os, opt->weight_decay);
    put_f64(os, opt->warmup_frac);
    put_u64(os, static_cast<std::uint64_t>(store.all().size()));
    for (std::size_t i = 0; i < store.all().size(); ++i) {
      put_str(os, store.all()[i]->name);
      for (double v : opt->m[i]) put_f64(os, v);
      for (double v : opt->v[i]) put_f64(os, v);
    }
  }
  if (!os) throw IoError("write failed for checkpoint '" + path + "'");
}

inline CheckpointData read_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CorruptionError("'" + path + "' is not a checkpoint file");
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + " unsupported");
  CheckpointData data;
  const std::uint32_t n_meta = get_u32(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = get_str(is);
    data.meta[k] = get_str(is);
  }
  const std::uint64_t n_params = get_u64(is);
  data.params.reserve(n_params);
  for (std::uint64_t i = 0; i < n_params; ++i) {
    CheckpointData::Entry e;
    e.name = get_str(is);
    const std::uint32_t ndim = get_u32(is);
    for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<int>(get_i64(is)));
    const std::int64_t n = shape_numel(e.shape);
    e.values.resize(static_cast<std::size_t>(n));
    for (auto& v : e.values) v = get_f64(is);
    data.params.push_back(std::move(e));
  }
  int has_opt = is.get();
  if (has_opt == std::char_traits<char>::eof())
    throw CorruptionError("checkpoint: unexpected end of file");
  data.has_optimizer = has_opt == 1;
  if (data.has_optimizer) {
    data.optimizer.step = get_i64(is);
    data.optimizer.total_steps = get_i64(is);
    data.optimizer.lr = get_f64(is);
    data.optimizer.beta1 = get_f64(is);
    data.optimizer.beta2 = get_f64(is);
    data.optimizer.eps = get_f64(is);
    data.optimizer.weight_decay = get_f64(is);
    data.optimizer.warmup_frac = get_f64(is);
    const std::uint64_t n = get_u64(is);
    for (std::uint64_t i = 0; i < n; ++i) {
      data.opt_param_names.push_back(get_str(is));
      // moment sizes follow the parameter entry with the same index
      if (i >= data.params.size())
        throw CorruptionError("checkpoint: optimizer entries exceed parameter entries");
      const std::size_t len = data.params[i].values.size();
      std::vector<double> m(len), v(len);
      for (auto& x : m) x = get_f64(is);
      for (auto& x : v) x = get_f64(is);
      data.optimizer.m.push_back(std::move(m));
      data.optimizer.v.push_back(std::move(v));
    }
  }
  return data;
}

// Copies checkpoint values into an existing store; every name and shape must
// line up exactly.
inline void apply_checkpoint(const CheckpointData& data, ParamStore& store) {
  if (data.params.size() != store.all().size())
    throw CompatibilityError("checkpoint holds " + std::to_string(data.params.size()) +
                             " parameters, model has " + std::to_string(store.all().size()));
  for (std::size_t i = 0; i < data.params.size(); ++i) {
    Parameter* p = store.all()[i];
    const auto& e = data.params[i];
    if (e.name != p->name)
      throw CompatibilityError("checkpoint parameter '" + e.name + "' does not match model '" +
                               p->name + "'");
    if (e.shape != p->shape)
      throw CompatibilityError("checkpoint parameter '" + e.name + "' shape mismatch");
    p->value = e.values;
  }
}

}  // namespace maskcap
