#include "atd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

#include "atd/errors.hpp"

namespace atd {

namespace {

constexpr char kMagic[8] = {'A', 'T', 'D', 'C', 'K', 'P', 'T', '\0'};

// Explicit little-endian encoding keeps the format stable across hosts.
void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i32(std::string& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw IoError("checkpoint: truncated file");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const CheckpointExtras& extras) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointVersion);

  const ModelConfig& c = model.config();
  put_i32(out, c.dim);
  put_i32(out, c.blocks);
  put_i32(out, c.layers_per_block);
  put_i32(out, c.dict_size);
  put_i32(out, c.inner_dim);
  put_i32(out, c.group_size);
  put_i32(out, c.window);
  put_i32(out, c.heads);
  put_f64(out, c.ffn_ratio);
  put_i32(out, c.scale);
  put_u8(out, c.global_residual ? 1 : 0);
  put_u8(out, c.use_rel_pos_bias ? 1 : 0);

  put_u64(out, extras.iteration);
  put_str(out, extras.rng_state);

  const auto& registry = model.parameters();
  put_u32(out, static_cast<uint32_t>(registry.size()));
  for (const auto& [name, t] : registry) {
    put_str(out, name);
    put_u8(out, static_cast<uint8_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) put_i32(out, t.dim(i));
    for (size_t i = 0; i < t.numel(); ++i) put_f64(out, t[i]);
  }

  if (extras.optimizer.has_value()) {
    const AdamWState& st = *extras.optimizer;
    if (st.m.size() != registry.size() || st.v.size() != registry.size()) {
      throw ContractError("save_checkpoint: optimizer state does not match the registry");
    }
    put_u8(out, 1);
    put_u64(out, static_cast<uint64_t>(st.step));
    for (size_t i = 0; i < registry.size(); ++i) {
      const size_t n = registry[i].second.numel();
      if (st.m[i].size() != n || st.v[i].size() != n) {
        throw ContractError("save_checkpoint: moment size mismatch for " + registry[i].first);
      }
      for (double v : st.m[i]) put_f64(out, v);
      for (double v : st.v[i]) put_f64(out, v);
    }
  } else {
    put_u8(out, 0);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed to write '" + path + "'");
}

Model load_checkpoint(const std::string& path, CheckpointExtras* extras) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};

  r.need(sizeof(kMagic));
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("'" + path + "' is not a checkpoint file (bad magic)");
  }
  r.pos = sizeof(kMagic);
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }

  ModelConfig c;
  c.dim = r.i32();
  c.blocks = r.i32();
  c.layers_per_block = r.i32();
  c.dict_size = r.i32();
  c.inner_dim = r.i32();
  c.group_size = r.i32();
  c.window = r.i32();
  c.heads = r.i32();
  c.ffn_ratio = r.f64();
  c.scale = r.i32();
  c.global_residual = r.u8() != 0;
  c.use_rel_pos_bias = r.u8() != 0;

  CheckpointExtras ex;
  ex.iteration = r.u64();
  ex.rng_state = r.str();

  Model model = Model::init(c, 0);
  const auto& registry = model.parameters();
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : registry) by_name.emplace(name, &t);

  const uint32_t count = r.u32();
  if (count != registry.size()) {
    throw IoError("checkpoint: parameter count " + std::to_string(count) + " does not match model (" +
                  std::to_string(registry.size()) + ")");
  }
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint: unknown parameter '" + name + "'");
    const Tensor& t = *it->second;
    const uint8_t nd = r.u8();
    Shape shape(nd);
    for (uint8_t d = 0; d < nd; ++d) shape[d] = r.i32();
    if (shape != t.shape()) {
      throw IoError("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) +
                    ", expected " + shape_str(t.shape()));
    }
    for (size_t j = 0; j < t.numel(); ++j) t[j] = r.f64();
  }

  if (r.u8() != 0) {
    AdamWState st;
    st.step = static_cast<int64_t>(r.u64());
    st.m.resize(registry.size());
    st.v.resize(registry.size());
    for (size_t i = 0; i < registry.size(); ++i) {
      const size_t n = registry[i].second.numel();
      st.m[i].resize(n);
      st.v[i].resize(n);
      for (size_t j = 0; j < n; ++j) st.m[i][j] = r.f64();
      for (size_t j = 0; j < n; ++j) st.v[i][j] = r.f64();
    }
    ex.optimizer = std::move(st);
  }

  if (extras != nullptr) *extras = std::move(ex);
  return model;
}

}  // namespace atd
