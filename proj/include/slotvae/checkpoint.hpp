// Versioned checkpoint container. Layout:
//   8-byte magic "SLOTVAE1"
//   u32 header_len, header text: key=value lines (version, scalar, step,
//     variant flags and every model-config field under "config.")
//   u32 n_params, then per tensor: u32 name_len, name bytes, u32 ndim,
//     i64 dims, u64 data_bytes, raw little-endian scalar data
//   u32 n_state (optimizer tensors, same per-tensor encoding)
//   u32 trailing sentinel (truncation check)
// Loading verifies the magic, version, scalar width, an exact config echo
// match, per-parameter shape equality, and the slot-attention-group
// invariant: "sa_prior.*" keys exist iff weight sharing is disabled.
#pragma once

#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotvae/model.hpp"

namespace slotvae::ckpt {

inline constexpr char kMagic[8] = {'S', 'L', 'O', 'T', 'V', 'A', 'E', '1'};
inline constexpr uint32_t kSentinel = 0x53564331u;
inline constexpr uint32_t kVersion = 1;

inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error("checkpoint: bad numeric value '" + s + "'");
  return v;
}

inline std::vector<std::pair<std::string, std::string>> config_to_kv(
    const model::ModelConfig& c) {
  using P = std::pair<std::string, std::string>;
  std::vector<P> kv;
  auto add = [&](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
  add("image_size", std::to_string(c.image_size));
  add("channels", std::to_string(c.channels));
  add("K", std::to_string(c.K));
  add("D", std::to_string(c.D));
  add("L", std::to_string(c.L));
  add("enc_hidden", std::to_string(c.enc_hidden));
  add("global_hidden", std::to_string(c.global_hidden));
  add("fm_hidden", std::to_string(c.fm_hidden));
  add("dec_hidden", std::to_string(c.dec_hidden));
  add("broadcast", std::to_string(c.broadcast));
  add("sa_iterations", std::to_string(c.sa_iterations));
  add("std_floor", fmt_double(c.std_floor));
  add("prior", model::prior_kind_name(c.prior));
  add("share_sa_weights", c.share_sa_weights ? "1" : "0");
  add("share_init", c.share_init ? "1" : "0");
  add("mlp_prior_hidden", std::to_string(c.mlp_prior_hidden));
  add("tf_layers", std::to_string(c.tf_layers));
  add("tf_heads", std::to_string(c.tf_heads));
  add("tf_mem_tokens", std::to_string(c.tf_mem_tokens));
  return kv;
}

inline model::ModelConfig config_from_kv(const std::map<std::string, std::string>& kv) {
  model::ModelConfig c;
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find("config." + k);
    if (it == kv.end()) throw std::runtime_error("checkpoint: missing config key '" + k + "'");
    return it->second;
  };
  auto geti = [&](const std::string& k) { return (int64_t)parse_double(get(k)); };
  c.image_size = geti("image_size");
  c.channels = geti("channels");
  c.K = geti("K");
  c.D = geti("D");
  c.L = geti("L");
  c.enc_hidden = geti("enc_hidden");
  c.global_hidden = geti("global_hidden");
  c.fm_hidden = geti("fm_hidden");
  c.dec_hidden = geti("dec_hidden");
  c.broadcast = geti("broadcast");
  c.sa_iterations = geti("sa_iterations");
  c.std_floor = parse_double(get("std_floor"));
  const std::string p = get("prior");
  if (p == "slot_attention")
    c.prior = model::PriorKind::slot_attention;
  else if (p == "mlp")
    c.prior = model::PriorKind::mlp;
  else if (p == "transformer")
    c.prior = model::PriorKind::transformer;
  else
    throw std::runtime_error("checkpoint: unknown prior kind '" + p + "'");
  c.share_sa_weights = get("share_sa_weights") == "1";
  c.share_init = get("share_init") == "1";
  c.mlp_prior_hidden = geti("mlp_prior_hidden");
  c.tf_layers = geti("tf_layers");
  c.tf_heads = geti("tf_heads");
  c.tf_mem_tokens = geti("tf_mem_tokens");
  return c;
}

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
  write_u32(os, (uint32_t)(v & 0xffffffffu));
  write_u32(os, (uint32_t)(v >> 32));
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file (u32)");
  return (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16) | ((uint32_t)b[3] << 24);
}

inline uint64_t read_u64(std::istream& is) {
  uint64_t lo = read_u32(is);
  uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

template <typename T>
void write_tensor(std::ostream& os, const std::string& name, const Tensor<T>& t) {
  write_u32(os, (uint32_t)name.size());
  os.write(name.data(), (std::streamsize)name.size());
  write_u32(os, (uint32_t)t.shape().size());
  for (int64_t d : t.shape()) write_u64(os, (uint64_t)d);
  const uint64_t bytes = (uint64_t)t.numel() * sizeof(T);
  write_u64(os, bytes);
  os.write(reinterpret_cast<const char*>(t.data()), (std::streamsize)bytes);
}

template <typename T>
std::pair<std::string, Tensor<T>> read_tensor(std::istream& is) {
  const uint32_t name_len = read_u32(is);
  if (name_len > (1u << 16)) throw std::runtime_error("checkpoint: unreasonable tensor name length");
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  const uint32_t ndim = read_u32(is);
  if (ndim > 8) throw std::runtime_error("checkpoint: unreasonable tensor rank");
  Shape shape(ndim);
  for (uint32_t i = 0; i < ndim; ++i) shape[i] = (int64_t)read_u64(is);
  const uint64_t bytes = read_u64(is);
  Tensor<T> t(shape);
  if (bytes != (uint64_t)t.numel() * sizeof(T))
    throw std::runtime_error("checkpoint: tensor '" + name + "' byte count mismatch");
  is.read(reinterpret_cast<char*>(t.data()), (std::streamsize)bytes);
  if (!is) throw std::runtime_error("checkpoint: truncated tensor '" + name + "'");
  return {name, std::move(t)};
}

}  // namespace detail

template <typename T>
const char* scalar_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else if constexpr (std::is_same_v<T, double>) return "f64";
  else return "?";
}

template <typename T>
void save(const std::string& path, model::Model<T>& m, int64_t step,
          const std::vector<std::pair<std::string, const Tensor<T>*>>& state = {}) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  std::ostringstream hdr;
  hdr << "version=" << kVersion << "\n";
  hdr << "scalar=" << scalar_name<T>() << "\n";
  hdr << "step=" << step << "\n";
  for (auto& [k, v] : config_to_kv(m.cfg)) hdr << "config." << k << "=" << v << "\n";
  const std::string h = hdr.str();
  detail::write_u32(os, (uint32_t)h.size());
  os.write(h.data(), (std::streamsize)h.size());
  auto params = m.parameters();
  detail::write_u32(os, (uint32_t)params.size());
  for (auto* p : params) detail::write_tensor(os, p->name, p->value);
  detail::write_u32(os, (uint32_t)state.size());
  for (auto& [name, t] : state) detail::write_tensor(os, name, *t);
  detail::write_u32(os, kSentinel);
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

struct Header {
  uint32_t version = 0;
  std::string scalar;
  int64_t step = 0;
  model::ModelConfig config;
};

inline Header read_header_stream(std::istream& is, const std::string& path) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
  const uint32_t hlen = detail::read_u32(is);
  if (hlen > (1u << 20)) throw std::runtime_error("checkpoint: unreasonable header length");
  std::string htext(hlen, '\0');
  is.read(htext.data(), hlen);
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  std::map<std::string, std::string> kv;
  std::istringstream hs(htext);
  std::string line;
  while (std::getline(hs, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed header line");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  Header h;
  h.version = (uint32_t)parse_double(kv.at("version"));
  if (h.version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(h.version));
  h.scalar = kv.at("scalar");
  h.step = (int64_t)parse_double(kv.at("step"));
  h.config = config_from_kv(kv);
  return h;
}

inline Header read_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  return read_header_stream(is, path);
}

// Loads parameters (and optimizer state, if requested) into an existing model
// whose config must match the checkpoint echo exactly.
template <typename T>
int64_t load(const std::string& path, model::Model<T>& m,
             std::map<std::string, Tensor<T>>* state_out = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  Header h = read_header_stream(is, path);
  if (h.scalar != scalar_name<T>())
    throw std::runtime_error("checkpoint: scalar type is " + h.scalar + ", expected " +
                             scalar_name<T>());
  {
    auto want = config_to_kv(m.cfg), got = config_to_kv(h.config);
    for (size_t i = 0; i < want.size(); ++i)
      if (want[i] != got[i])
        throw std::runtime_error("checkpoint: config mismatch for '" + want[i].first +
                                 "': checkpoint has " + got[i].second + ", model has " +
                                 want[i].second);
  }
  const uint32_t n_params = detail::read_u32(is);
  std::map<std::string, Tensor<T>> loaded;
  bool has_prior_group = false;
  for (uint32_t i = 0; i < n_params; ++i) {
    auto [name, t] = detail::read_tensor<T>(is);
    if (name.rfind("sa_prior.", 0) == 0) has_prior_group = true;
    if (!loaded.emplace(name, std::move(t)).second)
      throw std::runtime_error("checkpoint: duplicate parameter '" + name + "'");
  }
  if (m.cfg.share_sa_weights && has_prior_group)
    throw std::runtime_error(
        "checkpoint: found a second slot-attention parameter group (sa_prior.*) but weight "
        "sharing is enabled; a weight-sharing model must hold a single group");
  if (!m.cfg.share_sa_weights && !has_prior_group)
    throw std::runtime_error(
        "checkpoint: weight sharing is disabled but no sa_prior.* parameter group is present");
  auto params = m.parameters();
  if (params.size() != loaded.size())
    throw std::runtime_error("checkpoint: parameter count mismatch: file has " +
                             std::to_string(loaded.size()) + ", model has " +
                             std::to_string(params.size()));
  for (auto* p : params) {
    auto it = loaded.find(p->name);
    if (it == loaded.end())
      throw std::runtime_error("checkpoint: missing parameter '" + p->name + "'");
    if (!p->value.same_shape(it->second))
      throw std::runtime_error("checkpoint: shape mismatch for '" + p->name + "': file " +
                               shape_str(it->second.shape()) + ", model " +
                               shape_str(p->value.shape()));
    std::copy(it->second.data(), it->second.data() + it->second.numel(), p->value.data());
  }
  const uint32_t n_state = detail::read_u32(is);
  for (uint32_t i = 0; i < n_state; ++i) {
    auto [name, t] = detail::read_tensor<T>(is);
    if (state_out) (*state_out)[name] = std::move(t);
  }
  if (detail::read_u32(is) != kSentinel)
    throw std::runtime_error("checkpoint: missing end sentinel (truncated or corrupt file)");
  return h.step;
}

}  // namespace slotvae::ckpt
