// Flat key=value configuration for training runs. Precedence is handled by
// application order: defaults, then the config file, then CLI overrides --
// later applications win.
#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slotvae/model.hpp"
#include "slotvae/training.hpp"

namespace slotvae::config {

using KV = std::vector<std::pair<std::string, std::string>>;

inline int64_t to_i64(const std::string& key, const std::string& s) {
  int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("config: key '" + key + "' expects an integer, got '" + s + "'");
  return v;
}

inline double to_f64(const std::string& key, const std::string& s) {
  try {
    size_t idx = 0;
    const double v = std::stod(s, &idx);
    if (idx != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' expects a number, got '" + s + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::runtime_error("config: key '" + key + "' expects true/false/1/0, got '" + s + "'");
}

// Parses "key=value" lines; '#' starts a comment, blank lines are skipped.
inline KV parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  KV kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::runtime_error("config: malformed line " + std::to_string(lineno) + " in " +
                               path + ": '" + line + "'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

inline KV parse_pairs(const std::vector<std::string>& pairs) {
  KV kv;
  for (const auto& p : pairs) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::runtime_error("config: override '" + p + "' is not key=value");
    kv.emplace_back(p.substr(0, eq), p.substr(eq + 1));
  }
  return kv;
}

// Applies one key. Model keys use the same names the checkpoint header echoes.
inline void apply_pair(train::TrainConfig& cfg, const std::string& key, const std::string& val) {
  model::ModelConfig& m = cfg.model;
  if (key == "image_size") m.image_size = to_i64(key, val);
  else if (key == "channels") m.channels = to_i64(key, val);
  else if (key == "K") m.K = to_i64(key, val);
  else if (key == "D") m.D = to_i64(key, val);
  else if (key == "L") m.L = to_i64(key, val);
  else if (key == "enc_hidden") m.enc_hidden = to_i64(key, val);
  else if (key == "global_hidden") m.global_hidden = to_i64(key, val);
  else if (key == "fm_hidden") m.fm_hidden = to_i64(key, val);
  else if (key == "dec_hidden") m.dec_hidden = to_i64(key, val);
  else if (key == "broadcast") m.broadcast = to_i64(key, val);
  else if (key == "sa_iterations") m.sa_iterations = to_i64(key, val);
  else if (key == "std_floor") m.std_floor = to_f64(key, val);
  else if (key == "prior") {
    if (auto k = model::prior_kind_from_name(val)) m.prior = *k;
    else throw std::runtime_error("config: unknown prior '" + val + "'");
  }
  else if (key == "share_sa_weights") m.share_sa_weights = to_bool(key, val);
  else if (key == "share_init") m.share_init = to_bool(key, val);
  else if (key == "mlp_prior_hidden") m.mlp_prior_hidden = to_i64(key, val);
  else if (key == "tf_layers") m.tf_layers = to_i64(key, val);
  else if (key == "tf_heads") m.tf_heads = to_i64(key, val);
  else if (key == "tf_mem_tokens") m.tf_mem_tokens = to_i64(key, val);
  else if (key == "batch_size") cfg.batch_size = to_i64(key, val);
  else if (key == "total_steps") cfg.total_steps = to_i64(key, val);
  else if (key == "warmup_steps") cfg.warmup_steps = to_i64(key, val);
  else if (key == "checkpoint_interval") cfg.checkpoint_interval = to_i64(key, val);
  else if (key == "log_interval") cfg.log_interval = to_i64(key, val);
  else if (key == "learning_rate") cfg.learning_rate = to_f64(key, val);
  else if (key == "lr_decay_factor") cfg.lr_decay_factor = to_f64(key, val);
  else if (key == "lr_decay_every") cfg.lr_decay_every = to_i64(key, val);
  else if (key == "beta") cfg.beta = to_f64(key, val);
  else if (key == "sigma_x") cfg.sigma_x = to_f64(key, val);
  else if (key == "hier_weight") cfg.hier_weight = to_f64(key, val);
  else if (key == "aux_weight") cfg.aux_weight = to_f64(key, val);
  else if (key == "clip_norm") cfg.clip_norm = to_f64(key, val);
  else if (key == "seed") cfg.seed = (uint64_t)to_i64(key, val);
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

inline void apply(train::TrainConfig& cfg, const KV& kv) {
  for (const auto& [k, v] : kv) apply_pair(cfg, k, v);
}

// Full dump in application order; what the run manifest records.
inline KV snapshot(const train::TrainConfig& cfg) {
  auto f = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  const model::ModelConfig& m = cfg.model;
  return {
      {"image_size", std::to_string(m.image_size)},
      {"channels", std::to_string(m.channels)},
      {"K", std::to_string(m.K)},
      {"D", std::to_string(m.D)},
      {"L", std::to_string(m.L)},
      {"enc_hidden", std::to_string(m.enc_hidden)},
      {"global_hidden", std::to_string(m.global_hidden)},
      {"fm_hidden", std::to_string(m.fm_hidden)},
      {"dec_hidden", std::to_string(m.dec_hidden)},
      {"broadcast", std::to_string(m.broadcast)},
      {"sa_iterations", std::to_string(m.sa_iterations)},
      {"std_floor", f(m.std_floor)},
      {"prior", model::prior_kind_name(m.prior)},
      {"share_sa_weights", m.share_sa_weights ? "true" : "false"},
      {"share_init", m.share_init ? "true" : "false"},
      {"mlp_prior_hidden", std::to_string(m.mlp_prior_hidden)},
      {"tf_layers", std::to_string(m.tf_layers)},
      {"tf_heads", std::to_string(m.tf_heads)},
      {"tf_mem_tokens", std::to_string(m.tf_mem_tokens)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"total_steps", std::to_string(cfg.total_steps)},
      {"warmup_steps", std::to_string(cfg.warmup_steps)},
      {"checkpoint_interval", std::to_string(cfg.checkpoint_interval)},
      {"log_interval", std::to_string(cfg.log_interval)},
      {"learning_rate", f(cfg.learning_rate)},
      {"lr_decay_factor", f(cfg.lr_decay_factor)},
      {"lr_decay_every", std::to_string(cfg.lr_decay_every)},
      {"beta", f(cfg.beta)},
      {"sigma_x", f(cfg.sigma_x)},
      {"hier_weight", f(cfg.hier_weight)},
      {"aux_weight", f(cfg.aux_weight)},
      {"clip_norm", f(cfg.clip_norm)},
      {"seed", std::to_string(cfg.seed)},
  };
}

}  // namespace slotvae::config
