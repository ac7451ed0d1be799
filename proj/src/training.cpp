#include "slotvae/training.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "slotvae/checkpoint.hpp"
#include "slotvae/data.hpp"
#include "slotvae/rng.hpp"
#include "slotvae/scenegen.hpp"

namespace slotvae::train {

namespace fs = std::filesystem;

double assignment_max(const std::vector<double>& score, int64_t K) {
  if ((int64_t)score.size() != K * K) throw std::invalid_argument("assignment_max: bad matrix");
  if (K <= 0) return 0.0;
  if (K <= 6) {
    std::vector<int64_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    double best = -1e300;
    do {
      double s = 0;
      for (int64_t i = 0; i < K; ++i) s += score[i * K + perm[i]];
      best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  }
  // Hungarian algorithm with potentials on the negated matrix.
  const int64_t n = K;
  const double INF = 1e300;
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int64_t> p(n + 1, 0), way(n + 1, 0);
  for (int64_t i = 1; i <= n; ++i) {
    p[0] = i;
    int64_t j0 = 0;
    std::vector<double> minv(n + 1, INF);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int64_t i0 = p[j0];
      int64_t j1 = 0;
      double delta = INF;
      for (int64_t j = 1; j <= n; ++j)
        if (!used[j]) {
          const double cur = -score[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int64_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int64_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0;
  for (int64_t j = 1; j <= n; ++j) total += score[(p[j] - 1) * n + (j - 1)];
  return total;
}

double resolve_beta(double requested, const std::string& generator) {
  if (requested >= 0) return requested;
  if (generator == "arrowworld") return 0.1;
  if (generator.rfind("multisprite", 0) == 0) return 0.01;
  throw std::invalid_argument("no default beta for generator '" + generator +
                              "'; pass beta explicitly");
}

namespace {

std::string train_config_echo(const TrainConfig& cfg, double beta) {
  std::ostringstream os;
  for (auto& [k, v] : ckpt::config_to_kv(cfg.model)) os << "model." << k << "=" << v << "\n";
  os << "batch_size=" << cfg.batch_size << "\n";
  os << "total_steps=" << cfg.total_steps << "\n";
  os << "warmup_steps=" << cfg.warmup_steps << "\n";
  os << "learning_rate=" << ckpt::fmt_double(cfg.learning_rate) << "\n";
  os << "lr_decay_factor=" << ckpt::fmt_double(cfg.lr_decay_factor) << "\n";
  os << "lr_decay_every=" << cfg.lr_decay_every << "\n";
  os << "beta=" << ckpt::fmt_double(beta) << "\n";
  os << "sigma_x=" << ckpt::fmt_double(cfg.sigma_x) << "\n";
  os << "hier_weight=" << ckpt::fmt_double(cfg.hier_weight) << "\n";
  os << "aux_weight=" << ckpt::fmt_double(cfg.aux_weight) << "\n";
  os << "clip_norm=" << ckpt::fmt_double(cfg.clip_norm) << "\n";
  os << "seed=" << cfg.seed << "\n";
  return os.str();
}

std::string ckpt_name(int64_t step) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "checkpoint-%06lld.ckpt", (long long)step);
  return buf;
}

int64_t latest_checkpoint_step(const std::string& dir) {
  int64_t best = -1;
  if (!fs::exists(dir)) return best;
  for (auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("checkpoint-", 0) != 0 || name.size() < 17) continue;
    if (name.substr(name.size() - 5) != ".ckpt") continue;
    try {
      best = std::max(best, (int64_t)std::stoll(name.substr(11, name.size() - 16)));
    } catch (...) {
    }
  }
  return best;
}

void save_with_optimizer(const std::string& path, model::Model<float>& m, Adam<float>& opt,
                         int64_t step) {
  auto params = m.parameters();
  std::vector<std::pair<std::string, const Tensor<float>*>> state;
  for (size_t i = 0; i < params.size(); ++i) {
    state.emplace_back("adam.m." + params[i]->name, &opt.m[i]);
    state.emplace_back("adam.v." + params[i]->name, &opt.v[i]);
  }
  Tensor<float> t_step({1}, {(float)opt.t});
  state.emplace_back("adam.t", &t_step);
  ckpt::save<float>(path, m, step, state);
}

void restore_optimizer(std::map<std::string, Tensor<float>>& state, model::Model<float>& m,
                       Adam<float>& opt) {
  auto params = m.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    auto im = state.find("adam.m." + params[i]->name);
    auto iv = state.find("adam.v." + params[i]->name);
    if (im == state.end() || iv == state.end())
      throw std::runtime_error("checkpoint lacks optimizer state for '" + params[i]->name +
                               "'; cannot resume");
    if (!im->second.same_shape(opt.m[i]) || !iv->second.same_shape(opt.v[i]))
      throw std::runtime_error("optimizer state shape mismatch for '" + params[i]->name + "'");
    opt.m[i] = im->second;
    opt.v[i] = iv->second;
  }
  auto it = state.find("adam.t");
  if (it == state.end()) throw std::runtime_error("checkpoint lacks adam.t; cannot resume");
  opt.t = (int64_t)std::llround((double)it->second[0]);
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.total_steps < 1) throw std::invalid_argument("train: total_steps must be >= 1");
  if (cfg.data_dir.empty() || cfg.out_dir.empty())
    throw std::invalid_argument("train: data_dir and out_dir are required");

  const scenegen::DatasetManifest manifest = scenegen::read_manifest(cfg.data_dir);
  const std::vector<scenegen::SceneRecord> records = scenegen::read_shards(cfg.data_dir);
  if ((int64_t)records.size() < cfg.batch_size)
    throw std::invalid_argument("train: dataset has " + std::to_string(records.size()) +
                                " records, need at least one batch of " +
                                std::to_string(cfg.batch_size));
  const double beta = resolve_beta(cfg.beta, manifest.generator);

  fs::create_directories(cfg.out_dir);
  const std::string echo = train_config_echo(cfg, beta);
  const std::string echo_path = (fs::path(cfg.out_dir) / "train_config.txt").string();
  if (fs::exists(echo_path)) {
    std::ifstream in(echo_path);
    std::string existing((std::istreambuf_iterator<char>(in)), {});
    if (existing != echo)
      throw std::runtime_error("train: " + echo_path +
                               " does not match the requested configuration; refusing to resume "
                               "into a differently-configured run directory");
  } else {
    std::ofstream out(echo_path);
    out << echo;
  }

  model::Model<float> m(cfg.model, seed_mix(cfg.seed, 0x4d4f44454cull));
  auto params = m.parameters();
  Adam<float> opt;
  opt.init(params);

  TrainResult res;
  int64_t start_step = 0;
  std::string resume_path;
  if (!cfg.resume_from.empty()) {
    if (!fs::exists(cfg.resume_from))
      throw std::runtime_error("train: resume checkpoint not found: " + cfg.resume_from);
    resume_path = cfg.resume_from;
  } else {
    const int64_t latest = latest_checkpoint_step(cfg.out_dir);
    if (latest > 0) resume_path = (fs::path(cfg.out_dir) / ckpt_name(latest)).string();
  }
  if (!resume_path.empty()) {
    std::map<std::string, Tensor<float>> state;
    const int64_t step = ckpt::load<float>(resume_path, m, &state);
    restore_optimizer(state, m, opt);
    start_step = step;
    res.resumed_from = step;
  }

  const LrSchedule sched{cfg.learning_rate, cfg.warmup_steps, cfg.lr_decay_every,
                         cfg.lr_decay_factor};
  const objective::ObjectiveConfig oc{beta, cfg.sigma_x, cfg.hier_weight, cfg.aux_weight};
  const int64_t bpe = (int64_t)records.size() / cfg.batch_size;

  std::ofstream log((fs::path(cfg.out_dir) / "train_log.txt").string(), std::ios::app);
  auto emit = [&](const std::string& line) {
    std::cout << line << "\n";
    std::cout.flush();
    log << line << "\n";
    log.flush();
  };

  if (start_step >= cfg.total_steps) {
    res.final_step = start_step;
    res.final_checkpoint = (fs::path(cfg.out_dir) / ckpt_name(start_step)).string();
    emit("step=" + std::to_string(start_step) + " already-complete=1");
    return res;
  }

  std::vector<int64_t> perm(records.size());
  int64_t perm_epoch = -1;
  auto t_last = std::chrono::steady_clock::now();
  int64_t steps_since_log = 0;

  for (int64_t step = start_step; step < cfg.total_steps; ++step) {
    const int64_t epoch = step / bpe, slot = step % bpe;
    if (epoch != perm_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng shuffle_rng(seed_mix(cfg.seed + 1, (uint64_t)epoch));
      shuffle_rng.shuffle(perm.begin(), perm.end());
      perm_epoch = epoch;
    }
    std::vector<int64_t> idx(perm.begin() + slot * cfg.batch_size,
                             perm.begin() + (slot + 1) * cfg.batch_size);
    Tensor<float> batch = data::make_batch<float>(records, idx, cfg.model.image_size);

    const bool do_log = ((step + 1) % cfg.log_interval == 0) || (step + 1 == cfg.total_steps);
    double gnorm = 0;
    OrderMatch order;
    res.last = train_step<float>(m, opt, batch, oc, sched.at(step), cfg.clip_norm,
                                 seed_mix(cfg.seed, (uint64_t)step), step, &gnorm,
                                 do_log ? &order : nullptr);
    ++steps_since_log;

    if (do_log) {
      res.last_order = order;
      const auto now = std::chrono::steady_clock::now();
      const double secs = std::chrono::duration<double>(now - t_last).count();
      const double sps = steps_since_log / std::max(secs, 1e-9);
      t_last = now;
      steps_since_log = 0;
      std::ostringstream line;
      line.setf(std::ios::fixed);
      line.precision(5);
      line << "step=" << (step + 1) << " lr=" << sched.at(step) << " total=" << res.last.total
           << " recon_nll=" << res.last.recon_nll << " kl_hier=" << res.last.kl_slots_hier
           << " kl_global=" << res.last.kl_global << " kl_aux=" << res.last.kl_slots_aux
           << " grad_norm=" << gnorm << " order_aligned=" << order.aligned
           << " order_best=" << order.best << " sps=" << sps;
      emit(line.str());
    }
    if ((step + 1) % cfg.checkpoint_interval == 0 || step + 1 == cfg.total_steps) {
      const std::string path = (fs::path(cfg.out_dir) / ckpt_name(step + 1)).string();
      save_with_optimizer(path, m, opt, step + 1);
      res.final_checkpoint = path;
    }
  }
  res.final_step = cfg.total_steps;
  return res;
}

}  // namespace slotvae::train
