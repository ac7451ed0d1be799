// Warms the acceptance-suite cache: generates the frozen datasets and runs
// (or resumes) the long trainings. Safe to rerun; completed work is reused.
//   prepare_runs datasets | bench | c5 | c7 | c6a | c6b | all
#include <chrono>
#include <iostream>
#include <string>

#include "acceptance_runs.hpp"
#include "slotvae/data.hpp"
#include "slotvae/training.hpp"

using namespace slotvae;

static void ensure_datasets(const std::string& root) {
  for (auto spec : {accept::arrow_train_spec(), accept::arrow_heldout_spec(),
                    accept::arrow16_spec()}) {
    const std::string dir = accept::ensure_dataset(root, spec);
    std::cout << "dataset " << spec.name << " ready at " << dir << "\n";
  }
}

static void bench_steps(const std::string& root) {
  auto cfg = accept::run_overfit16(root);
  const auto records = scenegen::read_shards(cfg.data_dir);
  model::Model<float> m(cfg.model, 1);
  train::Adam<float> opt;
  auto params = m.parameters();
  opt.init(params);
  std::vector<int64_t> idx(cfg.batch_size);
  for (int64_t i = 0; i < cfg.batch_size; ++i) idx[i] = i % (int64_t)records.size();
  Tensor<float> batch = data::make_batch<float>(records, idx, cfg.model.image_size);
  objective::ObjectiveConfig oc;
  oc.beta = 0.1;
  train::train_step<float>(m, opt, batch, oc, 1e-4, 1.0, 1, 0);  // warm-up
  auto clock = [] { return std::chrono::steady_clock::now(); };
  auto secs_since = [](auto t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
  };
  const int n = 5;
  {  // forward only
    auto t0 = clock();
    for (int s = 1; s <= n; ++s) {
      ad::Tape<float> tp;
      Rng rng((uint64_t)s);
      auto fw = m.forward_train(tp, batch, rng);
      objective::total_loss(tp, tp.leaf(batch), fw, oc);
    }
    std::cout << "forward+loss: " << secs_since(t0) / n << " s\n";
  }
  {  // forward+backward
    auto t0 = clock();
    for (int s = 1; s <= n; ++s) {
      ad::Tape<float> tp;
      Rng rng((uint64_t)s);
      auto fw = m.forward_train(tp, batch, rng);
      auto lt = objective::total_loss(tp, tp.leaf(batch), fw, oc);
      m.zero_grad();
      tp.backward(lt.total);
    }
    std::cout << "forward+backward: " << secs_since(t0) / n << " s\n";
  }
  {  // full step
    auto t0 = clock();
    for (int s = 1; s <= n; ++s)
      train::train_step<float>(m, opt, batch, oc, 1e-4, 1.0, (uint64_t)s, s);
    std::cout << "full step: " << secs_since(t0) / n << " s\n";
  }
}

int main(int argc, char** argv) {
  const std::string what = argc > 1 ? argv[1] : "all";
  const std::string root = accept::cache_root();
  std::cout << "cache root: " << root << "\n";
  try {
    if (what == "datasets" || what == "all") ensure_datasets(root);
    if (what == "bench") {
      ensure_datasets(root);
      bench_steps(root);
      return 0;
    }
    auto go = [&](const train::TrainConfig& cfg, const char* tag) {
      std::cout << "=== " << tag << " -> " << cfg.out_dir << "\n";
      auto res = train::train(cfg);
      std::cout << "=== " << tag << " done at step " << res.final_step << "\n";
    };
    if (what == "c5" || what == "all") go(accept::run_overfit16(root), "c5-overfit16");
    if (what == "c7" || what == "all") go(accept::run_full(root), "c7-full");
    if (what == "c6a" || what == "all") go(accept::run_no_init_share(root), "c6-no-init-share");
    if (what == "c6b" || what == "all") go(accept::run_no_weight_share(root), "c6-no-weight-share");
  } catch (const std::exception& e) {
    std::cerr << "prepare_runs: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
