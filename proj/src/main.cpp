// Operator entry point: dataset generation, training, sampling, qualitative
// panels, latent traversals and metric reports behind one binary.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "slotvae/ablations.hpp"
#include "slotvae/checkpoint.hpp"
#include "slotvae/config.hpp"
#include "slotvae/data.hpp"
#include "slotvae/eval.hpp"
#include "slotvae/image_io.hpp"
#include "slotvae/model.hpp"
#include "slotvae/rng.hpp"
#include "slotvae/run_manifest.hpp"
#include "slotvae/scenegen.hpp"
#include "slotvae/training.hpp"

namespace fs = std::filesystem;
using namespace slotvae;

namespace {

std::string join_command(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

// --data falls back to the SLOTVAE_DATA environment variable.
std::string resolve_data_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("SLOTVAE_DATA"); env && *env) return env;
  throw std::runtime_error("no dataset directory given: pass --data or set SLOTVAE_DATA");
}

model::Model<float> load_model(const std::string& checkpoint, int64_t* step_out = nullptr) {
  const ckpt::Header h = ckpt::read_header(checkpoint);
  if (h.scalar != "f32")
    throw std::runtime_error("checkpoint scalar type " + h.scalar + " unsupported");
  model::Model<float> m(h.config, 0);
  const int64_t step = ckpt::load(checkpoint, m);
  if (step_out) *step_out = step;
  return m;
}

Tensor<float> cell_of(const Tensor<float>& batched, int64_t b, int64_t c, int64_t h, int64_t w) {
  Tensor<float> out({c, h, w});
  std::copy(batched.data() + b * c * h * w, batched.data() + (b + 1) * c * h * w, out.data());
  return out;
}

std::vector<int64_t> sorted_record_subset(int64_t count, int64_t want, uint64_t seed) {
  Rng rng(seed_mix(seed, 21));
  std::vector<int64_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = 0; i < std::min(want, count); ++i) {
    const int64_t j = i + rng.uniform_int(count - i);
    std::swap(idx[(size_t)i], idx[(size_t)j]);
  }
  idx.resize((size_t)std::min(want, count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string command_line = join_command(argc, argv);
  const std::string started = run_manifest::now_utc();

  CLI::App app{"slot-structured hierarchical VAE: datasets, training, evaluation"};
  app.require_subcommand(1);

  // ---- make-dataset -------------------------------------------------------
  auto* mkd = app.add_subcommand("make-dataset", "generate a procedural dataset with masks");
  std::string mkd_generator = "arrowworld", mkd_out;
  int64_t mkd_n = 2000, mkd_kmin = 2, mkd_kmax = 5;
  uint64_t mkd_seed = 0;
  mkd->add_option("--generator", mkd_generator, "arrowworld | multisprite")
      ->check(CLI::IsMember({"arrowworld", "multisprite"}));
  mkd->add_option("--n", mkd_n, "number of records")->check(CLI::PositiveNumber);
  mkd->add_option("--seed", mkd_seed, "generator seed");
  mkd->add_option("--out", mkd_out, "output dataset directory")->required();
  mkd->add_option("--k-min", mkd_kmin, "multisprite: min objects per scene");
  mkd->add_option("--k-max", mkd_kmax, "multisprite: max objects per scene");

  // ---- train --------------------------------------------------------------
  auto* trn = app.add_subcommand("train", "train a model; resumes from the newest checkpoint");
  std::string trn_config, trn_data, trn_out, trn_variant, trn_resume;
  std::vector<std::string> trn_sets;
  int64_t trn_steps = -1, trn_batch = -1;
  double trn_lr = -1;
  int64_t trn_seed = -1;
  trn->add_option("--config", trn_config, "key=value config file");
  trn->add_option("--data", trn_data, "dataset directory (default: $SLOTVAE_DATA)");
  trn->add_option("--out", trn_out, "run directory for checkpoints and logs")->required();
  trn->add_option("--variant", trn_variant, "model variant")
      ->check(CLI::IsMember(ablations::variant_names()));
  trn->add_option("--resume", trn_resume, "checkpoint file to resume from");
  trn->add_option("--set", trn_sets, "extra key=value overrides (repeatable)");
  trn->add_option("--steps", trn_steps, "override total_steps");
  trn->add_option("--batch-size", trn_batch, "override batch_size");
  trn->add_option("--lr", trn_lr, "override learning_rate");
  trn->add_option("--seed", trn_seed, "override seed");

  // ---- generate -----------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "sample scenes from the prior");
  std::string gen_ckpt, gen_out;
  int64_t gen_n = 16, gen_panels = 4;
  uint64_t gen_seed = 0;
  gen->add_option("--checkpoint", gen_ckpt, "model checkpoint")->required();
  gen->add_option("--n", gen_n, "number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--panels", gen_panels, "per-sample component/mask panels to write");
  gen->add_option("--seed", gen_seed, "sampling seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  // ---- reconstruct --------------------------------------------------------
  auto* rec = app.add_subcommand("reconstruct", "decomposition strips for dataset images");
  std::string rec_ckpt, rec_data, rec_out;
  int64_t rec_n = 8;
  uint64_t rec_seed = 0;
  rec->add_option("--checkpoint", rec_ckpt, "model checkpoint")->required();
  rec->add_option("--data", rec_data, "dataset directory (default: $SLOTVAE_DATA)");
  rec->add_option("--n", rec_n, "number of records")->check(CLI::PositiveNumber);
  rec->add_option("--seed", rec_seed, "record subset seed");
  rec->add_option("--out", rec_out, "output directory")->required();

  // ---- traverse -----------------------------------------------------------
  auto* trv = app.add_subcommand("traverse", "latent traversal grid for one record");
  std::string trv_ckpt, trv_data, trv_out;
  int64_t trv_index = 0, trv_slot = 0, trv_steps = 7;
  std::vector<int64_t> trv_dims = {0, 1, 2, 3};
  double trv_min = -2.5, trv_max = 2.5;
  trv->add_option("--checkpoint", trv_ckpt, "model checkpoint")->required();
  trv->add_option("--data", trv_data, "dataset directory (default: $SLOTVAE_DATA)");
  trv->add_option("--index", trv_index, "record index");
  trv->add_option("--slot", trv_slot, "slot whose latent is traversed");
  trv->add_option("--dims", trv_dims, "latent dimensions, one grid row each")->delimiter(',');
  trv->add_option("--min", trv_min, "smallest traversal value");
  trv->add_option("--max", trv_max, "largest traversal value");
  trv->add_option("--steps", trv_steps, "values per row")->check(CLI::PositiveNumber);
  trv->add_option("--out", trv_out, "output directory")->required();

  // ---- eval ---------------------------------------------------------------
  auto* evl = app.add_subcommand("eval", "metrics report: ARI-FG, Frechet distance, S-Acc");
  eval::EvalOptions eopt;
  std::string evl_data;
  evl->add_option("--checkpoint", eopt.checkpoint, "model checkpoint")->required();
  evl->add_option("--data", evl_data, "dataset directory (default: $SLOTVAE_DATA)");
  evl->add_option("--n-gen", eopt.n_gen, "generated samples for Frechet + S-Acc");
  evl->add_option("--n-real", eopt.n_real, "real samples for Frechet");
  evl->add_option("--n-ari", eopt.n_ari, "records scored with ARI-FG");
  evl->add_option("--seed", eopt.seed, "evaluation seed");
  evl->add_option("--real-features", eopt.real_features_file, "external real embeddings file");
  evl->add_option("--fake-features", eopt.fake_features_file, "external fake embeddings file");
  evl->add_option("--out", eopt.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n";
    std::cerr << (app.get_subcommands().empty() ? app.help() : app.get_subcommands()[0]->help());
    return 2;
  }

  try {
    if (*mkd) {
      fs::create_directories(mkd_out);
      std::vector<scenegen::SceneRecord> recs;
      if (mkd_generator == "arrowworld") {
        recs = scenegen::generate_arrowworld(mkd_seed, mkd_n);
      } else {
        if (mkd_kmin < 1 || mkd_kmax < mkd_kmin)
          throw std::runtime_error("make-dataset: need 1 <= k-min <= k-max");
        recs = scenegen::generate_multisprite(mkd_seed, mkd_n, (int)mkd_kmin, (int)mkd_kmax);
      }
      const scenegen::DatasetManifest dm =
          scenegen::write_shards(recs, mkd_out, mkd_generator, mkd_seed);
      std::vector<std::string> outputs = {"manifest.txt"};
      for (int s = 0; s < dm.shards; ++s) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "shard-%05d.bin", s);
        outputs.emplace_back(buf);
      }
      run_manifest::write(mkd_out, command_line,
                          {{"generator", mkd_generator},
                           {"n", std::to_string(mkd_n)},
                           {"k_min", std::to_string(mkd_kmin)},
                           {"k_max", std::to_string(mkd_kmax)}},
                          mkd_seed, started, outputs);
      std::cout << "wrote " << dm.count << " records (" << dm.shards << " shards) to " << mkd_out
                << "\n";
    } else if (*trn) {
      train::TrainConfig tc;
      if (!trn_config.empty()) config::apply(tc, config::parse_file(trn_config));
      config::apply(tc, config::parse_pairs(trn_sets));
      if (trn_steps >= 0) tc.total_steps = trn_steps;
      if (trn_batch >= 0) tc.batch_size = trn_batch;
      if (trn_lr >= 0) tc.learning_rate = trn_lr;
      if (trn_seed >= 0) tc.seed = (uint64_t)trn_seed;
      if (!trn_variant.empty()) tc.model = ablations::apply_variant(trn_variant, tc.model);
      tc.data_dir = resolve_data_dir(trn_data);
      tc.out_dir = trn_out;
      tc.resume_from = trn_resume;
      const train::TrainResult res = train::train(tc);
      run_manifest::write(trn_out, command_line, config::snapshot(tc), tc.seed, started,
                          {fs::path(res.final_checkpoint).filename().string(), "train_log.txt",
                           "train_config.txt"});
      std::cout << "finished at step " << res.final_step << "; checkpoint "
                << res.final_checkpoint << "\n";
    } else if (*gen) {
      model::Model<float> m = load_model(gen_ckpt);
      fs::create_directories(gen_out);
      Rng rng(seed_mix(gen_seed, 0x67656eull));
      const auto g = m.generate_scene(rng, gen_n);
      const int64_t C = m.cfg.channels, S = m.cfg.image_size, K = m.cfg.K;
      std::vector<Tensor<float>> cells;
      for (int64_t b = 0; b < gen_n; ++b) cells.push_back(cell_of(g.composed, b, C, S, S));
      const int64_t cols = (int64_t)std::ceil(std::sqrt((double)gen_n));
      imageio::write_png((fs::path(gen_out) / "generated_grid.png").string(),
                         imageio::make_grid(cells, cols));
      std::vector<std::string> outputs = {"generated_grid.png"};
      for (int64_t b = 0; b < std::min(gen_panels, gen_n); ++b) {
        std::vector<Tensor<float>> comp_cells = {cells[(size_t)b]};
        std::vector<Tensor<float>> mask_cells;
        for (int64_t k = 0; k < K; ++k) {
          Tensor<float> comp({C, S, S}), mask({1, S, S});
          std::copy(g.components.data() + ((b * K + k) * C) * S * S,
                    g.components.data() + ((b * K + k) * C + C) * S * S, comp.data());
          std::copy(g.masks.data() + (b * K + k) * S * S,
                    g.masks.data() + (b * K + k + 1) * S * S, mask.data());
          comp_cells.push_back(comp);
          mask_cells.push_back(mask);
        }
        char buf[48];
        std::snprintf(buf, sizeof buf, "sample-%03lld-components.png", (long long)b);
        imageio::write_png((fs::path(gen_out) / buf).string(),
                           imageio::make_grid(comp_cells, K + 1));
        outputs.emplace_back(buf);
        std::snprintf(buf, sizeof buf, "sample-%03lld-masks.png", (long long)b);
        imageio::write_png((fs::path(gen_out) / buf).string(), imageio::make_grid(mask_cells, K));
        outputs.emplace_back(buf);
      }
      run_manifest::write(gen_out, command_line, {{"n", std::to_string(gen_n)}}, gen_seed,
                          started, outputs);
      std::cout << "wrote " << outputs.size() << " files to " << gen_out << "\n";
    } else if (*rec) {
      model::Model<float> m = load_model(rec_ckpt);
      const std::string data_dir = resolve_data_dir(rec_data);
      fs::create_directories(rec_out);
      const scenegen::DatasetManifest dm = scenegen::read_manifest(data_dir);
      const auto idx = sorted_record_subset(dm.count, rec_n, rec_seed);
      std::vector<scenegen::SceneRecord> records;
      for (int64_t i : idx) records.push_back(scenegen::read_record(data_dir, dm, i));
      std::vector<int64_t> order(records.size());
      std::iota(order.begin(), order.end(), 0);
      const int64_t C = m.cfg.channels, S = m.cfg.image_size, K = m.cfg.K;
      const Tensor<float> batch = data::make_batch<float>(records, order, S);
      ad::Tape<float> tp;
      const model::Scene<float> scene = m.reconstruct(tp, batch);
      std::vector<Tensor<float>> cells;  // rows: input | recon | K components
      for (size_t b = 0; b < records.size(); ++b) {
        cells.push_back(cell_of(batch, (int64_t)b, C, S, S));
        cells.push_back(cell_of(scene.composed.val(), (int64_t)b, C, S, S));
        for (int64_t k = 0; k < K; ++k) {
          Tensor<float> comp({C, S, S});
          std::copy(scene.components.val().data() + (((int64_t)b * K + k) * C) * S * S,
                    scene.components.val().data() + (((int64_t)b * K + k) * C + C) * S * S,
                    comp.data());
          cells.push_back(comp);
        }
      }
      imageio::write_png((fs::path(rec_out) / "recon_strips.png").string(),
                         imageio::make_grid(cells, K + 2));
      run_manifest::write(rec_out, command_line, {{"n", std::to_string(rec_n)}}, rec_seed,
                          started, {"recon_strips.png"});
      std::cout << "wrote recon_strips.png (" << records.size() << " rows) to " << rec_out
                << "\n";
    } else if (*trv) {
      model::Model<float> m = load_model(trv_ckpt);
      const std::string data_dir = resolve_data_dir(trv_data);
      fs::create_directories(trv_out);
      const scenegen::DatasetManifest dm = scenegen::read_manifest(data_dir);
      if (trv_index < 0 || trv_index >= dm.count)
        throw std::runtime_error("traverse: record index out of range");
      const scenegen::SceneRecord record = scenegen::read_record(data_dir, dm, trv_index);
      const int64_t C = m.cfg.channels, S = m.cfg.image_size;
      const Tensor<float> x =
          data::record_image<float>(record, S).reshape({1, C, S, S});
      std::vector<float> values;
      for (int64_t i = 0; i < trv_steps; ++i)
        values.push_back((float)(trv_min +
                                 (trv_steps == 1 ? 0.0
                                                 : (trv_max - trv_min) * (double)i /
                                                       (double)(trv_steps - 1))));
      std::vector<Tensor<float>> cells;
      for (int64_t dim : trv_dims) {
        const auto frames = m.traverse_latent(x, trv_slot, dim, values);
        for (const auto& fr : frames) cells.push_back(fr.reshape({C, S, S}).clone());
      }
      imageio::write_png((fs::path(trv_out) / "traversal.png").string(),
                         imageio::make_grid(cells, trv_steps));
      std::string dims_str;
      for (int64_t d : trv_dims) dims_str += (dims_str.empty() ? "" : ",") + std::to_string(d);
      run_manifest::write(trv_out, command_line,
                          {{"index", std::to_string(trv_index)},
                           {"slot", std::to_string(trv_slot)},
                           {"dims", dims_str}},
                          0, started, {"traversal.png"});
      std::cout << "wrote traversal.png (" << trv_dims.size() << " rows x " << trv_steps
                << " values) to " << trv_out << "\n";
    } else if (*evl) {
      eopt.data_dir = resolve_data_dir(evl_data);
      const eval::EvalReport rep = eval::evaluate(eopt);
      run_manifest::write(eopt.out_dir, command_line,
                          {{"n_gen", std::to_string(eopt.n_gen)},
                           {"n_real", std::to_string(eopt.n_real)},
                           {"n_ari", std::to_string(eopt.n_ari)}},
                          eopt.seed, started, {"eval_report.txt"});
      std::cout << rep.text;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
