// Quantitative evaluation: foreground Adjusted Rand Index, Frechet feature
// distance with a pluggable extractor, and a scripted structure-accuracy
// oracle for ArrowWorld scenes.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slotvae/scenegen.hpp"

namespace slotvae::eval {

// ---------------------------------------------------------------- ARI-FG ----

// Adjusted Rand Index between predicted components and ground-truth instances,
// restricted to foreground pixels (truth label > 0). `pred` and `truth` are
// per-pixel labels of equal length. Returns nullopt ("not applicable") when
// fewer than 2 foreground pixels exist. Degenerate case where both partitions
// are a single cluster returns 1 (identical partitions); a single predicted
// cluster against >= 2 true instances comes out exactly 0.
std::optional<double> ari_fg(const std::vector<int>& pred, const std::vector<int>& truth);

// ------------------------------------------------- Frechet feature distance -

// ||mu_r - mu_f||^2 + tr(C_r + C_f - 2 (C_r C_f)^{1/2}) over Gaussian fits to
// row-major feature matrices [n x f]. Both covariances are shrunk by
// `shrinkage`*I before the square root for stability. Throws
// std::runtime_error with diagnostics if the symmetric square-root residual
// has an eigenvalue below -tolerance (non-PSD beyond numerical noise).
double frechet_distance(const std::vector<double>& feats_real, int64_t n_real,
                        const std::vector<double>& feats_fake, int64_t n_fake, int64_t f,
                        double shrinkage = 1e-6);

// Default feature extractor: a fixed random-weight CNN (3 strided conv layers
// + global average pool, F = 128). Weights depend only on the seed, so the
// embedding is reproducible across runs -- but the resulting distances are NOT
// comparable to Inception-based FID numbers or to other extractors; only
// within-run comparisons (e.g. ablation ordering) are meaningful.
class RandomFeatureExtractor {
 public:
  static constexpr int64_t kFeatureDim = 128;
  static constexpr uint64_t kDefaultSeed = 0x0fea7u;

  explicit RandomFeatureExtractor(uint64_t seed = kDefaultSeed);

  uint64_t seed() const { return seed_; }

  // images [b, c, h, w] in [0,1] -> features [b, kFeatureDim] (row-major).
  std::vector<double> extract(const float* images, int64_t b, int64_t c, int64_t h,
                              int64_t w) const;

 private:
  uint64_t seed_;
  std::vector<float> w1_, b1_, w2_, b2_, w3_, b3_;
};

// External embeddings: text file, first line "N F", then N lines of F values.
// Returns the features row-major and fills n/f.
std::vector<double> read_feature_file(const std::string& path, int64_t& n, int64_t& f);
void write_feature_file(const std::string& path, const std::vector<double>& feats, int64_t n,
                        int64_t f);

// ------------------------------------------------------------ S-Acc oracle --

// Aim tolerance for the scripted verdict; wider than the generator's own
// tolerance so every genuine record passes with margin.
inline constexpr double kTauEval = 0.35;  // radians

// One pre-rasterized shape template on a square canvas, drawn with the same
// point-inclusion rule the dataset renderer uses.
struct ShapeTemplate {
  scenegen::ShapeId shape = scenegen::ShapeId::circle;
  double scale = 0;     // in template-canvas pixels
  double rotation = 0;  // radians (arrow only, else 0)
  int side = 0;         // canvas side length
  std::vector<uint8_t> mask;  // side*side, 0/1
  int64_t area = 0;
  double centroid_r = 0, centroid_c = 0;  // area centroid within the canvas
};

struct ShapeTemplates {
  int image_size = 0;
  std::vector<ShapeTemplate> entries;
};

// Builds the template set for images of side `image_size`. Scales cover the
// generator's range with margin (5..11 canvas-64 pixels, step 0.25, scaled by
// image_size/64); arrows additionally sweep 64 rotations.
ShapeTemplates make_shape_templates(int image_size);

struct DetectedObject {
  scenegen::ShapeId shape = scenegen::ShapeId::circle;
  double row = 0, col = 0;      // component area centroid (pixel units)
  double color[3] = {0, 0, 0};  // mean RGB over the component
  double scale = 0;             // best-matching template scale (canvas-64 units)
  double rotation = 0;          // best-matching template rotation
  double ncc = 0;               // normalized cross-correlation of the best match
  int64_t area = 0;
};

struct StructureVerdict {
  std::vector<DetectedObject> objects;
  double arrow_angle_est = 0;
  bool unique_shape_ok = false;
  bool aim_ok = false;
  bool s_acc_pass = false;
  std::string reason;  // first failed check; empty iff s_acc_pass
};

// Deterministic scripted classifier for the ArrowWorld structure rule:
// background-subtract, extract 8-connected components, classify each by
// normalized cross-correlation against the templates, then check "exactly one
// arrow + exactly one unique back shape + arrow aims at it within kTauEval".
// `image` is [c, h, w] float in [0,1] (c = 3).
StructureVerdict s_acc_oracle(const float* image, int64_t c, int64_t h, int64_t w,
                              const ShapeTemplates& templates);

// Convenience: run the oracle on a dataset record (rendered uint8 image).
StructureVerdict s_acc_oracle(const scenegen::SceneRecord& rec, const ShapeTemplates& templates);

// ----------------------------------------------------------------- reports --

struct EvalOptions {
  std::string checkpoint;
  std::string data_dir;
  int64_t n_gen = 2000;   // generated samples for Frechet + S-Acc
  int64_t n_real = 2000;  // real samples for the Frechet reference statistics
  int64_t n_ari = 500;    // records scored with ARI-FG
  uint64_t seed = 0;
  std::string out_dir;                // when nonempty, writes eval_report.txt there
  std::string real_features_file;     // optional external embeddings (overrides extractor)
  std::string fake_features_file;
  uint64_t extractor_seed = RandomFeatureExtractor::kDefaultSeed;
};

struct EvalReport {
  double ari_mean = 0, ari_sd = 0;
  int64_t ari_n = 0;             // records with applicable ARI
  int64_t ari_not_applicable = 0;
  bool ari_available = false;    // false when no record had >= 2 foreground pixels
  double frechet = 0;
  double s_acc = 0;
  int64_t s_acc_pass = 0, s_acc_total = 0;
  std::string text;  // full structured report (what eval_report.txt contains)
};

// Loads the checkpoint (single-precision), scores ARI-FG on dataset records
// through the posterior path, Frechet distance between dataset images and
// generated scenes under the pluggable extractor, and S-Acc on the generated
// scenes. Same options + seed -> bit-identical report text.
EvalReport evaluate(const EvalOptions& opt);

}  // namespace slotvae::eval
