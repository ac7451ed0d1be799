#include "slotvae/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "slotvae/checkpoint.hpp"
#include "slotvae/data.hpp"
#include "slotvae/kernels.hpp"
#include "slotvae/model.hpp"
#include "slotvae/rng.hpp"

namespace slotvae::eval {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- ARI-FG ----

std::optional<double> ari_fg(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("ari_fg: pred/truth length mismatch");
  // Dense-relabel the foreground pixels of both partitions.
  std::unordered_map<int, int> amap, bmap;
  std::vector<std::pair<int, int>> px;
  px.reserve(truth.size());
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] <= 0) continue;
    auto ai = amap.emplace(pred[i], (int)amap.size()).first->second;
    auto bi = bmap.emplace(truth[i], (int)bmap.size()).first->second;
    px.emplace_back(ai, bi);
  }
  const int64_t n = (int64_t)px.size();
  if (n < 2) return std::nullopt;  // not applicable
  const int64_t na = (int64_t)amap.size(), nb = (int64_t)bmap.size();
  std::vector<int64_t> cont(na * nb, 0), a(na, 0), b(nb, 0);
  for (auto [ai, bi] : px) {
    ++cont[ai * nb + bi];
    ++a[ai];
    ++b[bi];
  }
  auto comb2 = [](int64_t k) { return 0.5 * (double)k * (double)(k - 1); };
  double sum_ij = 0, sum_a = 0, sum_b = 0;
  for (int64_t v : cont) sum_ij += comb2(v);
  for (int64_t v : a) sum_a += comb2(v);
  for (int64_t v : b) sum_b += comb2(v);
  const double expected = sum_a * sum_b / comb2(n);
  const double maximum = 0.5 * (sum_a + sum_b);
  if (maximum == expected) return 1.0;  // both partitions degenerate and identical
  return (sum_ij - expected) / (maximum - expected);
}

// ------------------------------------------------- Frechet feature distance -

double frechet_distance(const std::vector<double>& feats_real, int64_t n_real,
                        const std::vector<double>& feats_fake, int64_t n_fake, int64_t f,
                        double shrinkage) {
  if (f <= 0 || n_real < 2 || n_fake < 2)
    throw std::invalid_argument("frechet_distance: need >= 2 samples per side and f > 0");
  if ((int64_t)feats_real.size() != n_real * f || (int64_t)feats_fake.size() != n_fake * f)
    throw std::invalid_argument("frechet_distance: feature buffer size does not match n*f");
  using Mat = Eigen::MatrixXd;
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> R(feats_real.data(), n_real, f);
  Eigen::Map<const RowMat> F(feats_fake.data(), n_fake, f);
  const Eigen::VectorXd mu_r = R.colwise().mean();
  const Eigen::VectorXd mu_f = F.colwise().mean();
  const Mat cr_center = R.rowwise() - mu_r.transpose();
  const Mat cf_center = F.rowwise() - mu_f.transpose();
  Mat cov_r = cr_center.transpose() * cr_center / (double)(n_real - 1);
  Mat cov_f = cf_center.transpose() * cf_center / (double)(n_fake - 1);
  cov_r.diagonal().array() += shrinkage;
  cov_f.diagonal().array() += shrinkage;

  // sqrt(cov_r) through the symmetric eigendecomposition, then the eigenvalues
  // of sqrt(cov_r) cov_f sqrt(cov_r) give tr((cov_r cov_f)^{1/2}).
  Eigen::SelfAdjointEigenSolver<Mat> es_r(cov_r);
  if (es_r.info() != Eigen::Success)
    throw std::runtime_error("frechet_distance: eigendecomposition of the real covariance failed");
  const Eigen::VectorXd ev_r = es_r.eigenvalues();
  Eigen::VectorXd sqrt_ev(f);
  for (int64_t i = 0; i < f; ++i) sqrt_ev[i] = std::sqrt(std::max(ev_r[i], 0.0));
  const Mat sqrt_r = es_r.eigenvectors() * sqrt_ev.asDiagonal() * es_r.eigenvectors().transpose();
  Mat prod = sqrt_r * cov_f * sqrt_r;
  prod = 0.5 * (prod + prod.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Mat> es_p(prod);
  if (es_p.info() != Eigen::Success)
    throw std::runtime_error("frechet_distance: eigendecomposition of the product failed");
  const Eigen::VectorXd ev_p = es_p.eigenvalues();
  const double largest = std::max(ev_p[f - 1], 0.0);
  const double tol = 1e-8 * std::max(1.0, largest);
  if (ev_p[0] < -tol) {
    std::ostringstream os;
    os << "frechet_distance: matrix square root residual is not PSD: min eigenvalue "
       << ev_p[0] << " below tolerance -" << tol << " (max eigenvalue " << largest
       << "); inputs may be degenerate -- increase shrinkage or sample count";
    throw std::runtime_error(os.str());
  }
  double trace_sqrt = 0;
  for (int64_t i = 0; i < f; ++i) trace_sqrt += std::sqrt(std::max(ev_p[i], 0.0));
  const double mean_term = (mu_r - mu_f).squaredNorm();
  return mean_term + cov_r.trace() + cov_f.trace() - 2.0 * trace_sqrt;
}

// ------------------------------------------------- random feature extractor -

namespace {

std::vector<float> he_normal(Rng& rng, int64_t cout, int64_t cin, int64_t k) {
  std::vector<float> w(cout * cin * k * k);
  const double sd = std::sqrt(2.0 / (double)(cin * k * k));
  for (auto& v : w) v = (float)rng.normal(0.0, sd);
  return w;
}

}  // namespace

RandomFeatureExtractor::RandomFeatureExtractor(uint64_t seed) : seed_(seed) {
  Rng rng(seed_mix(seed, 0xFE));
  w1_ = he_normal(rng, 32, 3, 3);
  b1_.assign(32, 0.0f);
  w2_ = he_normal(rng, 64, 32, 3);
  b2_.assign(64, 0.0f);
  w3_ = he_normal(rng, kFeatureDim, 64, 3);
  b3_.assign(kFeatureDim, 0.0f);
}

std::vector<double> RandomFeatureExtractor::extract(const float* images, int64_t b, int64_t c,
                                                    int64_t h, int64_t w) const {
  if (c != 3) throw std::invalid_argument("RandomFeatureExtractor: expects 3-channel images");
  if (h < 8 || w < 8 || h % 8 != 0 || w % 8 != 0)
    throw std::invalid_argument("RandomFeatureExtractor: image side must be a multiple of 8");
  const int64_t h1 = h / 2, w1 = w / 2, h2 = h / 4, w2 = w / 4, h3 = h / 8, w3 = w / 8;
  std::vector<float> y1(b * 32 * h1 * w1), y2(b * 64 * h2 * w2),
      y3(b * kFeatureDim * h3 * w3);
  kernels::conv2d_forward(images, w1_.data(), b1_.data(), y1.data(), b, 3, h, w, 32, 3, 2, 1);
  for (auto& v : y1) v = std::max(v, 0.0f);
  kernels::conv2d_forward(y1.data(), w2_.data(), b2_.data(), y2.data(), b, 32, h1, w1, 64, 3, 2,
                          1);
  for (auto& v : y2) v = std::max(v, 0.0f);
  kernels::conv2d_forward(y2.data(), w3_.data(), b3_.data(), y3.data(), b, 64, h2, w2,
                          kFeatureDim, 3, 2, 1);
  for (auto& v : y3) v = std::max(v, 0.0f);
  std::vector<double> out(b * kFeatureDim);
  const int64_t hw = h3 * w3;
  for (int64_t i = 0; i < b; ++i)
    for (int64_t ch = 0; ch < kFeatureDim; ++ch) {
      const float* plane = y3.data() + (i * kFeatureDim + ch) * hw;
      double acc = 0;
      for (int64_t p = 0; p < hw; ++p) acc += plane[p];
      out[i * kFeatureDim + ch] = acc / (double)hw;
    }
  return out;
}

std::vector<double> read_feature_file(const std::string& path, int64_t& n, int64_t& f) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_feature_file: cannot open " + path);
  if (!(in >> n >> f) || n <= 0 || f <= 0)
    throw std::runtime_error("read_feature_file: bad header in " + path);
  std::vector<double> feats((size_t)(n * f));
  for (auto& v : feats)
    if (!(in >> v)) throw std::runtime_error("read_feature_file: truncated data in " + path);
  return feats;
}

void write_feature_file(const std::string& path, const std::vector<double>& feats, int64_t n,
                        int64_t f) {
  if ((int64_t)feats.size() != n * f)
    throw std::invalid_argument("write_feature_file: buffer size does not match n*f");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_feature_file: cannot open " + path);
  out << n << " " << f << "\n";
  out << std::setprecision(17);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < f; ++j) out << feats[i * f + j] << (j + 1 == f ? "" : " ");
    out << "\n";
  }
  if (!out) throw std::runtime_error("write_feature_file: write failed for " + path);
}

// ------------------------------------------------------------ S-Acc oracle --

ShapeTemplates make_shape_templates(int image_size) {
  if (image_size < 8) throw std::invalid_argument("make_shape_templates: image_size too small");
  const double unit = (double)image_size / (double)scenegen::kCanvas;
  ShapeTemplates out;
  out.image_size = image_size;
  const int side = 2 * (int)std::ceil(11.5 * unit) + 5;
  const double center = 0.5 * side;
  auto add = [&](scenegen::ShapeId shape, double scale64, double rotation) {
    scenegen::SpriteSpec s;
    s.shape = shape;
    s.row = center;
    s.col = center;
    s.scale = scale64 * unit;
    s.rotation = rotation;
    ShapeTemplate t;
    t.shape = shape;
    t.scale = scale64;
    t.rotation = rotation;
    t.side = side;
    t.mask.assign((size_t)side * side, 0);
    double sr = 0, sc = 0;
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j)
        if (scenegen::sprite_contains(s, i + 0.5, j + 0.5)) {
          t.mask[(size_t)i * side + j] = 1;
          ++t.area;
          sr += i + 0.5;
          sc += j + 0.5;
        }
    if (t.area == 0) return;  // too small to raster at this resolution
    t.centroid_r = sr / (double)t.area;
    t.centroid_c = sc / (double)t.area;
    out.entries.push_back(std::move(t));
  };
  constexpr int kRotations = 64;
  for (double scale64 = 5.0; scale64 <= 11.0 + 1e-9; scale64 += 0.25) {
    add(scenegen::ShapeId::circle, scale64, 0.0);
    add(scenegen::ShapeId::square, scale64, 0.0);
    add(scenegen::ShapeId::triangle, scale64, 0.0);
    for (int r = 0; r < kRotations; ++r)
      add(scenegen::ShapeId::arrow, scale64, -M_PI + 2.0 * M_PI * r / kRotations);
  }
  if (out.entries.empty())
    throw std::runtime_error("make_shape_templates: no shape rasterized at this resolution");
  return out;
}

namespace {

struct Component {
  std::vector<int64_t> pixels;  // flat i*w + j indices
  int64_t min_r = 0, max_r = 0, min_c = 0, max_c = 0;
  double centroid_r = 0, centroid_c = 0;
  double color[3] = {0, 0, 0};
};

// Background = mean color of the fullest bin of a 16^3 RGB histogram;
// foreground = pixels whose max-channel deviation from it exceeds the
// threshold. The generator's background is dark (every channel <= 0.12) and
// objects are bright (max channel >= 0.6), so 0.2 has wide margin on records.
constexpr double kBgThreshold = 0.2;
constexpr int kBgBins = 16;

void estimate_background(const float* image, int64_t h, int64_t w, double bg[3]) {
  const int64_t hw = h * w;
  std::vector<int32_t> hist(kBgBins * kBgBins * kBgBins, 0);
  auto bin_of = [&](int64_t p) {
    int br = std::min(kBgBins - 1, (int)(image[p] * kBgBins));
    int bgc = std::min(kBgBins - 1, (int)(image[hw + p] * kBgBins));
    int bb = std::min(kBgBins - 1, (int)(image[2 * hw + p] * kBgBins));
    return (br * kBgBins + bgc) * kBgBins + bb;
  };
  for (int64_t p = 0; p < hw; ++p) ++hist[bin_of(p)];
  const int best = (int)(std::max_element(hist.begin(), hist.end()) - hist.begin());
  double acc[3] = {0, 0, 0};
  int64_t cnt = 0;
  for (int64_t p = 0; p < hw; ++p)
    if (bin_of(p) == best) {
      acc[0] += image[p];
      acc[1] += image[hw + p];
      acc[2] += image[2 * hw + p];
      ++cnt;
    }
  for (int i = 0; i < 3; ++i) bg[i] = acc[i] / (double)cnt;
}

std::vector<Component> find_components(const float* image, int64_t h, int64_t w,
                                       const double bg[3], int64_t min_area) {
  const int64_t hw = h * w;
  std::vector<uint8_t> fg(hw, 0);
  for (int64_t p = 0; p < hw; ++p) {
    const double d = std::max({std::abs(image[p] - bg[0]), std::abs(image[hw + p] - bg[1]),
                               std::abs(image[2 * hw + p] - bg[2])});
    fg[p] = d > kBgThreshold;
  }
  std::vector<int32_t> label(hw, -1);
  std::vector<Component> comps;
  std::vector<int64_t> stack;
  for (int64_t p0 = 0; p0 < hw; ++p0) {
    if (!fg[p0] || label[p0] >= 0) continue;
    Component comp;
    comp.min_r = comp.max_r = p0 / w;
    comp.min_c = comp.max_c = p0 % w;
    const int32_t id = (int32_t)comps.size();
    label[p0] = id;
    stack.assign(1, p0);
    while (!stack.empty()) {
      const int64_t p = stack.back();
      stack.pop_back();
      comp.pixels.push_back(p);
      const int64_t i = p / w, j = p % w;
      comp.min_r = std::min(comp.min_r, i);
      comp.max_r = std::max(comp.max_r, i);
      comp.min_c = std::min(comp.min_c, j);
      comp.max_c = std::max(comp.max_c, j);
      for (int64_t di = -1; di <= 1; ++di)
        for (int64_t dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          const int64_t ni = i + di, nj = j + dj;
          if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
          const int64_t q = ni * w + nj;
          if (fg[q] && label[q] < 0) {
            label[q] = id;
            stack.push_back(q);
          }
        }
    }
    comps.push_back(std::move(comp));
  }
  std::vector<Component> kept;
  for (auto& comp : comps) {
    if ((int64_t)comp.pixels.size() < min_area) continue;
    double sr = 0, sc = 0, col[3] = {0, 0, 0};
    for (int64_t p : comp.pixels) {
      sr += (double)(p / w) + 0.5;
      sc += (double)(p % w) + 0.5;
      col[0] += image[p];
      col[1] += image[hw + p];
      col[2] += image[2 * hw + p];
    }
    const double inv = 1.0 / (double)comp.pixels.size();
    comp.centroid_r = sr * inv;
    comp.centroid_c = sc * inv;
    for (int i = 0; i < 3; ++i) comp.color[i] = col[i] * inv;
    kept.push_back(std::move(comp));
  }
  // Deterministic order: top-left first (scan order already guarantees this).
  return kept;
}

// NCC between a binary template (aligned so its centroid lands on the
// component's centroid, rounded to whole pixels) and the component's binary
// mask, over the union window of both supports. Both sides are 0/1, so only
// the overlap count varies with alignment.
double template_ncc(const ShapeTemplate& t, const Component& comp,
                    const std::vector<uint8_t>& comp_mask, int64_t h, int64_t w) {
  const int64_t di = (int64_t)std::lround(comp.centroid_r - t.centroid_r);
  const int64_t dj = (int64_t)std::lround(comp.centroid_c - t.centroid_c);
  int64_t overlap = 0;
  for (int ti = 0; ti < t.side; ++ti) {
    const uint8_t* trow = t.mask.data() + (size_t)ti * t.side;
    const int64_t ii = ti + di;
    if (ii < 0 || ii >= h) continue;
    const uint8_t* crow = comp_mask.data() + ii * w;
    for (int tj = 0; tj < t.side; ++tj) {
      if (!trow[tj]) continue;
      const int64_t jj = tj + dj;
      if (jj < 0 || jj >= w) continue;
      overlap += crow[jj];
    }
  }
  const int64_t win_r0 = std::min<int64_t>(di, comp.min_r);
  const int64_t win_r1 = std::max<int64_t>(di + t.side - 1, comp.max_r);
  const int64_t win_c0 = std::min<int64_t>(dj, comp.min_c);
  const int64_t win_c1 = std::max<int64_t>(dj + t.side - 1, comp.max_c);
  const double n = (double)((win_r1 - win_r0 + 1) * (win_c1 - win_c0 + 1));
  const double ta = (double)t.area, ca = (double)comp.pixels.size();
  const double num = (double)overlap - ta * ca / n;
  const double den = std::sqrt((ta - ta * ta / n) * (ca - ca * ca / n));
  return den > 0 ? num / den : 0.0;
}

}  // namespace

StructureVerdict s_acc_oracle(const float* image, int64_t c, int64_t h, int64_t w,
                              const ShapeTemplates& templates) {
  if (c != 3) throw std::invalid_argument("s_acc_oracle: expects 3-channel images");
  if (h != templates.image_size || w != templates.image_size)
    throw std::invalid_argument("s_acc_oracle: image size does not match the template set");
  StructureVerdict verdict;
  double bg[3];
  estimate_background(image, h, w, bg);
  const double unit = (double)h / (double)scenegen::kCanvas;
  const int64_t min_area = std::max<int64_t>(4, (int64_t)std::lround(20.0 * unit * unit));
  const std::vector<Component> comps = find_components(image, h, w, bg, min_area);

  std::vector<uint8_t> comp_mask((size_t)h * w);
  for (const Component& comp : comps) {
    std::fill(comp_mask.begin(), comp_mask.end(), 0);
    for (int64_t p : comp.pixels) comp_mask[(size_t)p] = 1;
    DetectedObject obj;
    obj.row = comp.centroid_r;
    obj.col = comp.centroid_c;
    for (int i = 0; i < 3; ++i) obj.color[i] = comp.color[i];
    obj.area = (int64_t)comp.pixels.size();
    obj.ncc = -2.0;
    for (const ShapeTemplate& t : templates.entries) {
      const double ncc = template_ncc(t, comp, comp_mask, h, w);
      if (ncc > obj.ncc) {
        obj.ncc = ncc;
        obj.shape = t.shape;
        obj.scale = t.scale;
        obj.rotation = t.rotation;
      }
    }
    verdict.objects.push_back(obj);
  }

  if ((int64_t)verdict.objects.size() != 4) {
    verdict.reason = "expected 4 components, found " + std::to_string(verdict.objects.size());
    return verdict;
  }
  int arrow_idx = -1;
  int n_arrows = 0;
  for (size_t i = 0; i < verdict.objects.size(); ++i)
    if (verdict.objects[i].shape == scenegen::ShapeId::arrow) {
      arrow_idx = (int)i;
      ++n_arrows;
    }
  if (n_arrows != 1) {
    verdict.reason = "expected exactly 1 arrow, found " + std::to_string(n_arrows);
    return verdict;
  }
  const DetectedObject& arrow = verdict.objects[(size_t)arrow_idx];
  verdict.arrow_angle_est = arrow.rotation;

  // Unique back shape: among the three non-arrow objects, exactly two share a
  // shape and the third differs.
  std::vector<int> backs;
  for (size_t i = 0; i < verdict.objects.size(); ++i)
    if ((int)i != arrow_idx) backs.push_back((int)i);
  int unique_idx = -1;
  for (int i = 0; i < 3; ++i) {
    const auto si = verdict.objects[(size_t)backs[(size_t)i]].shape;
    int same = 0;
    for (int j = 0; j < 3; ++j)
      if (j != i && verdict.objects[(size_t)backs[(size_t)j]].shape == si) ++same;
    if (same == 0) {
      if (unique_idx >= 0) {
        unique_idx = -1;  // all three distinct: no pair exists
        break;
      }
      unique_idx = backs[(size_t)i];
    }
  }
  verdict.unique_shape_ok = unique_idx >= 0;
  if (!verdict.unique_shape_ok) {
    verdict.reason = "no unique back shape";
    return verdict;
  }

  // The arrow's rotation center is its template center; recover it from the
  // component centroid using the matched template's own centroid offset.
  double arrow_row = arrow.row, arrow_col = arrow.col;
  for (const ShapeTemplate& t : templates.entries)
    if (t.shape == scenegen::ShapeId::arrow && t.scale == arrow.scale &&
        t.rotation == arrow.rotation) {
      arrow_row += 0.5 * t.side - t.centroid_r;
      arrow_col += 0.5 * t.side - t.centroid_c;
      break;
    }
  const DetectedObject& target = verdict.objects[(size_t)unique_idx];
  const double desired = std::atan2(target.row - arrow_row, target.col - arrow_col);
  const double err = std::abs(scenegen::wrap_angle(verdict.arrow_angle_est - desired));
  verdict.aim_ok = err <= kTauEval;
  if (!verdict.aim_ok) {
    std::ostringstream os;
    os << "arrow does not aim at the unique shape (off by " << std::fixed
       << std::setprecision(3) << err << " rad)";
    verdict.reason = os.str();
    return verdict;
  }
  verdict.s_acc_pass = true;
  return verdict;
}

StructureVerdict s_acc_oracle(const scenegen::SceneRecord& rec, const ShapeTemplates& templates) {
  if (rec.c != 3) throw std::invalid_argument("s_acc_oracle: record is not 3-channel");
  const int64_t hw = (int64_t)rec.h * rec.w;
  std::vector<float> img((size_t)(3 * hw));
  for (int64_t p = 0; p < hw; ++p)
    for (int64_t ch = 0; ch < 3; ++ch)
      img[(size_t)(ch * hw + p)] = (float)rec.image[(size_t)(p * 3 + ch)] / 255.0f;
  return s_acc_oracle(img.data(), 3, rec.h, rec.w, templates);
}

// ----------------------------------------------------------------- reports --

namespace {

// Deterministic subset of [0, count): a seeded partial Fisher-Yates; when the
// pool is small enough, the identity order.
std::vector<int64_t> pick_indices(int64_t count, int64_t want, Rng& rng) {
  std::vector<int64_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  if (want >= count) return idx;
  for (int64_t i = 0; i < want; ++i) {
    const int64_t j = i + rng.uniform_int(count - i);
    std::swap(idx[(size_t)i], idx[(size_t)j]);
  }
  idx.resize((size_t)want);
  return idx;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace

EvalReport evaluate(const EvalOptions& opt) {
  if (opt.checkpoint.empty()) throw std::invalid_argument("evaluate: checkpoint path required");
  if (opt.data_dir.empty()) throw std::invalid_argument("evaluate: dataset dir required");
  if (opt.n_gen < 2 && opt.fake_features_file.empty())
    throw std::invalid_argument("evaluate: n_gen must be >= 2");
  if (opt.n_real < 2 && opt.real_features_file.empty())
    throw std::invalid_argument("evaluate: n_real must be >= 2");
  const ckpt::Header header = ckpt::read_header(opt.checkpoint);
  if (header.scalar != "f32")
    throw std::runtime_error("evaluate: checkpoint scalar type " + header.scalar +
                             " unsupported (expected f32)");
  model::Model<float> m(header.config, 0);
  const int64_t step = ckpt::load(opt.checkpoint, m);
  const int64_t S = m.cfg.image_size;

  const scenegen::DatasetManifest manifest = scenegen::read_manifest(opt.data_dir);
  if (manifest.count < 2) throw std::runtime_error("evaluate: dataset too small");

  EvalReport rep;
  const int64_t kBatch = 32;

  // ---- ARI-FG over posterior-path decompositions -------------------------
  Rng rng_ari(seed_mix(opt.seed, 11));
  const std::vector<int64_t> ari_idx =
      pick_indices(manifest.count, std::min(opt.n_ari, manifest.count), rng_ari);
  std::vector<double> ari_values;
  for (size_t off = 0; off < ari_idx.size(); off += (size_t)kBatch) {
    const size_t take = std::min((size_t)kBatch, ari_idx.size() - off);
    std::vector<scenegen::SceneRecord> recs;
    recs.reserve(take);
    for (size_t i = 0; i < take; ++i)
      recs.push_back(scenegen::read_record(opt.data_dir, manifest, ari_idx[off + i]));
    std::vector<int64_t> order((size_t)take);
    std::iota(order.begin(), order.end(), 0);
    const Tensor<float> batch = data::make_batch<float>(recs, order, S);
    ad::Tape<float> tp;
    const model::Scene<float> scene = m.reconstruct(tp, batch);
    const Tensor<float>& masks = scene.masks.val();  // [B, K, 1, S, S]
    const int64_t plane = S * S;
    for (size_t b = 0; b < take; ++b) {
      const Tensor<uint8_t> truth_mask = data::record_mask(recs[b], S);
      std::vector<int> pred((size_t)plane), truth((size_t)plane);
      for (int64_t p = 0; p < plane; ++p) {
        int best_k = 0;
        float best_v = masks[((int64_t)b * m.cfg.K + 0) * plane + p];
        for (int64_t k = 1; k < m.cfg.K; ++k) {
          const float v = masks[((int64_t)b * m.cfg.K + k) * plane + p];
          if (v > best_v) {
            best_v = v;
            best_k = (int)k;
          }
        }
        pred[(size_t)p] = best_k;
        truth[(size_t)p] = truth_mask[p];
      }
      if (auto v = ari_fg(pred, truth))
        ari_values.push_back(*v);
      else
        ++rep.ari_not_applicable;
    }
  }
  rep.ari_n = (int64_t)ari_values.size();
  rep.ari_available = rep.ari_n > 0;
  if (rep.ari_available) {
    double mean = 0;
    for (double v : ari_values) mean += v;
    mean /= (double)ari_values.size();
    double var = 0;
    for (double v : ari_values) var += (v - mean) * (v - mean);
    rep.ari_mean = mean;
    rep.ari_sd = ari_values.size() > 1 ? std::sqrt(var / (double)(ari_values.size() - 1)) : 0.0;
  }

  // ---- Frechet distance + S-Acc on generated scenes ----------------------
  const RandomFeatureExtractor extractor(opt.extractor_seed);
  std::vector<double> feats_real;
  int64_t n_real = 0, feat_dim = RandomFeatureExtractor::kFeatureDim;
  if (!opt.real_features_file.empty()) {
    int64_t fdim = 0;
    feats_real = read_feature_file(opt.real_features_file, n_real, fdim);
    feat_dim = fdim;
  } else {
    Rng rng_real(seed_mix(opt.seed, 12));
    const std::vector<int64_t> real_idx =
        pick_indices(manifest.count, std::min(opt.n_real, manifest.count), rng_real);
    n_real = (int64_t)real_idx.size();
    for (size_t off = 0; off < real_idx.size(); off += (size_t)kBatch) {
      const size_t take = std::min((size_t)kBatch, real_idx.size() - off);
      std::vector<scenegen::SceneRecord> recs;
      recs.reserve(take);
      for (size_t i = 0; i < take; ++i)
        recs.push_back(scenegen::read_record(opt.data_dir, manifest, real_idx[off + i]));
      std::vector<int64_t> order((size_t)take);
      std::iota(order.begin(), order.end(), 0);
      const Tensor<float> batch = data::make_batch<float>(recs, order, S);
      const std::vector<double> f =
          extractor.extract(batch.data(), (int64_t)take, m.cfg.channels, S, S);
      feats_real.insert(feats_real.end(), f.begin(), f.end());
    }
  }

  const ShapeTemplates templates = make_shape_templates((int)S);
  std::vector<double> feats_fake;
  const bool fake_from_file = !opt.fake_features_file.empty();
  int64_t n_fake = 0;
  if (fake_from_file) {
    int64_t fdim = 0;
    feats_fake = read_feature_file(opt.fake_features_file, n_fake, fdim);
    if (fdim != feat_dim)
      throw std::runtime_error("evaluate: real/fake external feature dims differ");
  }
  Rng rng_gen(seed_mix(opt.seed, 13));
  int64_t done = 0;
  while (done < opt.n_gen) {
    const int64_t take = std::min<int64_t>(kBatch, opt.n_gen - done);
    const auto gen = m.generate_scene(rng_gen, take);
    if (!fake_from_file) {
      const std::vector<double> f =
          extractor.extract(gen.composed.data(), take, m.cfg.channels, S, S);
      feats_fake.insert(feats_fake.end(), f.begin(), f.end());
    }
    const int64_t chw = m.cfg.channels * S * S;
    for (int64_t b = 0; b < take; ++b) {
      const StructureVerdict v =
          s_acc_oracle(gen.composed.data() + b * chw, m.cfg.channels, S, S, templates);
      rep.s_acc_pass += v.s_acc_pass ? 1 : 0;
      ++rep.s_acc_total;
    }
    done += take;
  }
  if (!fake_from_file) n_fake = done;
  rep.s_acc = rep.s_acc_total > 0 ? (double)rep.s_acc_pass / (double)rep.s_acc_total : 0.0;
  rep.frechet = frechet_distance(feats_real, n_real, feats_fake, n_fake, feat_dim);

  // ---- report text (no absolute paths: identical runs -> identical files) -
  std::ostringstream os;
  os << "slot-vae evaluation report\n";
  os << "model: image_size=" << m.cfg.image_size << " K=" << m.cfg.K << " D=" << m.cfg.D
     << " L=" << m.cfg.L << " prior=" << model::prior_kind_name(m.cfg.prior)
     << " share_sa_weights=" << (m.cfg.share_sa_weights ? 1 : 0)
     << " share_init=" << (m.cfg.share_init ? 1 : 0) << " step=" << step << "\n";
  os << "feature_extractor: "
     << (opt.real_features_file.empty() && opt.fake_features_file.empty()
             ? "random-cnn(seed=" + std::to_string(opt.extractor_seed) + ", F=128)"
             : "external feature files")
     << "\n";
  os << "note: feature distances are extractor-specific; not comparable to Inception-based "
        "FID or across extractors\n";
  os << "counts: n_real=" << n_real << " n_gen=" << n_fake << " n_ari=" << (int64_t)ari_idx.size()
     << "\n";
  os << "seeds: base=" << opt.seed << " ari_subset=mix(base,11) real_subset=mix(base,12)"
     << " generation=mix(base,13)\n";
  if (rep.ari_available)
    os << "ari_fg: mean=" << fmt(rep.ari_mean) << " sd=" << fmt(rep.ari_sd) << " n=" << rep.ari_n
       << " not_applicable=" << rep.ari_not_applicable << "\n";
  else
    os << "ari_fg: not applicable (no record had >= 2 foreground pixels)\n";
  os << "frechet: " << fmt(rep.frechet) << "\n";
  os << "s_acc: " << fmt(rep.s_acc) << " (" << rep.s_acc_pass << "/" << rep.s_acc_total << ")\n";
  rep.text = os.str();

  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    std::ofstream out(fs::path(opt.out_dir) / "eval_report.txt");
    if (!out) throw std::runtime_error("evaluate: cannot write report under " + opt.out_dir);
    out << rep.text;
  }
  return rep;
}

}  // namespace slotvae::eval
