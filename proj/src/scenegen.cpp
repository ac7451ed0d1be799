#include "slotvae/scenegen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace slotvae::scenegen {

const char* shape_name(ShapeId s) {
  switch (s) {
    case ShapeId::circle: return "circle";
    case ShapeId::square: return "square";
    case ShapeId::triangle: return "triangle";
    case ShapeId::arrow: return "arrow";
  }
  return "?";
}

std::optional<ShapeId> shape_from_name(const std::string& name) {
  for (ShapeId s : {ShapeId::circle, ShapeId::square, ShapeId::triangle, ShapeId::arrow})
    if (name == shape_name(s)) return s;
  return std::nullopt;
}

double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

double aim_angle(const SpriteSpec& arrow, double row, double col) {
  return std::atan2(row - arrow.row, col - arrow.col);
}

// ---------- rasterization ----------

bool sprite_contains(const SpriteSpec& s, double row, double col) {
  const double dy = row - s.row;
  const double dx = col - s.col;
  const double r = s.scale;
  switch (s.shape) {
    case ShapeId::circle:
      return dx * dx + dy * dy <= r * r;
    case ShapeId::square: {
      const double half = r / std::sqrt(2.0);
      return std::abs(dx) <= half && std::abs(dy) <= half;
    }
    case ShapeId::triangle: {
      // equilateral, circumradius r, apex toward smaller rows
      const double ax = 0, ay = -r;
      const double bx = -r * std::sqrt(3.0) / 2.0, by = r * 0.5;
      const double cx = r * std::sqrt(3.0) / 2.0, cy = r * 0.5;
      auto side = [&](double x0, double y0, double x1, double y1) {
        return (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0);
      };
      const double s1 = side(ax, ay, bx, by), s2 = side(bx, by, cx, cy), s3 = side(cx, cy, ax, ay);
      return (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
    }
    case ShapeId::arrow: {
      // local frame: +x along rotation; apex at +r
      const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
      const double lx = c * dx + sn * dy;
      const double ly = -sn * dx + c * dy;
      const double head_len = 0.85 * r, head_half = 0.50 * r;
      const double shaft_half = 0.18 * r, shaft_back = -0.95 * r;
      const double head_base = r - head_len;
      if (lx >= head_base && lx <= r)
        return std::abs(ly) <= head_half * (r - lx) / head_len;
      return lx >= shaft_back && lx < head_base && std::abs(ly) <= shaft_half;
    }
  }
  return false;
}

void rasterize_sprite(SceneRecord& rec, const SpriteSpec& s, uint8_t label) {
  const int r0 = std::max(0, (int)std::floor(s.row - s.scale - 1));
  const int r1 = std::min(rec.h - 1, (int)std::ceil(s.row + s.scale + 1));
  const int c0 = std::max(0, (int)std::floor(s.col - s.scale - 1));
  const int c1 = std::min(rec.w - 1, (int)std::ceil(s.col + s.scale + 1));
  uint8_t rgb[3];
  for (int ch = 0; ch < 3; ++ch)
    rgb[ch] = (uint8_t)std::lround(255.0 * std::clamp(s.color[ch], 0.0, 1.0));
  for (int i = r0; i <= r1; ++i)
    for (int j = c0; j <= c1; ++j)
      if (sprite_contains(s, i + 0.5, j + 0.5)) {
        uint8_t* px = rec.image.data() + (i * rec.w + j) * rec.c;
        px[0] = rgb[0];
        px[1] = rgb[1];
        px[2] = rgb[2];
        rec.mask[i * rec.w + j] = label;
      }
}

SceneRecord render_scene(const SceneMeta& meta, int h, int w) {
  SceneRecord rec;
  rec.h = h;
  rec.w = w;
  rec.c = 3;
  rec.image.resize((size_t)h * w * 3);
  rec.mask.assign((size_t)h * w, 0);
  rec.meta = meta;
  uint8_t bg[3];
  for (int ch = 0; ch < 3; ++ch)
    bg[ch] = (uint8_t)std::lround(255.0 * std::clamp(meta.background[ch], 0.0, 1.0));
  for (int i = 0; i < h * w; ++i) {
    rec.image[i * 3 + 0] = bg[0];
    rec.image[i * 3 + 1] = bg[1];
    rec.image[i * 3 + 2] = bg[2];
  }
  for (size_t k = 0; k < meta.objects.size(); ++k)
    rasterize_sprite(rec, meta.objects[k], (uint8_t)(k + 1));
  return rec;
}

// ---------- generators ----------

namespace {

void bright_color(Rng& rng, double* rgb) {
  for (int tries = 0; tries < 64; ++tries) {
    for (int i = 0; i < 3; ++i) rgb[i] = rng.uniform(0.25, 1.0);
    if (std::max({rgb[0], rgb[1], rgb[2]}) >= 0.6) return;
  }
}

// Places `spec` uniformly with its bounding circle fully inside the canvas and
// bounding-circle separation >= 2 px from everything already in `placed`.
bool place_sprite(Rng& rng, SpriteSpec& spec, const std::vector<SpriteSpec>& placed, int h, int w) {
  const double margin = spec.scale + 1.5;
  for (int tries = 0; tries < 100; ++tries) {
    spec.row = rng.uniform(margin, h - margin);
    spec.col = rng.uniform(margin, w - margin);
    bool ok = true;
    for (const auto& o : placed) {
      const double dy = spec.row - o.row, dx = spec.col - o.col;
      const double need = spec.scale + o.scale + 2.0;
      if (dx * dx + dy * dy < need * need) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
  }
  return false;
}

}  // namespace

SceneRecord arrowworld_record(uint64_t seed, uint64_t index) {
  Rng rng(seed_mix(seed, index));
  const ShapeId back_vocab[3] = {ShapeId::circle, ShapeId::square, ShapeId::triangle};
  for (int attempt = 0; attempt < 1000; ++attempt) {
    SceneMeta meta;
    for (int i = 0; i < 3; ++i) meta.background[i] = rng.uniform(0.0, 0.12);

    const int pair_pick = (int)rng.uniform_int(3);
    const ShapeId pair_shape = back_vocab[pair_pick];
    ShapeId rest[2];
    for (int i = 0, j = 0; i < 3; ++i)
      if (i != pair_pick) rest[j++] = back_vocab[i];
    const ShapeId unique_shape = rest[rng.uniform_int(2)];

    ShapeId back_shapes[3] = {pair_shape, pair_shape, unique_shape};
    rng.shuffle(back_shapes, back_shapes + 3);

    SpriteSpec arrow;
    arrow.shape = ShapeId::arrow;
    arrow.scale = rng.uniform(7.0, 10.0);
    bright_color(rng, arrow.color);

    std::vector<SpriteSpec> placed;
    if (!place_sprite(rng, arrow, placed, kCanvas, kCanvas)) continue;
    placed.push_back(arrow);

    bool ok = true;
    std::vector<SpriteSpec> backs;
    for (int i = 0; i < 3; ++i) {
      SpriteSpec b;
      b.shape = back_shapes[i];
      b.scale = rng.uniform(6.0, 10.0);
      bright_color(rng, b.color);
      if (!place_sprite(rng, b, placed, kCanvas, kCanvas)) {
        ok = false;
        break;
      }
      placed.push_back(b);
      backs.push_back(b);
    }
    if (!ok) continue;

    int unique_pos = -1;
    for (int i = 0; i < 3; ++i)
      if (back_shapes[i] == unique_shape) unique_pos = i;

    SpriteSpec& a = placed[0];
    a.rotation = aim_angle(a, backs[unique_pos].row, backs[unique_pos].col);

    meta.objects.push_back(a);
    for (const auto& b : backs) meta.objects.push_back(b);
    meta.unique_shape_index = 1 + unique_pos;
    meta.arrow_angle = a.rotation;
    return render_scene(meta);
  }
  throw std::runtime_error("arrowworld_record: rejection sampling failed after bounded retries");
}

SceneRecord multisprite_record(uint64_t seed, uint64_t index, int k_min, int k_max) {
  if (k_min < 1 || k_max > 6 || k_min > k_max)
    throw std::invalid_argument("multisprite: k range must lie within [1,6]");
  Rng rng(seed_mix(seed, index));
  const ShapeId vocab[4] = {ShapeId::circle, ShapeId::square, ShapeId::triangle, ShapeId::arrow};
  for (int attempt = 0; attempt < 1000; ++attempt) {
    SceneMeta meta;
    for (int i = 0; i < 3; ++i) meta.background[i] = rng.uniform(0.0, 0.12);
    const int k = k_min + (int)rng.uniform_int(k_max - k_min + 1);
    std::vector<SpriteSpec> placed;
    bool ok = true;
    for (int i = 0; i < k; ++i) {
      SpriteSpec s;
      s.shape = vocab[rng.uniform_int(4)];
      s.scale = rng.uniform(4.5, 9.0);
      if (s.shape == ShapeId::arrow) s.rotation = rng.uniform(-M_PI, M_PI);
      bright_color(rng, s.color);
      if (!place_sprite(rng, s, placed, kCanvas, kCanvas)) {
        ok = false;
        break;
      }
      placed.push_back(s);
    }
    if (!ok) continue;
    meta.objects = placed;
    return render_scene(meta);
  }
  throw std::runtime_error("multisprite_record: rejection sampling failed after bounded retries");
}

std::vector<SceneRecord> generate_arrowworld(uint64_t seed, int64_t n) {
  if (n < 1) throw std::invalid_argument("generate_arrowworld: n must be >= 1");
  std::vector<SceneRecord> out;
  out.reserve(n);
  for (int64_t i = 0; i < n; ++i) out.push_back(arrowworld_record(seed, i));
  return out;
}

std::vector<SceneRecord> generate_multisprite(uint64_t seed, int64_t n, int k_min, int k_max) {
  if (n < 1) throw std::invalid_argument("generate_multisprite: n must be >= 1");
  std::vector<SceneRecord> out;
  out.reserve(n);
  for (int64_t i = 0; i < n; ++i) out.push_back(multisprite_record(seed, i, k_min, k_max));
  return out;
}

// ---------- metadata text ----------

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error("metadata: bad number '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  size_t pos = 0;
  while (true) {
    size_t next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(s.substr(pos));
      return out;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
}

std::string_view expect_key(std::string_view token, std::string_view key) {
  if (token.size() < key.size() + 1 || token.substr(0, key.size()) != key ||
      token[key.size()] != '=')
    throw std::runtime_error("metadata: expected '" + std::string(key) + "=', got '" +
                             std::string(token) + "'");
  return token.substr(key.size() + 1);
}

}  // namespace

std::string metadata_to_text(const SceneMeta& m) {
  std::ostringstream os;
  os << "objects=" << m.objects.size() << "\n";
  os << "unique_shape_index=" << m.unique_shape_index << "\n";
  os << "arrow_angle=" << fmt_double(m.arrow_angle) << "\n";
  os << "background=" << fmt_double(m.background[0]) << "," << fmt_double(m.background[1]) << ","
     << fmt_double(m.background[2]) << "\n";
  for (const auto& o : m.objects) {
    os << "object shape=" << shape_name(o.shape) << " color=" << fmt_double(o.color[0]) << ","
       << fmt_double(o.color[1]) << "," << fmt_double(o.color[2]) << " pos=" << fmt_double(o.row)
       << "," << fmt_double(o.col) << " scale=" << fmt_double(o.scale)
       << " rot=" << fmt_double(o.rotation) << "\n";
  }
  return os.str();
}

SceneMeta metadata_from_text(const std::string& text) {
  SceneMeta m;
  std::vector<std::string_view> lines = split(text, '\n');
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() < 4) throw std::runtime_error("metadata: truncated");
  const size_t n_obj = (size_t)parse_double(expect_key(lines[0], "objects"));
  m.unique_shape_index = (int)parse_double(expect_key(lines[1], "unique_shape_index"));
  m.arrow_angle = parse_double(expect_key(lines[2], "arrow_angle"));
  auto bg = split(expect_key(lines[3], "background"), ',');
  if (bg.size() != 3) throw std::runtime_error("metadata: background needs 3 components");
  for (int i = 0; i < 3; ++i) m.background[i] = parse_double(bg[i]);
  if (lines.size() != 4 + n_obj) throw std::runtime_error("metadata: object count mismatch");
  for (size_t i = 0; i < n_obj; ++i) {
    auto tokens = split(lines[4 + i], ' ');
    if (tokens.size() != 6 || tokens[0] != "object")
      throw std::runtime_error("metadata: malformed object line");
    SpriteSpec o;
    auto sh = shape_from_name(std::string(expect_key(tokens[1], "shape")));
    if (!sh) throw std::runtime_error("metadata: unknown shape");
    o.shape = *sh;
    auto col = split(expect_key(tokens[2], "color"), ',');
    if (col.size() != 3) throw std::runtime_error("metadata: color needs 3 components");
    for (int j = 0; j < 3; ++j) o.color[j] = parse_double(col[j]);
    auto pos = split(expect_key(tokens[3], "pos"), ',');
    if (pos.size() != 2) throw std::runtime_error("metadata: pos needs 2 components");
    o.row = parse_double(pos[0]);
    o.col = parse_double(pos[1]);
    o.scale = parse_double(expect_key(tokens[4], "scale"));
    o.rotation = parse_double(expect_key(tokens[5], "rot"));
    m.objects.push_back(o);
  }
  return m;
}

// ---------- shard I/O ----------

namespace {

std::string shard_path(const std::string& dir, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard-%05d.bin", i);
  return (fs::path(dir) / buf).string();
}

void write_u32le(std::ostream& os, uint32_t v) {
  uint8_t b[4] = {(uint8_t)(v & 0xff), (uint8_t)((v >> 8) & 0xff), (uint8_t)((v >> 16) & 0xff),
                  (uint8_t)((v >> 24) & 0xff)};
  os.write((const char*)b, 4);
}

uint32_t read_u32le(std::istream& is) {
  uint8_t b[4];
  is.read((char*)b, 4);
  if (!is) throw std::runtime_error("shard: truncated length prefix");
  return (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16) | ((uint32_t)b[3] << 24);
}

void write_record(std::ostream& os, const SceneRecord& rec) {
  os.write((const char*)rec.image.data(), rec.image.size());
  os.write((const char*)rec.mask.data(), rec.mask.size());
  const std::string meta = metadata_to_text(rec.meta);
  write_u32le(os, (uint32_t)meta.size());
  os.write(meta.data(), meta.size());
}

SceneRecord read_one(std::istream& is, int h, int w, int c) {
  SceneRecord rec;
  rec.h = h;
  rec.w = w;
  rec.c = c;
  rec.image.resize((size_t)h * w * c);
  rec.mask.resize((size_t)h * w);
  is.read((char*)rec.image.data(), rec.image.size());
  is.read((char*)rec.mask.data(), rec.mask.size());
  if (!is) throw std::runtime_error("shard: truncated record payload");
  const uint32_t len = read_u32le(is);
  if (len > (1u << 20)) throw std::runtime_error("shard: implausible metadata length");
  std::string meta(len, '\0');
  is.read(meta.data(), len);
  if (!is) throw std::runtime_error("shard: truncated metadata");
  rec.meta = metadata_from_text(meta);
  return rec;
}

}  // namespace

struct ShardWriter::Impl {
  std::string dir;
  int h, w, c;
  std::string generator;
  uint64_t seed;
  int64_t shard_size;
  int64_t count = 0;
  int shard_index = -1;
  int64_t in_shard = 0;
  std::ofstream os;
  bool finished = false;

  void roll() {
    if (os.is_open()) os.close();
    ++shard_index;
    os.open(shard_path(dir, shard_index), std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("ShardWriter: cannot open " + shard_path(dir, shard_index));
    in_shard = 0;
  }
};

ShardWriter::ShardWriter(std::string dir, int h, int w, int c, std::string generator, uint64_t seed,
                         int64_t shard_size)
    : impl_(std::make_unique<Impl>()) {
  impl_->dir = std::move(dir);
  impl_->h = h;
  impl_->w = w;
  impl_->c = c;
  impl_->generator = std::move(generator);
  impl_->seed = seed;
  impl_->shard_size = shard_size;
  fs::create_directories(impl_->dir);
}

ShardWriter::~ShardWriter() = default;

void ShardWriter::add(const SceneRecord& rec) {
  if (impl_->finished) throw std::runtime_error("ShardWriter: add after finish");
  if (rec.h != impl_->h || rec.w != impl_->w || rec.c != impl_->c)
    throw std::invalid_argument("ShardWriter: record dims do not match dataset dims");
  if (impl_->shard_index < 0 || impl_->in_shard == impl_->shard_size) impl_->roll();
  write_record(impl_->os, rec);
  if (!impl_->os) throw std::runtime_error("ShardWriter: write failed");
  ++impl_->in_shard;
  ++impl_->count;
}

DatasetManifest ShardWriter::finish() {
  impl_->finished = true;
  if (impl_->os.is_open()) impl_->os.close();
  DatasetManifest m;
  m.version = 1;
  m.height = impl_->h;
  m.width = impl_->w;
  m.channels = impl_->c;
  m.count = impl_->count;
  m.shards = impl_->shard_index + 1;
  m.generator = impl_->generator;
  m.seed = impl_->seed;
  std::ofstream mf(fs::path(impl_->dir) / "manifest.txt", std::ios::trunc);
  mf << "version=" << m.version << "\n"
     << "height=" << m.height << "\n"
     << "width=" << m.width << "\n"
     << "channels=" << m.channels << "\n"
     << "count=" << m.count << "\n"
     << "shards=" << m.shards << "\n"
     << "generator=" << m.generator << "\n"
     << "seed=" << m.seed << "\n";
  if (!mf) throw std::runtime_error("ShardWriter: cannot write manifest");
  return m;
}

DatasetManifest write_shards(const std::vector<SceneRecord>& records, const std::string& dir,
                             const std::string& generator, uint64_t seed, int64_t shard_size) {
  int h = kCanvas, w = kCanvas, c = 3;
  if (!records.empty()) {
    h = records[0].h;
    w = records[0].w;
    c = records[0].c;
  }
  ShardWriter writer(dir, h, w, c, generator, seed, shard_size);
  for (const auto& r : records) writer.add(r);
  return writer.finish();
}

DatasetManifest read_manifest(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.txt");
  if (!is) throw std::runtime_error("read_manifest: no manifest.txt in " + dir);
  DatasetManifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("manifest: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "version") m.version = std::stoi(val);
    else if (key == "height") m.height = std::stoi(val);
    else if (key == "width") m.width = std::stoi(val);
    else if (key == "channels") m.channels = std::stoi(val);
    else if (key == "count") m.count = std::stoll(val);
    else if (key == "shards") m.shards = std::stoi(val);
    else if (key == "generator") m.generator = val;
    else if (key == "seed") m.seed = std::stoull(val);
    else throw std::runtime_error("manifest: unknown key '" + key + "'");
  }
  if (m.version != 1)
    throw std::runtime_error("manifest: unsupported version " + std::to_string(m.version));
  if (m.height <= 0 || m.width <= 0 || m.channels <= 0 || m.count < 0 || m.shards < 0)
    throw std::runtime_error("manifest: invalid dimensions or counts");
  return m;
}

std::vector<SceneRecord> read_shards(const std::string& dir) {
  const DatasetManifest m = read_manifest(dir);
  std::vector<SceneRecord> out;
  out.reserve(m.count);
  for (int s = 0; s < m.shards; ++s) {
    std::ifstream is(shard_path(dir, s), std::ios::binary);
    if (!is) throw std::runtime_error("read_shards: missing " + shard_path(dir, s));
    while (is.peek() != EOF) out.push_back(read_one(is, m.height, m.width, m.channels));
  }
  if ((int64_t)out.size() != m.count)
    throw std::runtime_error("read_shards: integrity error: manifest count " +
                             std::to_string(m.count) + " but shards hold " +
                             std::to_string(out.size()) + " records");
  return out;
}

SceneRecord read_record(const std::string& dir, const DatasetManifest& m, int64_t index) {
  if (index < 0 || index >= m.count) throw std::out_of_range("read_record: index out of range");
  const int64_t fixed = (int64_t)m.height * m.width * (m.channels + 1);
  int64_t seen = 0;
  for (int s = 0; s < m.shards; ++s) {
    std::ifstream is(shard_path(dir, s), std::ios::binary);
    if (!is) throw std::runtime_error("read_record: missing " + shard_path(dir, s));
    while (is.peek() != EOF) {
      if (seen == index) return read_one(is, m.height, m.width, m.channels);
      is.seekg(fixed, std::ios::cur);
      const uint32_t len = read_u32le(is);
      is.seekg(len, std::ios::cur);
      if (!is) throw std::runtime_error("read_record: truncated shard while skipping");
      ++seen;
    }
  }
  throw std::runtime_error("read_record: integrity error: index " + std::to_string(index) +
                           " not reached; shards hold only " + std::to_string(seen) + " records");
}

}  // namespace slotvae::scenegen
