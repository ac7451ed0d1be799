// Procedural structured-scene datasets (ArrowWorld and multisprite) with
// ground-truth instance masks and relational metadata, plus the sharded
// on-disk dataset format (manifest.txt + shard-%05d.bin).
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "slotvae/rng.hpp"

namespace slotvae::scenegen {

enum class ShapeId : int { circle = 0, square = 1, triangle = 2, arrow = 3 };

const char* shape_name(ShapeId s);
std::optional<ShapeId> shape_from_name(const std::string& name);

struct SpriteSpec {
  ShapeId shape = ShapeId::circle;
  double color[3] = {0, 0, 0};  // RGB in [0,1]
  double row = 0, col = 0;      // center, pixel units
  double scale = 0;             // bounding radius, pixels
  double rotation = 0;          // radians; meaningful for arrows only

  bool operator==(const SpriteSpec&) const = default;
};

struct SceneMeta {
  std::vector<SpriteSpec> objects;
  int unique_shape_index = -1;  // metadata index of the unique-shape back object (-1 if n/a)
  double arrow_angle = 0;       // radians; 0 if no arrow
  double background[3] = {0, 0, 0};

  bool operator==(const SceneMeta&) const = default;
};

struct SceneRecord {
  int h = 0, w = 0, c = 0;
  std::vector<uint8_t> image;  // H*W*C row-major
  std::vector<uint8_t> mask;   // H*W, 0 = background, j = objects[j-1]
  SceneMeta meta;

  bool operator==(const SceneRecord&) const = default;
};

inline constexpr int kCanvas = 64;
inline constexpr double kTauGen = 0.15;  // generation tolerance for arrow aim, radians

// Point-inclusion test for a sprite; (row, col) are pixel-center coordinates.
bool sprite_contains(const SpriteSpec& s, double row, double col);

// Paints the sprite into an existing record (image + mask label).
void rasterize_sprite(SceneRecord& rec, const SpriteSpec& s, uint8_t label);

// Renders image+mask from metadata alone (objects in metadata order, labels 1..n).
SceneRecord render_scene(const SceneMeta& meta, int h = kCanvas, int w = kCanvas);

// One ArrowWorld record: 1 arrow + 3 back objects of which exactly 2 share a
// shape; the arrow points at the unique-shape object's centroid. Deterministic
// in (seed, index).
SceneRecord arrowworld_record(uint64_t seed, uint64_t index);

// One multisprite record with k objects, k drawn from [k_min, k_max].
SceneRecord multisprite_record(uint64_t seed, uint64_t index, int k_min, int k_max);

std::vector<SceneRecord> generate_arrowworld(uint64_t seed, int64_t n);
std::vector<SceneRecord> generate_multisprite(uint64_t seed, int64_t n, int k_min, int k_max);

// angle of the vector from the arrow's center to (row, col), in the same
// convention rasterization uses (x = +col, y = +row).
double aim_angle(const SpriteSpec& arrow, double row, double col);

// wrap to (-pi, pi]
double wrap_angle(double a);

// ---------- on-disk format ----------

struct DatasetManifest {
  int version = 1;
  int height = 0, width = 0, channels = 0;
  int64_t count = 0;
  int shards = 0;
  std::string generator;
  uint64_t seed = 0;
};

std::string metadata_to_text(const SceneMeta& m);
SceneMeta metadata_from_text(const std::string& text);

class ShardWriter {
 public:
  ShardWriter(std::string dir, int h, int w, int c, std::string generator, uint64_t seed,
              int64_t shard_size = 1000);
  ~ShardWriter();
  void add(const SceneRecord& rec);
  DatasetManifest finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

DatasetManifest write_shards(const std::vector<SceneRecord>& records, const std::string& dir,
                             const std::string& generator, uint64_t seed,
                             int64_t shard_size = 1000);

DatasetManifest read_manifest(const std::string& dir);

// Loads every record, verifying shard integrity (throws std::runtime_error on
// count/length mismatches).
std::vector<SceneRecord> read_shards(const std::string& dir);

// Random access without loading everything: reads record `index` only.
SceneRecord read_record(const std::string& dir, const DatasetManifest& m, int64_t index);

}  // namespace slotvae::scenegen
