#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "unidgf/common.hpp"
#include "unidgf/hierarchy.hpp"

namespace unidgf {

// 8-bit RGB raster, row-major.
struct Image {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, 0) {}
  uint8_t* px(int x, int y) { return pixels.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const uint8_t* px(int x, int y) const {
    return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
};

std::string ppm_bytes(const Image& img);
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

// Axis-aligned box [x,y,w,h] in image pixels, top-left origin.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  double area() const { return w * h; }
  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
};

struct ObjectAnnotation {
  Box box;
  std::array<std::string, 3> category;
  // one (property, value) per attribute; all share the category path
  std::vector<std::pair<std::string, std::string>> attributes;
};

struct SceneRecord {
  std::string image;  // path relative to the manifest directory
  int width = 0, height = 0;
  std::vector<ObjectAnnotation> objects;
  int index = -1;  // manifest line number; not serialized
};

struct DatasetConfig {
  uint64_t seed = 1;
  int scene_count = 100;
  int image_size = 96;
  int min_objects = 1;
  int max_objects = 3;
  double train_split = 0.8;
  std::string hierarchy_json;  // document text; empty selects the toy hierarchy
};

struct RenderedScene {
  Image image;
  SceneRecord record;
  std::vector<std::vector<uint8_t>> masks;  // per object: width*height, 1 = drawn
};

// Deterministic function of (seed, config, index). Throws Error if objects
// cannot be placed after bounded retries.
RenderedScene generate_scene(uint64_t seed, const DatasetConfig& cfg,
                             const HierarchyTree& tree, int index);

struct DatasetPaths {
  std::string dir;
  std::string train_manifest;
  std::string test_manifest;
  std::string hierarchy;
  std::string images_dir;
};
DatasetPaths dataset_paths(const std::string& out_dir);

// Renders all scenes, writes images plus train/test manifests with disjoint
// index ranges, and copies the hierarchy document alongside.
void generate_dataset(const DatasetConfig& cfg, const std::string& out_dir);

void write_manifest(const std::vector<SceneRecord>& records, const std::string& path);
// Parses and validates every record against the tree. Throws IoError with the
// line number on parse failures, Error naming the record on validation ones.
std::vector<SceneRecord> load_manifest(const std::string& path, const HierarchyTree& tree);

std::string join_path(const std::string& dir, const std::string& rel);

}  // namespace unidgf
