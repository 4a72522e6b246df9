#include "unidgf/scenegen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace unidgf {

using nlohmann::json;

// ---------------------------------------------------------------------------
// PPM (binary P6)

std::string ppm_bytes(const Image& img) {
  std::ostringstream os;
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  return os.str();
}

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path);
  std::string bytes = ppm_bytes(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError("not a binary PPM: " + path);
  auto next_int = [&in, &path] {
    // skip whitespace and '#' comments
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (c != EOF && std::isspace(static_cast<unsigned char>(c))) {
        in.get();
      } else {
        break;
      }
    }
    int v;
    if (!(in >> v)) throw IoError("malformed PPM header: " + path);
    return v;
  };
  int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw IoError("unsupported PPM maxval: " + path);
  in.get();  // single whitespace after header
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw IoError("truncated PPM payload: " + path);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Renderer

namespace {

enum class Family { Box, Cross, Diamond, Disc, Tri };
enum class Outline { Filled, Hollow, Cored };
enum class Pattern { Plain, Striped, Checker };
enum class TextureKind { None, Speckle, Hatch, RimDark, RimLight };

struct RenderStyle {
  Family family;
  Outline outline;
  Pattern pattern;
};

const std::map<std::string, Family>& family_table() {
  static const std::map<std::string, Family> t = {{"box", Family::Box},
                                                  {"cross", Family::Cross},
                                                  {"diamond", Family::Diamond},
                                                  {"disc", Family::Disc},
                                                  {"tri", Family::Tri}};
  return t;
}

RenderStyle parse_leaf_style(const std::string& leaf) {
  auto p1 = leaf.find('-');
  auto p2 = leaf.find('-', p1 == std::string::npos ? p1 : p1 + 1);
  if (p1 == std::string::npos || p2 == std::string::npos) {
    throw Error("leaf '" + leaf + "' is not renderable (expected family-outline-pattern)");
  }
  std::string f = leaf.substr(0, p1);
  std::string o = leaf.substr(p1 + 1, p2 - p1 - 1);
  std::string pt = leaf.substr(p2 + 1);
  RenderStyle s{};
  auto fit = family_table().find(f);
  if (fit == family_table().end()) throw Error("unknown shape family in leaf '" + leaf + "'");
  s.family = fit->second;
  if (o == "filled") s.outline = Outline::Filled;
  else if (o == "hollow") s.outline = Outline::Hollow;
  else if (o == "cored") s.outline = Outline::Cored;
  else throw Error("unknown outline style in leaf '" + leaf + "'");
  if (pt == "plain") s.pattern = Pattern::Plain;
  else if (pt == "striped") s.pattern = Pattern::Striped;
  else if (pt == "checker") s.pattern = Pattern::Checker;
  else throw Error("unknown fill pattern in leaf '" + leaf + "'");
  return s;
}

std::array<uint8_t, 3> color_rgb(const std::string& name) {
  static const std::map<std::string, std::array<uint8_t, 3>> t = {
      {"red", {255, 0, 0}},      {"orange", {255, 128, 0}}, {"yellow", {255, 255, 0}},
      {"lime", {128, 255, 0}},   {"green", {0, 255, 0}},    {"teal", {0, 255, 128}},
      {"cyan", {0, 255, 255}},   {"azure", {0, 128, 255}},  {"blue", {0, 0, 255}},
      {"violet", {128, 0, 255}}, {"magenta", {255, 0, 255}},{"rose", {255, 0, 128}}};
  auto it = t.find(name);
  if (it == t.end()) throw Error("unknown color value '" + name + "'");
  return it->second;
}

std::pair<double, double> size_range(const std::string& name) {
  if (name == "small") return {6.0, 9.0};
  if (name == "medium") return {12.0, 16.0};
  if (name == "large") return {20.0, 26.0};
  throw Error("unknown size value '" + name + "'");
}

TextureKind texture_kind(const std::string& name) {
  if (name == "none") return TextureKind::None;
  if (name == "speckle") return TextureKind::Speckle;
  if (name == "hatch") return TextureKind::Hatch;
  if (name == "rimdark") return TextureKind::RimDark;
  if (name == "rimlight") return TextureKind::RimLight;
  throw Error("unknown texture value '" + name + "'");
}

double orientation_deg(const std::string& name) {
  if (name == "deg0") return 0.0;
  if (name == "deg45") return 45.0;
  if (name == "deg90") return 90.0;
  if (name == "deg135") return 135.0;
  throw Error("unknown orientation value '" + name + "'");
}

bool inside_shape(Family f, double dx, double dy, double r) {
  switch (f) {
    case Family::Box:
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case Family::Disc:
      return dx * dx + dy * dy <= r * r;
    case Family::Diamond:
      return std::abs(dx) + std::abs(dy) <= r;
    case Family::Cross: {
      double arm = 0.34 * r;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) ||
             (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
    case Family::Tri: {
      if (dy < -r || dy > r) return false;
      double t = (dy + r) / (2 * r);
      return std::abs(dx) <= t * r;
    }
  }
  return false;
}

double floor_mod(double a, double m) { return a - m * std::floor(a / m); }

// per-pixel deterministic hash for speckle
bool speckle_on(uint64_t obj_seed, int x, int y) {
  uint64_t h = mix_seed(obj_seed, (static_cast<uint64_t>(y) << 20) | static_cast<uint64_t>(x));
  return (h % 1000) < 350;
}

struct PlacedObject {
  RenderStyle style;
  std::array<uint8_t, 3> fill;
  double cx, cy, r;
  TextureKind texture = TextureKind::None;
  bool has_orientation = false;
  double angle_deg = 0;
  uint64_t noise_seed = 0;
};

void draw_object(Image& img, std::vector<uint8_t>& mask, const PlacedObject& o) {
  int x0 = std::max(0, static_cast<int>(std::floor(o.cx - o.r - 2)));
  int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(o.cx + o.r + 2)));
  int y0 = std::max(0, static_cast<int>(std::floor(o.cy - o.r - 2)));
  int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(o.cy + o.r + 2)));
  double stripe_period = std::max(4.0, 0.55 * o.r);
  double checker_cell = std::max(3.0, 0.45 * o.r);
  double hatch_period = std::max(5.0, 0.6 * o.r);
  double ux = std::cos(o.angle_deg * 3.14159265358979323846 / 180.0);
  double uy = -std::sin(o.angle_deg * 3.14159265358979323846 / 180.0);
  double hand_len = 0.82 * o.r;
  double hand_halfw = std::max(1.2, 0.10 * o.r);

  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      double dx = (x + 0.5) - o.cx;
      double dy = (y + 0.5) - o.cy;
      if (!inside_shape(o.style.family, dx, dy, o.r)) continue;

      bool in_core = inside_shape(o.style.family, dx, dy, 0.34 * o.r);
      bool drawn = true;
      double rgb[3];
      if (o.style.outline == Outline::Hollow &&
          inside_shape(o.style.family, dx, dy, 0.60 * o.r)) {
        drawn = false;  // hollow interior stays background unless the hand crosses
        rgb[0] = rgb[1] = rgb[2] = 0.0;
      } else {
        for (int c = 0; c < 3; ++c) rgb[c] = o.fill[c];
        // fill pattern
        if (o.style.pattern == Pattern::Striped) {
          if (static_cast<long>(std::floor(dy / (stripe_period * 0.5))) & 1) {
            for (double& v : rgb) v *= 0.25;
          }
        } else if (o.style.pattern == Pattern::Checker) {
          long cxi = static_cast<long>(std::floor(dx / checker_cell));
          long cyi = static_cast<long>(std::floor(dy / checker_cell));
          if ((cxi + cyi) & 1) {
            for (double& v : rgb) v *= 0.25;
          }
        }
        // texture overlay
        switch (o.texture) {
          case TextureKind::None:
            break;
          case TextureKind::Speckle:
            if (speckle_on(o.noise_seed, x, y)) {
              for (double& v : rgb) v *= 0.45;
            }
            break;
          case TextureKind::Hatch:
            if (floor_mod(dx + dy, hatch_period) < 1.8) {
              for (double& v : rgb) v *= 0.45;
            }
            break;
          case TextureKind::RimDark:
            if (!inside_shape(o.style.family, dx, dy, 0.68 * o.r)) {
              for (double& v : rgb) v *= 0.40;
            }
            break;
          case TextureKind::RimLight:
            if (!inside_shape(o.style.family, dx, dy, 0.68 * o.r)) {
              for (double& v : rgb) v = v + (255.0 - v) * 0.55;
            }
            break;
        }
        if (o.style.outline == Outline::Cored && in_core) {
          rgb[0] = rgb[1] = rgb[2] = 255.0;
        }
      }

      // orientation hand, drawn as inverted pixels along a center ray
      if (o.has_orientation) {
        double t = dx * ux + dy * uy;
        double perp = std::abs(dx * uy - dy * ux);
        if (t >= 0 && t <= hand_len && perp <= hand_halfw) {
          if (!drawn) {
            rgb[0] = rgb[1] = rgb[2] = 0.0;  // invert from background
            drawn = true;
          }
          for (double& v : rgb) v = 255.0 - v;
        }
      }

      if (!drawn) continue;
      uint8_t* px = img.px(x, y);
      for (int c = 0; c < 3; ++c) {
        px[c] = static_cast<uint8_t>(std::clamp(rgb[c], 0.0, 255.0));
      }
      mask[static_cast<size_t>(y) * img.width + x] = 1;
    }
  }
}

Box mask_bbox(const std::vector<uint8_t>& mask, int w, int h) {
  int minx = w, miny = h, maxx = -1, maxy = -1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask[static_cast<size_t>(y) * w + x]) {
        minx = std::min(minx, x);
        maxx = std::max(maxx, x);
        miny = std::min(miny, y);
        maxy = std::max(maxy, y);
      }
    }
  }
  if (maxx < 0) throw Error("object rendered no pixels");
  return Box{static_cast<double>(minx), static_cast<double>(miny),
             static_cast<double>(maxx - minx + 1), static_cast<double>(maxy - miny + 1)};
}

bool boxes_touch(double ax, double ay, double as, double bx, double by, double bs,
                 double margin) {
  return !(ax + as + margin <= bx || bx + bs + margin <= ax ||
           ay + as + margin <= by || by + bs + margin <= ay);
}

}  // namespace

RenderedScene generate_scene(uint64_t seed, const DatasetConfig& cfg,
                             const HierarchyTree& tree, int index) {
  if (index < 0 || index >= cfg.scene_count) throw Error("scene index out of range");
  const int W = cfg.image_size;
  Rng rng(mix_seed(mix_seed(seed, 0x5ce9e5u), static_cast<uint64_t>(index)));

  int want = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  int n_leaves = tree.codebook_size(Level::C);

  struct Draft {
    PlacedObject placed;
    ObjectAnnotation ann;
  };
  std::vector<Draft> drafts;
  int total_attempts = 0;
  while (static_cast<int>(drafts.size()) < want) {
    if (++total_attempts > 500) {
      throw Error("could not place " + std::to_string(want) + " objects in scene " +
                  std::to_string(index));
    }
    // sample a label set
    int ci = rng.uniform_int(0, n_leaves - 1);
    int bi = tree.parent_of(Level::C, ci);
    int ai = tree.parent_of(Level::B, bi);
    ObjectAnnotation ann;
    ann.category = {tree.name_of(Level::A, ai), tree.name_of(Level::B, bi),
                    tree.name_of(Level::C, ci)};
    for (int pi : tree.properties_of_leaf(ci)) {
      const auto& vals = tree.values_of(ci, pi);
      int vi = vals[rng.uniform_int(0, static_cast<int>(vals.size()) - 1)];
      ann.attributes.emplace_back(tree.name_of(Level::P, pi), tree.name_of(Level::V, vi));
    }

    PlacedObject obj;
    obj.style = parse_leaf_style(ann.category[2]);
    obj.noise_seed = rng.next_u64();
    double lo = 6, hi = 9;
    for (const auto& [p, v] : ann.attributes) {
      if (p == "color") {
        obj.fill = color_rgb(v);
        for (int c = 0; c < 3; ++c) {
          int jitter = rng.uniform_int(-8, 8);
          obj.fill[c] = static_cast<uint8_t>(std::clamp(obj.fill[c] + jitter, 0, 255));
        }
      } else if (p == "size") {
        std::tie(lo, hi) = size_range(v);
      } else if (p == "texture") {
        obj.texture = texture_kind(v);
      } else if (p == "orientation") {
        obj.has_orientation = true;
        obj.angle_deg = orientation_deg(v);
      }
    }
    obj.r = rng.uniform(lo, hi);

    // bounded position attempts, then resample the object
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      double margin = obj.r + 2.0;
      if (W - margin <= margin) break;
      obj.cx = rng.uniform(margin, W - margin);
      obj.cy = rng.uniform(margin, W - margin);
      double side = 2 * obj.r + 2;
      bool clash = false;
      for (const Draft& d : drafts) {
        double dside = 2 * d.placed.r + 2;
        if (boxes_touch(obj.cx - obj.r - 1, obj.cy - obj.r - 1, side,
                        d.placed.cx - d.placed.r - 1, d.placed.cy - d.placed.r - 1,
                        dside, 2.0)) {
          clash = true;
          break;
        }
      }
      placed = !clash;
    }
    if (placed) drafts.push_back({obj, std::move(ann)});
  }

  RenderedScene out;
  out.image = Image(W, W);
  out.record.width = W;
  out.record.height = W;
  out.record.index = index;
  char name[64];
  std::snprintf(name, sizeof(name), "images/scene_%06d.ppm", index);
  out.record.image = name;
  for (Draft& d : drafts) {
    out.masks.emplace_back(static_cast<size_t>(W) * W, 0);
    draw_object(out.image, out.masks.back(), d.placed);
    d.ann.box = mask_bbox(out.masks.back(), W, W);
    out.record.objects.push_back(std::move(d.ann));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

json record_to_json(const SceneRecord& r) {
  json objects = json::array();
  for (const auto& o : r.objects) {
    json attrs = json::array();
    for (const auto& [p, v] : o.attributes) {
      attrs.push_back({{"property", p}, {"value", v}});
    }
    objects.push_back({{"bbox",
                        {static_cast<long>(o.box.x), static_cast<long>(o.box.y),
                         static_cast<long>(o.box.w), static_cast<long>(o.box.h)}},
                       {"category", {o.category[0], o.category[1], o.category[2]}},
                       {"attributes", attrs}});
  }
  return json{{"image", r.image}, {"width", r.width}, {"height", r.height},
              {"objects", objects}};
}

SceneRecord record_from_json(const json& j) {
  SceneRecord r;
  r.image = j.at("image").get<std::string>();
  r.width = j.at("width").get<int>();
  r.height = j.at("height").get<int>();
  for (const auto& o : j.at("objects")) {
    ObjectAnnotation ann;
    const auto& bb = o.at("bbox");
    ann.box = Box{bb.at(0).get<double>(), bb.at(1).get<double>(), bb.at(2).get<double>(),
                  bb.at(3).get<double>()};
    const auto& cat = o.at("category");
    ann.category = {cat.at(0).get<std::string>(), cat.at(1).get<std::string>(),
                    cat.at(2).get<std::string>()};
    for (const auto& a : o.at("attributes")) {
      ann.attributes.emplace_back(a.at("property").get<std::string>(),
                                  a.at("value").get<std::string>());
    }
    r.objects.push_back(std::move(ann));
  }
  return r;
}

void validate_record(const SceneRecord& r, const HierarchyTree& tree, const std::string& where) {
  if (r.objects.empty()) throw Error(where + ": scene has no objects");
  if (r.width <= 0 || r.height <= 0) throw Error(where + ": bad image size");
  for (size_t i = 0; i < r.objects.size(); ++i) {
    const auto& o = r.objects[i];
    std::string ctx = where + ", object " + std::to_string(i);
    if (o.box.w <= 0 || o.box.h <= 0) throw Error(ctx + ": nonpositive box extent");
    if (o.box.x < 0 || o.box.y < 0 || o.box.x + o.box.w > r.width ||
        o.box.y + o.box.h > r.height) {
      throw Error(ctx + ": box outside the image");
    }
    for (const auto& [p, v] : o.attributes) {
      // encode validates path consistency and the allowance in one shot
      tree.encode_label(LabelTriplet{o.category, p, v});
    }
    if (o.attributes.empty()) {
      // still check the bare path
      int ci = tree.index_of(Level::C, o.category[2]);
      int bi = tree.index_of(Level::B, o.category[1]);
      int ai = tree.index_of(Level::A, o.category[0]);
      if (ai < 0 || bi < 0 || ci < 0 || tree.parent_of(Level::C, ci) != bi ||
          tree.parent_of(Level::B, bi) != ai) {
        throw Error(ctx + ": invalid category path");
      }
    }
  }
}

}  // namespace

std::string join_path(const std::string& dir, const std::string& rel) {
  if (dir.empty()) return rel;
  return (std::filesystem::path(dir) / rel).string();
}

DatasetPaths dataset_paths(const std::string& out_dir) {
  DatasetPaths p;
  p.dir = out_dir;
  p.train_manifest = join_path(out_dir, "train.jsonl");
  p.test_manifest = join_path(out_dir, "test.jsonl");
  p.hierarchy = join_path(out_dir, "hierarchy.json");
  p.images_dir = join_path(out_dir, "images");
  return p;
}

void write_manifest(const std::vector<SceneRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + path);
  for (const auto& r : records) {
    out << record_to_json(r).dump() << "\n";
  }
  if (!out) throw IoError("short write: " + path);
}

std::vector<SceneRecord> load_manifest(const std::string& path, const HierarchyTree& tree) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::vector<SceneRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": parse error: " + e.what());
    }
    SceneRecord r;
    try {
      r = record_from_json(j);
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": bad record: " + e.what());
    }
    r.index = static_cast<int>(records.size());
    validate_record(r, tree, path + ":" + std::to_string(lineno));
    records.push_back(std::move(r));
  }
  return records;
}

void generate_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
  if (cfg.train_split <= 0.0 || cfg.train_split >= 1.0) {
    throw ConfigError("train_split must lie in (0,1)");
  }
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects) {
    throw ConfigError("objects-per-scene range is empty");
  }
  std::string hier = cfg.hierarchy_json.empty() ? toy_hierarchy_json() : cfg.hierarchy_json;
  HierarchyTree tree = HierarchyTree::from_json_text(hier);

  DatasetPaths paths = dataset_paths(out_dir);
  std::filesystem::create_directories(paths.images_dir);
  {
    std::ofstream h(paths.hierarchy, std::ios::binary);
    if (!h) throw IoError("cannot write " + paths.hierarchy);
    h << hier;
  }

  int n_train = static_cast<int>(std::lround(cfg.scene_count * cfg.train_split));
  n_train = std::clamp(n_train, 1, cfg.scene_count - 1);

  std::vector<SceneRecord> train, test;
  for (int i = 0; i < cfg.scene_count; ++i) {
    RenderedScene scene = generate_scene(cfg.seed, cfg, tree, i);
    write_ppm(scene.image, join_path(out_dir, scene.record.image));
    if (i < n_train) {
      train.push_back(std::move(scene.record));
    } else {
      test.push_back(std::move(scene.record));
    }
  }
  write_manifest(train, paths.train_manifest);
  write_manifest(test, paths.test_manifest);
}

}  // namespace unidgf
