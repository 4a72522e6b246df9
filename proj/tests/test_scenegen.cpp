#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "unidgf/hierarchy.hpp"
#include "unidgf/scenegen.hpp"

using namespace unidgf;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const char* tag) {
  auto p = fs::temp_directory_path() / (std::string("unidgf_scenegen_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// five visually distinct leaves across families/outlines/patterns
std::string five_leaf_hierarchy() {
  nlohmann::json doc = nlohmann::json::parse(toy_hierarchy_json());
  nlohmann::json toy = doc;
  const std::vector<std::string> keep_leaves = {
      "box-filled-plain", "disc-filled-plain", "tri-filled-plain",
      "cross-hollow-striped", "diamond-cored-checker"};
  auto keep_chain = [&](const std::string& leaf) {
    auto p = leaf.rfind('-');
    std::string b = leaf.substr(0, p);
    std::string a = b.substr(0, b.find('-'));
    return std::array<std::string, 2>{a, b};
  };
  nlohmann::json nodes = nlohmann::json::array();
  std::set<std::string> wanted;
  for (const auto& leaf : keep_leaves) {
    auto [a, b] = keep_chain(leaf);
    wanted.insert("A:" + a);
    wanted.insert("B:" + b);
    wanted.insert("C:" + leaf);
  }
  for (const auto& n : toy["nodes"]) {
    if (wanted.count(n["id"].get<std::string>())) nodes.push_back(n);
  }
  doc["nodes"] = nodes;
  nlohmann::json allow = nlohmann::json::object();
  for (const auto& leaf : keep_leaves) allow[leaf] = toy["allowances"][leaf];
  doc["allowances"] = allow;
  return doc.dump();
}

}  // namespace

TEST_CASE("scene generation is deterministic and respects object counts") {
  DatasetConfig cfg;
  cfg.scene_count = 10;
  cfg.min_objects = 3;
  cfg.max_objects = 3;
  HierarchyTree tree = HierarchyTree::from_json_text(toy_hierarchy_json());

  RenderedScene s1 = generate_scene(42, cfg, tree, 4);
  RenderedScene s2 = generate_scene(42, cfg, tree, 4);
  CHECK(ppm_bytes(s1.image) == ppm_bytes(s2.image));
  CHECK(s1.record.objects.size() == 3);
  CHECK(s2.record.objects.size() == 3);
  for (size_t i = 0; i < s1.record.objects.size(); ++i) {
    CHECK(s1.record.objects[i].category == s2.record.objects[i].category);
    CHECK(s1.record.objects[i].box.x == s2.record.objects[i].box.x);
  }

  RenderedScene other = generate_scene(43, cfg, tree, 4);
  CHECK(ppm_bytes(s1.image) != ppm_bytes(other.image));
}

TEST_CASE("every rendered foreground pixel lies inside the annotated box") {
  DatasetConfig cfg;
  cfg.scene_count = 650;
  HierarchyTree tree = HierarchyTree::from_json_text(toy_hierarchy_json());
  int objects_seen = 0;
  for (int i = 0; i < cfg.scene_count && objects_seen < 1000; ++i) {
    RenderedScene s = generate_scene(7, cfg, tree, i);
    const int W = s.image.width;
    for (size_t k = 0; k < s.masks.size(); ++k) {
      const Box& b = s.record.objects[k].box;
      for (int y = 0; y < W; ++y) {
        for (int x = 0; x < W; ++x) {
          if (!s.masks[k][static_cast<size_t>(y) * W + x]) continue;
          bool in_box = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
          if (!in_box) {
            CAPTURE(i);
            CAPTURE(k);
            REQUIRE(in_box);
          }
        }
      }
      ++objects_seen;
    }
  }
  CHECK(objects_seen >= 1000);
}

TEST_CASE("dataset generation: split arithmetic, determinism, round-trip") {
  DatasetConfig cfg;
  cfg.scene_count = 60;
  cfg.train_split = 0.8;
  cfg.seed = 11;
  std::string dir1 = temp_dir("d1");
  std::string dir2 = temp_dir("d2");
  generate_dataset(cfg, dir1);
  generate_dataset(cfg, dir2);

  auto paths1 = dataset_paths(dir1);
  auto paths2 = dataset_paths(dir2);
  CHECK(slurp(paths1.train_manifest) == slurp(paths2.train_manifest));
  CHECK(slurp(paths1.test_manifest) == slurp(paths2.test_manifest));
  CHECK(slurp(paths1.hierarchy) == toy_hierarchy_json());
  CHECK(slurp(join_path(dir1, "images/scene_000000.ppm")) ==
        slurp(join_path(dir2, "images/scene_000000.ppm")));

  HierarchyTree tree = HierarchyTree::from_file(paths1.hierarchy);
  auto train = load_manifest(paths1.train_manifest, tree);
  auto test = load_manifest(paths1.test_manifest, tree);
  CHECK(train.size() == 48);
  CHECK(test.size() == 12);

  // serialize -> parse round-trip is the identity
  std::string round = join_path(dir1, "round.jsonl");
  write_manifest(train, round);
  CHECK(slurp(round) == slurp(paths1.train_manifest));

  // images referenced by records exist and parse
  Image img = read_ppm(join_path(dir1, train[0].image));
  CHECK(img.width == cfg.image_size);
  CHECK(img.height == cfg.image_size);

  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("manifest validation failures") {
  HierarchyTree tree = HierarchyTree::from_json_text(toy_hierarchy_json());
  std::string dir = temp_dir("val");

  SUBCASE("empty file loads as empty dataset") {
    std::string p = join_path(dir, "empty.jsonl");
    std::ofstream(p).close();
    CHECK(load_manifest(p, tree).empty());
  }
  SUBCASE("parse error carries the line number") {
    std::string p = join_path(dir, "bad.jsonl");
    std::ofstream(p) << "{\"image\":\"a.ppm\",\"width\":96,\"height\":96,\"objects\":"
                        "[{\"bbox\":[10,10,20,20],\"category\":[\"box\",\"box-filled\","
                        "\"box-filled-plain\"],\"attributes\":[]}]}\n"
                     << "{not json}\n";
    CHECK_THROWS_WITH_AS(load_manifest(p, tree), doctest::Contains(":2:"), IoError);
  }
  SUBCASE("out-of-image box is rejected") {
    std::string p = join_path(dir, "oob.jsonl");
    std::ofstream(p) << "{\"image\":\"a.ppm\",\"width\":96,\"height\":96,\"objects\":"
                        "[{\"bbox\":[90,90,20,20],\"category\":[\"box\",\"box-filled\","
                        "\"box-filled-plain\"],\"attributes\":[{\"property\":\"color\","
                        "\"value\":\"red\"}]}]}\n";
    CHECK_THROWS_WITH_AS(load_manifest(p, tree), doctest::Contains("outside the image"), Error);
  }
  SUBCASE("label outside the allowance is rejected") {
    std::string p = join_path(dir, "badlabel.jsonl");
    std::ofstream(p) << "{\"image\":\"a.ppm\",\"width\":96,\"height\":96,\"objects\":"
                        "[{\"bbox\":[10,10,20,20],\"category\":[\"disc\",\"disc-filled\","
                        "\"disc-filled-plain\"],\"attributes\":[{\"property\":\"orientation\","
                        "\"value\":\"deg0\"}]}]}\n";
    CHECK_THROWS_AS(load_manifest(p, tree), Error);
  }
  fs::remove_all(dir);
}

TEST_CASE("nearest-neighbor on simple descriptors separates a 5-leaf tree") {
  DatasetConfig cfg;
  cfg.scene_count = 260;
  cfg.min_objects = 1;
  cfg.max_objects = 2;
  cfg.hierarchy_json = five_leaf_hierarchy();
  cfg.seed = 3;
  HierarchyTree tree = HierarchyTree::from_json_text(cfg.hierarchy_json);
  REQUIRE(tree.codebook_size(Level::C) == 5);

  struct Sample {
    std::vector<double> feat;
    std::string leaf;
  };
  auto descriptor = [](const Image& img, const Box& b) {
    std::vector<double> f;
    // 4x4 occupancy of foreground pixels
    double occ[16] = {0};
    double counts[16] = {0};
    double fg = 0, total = 0, dark = 0, white = 0;
    double r = 0, g = 0, bl = 0;
    for (int y = static_cast<int>(b.y); y < b.y + b.h; ++y) {
      for (int x = static_cast<int>(b.x); x < b.x + b.w; ++x) {
        int gy = std::min(3, static_cast<int>((y - b.y) * 4 / b.h));
        int gx = std::min(3, static_cast<int>((x - b.x) * 4 / b.w));
        counts[gy * 4 + gx] += 1;
        total += 1;
        const uint8_t* px = img.px(x, y);
        bool is_fg = px[0] > 12 || px[1] > 12 || px[2] > 12;
        if (!is_fg) continue;
        fg += 1;
        occ[gy * 4 + gx] += 1;
        int mx = std::max({px[0], px[1], px[2]});
        int mn = std::min({px[0], px[1], px[2]});
        if (mx < 100) dark += 1;
        if (mn > 200) white += 1;
        r += px[0];
        g += px[1];
        bl += px[2];
      }
    }
    for (int i = 0; i < 16; ++i) f.push_back(counts[i] > 0 ? occ[i] / counts[i] : 0.0);
    f.push_back(fg / total);
    f.push_back(fg > 0 ? dark / fg : 0);
    f.push_back(fg > 0 ? white / fg : 0);
    f.push_back(fg > 0 ? r / fg / 255 * 0.3 : 0);
    f.push_back(fg > 0 ? g / fg / 255 * 0.3 : 0);
    f.push_back(fg > 0 ? bl / fg / 255 * 0.3 : 0);
    return f;
  };

  std::vector<Sample> train, test;
  for (int i = 0; i < cfg.scene_count; ++i) {
    RenderedScene s = generate_scene(cfg.seed, cfg, tree, i);
    for (const auto& o : s.record.objects) {
      Sample smp{descriptor(s.image, o.box), o.category[2]};
      (i < 140 ? train : test).push_back(std::move(smp));
    }
  }
  REQUIRE(test.size() >= 100);

  int correct = 0;
  for (const auto& t : test) {
    double best = 1e300;
    const std::string* pred = nullptr;
    for (const auto& tr : train) {
      double d = 0;
      for (size_t i = 0; i < t.feat.size(); ++i) {
        double diff = t.feat[i] - tr.feat[i];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        pred = &tr.leaf;
      }
    }
    if (pred && *pred == t.leaf) ++correct;
  }
  double acc = static_cast<double>(correct) / test.size();
  CHECK(acc > 0.9);
}
