#include "unidgf/hierarchy.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace unidgf {

using nlohmann::json;

namespace {

constexpr const char* kLevelNames[5] = {"A", "B", "C", "P", "V"};

std::string fmt_index(const char* prefix, int i, int width) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
  return buf;
}

}  // namespace

int HierarchyTree::vocab_size() const {
  int n = kNumSpecials;
  for (const auto& v : names_) n += static_cast<int>(v.size());
  return n;
}

int HierarchyTree::unified_id(Level level, int index) const {
  if (index < 0 || index >= codebook_size(level)) {
    throw CodecError(std::string("token index out of range for level ") +
                     kLevelNames[idx(level)]);
  }
  return offsets_[idx(level)] + index;
}

std::optional<std::pair<Level, int>> HierarchyTree::level_of(int unified) const {
  for (int l = 0; l < 5; ++l) {
    int off = offsets_[l];
    int size = static_cast<int>(names_[l].size());
    if (unified >= off && unified < off + size) {
      return std::make_pair(static_cast<Level>(l), unified - off);
    }
  }
  return std::nullopt;
}

int HierarchyTree::index_of(Level level, const std::string& name) const {
  const auto& m = name_to_index_[idx(level)];
  auto it = m.find(name);
  return it == m.end() ? -1 : it->second;
}

const std::string& HierarchyTree::name_of(Level level, int index) const {
  return names_[idx(level)].at(index);
}

int HierarchyTree::parent_of(Level level, int index) const {
  if (level == Level::B) return parent_b_.at(index);
  if (level == Level::C) return parent_c_.at(index);
  throw CodecError("parent_of: only levels B and C have parents");
}

const std::vector<int>& HierarchyTree::children_of(Level level, int index) const {
  if (level == Level::A) return children_a_.at(index);
  if (level == Level::B) return children_b_.at(index);
  throw CodecError("children_of: only levels A and B have children");
}

const std::vector<int>& HierarchyTree::properties_of_leaf(int c_index) const {
  return leaf_properties_.at(c_index);
}

const std::vector<int>& HierarchyTree::values_of(int c_index, int p_index) const {
  const auto& m = leaf_values_.at(c_index);
  auto it = m.find(p_index);
  if (it == m.end()) {
    throw CodecError("property '" + names_[idx(Level::P)][p_index] +
                     "' is not allowed under leaf '" + names_[idx(Level::C)][c_index] + "'");
  }
  return it->second;
}

bool HierarchyTree::leaf_allows(int c_index, int p_index) const {
  return leaf_values_.at(c_index).count(p_index) > 0;
}

// ---------------------------------------------------------------------------
// Parsing / validation

HierarchyTree HierarchyTree::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open hierarchy file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

HierarchyTree HierarchyTree::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw TreeError(std::string("hierarchy JSON parse error: ") + e.what());
  }
  for (const char* key : {"levels", "nodes", "properties", "values", "allowances"}) {
    if (!doc.contains(key)) throw TreeError(std::string("hierarchy: missing field '") + key + "'");
  }
  if (!doc["levels"].is_array() || doc["levels"].size() != 3) {
    throw TreeError("hierarchy: 'levels' must list exactly 3 level names");
  }

  HierarchyTree tree;
  tree.source_text_ = text;

  struct RawNode {
    std::string id, name, parent;
    int depth = -1;
  };
  std::map<std::string, RawNode> by_id;
  std::vector<std::string> id_order;
  for (const auto& n : doc["nodes"]) {
    RawNode r;
    r.id = n.at("id").get<std::string>();
    r.name = n.at("name").get<std::string>();
    if (n.contains("parent") && !n["parent"].is_null()) {
      r.parent = n["parent"].get<std::string>();
    }
    if (r.name.empty()) throw TreeError("hierarchy: node '" + r.id + "' has an empty name");
    if (by_id.count(r.id)) throw TreeError("hierarchy: duplicate node id '" + r.id + "'");
    by_id[r.id] = r;
    id_order.push_back(r.id);
  }

  // depth from parent chain; cycles and orphans rejected
  std::function<int(const std::string&, int)> depth_of =
      [&](const std::string& id, int guard) -> int {
    if (guard > 3) throw TreeError("hierarchy: parent chain too deep at node '" + id + "'");
    RawNode& r = by_id.at(id);
    if (r.depth >= 0) return r.depth;
    if (r.parent.empty()) return r.depth = 0;
    auto it = by_id.find(r.parent);
    if (it == by_id.end()) {
      throw TreeError("hierarchy: node '" + r.id + "' names nonexistent parent '" + r.parent + "'");
    }
    return r.depth = depth_of(r.parent, guard + 1) + 1;
  };
  for (const auto& id : id_order) {
    int d = depth_of(id, 0);
    if (d > 2) throw TreeError("hierarchy: node '" + id + "' is deeper than level C");
  }

  // collect names per level; enforce per-codebook uniqueness
  std::array<std::vector<std::pair<std::string, std::string>>, 3> level_nodes;  // (name, id)
  for (const auto& id : id_order) {
    const RawNode& r = by_id[id];
    level_nodes[r.depth].emplace_back(r.name, r.id);
  }
  for (int l = 0; l < 3; ++l) {
    std::sort(level_nodes[l].begin(), level_nodes[l].end());
    for (size_t i = 1; i < level_nodes[l].size(); ++i) {
      if (level_nodes[l][i].first == level_nodes[l][i - 1].first) {
        throw TreeError("hierarchy: duplicate name '" + level_nodes[l][i].first +
                        "' in level " + kLevelNames[l]);
      }
    }
    for (size_t i = 0; i < level_nodes[l].size(); ++i) {
      tree.names_[l].push_back(level_nodes[l][i].first);
      tree.name_to_index_[l][level_nodes[l][i].first] = static_cast<int>(i);
    }
    if (tree.names_[l].empty()) {
      throw TreeError(std::string("hierarchy: level ") + kLevelNames[l] + " is empty");
    }
  }

  auto load_strings = [&](const char* key, Level level) {
    for (const auto& s : doc[key]) {
      std::string name = s.get<std::string>();
      if (tree.name_to_index_[idx(level)].count(name)) {
        throw TreeError(std::string("hierarchy: duplicate entry '") + name + "' in " + key);
      }
      int i = static_cast<int>(tree.names_[idx(level)].size());
      tree.names_[idx(level)].push_back(name);
      tree.name_to_index_[idx(level)][name] = i;
    }
    if (tree.names_[idx(level)].empty()) {
      throw TreeError(std::string("hierarchy: '") + key + "' is empty");
    }
    // indices follow lexicographic order of names
    std::vector<std::string> sorted = tree.names_[idx(level)];
    std::sort(sorted.begin(), sorted.end());
    tree.names_[idx(level)] = sorted;
    tree.name_to_index_[idx(level)].clear();
    for (size_t i = 0; i < sorted.size(); ++i) {
      tree.name_to_index_[idx(level)][sorted[i]] = static_cast<int>(i);
    }
  };
  load_strings("properties", Level::P);
  load_strings("values", Level::V);

  // parent links by per-codebook index
  int na = tree.codebook_size(Level::A);
  int nb = tree.codebook_size(Level::B);
  int nc = tree.codebook_size(Level::C);
  tree.parent_b_.assign(nb, -1);
  tree.parent_c_.assign(nc, -1);
  tree.children_a_.assign(na, {});
  tree.children_b_.assign(nb, {});
  for (const auto& id : id_order) {
    const RawNode& r = by_id[id];
    if (r.depth == 0) continue;
    const RawNode& parent = by_id.at(r.parent);
    if (parent.depth != r.depth - 1) {
      throw TreeError("hierarchy: node '" + r.id + "' has parent '" + r.parent +
                      "' on the wrong level");
    }
    if (r.depth == 1) {
      int bi = tree.name_to_index_[1].at(r.name);
      int ai = tree.name_to_index_[0].at(parent.name);
      tree.parent_b_[bi] = ai;
      tree.children_a_[ai].push_back(bi);
    } else {
      int ci = tree.name_to_index_[2].at(r.name);
      int bi = tree.name_to_index_[1].at(parent.name);
      tree.parent_c_[ci] = bi;
      tree.children_b_[bi].push_back(ci);
    }
  }
  for (int b = 0; b < nb; ++b) {
    if (tree.parent_b_[b] < 0) {
      throw TreeError("hierarchy: level-B node '" + tree.names_[1][b] + "' has no parent");
    }
  }
  for (int c = 0; c < nc; ++c) {
    if (tree.parent_c_[c] < 0) {
      throw TreeError("hierarchy: level-C node '" + tree.names_[2][c] + "' has no parent");
    }
  }
  for (auto& v : tree.children_a_) std::sort(v.begin(), v.end());
  for (auto& v : tree.children_b_) std::sort(v.begin(), v.end());

  // allowances: leaf name -> property name -> value names
  tree.leaf_properties_.assign(nc, {});
  tree.leaf_values_.assign(nc, {});
  if (!doc["allowances"].is_object()) throw TreeError("hierarchy: 'allowances' must be an object");
  for (auto it = doc["allowances"].begin(); it != doc["allowances"].end(); ++it) {
    int ci = tree.index_of(Level::C, it.key());
    if (ci < 0) {
      throw TreeError("hierarchy: allowance for unknown leaf '" + it.key() + "'");
    }
    for (auto pit = it.value().begin(); pit != it.value().end(); ++pit) {
      int pi = tree.index_of(Level::P, pit.key());
      if (pi < 0) {
        throw TreeError("hierarchy: allowance under '" + it.key() +
                        "' names unknown property '" + pit.key() + "'");
      }
      std::vector<int> vals;
      for (const auto& vn : pit.value()) {
        int vi = tree.index_of(Level::V, vn.get<std::string>());
        if (vi < 0) {
          throw TreeError("hierarchy: allowance (" + it.key() + ", " + pit.key() +
                          ") names unknown value '" + vn.get<std::string>() + "'");
        }
        vals.push_back(vi);
      }
      if (vals.empty()) {
        throw TreeError("hierarchy: allowance (" + it.key() + ", " + pit.key() + ") is empty");
      }
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      if (tree.leaf_values_[ci].count(pi)) {
        throw TreeError("hierarchy: duplicate allowance (" + it.key() + ", " + pit.key() + ")");
      }
      tree.leaf_values_[ci][pi] = std::move(vals);
      tree.leaf_properties_[ci].push_back(pi);
    }
  }
  for (auto& v : tree.leaf_properties_) std::sort(v.begin(), v.end());

  tree.offsets_.assign(5, 0);
  int off = kNumSpecials;
  for (int l = 0; l < 5; ++l) {
    tree.offsets_[l] = off;
    off += static_cast<int>(tree.names_[l].size());
  }
  return tree;
}

// ---------------------------------------------------------------------------
// Codec

TokenSeq HierarchyTree::encode_label(const LabelTriplet& label) const {
  int ai = index_of(Level::A, label.category[0]);
  if (ai < 0) throw CodecError("unknown level-A name '" + label.category[0] + "'");
  int bi = index_of(Level::B, label.category[1]);
  if (bi < 0) throw CodecError("unknown level-B name '" + label.category[1] + "'");
  int ci = index_of(Level::C, label.category[2]);
  if (ci < 0) throw CodecError("unknown level-C name '" + label.category[2] + "'");
  if (parent_b_[bi] != ai) {
    throw CodecError("'" + label.category[1] + "' is not a child of '" + label.category[0] + "'");
  }
  if (parent_c_[ci] != bi) {
    throw CodecError("'" + label.category[2] + "' is not a child of '" + label.category[1] + "'");
  }
  int pi = index_of(Level::P, label.property);
  if (pi < 0) throw CodecError("unknown property '" + label.property + "'");
  int vi = index_of(Level::V, label.value);
  if (vi < 0) throw CodecError("unknown value '" + label.value + "'");
  if (!leaf_allows(ci, pi)) {
    throw CodecError("property '" + label.property + "' is not allowed under leaf '" +
                     label.category[2] + "'");
  }
  const auto& vals = values_of(ci, pi);
  if (!std::binary_search(vals.begin(), vals.end(), vi)) {
    throw CodecError("value '" + label.value + "' is not allowed for (" +
                     label.category[2] + ", " + label.property + ")");
  }
  TokenSeq seq;
  seq.ids = {kBos,
             unified_id(Level::A, ai),
             unified_id(Level::B, bi),
             unified_id(Level::C, ci),
             unified_id(Level::P, pi),
             unified_id(Level::V, vi),
             kEos};
  return seq;
}

LabelTriplet HierarchyTree::decode_tokens(const TokenSeq& seq) const {
  if (static_cast<int>(seq.ids.size()) != TokenSeq::kFull) {
    throw CodecError("malformed sequence: expected BOS + 5 payload tokens + EOS, got " +
                     std::to_string(seq.ids.size()) + " tokens");
  }
  if (seq.ids.front() != kBos) throw CodecError("malformed sequence: missing BOS");
  if (seq.ids.back() != kEos) throw CodecError("malformed sequence: missing EOS");
  constexpr Level expect[5] = {Level::A, Level::B, Level::C, Level::P, Level::V};
  int index[5];
  for (int i = 0; i < 5; ++i) {
    auto li = level_of(seq.ids[i + 1]);
    if (!li || li->first != expect[i]) {
      throw CodecError("token at payload position " + std::to_string(i) +
                       " is not a level-" + kLevelNames[static_cast<int>(expect[i])] + " token");
    }
    index[i] = li->second;
  }
  if (parent_b_[index[1]] != index[0]) {
    throw CodecError("'" + names_[1][index[1]] + "' is not a child of '" + names_[0][index[0]] + "'");
  }
  if (parent_c_[index[2]] != index[1]) {
    throw CodecError("'" + names_[2][index[2]] + "' is not a child of '" + names_[1][index[1]] + "'");
  }
  if (!leaf_allows(index[2], index[3])) {
    throw CodecError("property '" + names_[3][index[3]] + "' is not allowed under leaf '" +
                     names_[2][index[2]] + "'");
  }
  const auto& vals = values_of(index[2], index[3]);
  if (!std::binary_search(vals.begin(), vals.end(), index[4])) {
    throw CodecError("value '" + names_[4][index[4]] + "' is not allowed for (" +
                     names_[2][index[2]] + ", " + names_[3][index[3]] + ")");
  }
  LabelTriplet out;
  out.category = {names_[0][index[0]], names_[1][index[1]], names_[2][index[2]]};
  out.property = names_[3][index[3]];
  out.value = names_[4][index[4]];
  return out;
}

std::vector<int> HierarchyTree::valid_next_tokens(const std::vector<int>& prefix) const {
  if (prefix.empty() || prefix[0] != kBos) {
    throw CodecError("prefix must start with BOS");
  }
  if (static_cast<int>(prefix.size()) > TokenSeq::kFull) {
    throw CodecError("prefix longer than a complete sequence");
  }
  // validate the walked part and pull out per-level indices
  constexpr Level expect[5] = {Level::A, Level::B, Level::C, Level::P, Level::V};
  int index[5] = {-1, -1, -1, -1, -1};
  int payload = std::min<int>(static_cast<int>(prefix.size()) - 1, 5);
  for (int i = 0; i < payload; ++i) {
    auto li = level_of(prefix[i + 1]);
    if (!li || li->first != expect[i]) {
      throw CodecError("invalid prefix: position " + std::to_string(i + 1) +
                       " is not a level-" + kLevelNames[static_cast<int>(expect[i])] + " token");
    }
    index[i] = li->second;
  }
  if (payload >= 2 && parent_b_[index[1]] != index[0]) {
    throw CodecError("invalid prefix: B token is not a child of the A token");
  }
  if (payload >= 3 && parent_c_[index[2]] != index[1]) {
    throw CodecError("invalid prefix: C token is not a child of the B token");
  }
  if (payload >= 4 && !leaf_allows(index[2], index[3])) {
    throw CodecError("invalid prefix: property not allowed under the leaf");
  }
  if (payload >= 5) {
    const auto& vals = values_of(index[2], index[3]);
    if (!std::binary_search(vals.begin(), vals.end(), index[4])) {
      throw CodecError("invalid prefix: value not allowed for the (leaf, property) pair");
    }
  }
  if (static_cast<int>(prefix.size()) == TokenSeq::kFull) {
    if (prefix.back() != kEos) throw CodecError("invalid prefix: final token must be EOS");
    return {};
  }

  std::vector<int> out;
  switch (prefix.size()) {
    case 1:
      for (int a = 0; a < codebook_size(Level::A); ++a) out.push_back(unified_id(Level::A, a));
      break;
    case 2:
      for (int b : children_a_[index[0]]) out.push_back(unified_id(Level::B, b));
      break;
    case 3:
      for (int c : children_b_[index[1]]) out.push_back(unified_id(Level::C, c));
      break;
    case 4:
      for (int p : leaf_properties_[index[2]]) out.push_back(unified_id(Level::P, p));
      break;
    case 5:
      for (int v : values_of(index[2], index[3])) out.push_back(unified_id(Level::V, v));
      break;
    case 6:
      out.push_back(kEos);
      break;
    default:
      break;
  }
  return out;
}

std::vector<LabelTriplet> HierarchyTree::enumerate_labels() const {
  std::vector<LabelTriplet> out;
  for (int a = 0; a < codebook_size(Level::A); ++a) {
    for (int b : children_a_[a]) {
      for (int c : children_b_[b]) {
        for (int p : leaf_properties_[c]) {
          for (int v : values_of(c, p)) {
            out.push_back({{names_[0][a], names_[1][b], names_[2][c]},
                           names_[3][p],
                           names_[4][v]});
          }
        }
      }
    }
  }
  return out;
}

long HierarchyTree::count_labels() const {
  long n = 0;
  for (int c = 0; c < codebook_size(Level::C); ++c) {
    for (int p : leaf_properties_[c]) n += static_cast<long>(leaf_values_.at(c).at(p).size());
  }
  return n;
}

// ---------------------------------------------------------------------------
// Presets

std::string make_structural_preset(int a, int b, int c, int p, int v,
                                   const PresetPins& pins) {
  auto names_for = [&](Level level, int count, const char* tag) {
    const PresetPins::Pin* pin = nullptr;
    for (const auto& pi : pins.pins) {
      if (pi.level == level) {
        if (pin) throw ConfigError("make_structural_preset: one pin per level");
        pin = &pi;
      }
    }
    std::vector<std::string> names;
    int width = count > 100 ? 3 : 2;
    for (int i = 0; i < count; ++i) {
      if (pin && i == pin->index) {
        names.push_back(pin->name);
      } else if (pin && i < pin->index) {
        // '0' < letters < 'z': fillers sandwich the pinned name
        names.push_back(fmt_index((std::string("0") + tag).c_str(), i, width));
      } else if (pin) {
        names.push_back(fmt_index((std::string("z") + tag).c_str(), i, width));
      } else {
        names.push_back(fmt_index(tag, i, width));
      }
    }
    return names;
  };

  auto an = names_for(Level::A, a, "a");
  auto bn = names_for(Level::B, b, "b");
  auto cn = names_for(Level::C, c, "c");
  auto pn = names_for(Level::P, p, "p");
  auto vn = names_for(Level::V, v, "v");

  auto pinned_parent = [&](Level level) -> std::string {
    for (const auto& pi : pins.pins) {
      if (pi.level == level) return pi.parent;
    }
    return {};
  };
  auto pinned_name = [&](Level level) -> std::string {
    for (const auto& pi : pins.pins) {
      if (pi.level == level) return pi.name;
    }
    return {};
  };

  json nodes = json::array();
  for (int i = 0; i < a; ++i) {
    nodes.push_back({{"id", "A:" + an[i]}, {"name", an[i]}, {"parent", nullptr}});
  }
  for (int i = 0; i < b; ++i) {
    std::string parent = an[i % a];
    if (bn[i] == pinned_name(Level::B) && !pinned_parent(Level::B).empty()) {
      parent = pinned_parent(Level::B);
    }
    nodes.push_back({{"id", "B:" + bn[i]}, {"name", bn[i]}, {"parent", "A:" + parent}});
  }
  for (int i = 0; i < c; ++i) {
    std::string parent = bn[i % b];
    if (cn[i] == pinned_name(Level::C) && !pinned_parent(Level::C).empty()) {
      parent = pinned_parent(Level::C);
    }
    nodes.push_back({{"id", "C:" + cn[i]}, {"name", cn[i]}, {"parent", "B:" + parent}});
  }

  // every leaf gets one round-robin (property, value) so no branch dead-ends
  json allowances = json::object();
  for (int i = 0; i < c; ++i) {
    json props = json::object();
    props[pn[i % p]] = json::array({vn[i % v]});
    allowances[cn[i]] = props;
  }
  for (const auto& extra : pins.allow) {
    if (!allowances.contains(extra[0])) allowances[extra[0]] = json::object();
    if (!allowances[extra[0]].contains(extra[1])) {
      allowances[extra[0]][extra[1]] = json::array();
    }
    allowances[extra[0]][extra[1]].push_back(extra[2]);
  }

  json doc;
  doc["levels"] = {"level1", "level2", "level3"};
  doc["nodes"] = nodes;
  doc["properties"] = pn;
  doc["values"] = vn;
  doc["allowances"] = allowances;
  return doc.dump(2) + "\n";
}

std::string toy_hierarchy_json() {
  const std::vector<std::string> families = {"box", "cross", "diamond", "disc", "tri"};
  const std::vector<std::string> outlines = {"filled", "hollow", "cored"};
  const std::vector<std::string> patterns = {"plain", "striped", "checker"};
  const std::vector<std::string> colors = {"red",  "orange",  "yellow",  "lime",
                                           "green", "teal",   "cyan",    "azure",
                                           "blue", "violet",  "magenta", "rose"};
  const std::vector<std::string> sizes = {"small", "medium", "large"};
  const std::vector<std::string> textures = {"none", "speckle", "hatch", "rimdark", "rimlight"};
  const std::vector<std::string> orientations = {"deg0", "deg45", "deg90", "deg135"};

  json nodes = json::array();
  json allowances = json::object();
  std::vector<std::string> values = colors;
  values.insert(values.end(), sizes.begin(), sizes.end());
  values.insert(values.end(), textures.begin(), textures.end());
  values.insert(values.end(), orientations.begin(), orientations.end());

  for (const auto& f : families) {
    nodes.push_back({{"id", "A:" + f}, {"name", f}, {"parent", nullptr}});
    for (const auto& o : outlines) {
      std::string bo = f + "-" + o;
      nodes.push_back({{"id", "B:" + bo}, {"name", bo}, {"parent", "A:" + f}});
      for (const auto& pt : patterns) {
        std::string leaf = bo + "-" + pt;
        nodes.push_back({{"id", "C:" + leaf}, {"name", leaf}, {"parent", "B:" + bo}});
        json props = json::object();
        props["color"] = colors;
        props["size"] = sizes;
        // cored+checker leaves carry no texture attribute
        if (!(o == "cored" && pt == "checker")) props["texture"] = textures;
        // orientation is only visible on shapes with a drawn direction marker
        if (f == "box" || f == "cross" || f == "tri") props["orientation"] = orientations;
        allowances[leaf] = props;
      }
    }
  }

  json doc;
  doc["levels"] = {"family", "outline", "pattern"};
  doc["nodes"] = nodes;
  doc["properties"] = {"color", "orientation", "size", "texture"};
  doc["values"] = values;
  doc["allowances"] = allowances;
  return doc.dump(2) + "\n";
}

}  // namespace unidgf
