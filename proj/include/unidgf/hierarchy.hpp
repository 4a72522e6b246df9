#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unidgf/common.hpp"

namespace unidgf {

// Token vocabulary layout: [BOS, EOS | A.. | B.. | C.. | P.. | V..].
// Within each codebook, token indices follow the lexicographic order of the
// node names, so encodings are reproducible across runs.
enum class Level { A = 0, B = 1, C = 2, P = 3, V = 4 };

constexpr int kBos = 0;
constexpr int kEos = 1;
constexpr int kNumSpecials = 2;

// One <3,1,1> sequence in unified token ids, including BOS/EOS.
struct TokenSeq {
  std::vector<int> ids;

  static constexpr int kPayload = 5;  // a b c p v
  static constexpr int kFull = kPayload + 2;

  bool operator==(const TokenSeq&) const = default;
};

// (a,b,c) path plus one property/value pair, by name.
struct LabelTriplet {
  std::array<std::string, 3> category;
  std::string property;
  std::string value;

  bool operator==(const LabelTriplet&) const = default;
};

// Category-attribute tree: three category levels with parent links, property
// and value codebooks, and per-leaf (property -> allowed values) allowances.
// Immutable after build; safe for concurrent reads.
class HierarchyTree {
 public:
  // Parses and validates the JSON hierarchy document (see README for the
  // schema). Throws TreeError naming the offending node.
  static HierarchyTree from_json_text(const std::string& text);
  static HierarchyTree from_file(const std::string& path);

  int codebook_size(Level level) const { return static_cast<int>(names_[idx(level)].size()); }
  int vocab_size() const;

  // unified id <-> per-codebook index
  int unified_id(Level level, int index) const;
  std::optional<std::pair<Level, int>> level_of(int unified) const;

  int index_of(Level level, const std::string& name) const;  // -1 if absent
  const std::string& name_of(Level level, int index) const;

  // parent index one level up (levels B and C only)
  int parent_of(Level level, int index) const;
  const std::vector<int>& children_of(Level level, int index) const;  // A or B

  // allowances at leaf granularity, by per-codebook index
  const std::vector<int>& properties_of_leaf(int c_index) const;
  const std::vector<int>& values_of(int c_index, int p_index) const;
  bool leaf_allows(int c_index, int p_index) const;

  TokenSeq encode_label(const LabelTriplet& label) const;
  LabelTriplet decode_tokens(const TokenSeq& seq) const;

  // Exactly the unified ids that can extend the partial sequence. prefix must
  // start with BOS and be a valid partial path; a complete sequence yields {}.
  std::vector<int> valid_next_tokens(const std::vector<int>& prefix) const;

  // Every encodable label, in DFS order over the trie.
  std::vector<LabelTriplet> enumerate_labels() const;
  long count_labels() const;

  const std::string& source_text() const { return source_text_; }

 private:
  static constexpr int idx(Level l) { return static_cast<int>(l); }

  // per level: sorted names; maps; parent/children structure
  std::array<std::vector<std::string>, 5> names_;
  std::array<std::map<std::string, int>, 5> name_to_index_;
  std::vector<int> parent_b_;                 // B index -> A index
  std::vector<int> parent_c_;                 // C index -> B index
  std::vector<std::vector<int>> children_a_;  // A index -> B indices (sorted)
  std::vector<std::vector<int>> children_b_;  // B index -> C indices (sorted)
  // leaf -> sorted property indices; (leaf, property) -> sorted value indices
  std::vector<std::vector<int>> leaf_properties_;
  std::vector<std::map<int, std::vector<int>>> leaf_values_;
  std::vector<int> offsets_;  // unified-id offset per level
  std::string source_text_;
};

// Synthetic structural preset with the given codebook geometry. Optional
// pinned names are inserted at controlled lexicographic positions.
struct PresetPins {
  // (level, index, name, parent-name): parent resolved after placement
  struct Pin {
    Level level;
    int index;
    std::string name;
    std::string parent;
  };
  std::vector<Pin> pins;
  // extra allowance entries leaf-name -> property-name -> value-names
  std::vector<std::array<std::string, 3>> allow;
};

std::string make_structural_preset(int a, int b, int c, int p, int v,
                                   const PresetPins& pins = {});

// The toy hierarchy used by the synthetic dataset: 5 shape families x 3 fill
// topologies x 3 patterns, with color/size/texture/orientation attributes.
std::string toy_hierarchy_json();

}  // namespace unidgf
