#pragma once

#include <string>
#include <vector>

#include "unidgf/hierarchy.hpp"
#include "unidgf/nn.hpp"
#include "unidgf/tensor.hpp"

namespace unidgf {

enum class GeneratorArch { EncoderDecoder, DecoderOnly };

struct GeneratorConfig {
  GeneratorArch arch = GeneratorArch::EncoderDecoder;
  int dim = 128;
  int enc_layers = 2;  // encoder depth; causal-stack depth for decoder-only
  int dec_layers = 2;
  int heads = 4;
  int ffn = 256;
  int vocab = 0;
  int max_len = TokenSeq::kFull;
  int context_tokens = 128;  // object-embedding length Q
};

// Autoregressive semantic generator over the unified vocabulary. The
// encoder-decoder variant consumes E_obj as the encoder input sequence; the
// decoder-only variant prepends E_obj as a mutually-visible causal prefix.
// Both share the decoding interface.
class Generator {
 public:
  Generator(const GeneratorConfig& cfg, ParamStore& store, Rng& rng,
            bool requires_grad = true);

  const GeneratorConfig& config() const { return cfg_; }

  // Object-side computation, shared by every sequence of an object. For the
  // encoder-decoder this runs the encoder; for decoder-only it is E_obj.
  struct Encoded {
    Tensor states;  // [U, Q, D]
  };
  Encoded encode(const Tensor& e_obj) const;

  // Teacher-forced logits for B token prefixes of equal length T.
  // obj_of_seq maps each sequence to its row in enc.states.
  // Returns [B, T, vocab]: position t scores the token following prefix[t].
  Tensor forward_logits(const Encoded& enc, const std::vector<std::vector<int>>& prefixes,
                        const std::vector<int>& obj_of_seq) const;

 private:
  struct EncLayer {
    AttentionParams self_attn;
    LayerNormParams ln1;
    FfnParams ff;
    LayerNormParams ln2;
  };
  struct DecLayer {
    AttentionParams self_attn;
    LayerNormParams ln1;
    AttentionParams cross_attn;  // encoder-decoder only
    LayerNormParams ln2;
    FfnParams ff;
    LayerNormParams ln3;
  };

  GeneratorConfig cfg_;
  Tensor tok_emb_;  // [vocab, D]
  Tensor pos_emb_;  // [max_len, D]
  std::vector<EncLayer> enc_layers_;
  std::vector<DecLayer> dec_layers_;
  LinearParams head_;
};

// One teacher-forced NTP step: cross-entropy over payload+EOS positions, one
// Adam update on every trainable parameter reachable from the loss (generator
// plus whatever produced e_obj). Targets are validated against the tree.
Scalar train_step(const Generator& gen, const HierarchyTree& tree, const Tensor& e_obj,
                  const std::vector<TokenSeq>& targets, const std::vector<int>& obj_of_seq,
                  AdamOptimizer& opt);

struct ScoredSeq {
  TokenSeq seq;
  double logp = 0;
};

// Trie-constrained beam search from BOS to EOS. Invalid continuations are
// masked to -inf before normalization, so every returned sequence decodes;
// ranking is by cumulative log-probability with token-id tie-breaks.
std::vector<ScoredSeq> beam_search(const Generator& gen, const Generator::Encoded& enc,
                                   int obj_row, const HierarchyTree& tree, int beam,
                                   int top_m);

struct PropertyDecodeResult {
  bool has_value = false;
  std::vector<int> category_tokens;  // unified ids [a, b, c]
  double category_logp = 0;
  int value_token = -1;
  double value_logp = 0;  // log p(value | masked to the (c,p) allowance)

  double total_logp() const { return category_logp + (has_value ? value_logp : 0.0); }
};

// Decode (a,b,c) by constrained beam search, force-append the property, then
// pick the best value among the (c, property) allowance. Reports a
// no-attribute outcome when the decoded leaf does not allow the property.
// The forced property step contributes nothing to the score.
PropertyDecodeResult property_conditioned_decode(const Generator& gen,
                                                 const Generator::Encoded& enc,
                                                 int obj_row, const HierarchyTree& tree,
                                                 const std::string& property, int beam);

// Exhaustive-enumeration scorer used as the beam-search oracle and for small
// diagnostics: scores one full sequence by teacher forcing with the same
// masked normalization the beam applies.
double sequence_logp(const Generator& gen, const Generator::Encoded& enc, int obj_row,
                     const HierarchyTree& tree, const TokenSeq& seq);

}  // namespace unidgf
