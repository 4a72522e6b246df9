#include "unidgf/generator.hpp"

#include <algorithm>
#include <cmath>

namespace unidgf {

Generator::Generator(const GeneratorConfig& cfg, ParamStore& store, Rng& rng,
                     bool requires_grad)
    : cfg_(cfg) {
  if (cfg.vocab <= 0) throw ConfigError("generator: vocabulary size not set");
  if (cfg.dim % cfg.heads != 0) throw ConfigError("generator: dim must divide by heads");
  tok_emb_ = store.get_or_create("gen.tok_emb", {cfg.vocab, cfg.dim}, rng, 0.02f,
                                 requires_grad);
  pos_emb_ = store.get_or_create("gen.pos_emb", {cfg.max_len, cfg.dim}, rng, 0.02f,
                                 requires_grad);
  if (cfg.arch == GeneratorArch::EncoderDecoder) {
    for (int l = 0; l < cfg.enc_layers; ++l) {
      std::string base = "gen.enc" + std::to_string(l);
      EncLayer layer;
      layer.self_attn = make_attention(store, base + ".attn", cfg.dim, cfg.heads, rng,
                                       requires_grad);
      layer.ln1 = make_layer_norm(store, base + ".ln1", cfg.dim, rng, requires_grad);
      layer.ff = make_ffn(store, base + ".ff", cfg.dim, cfg.ffn, rng, requires_grad);
      layer.ln2 = make_layer_norm(store, base + ".ln2", cfg.dim, rng, requires_grad);
      enc_layers_.push_back(std::move(layer));
    }
  }
  int n_dec = cfg.arch == GeneratorArch::EncoderDecoder ? cfg.dec_layers
                                                        : cfg.enc_layers + cfg.dec_layers;
  for (int l = 0; l < n_dec; ++l) {
    std::string base = "gen.dec" + std::to_string(l);
    DecLayer layer;
    layer.self_attn = make_attention(store, base + ".attn", cfg.dim, cfg.heads, rng,
                                     requires_grad);
    layer.ln1 = make_layer_norm(store, base + ".ln1", cfg.dim, rng, requires_grad);
    if (cfg.arch == GeneratorArch::EncoderDecoder) {
      layer.cross_attn = make_attention(store, base + ".cross", cfg.dim, cfg.heads, rng,
                                        requires_grad);
      layer.ln2 = make_layer_norm(store, base + ".ln2", cfg.dim, rng, requires_grad);
    }
    layer.ff = make_ffn(store, base + ".ff", cfg.dim, cfg.ffn, rng, requires_grad);
    layer.ln3 = make_layer_norm(store, base + ".ln3", cfg.dim, rng, requires_grad);
    dec_layers_.push_back(std::move(layer));
  }
  head_ = make_linear(store, "gen.head", cfg.dim, cfg.vocab, rng, requires_grad);
}

Generator::Encoded Generator::encode(const Tensor& e_obj) const {
  if (e_obj.rank() != 3 || e_obj.dim(2) != cfg_.dim) {
    throw Error("generator: E_obj must be [U, Q, dim]");
  }
  if (cfg_.arch == GeneratorArch::DecoderOnly) return Encoded{e_obj};
  Tensor x = e_obj;
  for (const EncLayer& layer : enc_layers_) {
    x = apply_layer_norm(add(x, attention(x, x, layer.self_attn)), layer.ln1);
    x = apply_layer_norm(add(x, ffn(x, layer.ff)), layer.ln2);
  }
  return Encoded{x};
}

Tensor Generator::forward_logits(const Encoded& enc,
                                 const std::vector<std::vector<int>>& prefixes,
                                 const std::vector<int>& obj_of_seq) const {
  if (prefixes.empty()) throw Error("generator: empty batch");
  int b = static_cast<int>(prefixes.size());
  int t = static_cast<int>(prefixes[0].size());
  if (t < 1 || t > cfg_.max_len - 1) {
    throw Error("generator: prefix length out of range");
  }
  if (static_cast<int>(obj_of_seq.size()) != b) {
    throw Error("generator: obj_of_seq size mismatch");
  }
  std::vector<int> flat;
  flat.reserve(static_cast<size_t>(b) * t);
  for (const auto& p : prefixes) {
    if (static_cast<int>(p.size()) != t) throw Error("generator: ragged prefix batch");
    for (int id : p) {
      if (id < 0 || id >= cfg_.vocab) throw Error("generator: token id outside vocabulary");
      flat.push_back(id);
    }
  }

  Tensor x = embedding(tok_emb_, flat, {b, t});
  Tensor pos = slice(pos_emb_, 0, 0, t);
  x = add(x, pos);

  if (cfg_.arch == GeneratorArch::EncoderDecoder) {
    Tensor mask = causal_mask(t);
    for (const DecLayer& layer : dec_layers_) {
      x = apply_layer_norm(add(x, attention(x, x, layer.self_attn, mask)), layer.ln1);
      ProjectedKv kv = project_kv(enc.states, layer.cross_attn);
      x = apply_layer_norm(
          add(x, attention_with_kv(x, gather_kv(kv, obj_of_seq), layer.cross_attn)),
          layer.ln2);
      x = apply_layer_norm(add(x, ffn(x, layer.ff)), layer.ln3);
    }
    return linear(x, head_);
  }

  // decoder-only: E_obj rows become a mutually-visible prefix segment
  int q = enc.states.dim(1);
  Tensor prefix = index_select0(enc.states, obj_of_seq);  // [B, Q, D]
  x = concat({prefix, x}, 1);                             // [B, Q+T, D]
  Tensor mask = prefix_causal_mask(q, t);
  for (const DecLayer& layer : dec_layers_) {
    x = apply_layer_norm(add(x, attention(x, x, layer.self_attn, mask)), layer.ln1);
    x = apply_layer_norm(add(x, ffn(x, layer.ff)), layer.ln3);
  }
  return linear(slice(x, 1, q, t), head_);
}

// ---------------------------------------------------------------------------
// Training

Scalar train_step(const Generator& gen, const HierarchyTree& tree, const Tensor& e_obj,
                  const std::vector<TokenSeq>& targets, const std::vector<int>& obj_of_seq,
                  AdamOptimizer& opt) {
  if (targets.empty()) throw Error("train_step: empty batch");
  std::vector<std::vector<int>> inputs;
  std::vector<int> flat_targets;
  for (const TokenSeq& seq : targets) {
    tree.decode_tokens(seq);  // throws CodecError on invalid targets
    inputs.emplace_back(seq.ids.begin(), seq.ids.end() - 1);
    flat_targets.insert(flat_targets.end(), seq.ids.begin() + 1, seq.ids.end());
  }
  int b = static_cast<int>(targets.size());
  int t = TokenSeq::kFull - 1;

  opt.zero_grad();
  Generator::Encoded enc = gen.encode(e_obj);
  Tensor logits = gen.forward_logits(enc, inputs, obj_of_seq);
  Tensor loss =
      softmax_cross_entropy(reshape(logits, {b * t, gen.config().vocab}), flat_targets);
  backward(loss);
  opt.step();
  return loss.item();
}

// ---------------------------------------------------------------------------
// Constrained decoding

namespace {

struct Hyp {
  std::vector<int> tokens;
  double logp = 0;
};

// log-softmax over the valid subset only (mask-to--inf semantics)
double masked_lse(const Scalar* row, const std::vector<int>& valid) {
  double mx = -1e300;
  for (int id : valid) mx = std::max(mx, static_cast<double>(row[id]));
  double sum = 0;
  for (int id : valid) sum += std::exp(static_cast<double>(row[id]) - mx);
  return mx + std::log(sum);
}

// beam expansion over payload steps [depth] starting from BOS
std::vector<Hyp> beam_expand(const Generator& gen, const Generator::Encoded& enc,
                             int obj_row, const HierarchyTree& tree, int beam, int depth) {
  if (beam < 1) throw Error("beam_search: beam width must be >= 1");
  std::vector<Hyp> hyps = {{{kBos}, 0.0}};
  for (int step = 0; step < depth; ++step) {
    std::vector<std::vector<int>> prefixes;
    std::vector<int> rows;
    for (const Hyp& h : hyps) {
      prefixes.push_back(h.tokens);
      rows.push_back(obj_row);
    }
    Tensor logits = gen.forward_logits(enc, prefixes, rows);
    int t = static_cast<int>(prefixes[0].size());
    int v = gen.config().vocab;

    std::vector<Hyp> cands;
    for (size_t i = 0; i < hyps.size(); ++i) {
      const Scalar* row = logits.values().data() + (i * t + (t - 1)) * v;
      std::vector<int> valid = tree.valid_next_tokens(hyps[i].tokens);
      if (valid.empty()) {
        throw Error("beam_search: no valid continuation (tree has a dead branch)");
      }
      double lse = masked_lse(row, valid);
      for (int id : valid) {
        Hyp ext = hyps[i];
        ext.tokens.push_back(id);
        ext.logp += static_cast<double>(row[id]) - lse;
        cands.push_back(std::move(ext));
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Hyp& a, const Hyp& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      return a.tokens < b.tokens;  // deterministic tie-break by token ids
    });
    if (static_cast<int>(cands.size()) > beam) cands.resize(beam);
    hyps = std::move(cands);
  }
  return hyps;
}

}  // namespace

std::vector<ScoredSeq> beam_search(const Generator& gen, const Generator::Encoded& enc,
                                   int obj_row, const HierarchyTree& tree, int beam,
                                   int top_m) {
  if (top_m < 1 || top_m > beam) throw Error("beam_search: need 1 <= top_m <= beam");
  // five payload steps plus the forced EOS (which scores exactly zero)
  std::vector<Hyp> hyps =
      beam_expand(gen, enc, obj_row, tree, beam, TokenSeq::kPayload + 1);
  std::vector<ScoredSeq> out;
  for (int i = 0; i < top_m && i < static_cast<int>(hyps.size()); ++i) {
    out.push_back({TokenSeq{hyps[i].tokens}, hyps[i].logp});
  }
  return out;
}

PropertyDecodeResult property_conditioned_decode(const Generator& gen,
                                                 const Generator::Encoded& enc,
                                                 int obj_row, const HierarchyTree& tree,
                                                 const std::string& property, int beam) {
  int p_index = tree.index_of(Level::P, property);
  if (p_index < 0) throw CodecError("unknown property '" + property + "'");

  std::vector<Hyp> hyps = beam_expand(gen, enc, obj_row, tree, beam, 3);
  const Hyp& best = hyps.front();

  PropertyDecodeResult out;
  out.category_tokens = {best.tokens[1], best.tokens[2], best.tokens[3]};
  out.category_logp = best.logp;

  auto leaf = tree.level_of(best.tokens[3]);
  int c_index = leaf->second;
  if (!tree.leaf_allows(c_index, p_index)) {
    return out;  // no-attribute outcome
  }

  std::vector<int> prefix = best.tokens;
  prefix.push_back(tree.unified_id(Level::P, p_index));
  Tensor logits = gen.forward_logits(enc, {prefix}, {obj_row});
  int t = static_cast<int>(prefix.size());
  const Scalar* row = logits.values().data() + (t - 1) * gen.config().vocab;

  const std::vector<int>& values = tree.values_of(c_index, p_index);
  std::vector<int> valid;
  for (int vi : values) valid.push_back(tree.unified_id(Level::V, vi));
  double lse = masked_lse(row, valid);
  int best_tok = valid[0];
  for (int id : valid) {
    if (row[id] > row[best_tok]) best_tok = id;  // ties keep the lower id
  }
  out.has_value = true;
  out.value_token = best_tok;
  out.value_logp = static_cast<double>(row[best_tok]) - lse;
  return out;
}

double sequence_logp(const Generator& gen, const Generator::Encoded& enc, int obj_row,
                     const HierarchyTree& tree, const TokenSeq& seq) {
  tree.decode_tokens(seq);
  std::vector<int> input(seq.ids.begin(), seq.ids.end() - 1);
  Tensor logits = gen.forward_logits(enc, {input}, {obj_row});
  int v = gen.config().vocab;
  double total = 0;
  std::vector<int> prefix = {kBos};
  for (int step = 0; step < TokenSeq::kFull - 1; ++step) {
    const Scalar* row = logits.values().data() + step * v;
    std::vector<int> valid = tree.valid_next_tokens(prefix);
    int tok = seq.ids[step + 1];
    total += static_cast<double>(row[tok]) - masked_lse(row, valid);
    prefix.push_back(tok);
  }
  return total;
}

}  // namespace unidgf
