#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hmpa/data.hpp"
#include "hmpa/tensor.hpp"

namespace hmpa {

enum class HeadKind { cls, paired };
enum class Ablation { none, text_only, image_only };

std::string to_string(HeadKind k);
std::string to_string(Ablation a);
HeadKind head_kind_from_string(const std::string& s);
Ablation ablation_from_string(const std::string& s);

struct ModelConfig {
  std::size_t hidden_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 0;  // 0 = 4 * hidden_dim
  std::size_t vocab_size = 0;  // set from the vocab before init
  std::size_t max_text_len = 16;
  std::size_t max_regions = 8;
  std::size_t region_feat_dim = 16;
  HeadKind head_kind = HeadKind::cls;
  Ablation ablation = Ablation::none;
  double dropout_rate = 0.0;
  std::size_t pool_hidden = 0;  // 0 = hidden_dim
  bool share_pool = true;       // one attention-pool scorer for both halves
  bool allow_empty_caption = false;

  std::size_t ffn() const { return ffn_dim ? ffn_dim : 4 * hidden_dim; }
  std::size_t pool() const { return pool_hidden ? pool_hidden : hidden_dim; }
  void validate() const;  // throws input_error
};

void to_json(nlohmann::ordered_json& j, const ModelConfig& c);
void from_json(const nlohmann::ordered_json& j, ModelConfig& c);

struct JointSequence {
  std::vector<std::size_t> token_ids;  // text part, [CLS] ... [SEP]
  std::size_t num_regions = 0;
  std::size_t feat_dim = 0;
  std::vector<double> features;  // num_regions x feat_dim
  std::vector<double> boxes;     // num_regions x 4
  std::vector<double> mask;      // length num_regions + token count; 1 = real
  std::size_t length() const { return num_regions + token_ids.size(); }
};

// Text is taken from the record's OCR field or the caption, per use_caption.
JointSequence build_sequence(const ModelConfig& cfg, const Vocab& vocab, const MemeRecord& rec,
                             bool use_caption);

// Named parameter map; map iteration order (lexicographic) is the stable
// order used for seeded initialization and checkpoints.
ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed);

struct EncoderTrace {
  // attn[layer][head] is the post-softmax attention matrix (S x S).
  std::vector<std::vector<Tensor>> attn;
};

// The row-wise attention mask enters as additive -1e9 on masked keys.
Var embed_sequence(Graph& g, const ModelConfig& cfg, ParameterSet& params,
                   const JointSequence& seq, std::vector<double>* effective_mask);

Var encoder_forward(Graph& g, const ModelConfig& cfg, ParameterSet& params, Var x,
                    const std::vector<double>& mask, EncoderTrace* trace = nullptr);

// score_i = w . tanh(W h_i) over unmasked rows, softmax, convex combination.
// prefix selects the parameter group ("pool" or "pool_b").
Var attention_pool(Graph& g, ParameterSet& params, const std::string& prefix, Var hidden,
                   const std::vector<double>& mask);

struct PairedDetails {
  Tensor pooled_a;  // 1 x d
  Tensor pooled_b;  // 1 x d
  Tensor regions_a;  // region feature matrix fed to each half
  Tensor regions_b;
};

Var cls_forward(Graph& g, const ModelConfig& cfg, ParameterSet& params, const Vocab& vocab,
                const MemeRecord& rec);

Var paired_forward(Graph& g, const ModelConfig& cfg, ParameterSet& params, const Vocab& vocab,
                   const MemeRecord& rec, PairedDetails* details = nullptr);

// Dispatches on cfg.head_kind; logits shape 1 x 2.
Var model_forward(Graph& g, const ModelConfig& cfg, ParameterSet& params, const Vocab& vocab,
                  const MemeRecord& rec);

// softmax(logits)[1]; runs its own throwaway graph.
double predict_proba(const ModelConfig& cfg, ParameterSet& params, const Vocab& vocab,
                     const MemeRecord& rec);

}  // namespace hmpa
