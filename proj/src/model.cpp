#include "hmpa/model.hpp"

#include <cmath>

#include "hmpa/error.hpp"
#include "hmpa/rng.hpp"

namespace hmpa {

using nlohmann::ordered_json;

std::string to_string(HeadKind k) { return k == HeadKind::cls ? "cls" : "paired"; }

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::text_only: return "text_only";
    default: return "image_only";
  }
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "cls") return HeadKind::cls;
  if (s == "paired") return HeadKind::paired;
  throw input_error("head_kind must be 'cls' or 'paired', got '" + s + "'");
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "none") return Ablation::none;
  if (s == "text_only") return Ablation::text_only;
  if (s == "image_only") return Ablation::image_only;
  throw input_error("ablation must be 'none', 'text_only' or 'image_only', got '" + s + "'");
}

void ModelConfig::validate() const {
  if (hidden_dim < 1) throw input_error("hidden_dim must be at least 1");
  if (num_heads < 1) throw input_error("num_heads must be at least 1");
  if (hidden_dim % num_heads != 0) {
    throw input_error("hidden_dim must be divisible by num_heads");
  }
  if (max_text_len < 3) throw input_error("max_text_len must be at least 3");
  if (max_regions < 1) throw input_error("max_regions must be at least 1");
  if (region_feat_dim < 1) throw input_error("region_feat_dim must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw input_error("dropout_rate must lie in [0,1)");
  }
}

void to_json(ordered_json& j, const ModelConfig& c) {
  j = ordered_json{{"hidden_dim", c.hidden_dim},
                   {"num_layers", c.num_layers},
                   {"num_heads", c.num_heads},
                   {"ffn_dim", c.ffn_dim},
                   {"vocab_size", c.vocab_size},
                   {"max_text_len", c.max_text_len},
                   {"max_regions", c.max_regions},
                   {"region_feat_dim", c.region_feat_dim},
                   {"head_kind", to_string(c.head_kind)},
                   {"ablation", to_string(c.ablation)},
                   {"dropout_rate", c.dropout_rate},
                   {"pool_hidden", c.pool_hidden},
                   {"share_pool", c.share_pool},
                   {"allow_empty_caption", c.allow_empty_caption}};
}

void from_json(const ordered_json& j, ModelConfig& c) {
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_text_len = j.at("max_text_len").get<std::size_t>();
  c.max_regions = j.at("max_regions").get<std::size_t>();
  c.region_feat_dim = j.at("region_feat_dim").get<std::size_t>();
  c.head_kind = head_kind_from_string(j.at("head_kind").get<std::string>());
  c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.pool_hidden = j.at("pool_hidden").get<std::size_t>();
  c.share_pool = j.at("share_pool").get<bool>();
  c.allow_empty_caption = j.at("allow_empty_caption").get<bool>();
}

JointSequence build_sequence(const ModelConfig& cfg, const Vocab& vocab, const MemeRecord& rec,
                             bool use_caption) {
  if (rec.num_regions > cfg.max_regions) {
    throw input_error("record " + rec.id + " has " + std::to_string(rec.num_regions) +
                      " regions, max_regions is " + std::to_string(cfg.max_regions));
  }
  if (rec.feat_dim != cfg.region_feat_dim) {
    throw input_error("record " + rec.id + " has feature dim " + std::to_string(rec.feat_dim) +
                      ", model expects " + std::to_string(cfg.region_feat_dim));
  }
  JointSequence seq;
  seq.token_ids = tokenize(vocab, use_caption ? rec.caption : rec.text, cfg.max_text_len);
  seq.num_regions = rec.num_regions;
  seq.feat_dim = rec.feat_dim;
  seq.features = rec.features;
  seq.boxes = rec.boxes;
  seq.mask.assign(seq.length(), 1.0);
  return seq;
}

namespace {

Var P(Graph& g, ParameterSet& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw invariant_error("missing parameter: " + name);
  return g.leaf(it->second);
}

void add_param(ParameterSet& ps, const std::string& name, std::vector<std::size_t> shape) {
  auto t = make_tensor(std::move(shape));
  t->requires_grad = true;
  ps.emplace(name, std::move(t));
}

}  // namespace

ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.vocab_size < 4) throw input_error("vocab_size must cover the reserved tokens");
  const std::size_t d = cfg.hidden_dim;
  ParameterSet ps;
  add_param(ps, "embed.token", {cfg.vocab_size, d});
  add_param(ps, "embed.pos", {cfg.max_text_len, d});
  add_param(ps, "embed.seg", {2, d});
  add_param(ps, "embed.region.weight", {cfg.region_feat_dim + 5, d});
  add_param(ps, "embed.region.bias", {d});
  add_param(ps, "embed.ln.gamma", {d});
  add_param(ps, "embed.ln.beta", {d});
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l) + ".";
    for (const char* name : {"q", "k", "v", "out"}) {
      add_param(ps, pre + "attn." + name + ".weight", {d, d});
      add_param(ps, pre + "attn." + name + ".bias", {d});
    }
    add_param(ps, pre + "ln1.gamma", {d});
    add_param(ps, pre + "ln1.beta", {d});
    add_param(ps, pre + "ln2.gamma", {d});
    add_param(ps, pre + "ln2.beta", {d});
    add_param(ps, pre + "ffn.in.weight", {d, cfg.ffn()});
    add_param(ps, pre + "ffn.in.bias", {cfg.ffn()});
    add_param(ps, pre + "ffn.out.weight", {cfg.ffn(), d});
    add_param(ps, pre + "ffn.out.bias", {d});
  }
  add_param(ps, "pool.proj.weight", {d, cfg.pool()});
  add_param(ps, "pool.score.weight", {cfg.pool(), 1});
  if (cfg.head_kind == HeadKind::paired && !cfg.share_pool) {
    add_param(ps, "pool_b.proj.weight", {d, cfg.pool()});
    add_param(ps, "pool_b.score.weight", {cfg.pool(), 1});
  }
  const std::size_t head_in = cfg.head_kind == HeadKind::paired ? 2 * d : d;
  add_param(ps, "head.hidden.weight", {head_in, d});
  add_param(ps, "head.hidden.bias", {d});
  add_param(ps, "head.out.weight", {d, 2});
  add_param(ps, "head.out.bias", {2});

  auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  Rng rng(seed);
  for (auto& [name, t] : ps) {
    if (ends_with(name, ".gamma")) {
      std::fill(t->data.begin(), t->data.end(), 1.0);
    } else if (ends_with(name, ".bias") || ends_with(name, ".beta")) {
      // zeros already
    } else if (name.rfind("head.out.", 0) == 0) {
      // final layer zeroed: training starts at probability 0.5
    } else {
      for (double& v : t->data) v = 0.02 * rand_normal(rng);
    }
  }
  return ps;
}

namespace {

Tensor region_input_matrix(const JointSequence& seq) {
  const std::size_t K = seq.num_regions, D = seq.feat_dim;
  Tensor m({K, D + 5});
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < D; ++j) m.at(k, j) = seq.features[k * D + j];
    const double* b = &seq.boxes[k * 4];
    for (std::size_t j = 0; j < 4; ++j) m.at(k, D + j) = b[j];
    m.at(k, D + 4) = (b[2] - b[0]) * (b[3] - b[1]);
  }
  return m;
}

}  // namespace

Var embed_sequence(Graph& g, const ModelConfig& cfg, ParameterSet& params,
                   const JointSequence& seq, std::vector<double>* effective_mask) {
  const std::size_t K = seq.num_regions, T = seq.token_ids.size();
  if (K > cfg.max_regions) throw input_error("sequence exceeds max_regions");
  if (T > cfg.max_text_len) throw input_error("text exceeds max_text_len");
  if (T < 2) throw input_error("text part must contain at least [CLS][SEP]");
  if (seq.mask.size() != K + T) throw invariant_error("mask length mismatch");
  for (std::size_t id : seq.token_ids) {
    if (id >= cfg.vocab_size) {
      throw input_error("token id " + std::to_string(id) + " outside vocab of size " +
                        std::to_string(cfg.vocab_size));
    }
  }

  Var region_in = g.constant(region_input_matrix(seq));
  Var regions = add_rowvec(matmul(region_in, P(g, params, "embed.region.weight")),
                           P(g, params, "embed.region.bias"));
  regions = add(regions, embed_rows(P(g, params, "embed.seg"), std::vector<std::size_t>(K, 0)));

  std::vector<std::size_t> positions(T);
  for (std::size_t t = 0; t < T; ++t) positions[t] = t;
  Var text = embed_rows(P(g, params, "embed.token"), seq.token_ids);
  text = add(text, embed_rows(P(g, params, "embed.pos"), positions));
  text = add(text, embed_rows(P(g, params, "embed.seg"), std::vector<std::size_t>(T, 1)));

  Var x = concat_rows({regions, text});

  std::vector<double> mask = seq.mask;
  if (cfg.ablation != Ablation::none) {
    Tensor keep({K + T, 1}, 1.0);
    if (cfg.ablation == Ablation::text_only) {
      for (std::size_t k = 0; k < K; ++k) {
        keep.data[k] = 0.0;
        mask[k] = 0.0;
      }
    } else {
      for (std::size_t t = K; t < K + T; ++t) {
        keep.data[t] = 0.0;
        mask[t] = 0.0;
      }
    }
    x = mul_colvec(x, g.constant(std::move(keep)));
  }
  x = layer_norm(x, P(g, params, "embed.ln.gamma"), P(g, params, "embed.ln.beta"));
  if (effective_mask) *effective_mask = std::move(mask);
  return x;
}

namespace {

Tensor key_mask_bias(const std::vector<double>& mask) {
  const std::size_t S = mask.size();
  Tensor bias({S, S});
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      if (mask[j] == 0.0) bias.at(i, j) = -1e9;
    }
  }
  return bias;
}

Var linear(Graph& g, ParameterSet& params, const std::string& pre, Var x) {
  return add_rowvec(matmul(x, P(g, params, pre + ".weight")), P(g, params, pre + ".bias"));
}

}  // namespace

Var encoder_forward(Graph& g, const ModelConfig& cfg, ParameterSet& params, Var x,
                    const std::vector<double>& mask, EncoderTrace* trace) {
  const std::size_t d = cfg.hidden_dim, H = cfg.num_heads, dh = d / H;
  const std::size_t S = x.tensor().rows();
  if (x.tensor().cols() != d || mask.size() != S) {
    throw invariant_error("encoder input shape inconsistent with config");
  }
  if (cfg.num_layers == 0) return x;
  Var bias = g.constant(key_mask_bias(mask));
  if (trace) trace->attn.assign(cfg.num_layers, {});
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l) + ".";
    Var h = layer_norm(x, P(g, params, pre + "ln1.gamma"), P(g, params, pre + "ln1.beta"));
    Var q = linear(g, params, pre + "attn.q", h);
    Var k = linear(g, params, pre + "attn.k", h);
    Var v = linear(g, params, pre + "attn.v", h);
    std::vector<Var> ctx;
    for (std::size_t hd = 0; hd < H; ++hd) {
      Var qh = slice_cols(q, hd * dh, (hd + 1) * dh);
      Var kh = slice_cols(k, hd * dh, (hd + 1) * dh);
      Var vh = slice_cols(v, hd * dh, (hd + 1) * dh);
      Var scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), bias);
      Var weights = softmax_rows(scores);
      if (trace) trace->attn[l].push_back(weights.tensor());
      ctx.push_back(matmul(weights, vh));
    }
    Var attn_out = linear(g, params, pre + "attn.out", concat_cols(ctx));
    x = add(x, attn_out);

    Var h2 = layer_norm(x, P(g, params, pre + "ln2.gamma"), P(g, params, pre + "ln2.beta"));
    Var ffn = linear(g, params, pre + "ffn.out", gelu(linear(g, params, pre + "ffn.in", h2)));
    x = add(x, ffn);
  }
  return x;
}

Var attention_pool(Graph& g, ParameterSet& params, const std::string& prefix, Var hidden,
                   const std::vector<double>& mask) {
  const std::size_t S = hidden.tensor().rows();
  if (mask.size() != S) throw invariant_error("pool mask length mismatch");
  bool any = false;
  for (double m : mask) any = any || m != 0.0;
  if (!any) throw input_error("attention pooling over a fully masked sequence");

  Var scores = matmul(tanh(matmul(hidden, P(g, params, prefix + ".proj.weight"))),
                      P(g, params, prefix + ".score.weight"));
  Tensor bias({1, S});
  for (std::size_t i = 0; i < S; ++i) {
    if (mask[i] == 0.0) bias.at(0, i) = -1e9;
  }
  Var row = add(transpose(scores), g.constant(std::move(bias)));
  Var weights = softmax_rows(row);
  return matmul(weights, hidden);
}

namespace {

Var mlp_head(Graph& g, ParameterSet& params, Var x) {
  return linear(g, params, "head.out", gelu(linear(g, params, "head.hidden", x)));
}

}  // namespace

Var cls_forward(Graph& g, const ModelConfig& cfg, ParameterSet& params, const Vocab& vocab,
                const MemeRecord& rec) {
  JointSequence seq = build_sequence(cfg, vocab, rec, /*use_caption=*/false);
  std::vector<double> mask;
  Var x = embed_sequence(g, cfg, params, seq, &mask);
  Var enc = encoder_forward(g, cfg, params, x, mask);
  Var cls_h = slice_rows(enc, seq.num_regions, seq.num_regions + 1);
  return mlp_head(g, params, cls_h);
}

Var paired_forward(Graph& g, const ModelConfig& cfg, ParameterSet& params, const Vocab& vocab,
                   const MemeRecord& rec, PairedDetails* details) {
  if (rec.caption.empty() && !cfg.allow_empty_caption) {
    throw input_error("record " + rec.id +
                      " has no caption; backfill captions with an image captioner or set "
                      "allow_empty_caption");
  }
  JointSequence seq_a = build_sequence(cfg, vocab, rec, /*use_caption=*/false);
  JointSequence seq_b = build_sequence(cfg, vocab, rec, /*use_caption=*/true);

  std::vector<double> mask_a, mask_b;
  Var xa = embed_sequence(g, cfg, params, seq_a, &mask_a);
  Var xb = embed_sequence(g, cfg, params, seq_b, &mask_b);
  Var ea = encoder_forward(g, cfg, params, xa, mask_a);
  Var eb = encoder_forward(g, cfg, params, xb, mask_b);
  Var pa = attention_pool(g, params, "pool", ea, mask_a);
  const std::string prefix_b = cfg.share_pool ? "pool" : "pool_b";
  Var pb = attention_pool(g, params, prefix_b, eb, mask_b);
  if (details) {
    details->pooled_a = pa.tensor();
    details->pooled_b = pb.tensor();
    details->regions_a = region_input_matrix(seq_a);
    details->regions_b = region_input_matrix(seq_b);
  }
  return mlp_head(g, params, concat_cols({pa, pb}));
}

Var model_forward(Graph& g, const ModelConfig& cfg, ParameterSet& params, const Vocab& vocab,
                  const MemeRecord& rec) {
  return cfg.head_kind == HeadKind::paired ? paired_forward(g, cfg, params, vocab, rec)
                                           : cls_forward(g, cfg, params, vocab, rec);
}

double predict_proba(const ModelConfig& cfg, ParameterSet& params, const Vocab& vocab,
                     const MemeRecord& rec) {
  Graph g;
  Var logits = model_forward(g, cfg, params, vocab, rec);
  const Tensor& t = logits.tensor();
  if (t.numel() != 2) throw invariant_error("logits must have 2 entries");
  const double m = std::max(t.data[0], t.data[1]);
  const double e0 = std::exp(t.data[0] - m), e1 = std::exp(t.data[1] - m);
  return e1 / (e0 + e1);
}

}  // namespace hmpa
