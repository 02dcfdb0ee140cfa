#include "hmpa/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "hmpa/error.hpp"
#include "hmpa/io.hpp"
#include "hmpa/rng.hpp"

namespace hmpa {

using nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (lr <= 0.0) throw input_error("lr must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw input_error("warmup_fraction must lie in [0,1)");
  }
  if (batch_size < 1) throw input_error("batch_size must be at least 1");
  if (weight_decay < 0.0) throw input_error("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw input_error("betas must lie in [0,1)");
  }
  if (adam_eps <= 0.0) throw input_error("adam_eps must be positive");
  if (grad_clip_norm <= 0.0) throw input_error("grad_clip_norm must be positive");
  if (eval_every < 1) throw input_error("eval_every must be at least 1");
}

void to_json(ordered_json& j, const TrainConfig& c) {
  j = ordered_json{{"seed", c.seed},
                   {"epochs", c.epochs},
                   {"batch_size", c.batch_size},
                   {"lr", c.lr},
                   {"warmup_fraction", c.warmup_fraction},
                   {"weight_decay", c.weight_decay},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"adam_eps", c.adam_eps},
                   {"grad_clip_norm", c.grad_clip_norm},
                   {"eval_every", c.eval_every}};
}

void from_json(const ordered_json& j, TrainConfig& c) {
  c.seed = j.at("seed").get<std::uint64_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.warmup_fraction = j.at("warmup_fraction").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  c.eval_every = j.at("eval_every").get<std::size_t>();
}

double cross_entropy_value(const std::vector<double>& logits, int label) {
  if (label != 0 && label != 1) throw input_error("label must be 0 or 1");
  if (logits.size() != 2) throw input_error("expected 2 logits");
  const double m = std::max(logits[0], logits[1]);
  const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
  return lse - logits[static_cast<std::size_t>(label)];
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step < 1 || step > total_steps) {
    throw input_error("lr_at step must lie in [1, total_steps]");
  }
  const std::size_t warmup =
      static_cast<std::size_t>(cfg.warmup_fraction * static_cast<double>(total_steps));
  if (warmup > 0 && step <= warmup) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  return cfg.lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

AdamState make_adam_state(const ParameterSet& params) {
  AdamState state;
  for (const auto& [name, t] : params) {
    state.m.emplace(name, make_tensor(t->shape));
    state.v.emplace(name, make_tensor(t->shape));
  }
  return state;
}

double clip_gradients(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : params) {
    t->ensure_grad();
    for (double g : t->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, t] : params) {
      for (double& g : t->grad) g *= scale;
    }
  }
  return norm;
}

namespace {

bool decay_exempt(const std::string& name) {
  for (const char* suf : {".bias", ".gamma", ".beta"}) {
    const std::size_t n = std::strlen(suf);
    if (name.size() >= n && name.compare(name.size() - n, n, suf) == 0) return true;
  }
  return false;
}

}  // namespace

void adamw_step(ParameterSet& params, AdamState& state, std::size_t t, const TrainConfig& cfg,
                double lr_t) {
  if (t < 1) throw input_error("adamw_step t must be at least 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    p->ensure_grad();
    Tensor& m = *state.m.at(name);
    Tensor& v = *state.v.at(name);
    if (m.data.size() != p->data.size()) {
      throw invariant_error("optimizer state shape mismatch for " + name);
    }
    const bool decay = cfg.weight_decay > 0.0 && !decay_exempt(name);
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const double g = p->grad[i];
      if (!std::isfinite(g)) {
        throw invariant_error("non-finite gradient in parameter " + name);
      }
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g;
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m.data[i] / bc1;
      const double v_hat = v.data[i] / bc2;
      const double theta = p->data[i];
      double next = theta - lr_t * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps));
      if (decay) next -= lr_t * cfg.weight_decay * theta;
      p->data[i] = next;
    }
  }
}

namespace {

void append_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32_le(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + i]);
  return v;
}

std::uint64_t read_u64_le(const std::string& s, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + i]);
  return v;
}

std::vector<std::pair<std::string, TensorPtr>> checkpoint_arrays(const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, TensorPtr>> arrays;
  for (const auto& [name, t] : ckpt.adam_m) arrays.emplace_back("adam_m/" + name, t);
  for (const auto& [name, t] : ckpt.adam_v) arrays.emplace_back("adam_v/" + name, t);
  for (const auto& [name, t] : ckpt.params) arrays.emplace_back("param/" + name, t);
  std::sort(arrays.begin(), arrays.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return arrays;
}

constexpr char kMagic[4] = {'H', 'M', 'P', 'A'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const auto arrays = checkpoint_arrays(ckpt);
  ordered_json meta;
  to_json(meta["model"], ckpt.model);
  to_json(meta["train"], ckpt.train);
  meta["step"] = ckpt.step;
  meta["rng_state"] = ckpt.rng_state;
  ordered_json manifest = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : arrays) {
    ordered_json entry;
    entry["name"] = name;
    entry["shape"] = t->shape;
    entry["offset"] = offset;
    manifest.push_back(std::move(entry));
    offset += static_cast<std::uint64_t>(t->numel()) * 8;
  }
  meta["arrays"] = std::move(manifest);
  const std::string meta_bytes = meta.dump();

  std::string out;
  out.append(kMagic, 4);
  append_u32_le(out, kVersion);
  append_u64_le(out, meta_bytes.size());
  out += meta_bytes;
  for (const auto& [name, t] : arrays) {
    for (double d : t->data) append_u64_le(out, std::bit_cast<std::uint64_t>(d));
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  atomic_write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw input_error("corrupt checkpoint file (bad magic): " + path);
  }
  const std::uint32_t version = read_u32_le(bytes, 4);
  if (version != kVersion) {
    throw input_error("unsupported checkpoint version " + std::to_string(version) +
                      " (supported: 1)");
  }
  const std::uint64_t meta_len = read_u64_le(bytes, 8);
  if (16 + meta_len > bytes.size()) {
    throw input_error("corrupt checkpoint file (truncated metadata): " + path);
  }
  ordered_json meta;
  try {
    meta = ordered_json::parse(bytes.substr(16, meta_len));
  } catch (const nlohmann::json::parse_error&) {
    throw input_error("corrupt checkpoint file (bad metadata): " + path);
  }
  Checkpoint ckpt;
  ckpt.version = version;
  try {
    from_json(meta.at("model"), ckpt.model);
    from_json(meta.at("train"), ckpt.train);
    ckpt.step = meta.at("step").get<std::size_t>();
    ckpt.rng_state = meta.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw input_error("corrupt checkpoint file (metadata fields): " + std::string(e.what()));
  }
  const std::size_t base = 16 + meta_len;
  for (const auto& entry : meta.at("arrays")) {
    const std::string full = entry.at("name").get<std::string>();
    const std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    auto t = make_tensor(shape);
    const std::size_t nbytes = t->numel() * 8;
    if (base + offset + nbytes > bytes.size()) {
      throw input_error("corrupt checkpoint file (truncated array " + full + "): " + path);
    }
    for (std::size_t i = 0; i < t->numel(); ++i) {
      t->data[i] = std::bit_cast<double>(read_u64_le(bytes, base + offset + i * 8));
    }
    const auto slash = full.find('/');
    if (slash == std::string::npos) {
      throw input_error("corrupt checkpoint file (bad array name " + full + ")");
    }
    const std::string group = full.substr(0, slash);
    const std::string name = full.substr(slash + 1);
    if (group == "param") {
      t->requires_grad = true;
      ckpt.params.emplace(name, std::move(t));
    } else if (group == "adam_m") {
      ckpt.adam_m.emplace(name, std::move(t));
    } else if (group == "adam_v") {
      ckpt.adam_v.emplace(name, std::move(t));
    } else {
      throw input_error("corrupt checkpoint file (unknown array group " + group + ")");
    }
  }
  return ckpt;
}

std::string format_metric_log(const std::vector<MetricRow>& log) {
  std::string out = "step,loss,val_auroc\n";
  char buf[96];
  for (const MetricRow& row : log) {
    out += std::to_string(row.step);
    out += ',';
    if (std::isfinite(row.loss)) {
      std::snprintf(buf, sizeof(buf), "%.17g", row.loss);
      out += buf;
    }
    out += ',';
    if (std::isfinite(row.val_auroc)) {
      std::snprintf(buf, sizeof(buf), "%.17g", row.val_auroc);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

Predictions predict_all(const ModelConfig& cfg, ParameterSet& params, const Vocab& vocab,
                        const std::vector<MemeRecord>& records) {
  Predictions preds;
  for (const MemeRecord& rec : records) {
    preds.ids.push_back(rec.id);
    preds.probs.push_back(predict_proba(cfg, params, vocab, rec));
    preds.labels.push_back(rec.label);
  }
  return preds;
}

namespace {

ParameterSet copy_params(const ParameterSet& src) {
  ParameterSet out;
  for (const auto& [name, t] : src) {
    auto c = make_tensor(t->shape, t->data);
    c->requires_grad = t->requires_grad;
    out.emplace(name, std::move(c));
  }
  return out;
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

TrainResult train_run(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                      const Vocab& vocab, const std::vector<MemeRecord>& train_set,
                      const std::vector<MemeRecord>& val_set) {
  train_cfg.validate();
  if (train_set.empty()) throw input_error("training set is empty");
  for (const MemeRecord& rec : train_set) {
    if (rec.label == -1) {
      throw input_error("unlabeled record in training set: " + rec.id);
    }
  }
  ModelConfig cfg = model_cfg;
  cfg.vocab_size = vocab.size();
  cfg.validate();

  TrainResult result;
  for (const MemeRecord* rec : [&] {
         std::vector<const MemeRecord*> all;
         for (const auto& r : train_set) all.push_back(&r);
         for (const auto& r : val_set) all.push_back(&r);
         return all;
       }()) {
    if (split_words(rec->text).size() > cfg.max_text_len - 2) ++result.text_truncated;
    if (split_words(rec->caption).size() > cfg.max_text_len - 2) ++result.caption_truncated;
  }

  ParameterSet params = init_params(cfg, derive_seed(train_cfg.seed, 10));
  AdamState state = make_adam_state(params);
  Rng run_rng(derive_seed(train_cfg.seed, 11));

  const std::size_t n = train_set.size();
  const std::size_t bs = train_cfg.batch_size;
  const std::size_t batches_per_epoch = (n + bs - 1) / bs;
  const std::size_t total_steps = train_cfg.epochs * batches_per_epoch;

  double best_auroc = -1.0;
  bool have_best = false;

  auto snapshot = [&](std::size_t step) {
    Checkpoint ckpt;
    ckpt.model = cfg;
    ckpt.train = train_cfg;
    ckpt.step = step;
    ckpt.params = copy_params(params);
    ckpt.adam_m = copy_params(state.m);
    ckpt.adam_v = copy_params(state.v);
    ckpt.rng_state = rng_to_string(run_rng);
    return ckpt;
  };

  auto run_eval = [&](std::size_t step, MetricRow row) {
    if (val_set.empty()) {
      result.log.push_back(row);
      return;
    }
    Predictions preds = predict_all(cfg, params, vocab, val_set);
    const double score = auroc(preds);
    row.val_auroc = score;
    result.log.push_back(row);
    if (score >= best_auroc) {
      best_auroc = score;
      result.best = snapshot(step);
      result.best_val_auroc = score;
      result.best_val_preds = std::move(preds);
      have_best = true;
    }
  };

  if (total_steps == 0) {
    run_eval(0, MetricRow{0, std::numeric_limits<double>::quiet_NaN(),
                          std::numeric_limits<double>::quiet_NaN()});
    if (!have_best) {
      result.best = snapshot(0);
    }
    return result;
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    shuffle_in_place(order, run_rng);
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      ++step;
      const std::size_t lo = b * bs;
      const std::size_t hi = std::min(n, lo + bs);
      double loss_value;
      try {
        Graph g;
        Var acc{};
        for (std::size_t i = lo; i < hi; ++i) {
          const MemeRecord& rec = train_set[order[i]];
          Var logits = model_forward(g, cfg, params, vocab, rec);
          Var ce = cross_entropy(logits, static_cast<std::size_t>(rec.label));
          acc = (i == lo) ? ce : add(acc, ce);
        }
        Var loss = scale(acc, 1.0 / static_cast<double>(hi - lo));
        loss_value = loss.tensor().data[0];
        for (auto& [name, p] : params) p->zero_grad();
        g.backward(loss);
      } catch (const invariant_error& e) {
        throw invariant_error("training aborted at step " + std::to_string(step) + ": " +
                              e.what());
      }
      clip_gradients(params, train_cfg.grad_clip_norm);
      adamw_step(params, state, step, train_cfg, lr_at(step, total_steps, train_cfg));

      MetricRow row{step, loss_value, std::numeric_limits<double>::quiet_NaN()};
      if (step % train_cfg.eval_every == 0 || step == total_steps) {
        run_eval(step, row);
      } else {
        result.log.push_back(row);
      }
    }
  }
  if (!have_best) {
    result.best = snapshot(total_steps);
  }
  return result;
}

}  // namespace hmpa
