#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "hmpa/data.hpp"
#include "hmpa/eval.hpp"
#include "hmpa/model.hpp"
#include "hmpa/tensor.hpp"

namespace hmpa {

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 1.0;
  std::size_t eval_every = 50;
  void validate() const;  // throws input_error
};

void to_json(nlohmann::ordered_json& j, const TrainConfig& c);
void from_json(const nlohmann::ordered_json& j, TrainConfig& c);

// -log softmax(logits)[label] via log-sum-exp; graph-free twin of the
// autodiff op, used by tests and reporting.
double cross_entropy_value(const std::vector<double>& logits, int label);

// Linear warmup to cfg.lr over floor(warmup_fraction * total_steps) steps,
// then linear decay to 0 at total_steps. step is 1-based.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct AdamState {
  ParameterSet m;
  ParameterSet v;
};

AdamState make_adam_state(const ParameterSet& params);

// Scales all gradients so the global norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(ParameterSet& params, double max_norm);

// Decoupled weight decay; decay skipped for bias and layer-norm parameters
// (names ending .bias, .gamma, .beta). Reads gradients from params' grad
// buffers. t is 1-based.
void adamw_step(ParameterSet& params, AdamState& state, std::size_t t, const TrainConfig& cfg,
                double lr_t);

struct Checkpoint {
  std::uint32_t version = 1;
  ModelConfig model;
  TrainConfig train;
  std::size_t step = 0;
  ParameterSet params;
  ParameterSet adam_m;
  ParameterSet adam_v;
  std::string rng_state;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct MetricRow {
  std::size_t step = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();        // NaN = no train step
  double val_auroc = std::numeric_limits<double>::quiet_NaN();   // NaN = no eval here
};

// CSV with header step,loss,val_auroc; NaN fields are left empty.
std::string format_metric_log(const std::vector<MetricRow>& log);

struct TrainResult {
  Checkpoint best;
  double best_val_auroc = std::numeric_limits<double>::quiet_NaN();
  Predictions best_val_preds;
  std::vector<MetricRow> log;
  std::size_t text_truncated = 0;
  std::size_t caption_truncated = 0;
};

// Deterministic: (seed, configs, data) fixes the metric log and checkpoint
// bytes. Best checkpoint = highest val AUROC, later step on ties; evaluation
// happens every eval_every steps and at the final step.
TrainResult train_run(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                      const Vocab& vocab, const std::vector<MemeRecord>& train_set,
                      const std::vector<MemeRecord>& val_set);

// P(hateful) for every record, in order.
Predictions predict_all(const ModelConfig& cfg, ParameterSet& params, const Vocab& vocab,
                        const std::vector<MemeRecord>& records);

}  // namespace hmpa
