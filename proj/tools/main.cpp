#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hmpa/data.hpp"
#include "hmpa/error.hpp"
#include "hmpa/eval.hpp"
#include "hmpa/gradcheck.hpp"
#include "hmpa/io.hpp"
#include "hmpa/model.hpp"
#include "hmpa/rng.hpp"
#include "hmpa/tensor.hpp"
#include "hmpa/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct SplitOptions {
  std::vector<double> fractions = {0.8, 0.2};
  std::uint64_t split_seed = 42;
};

struct FullConfig {
  hmpa::ModelConfig model;
  hmpa::TrainConfig train;
  hmpa::SyntheticSpec data;
  SplitOptions split;
};

[[noreturn]] void bad_type(const std::string& key, const char* expected) {
  throw hmpa::input_error("type mismatch for key " + key + ": expected " + expected);
}

std::size_t as_size(const ordered_json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !v.is_number_integer()) bad_type(key, "non-negative integer");
  if (v.is_number_integer() && v.get<long long>() < 0) bad_type(key, "non-negative integer");
  return v.get<std::size_t>();
}

std::uint64_t as_u64(const ordered_json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !v.is_number_integer()) bad_type(key, "non-negative integer");
  if (v.is_number_integer() && v.get<long long>() < 0) bad_type(key, "non-negative integer");
  return v.get<std::uint64_t>();
}

double as_double(const ordered_json& v, const std::string& key) {
  if (!v.is_number()) bad_type(key, "number");
  return v.get<double>();
}

bool as_bool(const ordered_json& v, const std::string& key) {
  if (!v.is_boolean()) bad_type(key, "boolean");
  return v.get<bool>();
}

std::string as_string(const ordered_json& v, const std::string& key) {
  if (!v.is_string()) bad_type(key, "string");
  return v.get<std::string>();
}

void apply_model_section(const ordered_json& j, hmpa::ModelConfig& m) {
  for (const auto& [key, v] : j.items()) {
    const std::string full = "model." + key;
    if (key == "hidden_dim") m.hidden_dim = as_size(v, full);
    else if (key == "num_layers") m.num_layers = as_size(v, full);
    else if (key == "num_heads") m.num_heads = as_size(v, full);
    else if (key == "ffn_dim") m.ffn_dim = as_size(v, full);
    else if (key == "max_text_len") m.max_text_len = as_size(v, full);
    else if (key == "max_regions") m.max_regions = as_size(v, full);
    else if (key == "region_feat_dim") m.region_feat_dim = as_size(v, full);
    else if (key == "head_kind") m.head_kind = hmpa::head_kind_from_string(as_string(v, full));
    else if (key == "ablation") m.ablation = hmpa::ablation_from_string(as_string(v, full));
    else if (key == "dropout_rate") m.dropout_rate = as_double(v, full);
    else if (key == "pool_hidden") m.pool_hidden = as_size(v, full);
    else if (key == "share_pool") m.share_pool = as_bool(v, full);
    else if (key == "allow_empty_caption") m.allow_empty_caption = as_bool(v, full);
    else throw hmpa::input_error("unknown key " + full);
  }
}

void apply_train_section(const ordered_json& j, hmpa::TrainConfig& t) {
  for (const auto& [key, v] : j.items()) {
    const std::string full = "train." + key;
    if (key == "seed") t.seed = as_u64(v, full);
    else if (key == "epochs") t.epochs = as_size(v, full);
    else if (key == "batch_size") t.batch_size = as_size(v, full);
    else if (key == "lr") t.lr = as_double(v, full);
    else if (key == "warmup_fraction") t.warmup_fraction = as_double(v, full);
    else if (key == "weight_decay") t.weight_decay = as_double(v, full);
    else if (key == "beta1") t.beta1 = as_double(v, full);
    else if (key == "beta2") t.beta2 = as_double(v, full);
    else if (key == "adam_eps") t.adam_eps = as_double(v, full);
    else if (key == "grad_clip_norm") t.grad_clip_norm = as_double(v, full);
    else if (key == "eval_every") t.eval_every = as_size(v, full);
    else throw hmpa::input_error("unknown key " + full);
  }
}

void apply_data_section(const ordered_json& j, hmpa::SyntheticSpec& d, SplitOptions& s) {
  for (const auto& [key, v] : j.items()) {
    const std::string full = "data." + key;
    if (key == "num_concepts") d.num_concepts = as_size(v, full);
    else if (key == "samples") d.samples = as_size(v, full);
    else if (key == "regions") d.regions = as_size(v, full);
    else if (key == "feat_dim") d.feat_dim = as_size(v, full);
    else if (key == "noise_sigma") d.noise_sigma = as_double(v, full);
    else if (key == "confounder_fraction") d.confounder_fraction = as_double(v, full);
    else if (key == "seed") d.seed = as_u64(v, full);
    else if (key == "caption_words_min") d.caption_words_min = as_size(v, full);
    else if (key == "caption_words_max") d.caption_words_max = as_size(v, full);
    else if (key == "split_fractions") {
      if (!v.is_array()) bad_type(full, "array of numbers");
      s.fractions.clear();
      for (const auto& f : v) s.fractions.push_back(as_double(f, full));
    } else if (key == "split_seed") {
      s.split_seed = as_u64(v, full);
    } else {
      throw hmpa::input_error("unknown key " + full);
    }
  }
}

FullConfig load_config_file(const std::string& path) {
  FullConfig cfg;
  if (path.empty()) return cfg;
  ordered_json j;
  try {
    j = ordered_json::parse(hmpa::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw hmpa::input_error("config file " + path + ": not valid JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw hmpa::input_error("config file must hold a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "model") apply_model_section(v, cfg.model);
    else if (key == "train") apply_train_section(v, cfg.train);
    else if (key == "data") apply_data_section(v, cfg.data, cfg.split);
    else throw hmpa::input_error("unknown key " + key);
  }
  return cfg;
}

ordered_json resolved_config_json(const FullConfig& cfg) {
  ordered_json j;
  to_json(j["model"], cfg.model);
  to_json(j["train"], cfg.train);
  to_json(j["data"], cfg.data);
  j["data"]["split_fractions"] = cfg.split.fractions;
  j["data"]["split_seed"] = cfg.split.split_seed;
  return j;
}

void write_resolved_config(const FullConfig& cfg, const std::string& out_dir,
                           const ordered_json& extra) {
  ordered_json j = resolved_config_json(cfg);
  for (const auto& [key, v] : extra.items()) j[key] = v;
  hmpa::atomic_write_file((fs::path(out_dir) / "config.resolved.json").string(),
                          j.dump(2) + "\n");
}

// One CLI option per config field so flags can override the config file.
struct Overrides {
  CLI::App* cmd;
  FullConfig* cfg;

  void add_model() {
    auto* m = &cfg->model;
    cmd->add_option("--hidden-dim", m->hidden_dim, "Transformer width");
    cmd->add_option("--num-layers", m->num_layers, "Encoder layer count");
    cmd->add_option("--num-heads", m->num_heads, "Attention heads");
    cmd->add_option("--ffn-dim", m->ffn_dim, "Feed-forward width (0 = 4x hidden)");
    cmd->add_option("--max-text-len", m->max_text_len, "Token budget incl. [CLS]/[SEP]");
    cmd->add_option("--max-regions", m->max_regions, "Region budget");
    cmd->add_option("--region-feat-dim", m->region_feat_dim,
                    "Region feature dimension (default: taken from the data)");
    cmd->add_option_function<std::string>(
        "--head", [m](const std::string& s) { m->head_kind = hmpa::head_kind_from_string(s); },
        "Classification head: cls | paired");
    cmd->add_option_function<std::string>(
        "--ablation", [m](const std::string& s) { m->ablation = hmpa::ablation_from_string(s); },
        "Ablation: none | text_only | image_only");
    cmd->add_option("--dropout", m->dropout_rate, "Dropout rate");
    cmd->add_option("--pool-hidden", m->pool_hidden, "Attention-pool scorer width (0 = hidden)");
    cmd->add_option("--share-pool", m->share_pool, "Share pooling weights across halves");
    cmd->add_option("--allow-empty-caption", m->allow_empty_caption,
                    "Permit records without captions in the paired head");
  }

  void add_train() {
    auto* t = &cfg->train;
    cmd->add_option("--seed", t->seed, "Training seed");
    cmd->add_option("--epochs", t->epochs, "Training epochs");
    cmd->add_option("--batch-size", t->batch_size, "Batch size");
    cmd->add_option("--lr", t->lr, "Peak learning rate");
    cmd->add_option("--warmup-fraction", t->warmup_fraction, "Warmup fraction of total steps");
    cmd->add_option("--weight-decay", t->weight_decay, "Decoupled weight decay");
    cmd->add_option("--beta1", t->beta1, "Adam beta1");
    cmd->add_option("--beta2", t->beta2, "Adam beta2");
    cmd->add_option("--adam-eps", t->adam_eps, "Adam epsilon");
    cmd->add_option("--grad-clip-norm", t->grad_clip_norm, "Global gradient-norm clip");
    cmd->add_option("--eval-every", t->eval_every, "Validation cadence in steps");
  }

  void add_data() {
    auto* d = &cfg->data;
    cmd->add_option("--concepts", d->num_concepts, "Concept count");
    cmd->add_option("--samples", d->samples, "Total records");
    cmd->add_option("--regions", d->regions, "Regions per record");
    cmd->add_option("--feat-dim", d->feat_dim, "Region feature dimension");
    cmd->add_option("--noise-sigma", d->noise_sigma, "Feature noise sigma");
    cmd->add_option("--confounder-fraction", d->confounder_fraction,
                    "Fraction of hateful records with confounder siblings");
    cmd->add_option("--data-seed", d->seed, "Generator seed");
    cmd->add_option("--caption-words-min", d->caption_words_min, "Min caption concept words");
    cmd->add_option("--caption-words-max", d->caption_words_max, "Max caption concept words");
  }

  void add_split() {
    cmd->add_option("--split-frac", cfg->split.fractions,
                    "Split fractions: train val [test], must sum to 1")
        ->expected(2, 3);
    cmd->add_option("--split-seed", cfg->split.split_seed, "Split shuffle seed");
  }
};

hmpa::EvalReport print_and_write_report(const hmpa::Predictions& preds,
                                        const std::string& out_dir, const char* prefix) {
  const hmpa::EvalReport report = hmpa::evaluate(preds);
  const double nll = hmpa::mean_nll(preds);
  ordered_json j;
  j["auroc"] = report.auroc;
  j["accuracy"] = report.accuracy;
  j["nll"] = nll;
  j["n"] = report.n;
  j["positives"] = report.positives;
  j["negatives"] = report.negatives;
  hmpa::atomic_write_file((fs::path(out_dir) / (std::string(prefix) + "report.json")).string(),
                          j.dump(2) + "\n");
  std::printf("%sn=%zu auroc=%.6f accuracy=%.6f nll=%.6f\n", prefix, report.n, report.auroc,
              report.accuracy, nll);
  return report;
}

int cmd_gen_data(const FullConfig& cfg, const std::string& out_dir, double corrupt_regions,
                 double corrupt_text, std::uint64_t corrupt_seed) {
  hmpa::GeneratedData gen = hmpa::generate_synthetic(cfg.data);
  ordered_json corruption = ordered_json::object();
  if (corrupt_regions > 0.0) {
    hmpa::corrupt_channel(gen.dataset.records, hmpa::Channel::regions, corrupt_regions,
                          corrupt_seed);
    corruption["regions_rate"] = corrupt_regions;
  }
  if (corrupt_text > 0.0) {
    hmpa::corrupt_channel(gen.dataset.records, hmpa::Channel::text, corrupt_text, corrupt_seed);
    corruption["text_rate"] = corrupt_text;
  }
  if (!corruption.empty()) {
    corruption["seed"] = corrupt_seed;
    gen.dataset.meta["corruption"] = corruption;
    gen.vocab = hmpa::build_vocab(gen.dataset.records, 1);
  }
  hmpa::save_dataset(gen.dataset, (fs::path(out_dir) / "dataset.jsonl").string());
  hmpa::save_vocab(gen.vocab, (fs::path(out_dir) / "vocab.txt").string());
  write_resolved_config(cfg, out_dir, ordered_json{{"command", "gen-data"}});
  std::size_t positives = 0;
  for (const auto& rec : gen.dataset.records) positives += rec.label == 1;
  std::printf("wrote %zu records (%zu positive) and %zu vocab tokens to %s\n",
              gen.dataset.records.size(), positives, gen.vocab.size(), out_dir.c_str());
  return 0;
}

int cmd_train(FullConfig cfg, const std::string& data_path, const std::string& vocab_path,
              const std::string& out_dir, bool feat_dim_given) {
  hmpa::Dataset ds = hmpa::load_dataset(data_path);
  if (ds.records.empty()) throw hmpa::input_error("dataset is empty: " + data_path);
  hmpa::Vocab vocab = hmpa::load_vocab(vocab_path);
  if (!feat_dim_given) cfg.model.region_feat_dim = ds.records.front().feat_dim;

  hmpa::SplitResult split =
      hmpa::split_dataset(ds.records, cfg.split.fractions, cfg.split.split_seed);
  std::printf("split: train=%zu val=%zu test=%zu\n", split.train.size(), split.val.size(),
              split.test.size());

  hmpa::TrainResult result =
      hmpa::train_run(cfg.model, cfg.train, vocab, split.train, split.val);
  cfg.model.vocab_size = result.best.model.vocab_size;

  hmpa::save_checkpoint(result.best, (fs::path(out_dir) / "checkpoint.bin").string());
  hmpa::atomic_write_file((fs::path(out_dir) / "metrics.csv").string(),
                          hmpa::format_metric_log(result.log));
  hmpa::save_predictions(result.best_val_preds,
                         (fs::path(out_dir) / "val_predictions.jsonl").string());
  hmpa::Dataset val_ds;
  val_ds.records = split.val;
  hmpa::save_dataset(val_ds, (fs::path(out_dir) / "val_data.jsonl").string());
  write_resolved_config(cfg, out_dir,
                        ordered_json{{"command", "train"},
                                     {"inputs", {{"data", data_path}, {"vocab", vocab_path}}},
                                     {"truncated_texts", result.text_truncated},
                                     {"truncated_captions", result.caption_truncated}});
  std::printf("best step %zu, val auroc %.6f (texts truncated: %zu, captions truncated: %zu)\n",
              result.best.step, result.best_val_auroc, result.text_truncated,
              result.caption_truncated);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& vocab_path, const std::string& out_dir) {
  hmpa::Checkpoint ckpt = hmpa::load_checkpoint(ckpt_path);
  hmpa::Vocab vocab = hmpa::load_vocab(vocab_path);
  if (vocab.size() != ckpt.model.vocab_size) {
    throw hmpa::input_error("vocab size " + std::to_string(vocab.size()) +
                            " does not match checkpoint vocab_size " +
                            std::to_string(ckpt.model.vocab_size));
  }
  hmpa::Dataset ds = hmpa::load_dataset(data_path);
  hmpa::Predictions preds =
      hmpa::predict_all(ckpt.model, ckpt.params, vocab, ds.records);
  hmpa::save_predictions(preds, (fs::path(out_dir) / "predictions.jsonl").string());
  if (preds.has_labels()) {
    print_and_write_report(preds, out_dir, "");
  } else {
    std::printf("wrote %zu unlabeled predictions\n", preds.ids.size());
  }
  return 0;
}

int cmd_ensemble(const std::vector<std::string>& pred_paths, const std::string& out_dir) {
  std::vector<hmpa::Predictions> runs;
  for (const std::string& p : pred_paths) runs.push_back(hmpa::load_predictions(p));
  hmpa::Predictions avg = hmpa::ensemble_average(runs);
  hmpa::save_predictions(avg, (fs::path(out_dir) / "ensemble_predictions.jsonl").string());
  if (avg.has_labels()) {
    print_and_write_report(avg, out_dir, "");
    double mean_member = 0.0;
    for (const auto& r : runs) mean_member += hmpa::auroc(r);
    mean_member /= static_cast<double>(runs.size());
    std::printf("mean member auroc=%.6f over %zu runs\n", mean_member, runs.size());
  } else {
    std::printf("wrote averaged predictions over %zu runs\n", runs.size());
  }
  return 0;
}

int cmd_gradcheck(double eps, double tol, std::size_t coords, std::uint64_t seed,
                  const std::string& out_dir) {
  hmpa::SyntheticSpec spec;
  spec.num_concepts = 4;
  spec.samples = 6;
  spec.regions = 4;
  spec.feat_dim = 16;
  spec.confounder_fraction = 0.0;
  spec.seed = seed;
  hmpa::GeneratedData gen = hmpa::generate_synthetic(spec);

  hmpa::ModelConfig cfg;
  cfg.hidden_dim = 16;
  cfg.num_layers = 2;
  cfg.num_heads = 4;
  cfg.region_feat_dim = 16;
  cfg.head_kind = hmpa::HeadKind::paired;
  cfg.vocab_size = gen.vocab.size();
  hmpa::ParameterSet params = hmpa::init_params(cfg, hmpa::derive_seed(seed, 20));

  const std::vector<hmpa::MemeRecord> batch(gen.dataset.records.begin(),
                                            gen.dataset.records.begin() + 4);
  hmpa::LossFn loss = [&](bool compute_grad) {
    hmpa::Graph g;
    hmpa::Var acc{};
    for (std::size_t i = 0; i < batch.size(); ++i) {
      hmpa::Var logits = hmpa::model_forward(g, cfg, params, gen.vocab, batch[i]);
      hmpa::Var ce = hmpa::cross_entropy(logits, static_cast<std::size_t>(batch[i].label));
      acc = i == 0 ? ce : hmpa::add(acc, ce);
    }
    hmpa::Var l = hmpa::scale(acc, 1.0 / static_cast<double>(batch.size()));
    if (compute_grad) g.backward(l);
    return l.tensor().data[0];
  };

  const hmpa::GradCheckReport report = hmpa::finite_diff_check(loss, params, eps, seed, coords);
  ordered_json j;
  j["max_rel_err"] = report.max_rel_err;
  j["tol"] = tol;
  j["coords_checked"] = report.coords_checked;
  j["worst_param"] = report.worst_param;
  ordered_json arrays = ordered_json::array();
  for (const auto& a : report.arrays) {
    arrays.push_back({{"name", a.name}, {"max_rel_err", a.max_rel_err},
                      {"coords", a.coords_checked}});
  }
  j["arrays"] = std::move(arrays);
  if (!out_dir.empty()) {
    hmpa::atomic_write_file((fs::path(out_dir) / "gradcheck.json").string(), j.dump(2) + "\n");
  }
  std::printf("checked %zu coordinates over %zu arrays\n", report.coords_checked,
              report.arrays.size());
  std::printf("max relative error %.3e at %s[%zu] (analytic %.6e, numeric %.6e)\n",
              report.max_rel_err, report.worst_param.c_str(), report.worst_index,
              report.worst_analytic, report.worst_numeric);
  const bool ok = report.passed(tol);
  std::printf("%s (tol %.1e)\n", ok ? "PASS" : "FAIL", tol);
  return ok ? 0 : 1;
}

int cmd_roc(const std::string& pred_path, const std::string& out_dir) {
  hmpa::Predictions preds = hmpa::load_predictions(pred_path);
  hmpa::RocCurve curve = hmpa::roc_curve(preds);
  hmpa::save_roc_csv(curve, (fs::path(out_dir) / "roc.csv").string());
  std::printf("%zu curve points, auroc=%.6f\n", curve.points.size(), hmpa::auroc(preds));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal meme classifier: synthetic benchmark, training, evaluation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_path, vocab_path, ckpt_path, pred_path;
  std::vector<std::string> pred_paths;
  double corrupt_regions = 0.0, corrupt_text = 0.0;
  std::uint64_t corrupt_seed = 123;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  std::size_t gc_coords = 32;
  std::uint64_t gc_seed = 1;

  FullConfig cfg;  // defaults; config file then flags overwrite

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen->add_option("--config", config_path, "JSON config file");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--corrupt-regions", corrupt_regions, "Rate of region-channel corruption");
  gen->add_option("--corrupt-text", corrupt_text, "Rate of OCR-text corruption");
  gen->add_option("--corrupt-seed", corrupt_seed, "Corruption seed");
  Overrides{gen, &cfg}.add_data();

  CLI::App* train = app.add_subcommand("train", "Train one model");
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--data", data_path, "Dataset file")->required();
  train->add_option("--vocab", vocab_path, "Vocab file")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  Overrides tr{train, &cfg};
  tr.add_model();
  tr.add_train();
  tr.add_split();

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data_path, "Dataset file")->required();
  eval_cmd->add_option("--vocab", vocab_path, "Vocab file")->required();
  eval_cmd->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* ens = app.add_subcommand("ensemble", "Average prediction files");
  ens->add_option("--pred", pred_paths, "Prediction files")->required()->expected(1, -1);
  ens->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference check of the paired model");
  gc->add_option("--eps", gc_eps, "Central-difference step");
  gc->add_option("--tol", gc_tol, "Max relative error to pass");
  gc->add_option("--coords", gc_coords, "Sampled coordinates per array");
  gc->add_option("--gc-seed", gc_seed, "Seed for model init and sampling");
  gc->add_option("--out", out_dir, "Output directory for the report (optional)");

  CLI::App* roc = app.add_subcommand("roc", "Export the ROC curve of a prediction file");
  roc->add_option("--pred", pred_path, "Prediction file")->required();
  roc->add_option("--out", out_dir, "Output directory")->required();

  // Config-file values must lose to flags: parse once to find the file, load it
  // into the bound struct, then reparse the same argv so flags win again.
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!config_path.empty()) {
      cfg = load_config_file(config_path);
      app.clear();
      app.parse(argc, argv);
    }

    if (gen->parsed()) return cmd_gen_data(cfg, out_dir, corrupt_regions, corrupt_text,
                                           corrupt_seed);
    if (train->parsed()) {
      const bool feat_dim_given = train->count("--region-feat-dim") > 0;
      return cmd_train(cfg, data_path, vocab_path, out_dir, feat_dim_given);
    }
    if (eval_cmd->parsed()) return cmd_eval(ckpt_path, data_path, vocab_path, out_dir);
    if (ens->parsed()) return cmd_ensemble(pred_paths, out_dir);
    if (gc->parsed()) return cmd_gradcheck(gc_eps, gc_tol, gc_coords, gc_seed, out_dir);
    if (roc->parsed()) return cmd_roc(pred_path, out_dir);
    return 1;
  } catch (const hmpa::input_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}
