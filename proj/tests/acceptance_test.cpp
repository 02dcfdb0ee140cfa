// Acceptance gate: eight checks, one [PASS]/[FAIL] line each. Exit code is
// the number of failures. Runs everything in-process and single-threaded;
// expect roughly ten minutes on one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hmpa/data.hpp"
#include "hmpa/error.hpp"
#include "hmpa/eval.hpp"
#include "hmpa/gradcheck.hpp"
#include "hmpa/model.hpp"
#include "hmpa/rng.hpp"
#include "hmpa/tensor.hpp"
#include "hmpa/train.hpp"

#include "oracles.hpp"

using namespace hmpa;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int criterion, bool ok, const std::string& what) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, ...) {
  va_list args;
  va_start(args, pattern);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

// ---- shared benchmark fixtures ------------------------------------------

constexpr double kPairedFloor = 0.95;
constexpr double kUnimodalCeiling = 0.65;
constexpr double kHeadGap = 0.01;       // paired may trail cls by at most this, averaged
constexpr double kEnsembleGap = 0.005;  // ensemble AUROC may trail the member mean by this
constexpr double kOracleTol = 1e-9;
constexpr double kGradTol = 1e-4;

struct Benchmark {
  GeneratedData gen;
  SplitResult split;

  explicit Benchmark(double corrupt_text_rate = 0.0) {
    SyntheticSpec spec;  // C=8, 4 regions, feat dim 16
    spec.samples = 2500;
    spec.seed = 1;
    gen = generate_synthetic(spec);
    if (corrupt_text_rate > 0.0) {
      corrupt_channel(gen.dataset.records, Channel::text, corrupt_text_rate, 777);
      gen.vocab = build_vocab(gen.dataset.records, 1);
    }
    split = split_dataset(gen.dataset.records, {0.8, 0.2}, 42);
  }
};

ModelConfig benchmark_model(HeadKind head, Ablation ablation) {
  ModelConfig m;  // d=32, L=2, H=4 defaults
  m.head_kind = head;
  m.ablation = ablation;
  return m;
}

TrainResult run_benchmark(const Benchmark& bench, HeadKind head, Ablation ablation,
                          std::uint64_t seed) {
  TrainConfig t;  // 5 epochs, batch 16, lr 1e-3, eval every 50
  t.seed = seed;
  return train_run(benchmark_model(head, ablation), t, bench.gen.vocab, bench.split.train,
                   bench.split.val);
}

// ---- criteria ------------------------------------------------------------

void criterion_1_gradients() {
  const auto t0 = Clock::now();

  SyntheticSpec spec;
  spec.num_concepts = 4;
  spec.samples = 6;
  spec.confounder_fraction = 0.0;
  spec.seed = 1;
  GeneratedData gen = generate_synthetic(spec);

  ModelConfig cfg;
  cfg.hidden_dim = 16;
  cfg.num_layers = 2;
  cfg.num_heads = 4;
  cfg.head_kind = HeadKind::paired;
  cfg.vocab_size = gen.vocab.size();
  ParameterSet params = init_params(cfg, derive_seed(1, 20));

  const std::vector<MemeRecord> batch(gen.dataset.records.begin(),
                                      gen.dataset.records.begin() + 4);
  LossFn loss = [&](bool compute_grad) {
    Graph g;
    Var acc{};
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Var ce = cross_entropy(model_forward(g, cfg, params, gen.vocab, batch[i]),
                             static_cast<std::size_t>(batch[i].label));
      acc = i == 0 ? ce : add(acc, ce);
    }
    Var l = scale(acc, 1.0 / static_cast<double>(batch.size()));
    if (compute_grad) g.backward(l);
    return l.tensor().data[0];
  };

  GradCheckReport rep = finite_diff_check(loss, params, 1e-5, 1, 32);
  const double elapsed = seconds_since(t0);

  bool coverage = rep.arrays.size() == params.size();
  for (const auto& a : rep.arrays) {
    coverage = coverage &&
               a.coords_checked >= std::min<std::size_t>(32, params.at(a.name)->data.size());
  }
  const bool ok = rep.max_rel_err <= kGradTol && coverage && elapsed < 60.0;
  report(1, ok,
         fmt("paired-head gradient check: max rel err %.3e (tol %.0e), %zu coords over %zu "
             "arrays, %.1f s (limit 60)",
             rep.max_rel_err, kGradTol, rep.coords_checked, rep.arrays.size(), elapsed));
}

void criterion_2_auroc_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  int tie_sets = 0;
  bool ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const bool force_ties = trial < 50;
    tie_sets += force_ties;
    const std::size_t n = 2 + rand_index(rng, 39);
    Predictions p;
    for (std::size_t i = 0; i < n; ++i) {
      p.ids.push_back("s" + std::to_string(i));
      p.probs.push_back(force_ties ? 0.25 * static_cast<double>(rand_index(rng, 5))
                                   : rand_uniform(rng));
      p.labels.push_back(static_cast<int>(rand_index(rng, 2)));
    }
    bool both = false;
    for (std::size_t i = 1; i < n; ++i) both |= p.labels[i] != p.labels[0];
    if (!both) p.labels[0] = 1 - p.labels[0];

    const double fast = auroc(p);
    const double slow = oracle::pairwise_auroc(p.probs, p.labels);
    worst = std::max(worst, std::abs(fast - slow));
    ok = ok && std::abs(fast - slow) <= kOracleTol;
  }
  const double elapsed = seconds_since(t0);
  ok = ok && tie_sets >= 50 && elapsed < 5.0;
  report(2, ok,
         fmt("trapezoid vs pairwise AUROC on 200 sets (%d tie-forced): worst gap %.2e "
             "(tol 1e-9), %.2f s (limit 5)",
             tie_sets, worst, elapsed));
}

struct GapRuns {
  TrainResult paired_seed1;
  double text_only_auroc = 0.0;
  double image_only_auroc = 0.0;
  double elapsed = 0.0;
};

GapRuns criterion_3_multimodal_gap(const Benchmark& clean) {
  const auto t0 = Clock::now();
  GapRuns runs;
  TrainResult text_only = run_benchmark(clean, HeadKind::cls, Ablation::text_only, 1);
  TrainResult image_only = run_benchmark(clean, HeadKind::cls, Ablation::image_only, 1);
  runs.paired_seed1 = run_benchmark(clean, HeadKind::paired, Ablation::none, 1);
  runs.text_only_auroc = text_only.best_val_auroc;
  runs.image_only_auroc = image_only.best_val_auroc;
  runs.elapsed = seconds_since(t0);

  const bool ok = runs.text_only_auroc <= kUnimodalCeiling &&
                  runs.image_only_auroc <= kUnimodalCeiling &&
                  runs.paired_seed1.best_val_auroc >= kPairedFloor && runs.elapsed < 600.0;
  report(3, ok,
         fmt("multimodal gap on 2000/500: text_only %.3f, image_only %.3f (ceiling %.2f), "
             "paired %.3f (floor %.2f), %.0f s (limit 600)",
             runs.text_only_auroc, runs.image_only_auroc, kUnimodalCeiling,
             runs.paired_seed1.best_val_auroc, kPairedFloor, runs.elapsed));
  return runs;
}

struct SeedRuns {
  std::vector<TrainResult> paired;  // seeds 1..5 on the clean benchmark
};

SeedRuns criterion_4_paired_advantage(const Benchmark& clean, GapRuns& gap) {
  SeedRuns out;
  out.paired.push_back(std::move(gap.paired_seed1));
  for (std::uint64_t seed = 2; seed <= 5; ++seed) {
    out.paired.push_back(run_benchmark(clean, HeadKind::paired, Ablation::none, seed));
  }
  double paired_mean = 0.0, cls_mean = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    paired_mean += out.paired[seed - 1].best_val_auroc;
    cls_mean += run_benchmark(clean, HeadKind::cls, Ablation::none, seed).best_val_auroc;
  }
  paired_mean /= 5.0;
  cls_mean /= 5.0;

  Benchmark corrupted(0.5);
  const double paired_corr =
      run_benchmark(corrupted, HeadKind::paired, Ablation::none, 1).best_val_auroc;
  const double cls_corr =
      run_benchmark(corrupted, HeadKind::cls, Ablation::none, 1).best_val_auroc;

  const bool ok = paired_mean >= cls_mean - kHeadGap && paired_corr > cls_corr;
  report(4, ok,
         fmt("paired vs cls: clean means %.3f vs %.3f over seeds 1-5 (slack %.2f); with OCR "
             "noise at 0.5, %.3f > %.3f strictly",
             paired_mean, cls_mean, kHeadGap, paired_corr, cls_corr));
  return out;
}

void criterion_5_ensemble(const SeedRuns& seeds) {
  std::vector<Predictions> members;
  double member_auroc = 0.0, member_nll = 0.0;
  for (const TrainResult& r : seeds.paired) {
    members.push_back(r.best_val_preds);
    member_auroc += auroc(r.best_val_preds);
    member_nll += mean_nll(r.best_val_preds);
  }
  member_auroc /= 5.0;
  member_nll /= 5.0;

  Predictions ens = ensemble_average(members);
  const double ens_auroc = auroc(ens);
  const double ens_nll = mean_nll(ens);

  const bool ok = ens_nll <= member_nll + 1e-12 && ens_auroc >= member_auroc - kEnsembleGap;
  report(5, ok,
         fmt("five-seed ensemble: NLL %.4f <= member mean %.4f, AUROC %.4f vs member mean "
             "%.4f (slack %.3f)",
             ens_nll, member_nll, ens_auroc, member_auroc, kEnsembleGap));
}

void criterion_6_determinism(const Benchmark& clean, const SeedRuns& seeds) {
  TrainResult rerun = run_benchmark(clean, HeadKind::paired, Ablation::none, 1);
  const TrainResult& first = seeds.paired[0];
  const bool bytes_equal =
      serialize_checkpoint(rerun.best) == serialize_checkpoint(first.best);
  const bool log_equal = format_metric_log(rerun.log) == format_metric_log(first.log);
  report(6, bytes_equal && log_equal,
         fmt("identical rerun of the paired benchmark: checkpoint bytes %s, metric log %s",
             bytes_equal ? "identical" : "differ", log_equal ? "identical" : "differs"));
}

void criterion_7_data_invariants() {
  SyntheticSpec spec;
  spec.samples = 4000;
  spec.seed = 1;
  GeneratedData a = generate_synthetic(spec);
  GeneratedData b = generate_synthetic(spec);
  const bool deterministic = serialize_dataset(a.dataset) == serialize_dataset(b.dataset);

  const auto& recs = a.dataset.records;
  std::map<std::string, const MemeRecord*> by_id;
  for (const auto& r : recs) by_id[r.id] = &r;

  std::size_t positives = 0;
  bool flips_ok = true;
  for (const auto& r : recs) {
    positives += r.label == 1;
    for (const char* suffix : {"-imgconf", "-txtconf"}) {
      const std::string id = r.id;
      if (id.size() > 8 && id.compare(id.size() - 8, 8, suffix) == 0) {
        const MemeRecord* base = by_id.at(id.substr(0, id.size() - 8));
        flips_ok = flips_ok && r.label == 0 && base->label == 1;
      }
    }
  }
  const double balance = static_cast<double>(positives) / static_cast<double>(recs.size());
  const bool balanced = balance >= 0.48 && balance <= 0.52;

  // Majority-rule ceiling per channel: predict each concept's majority label.
  const auto& wl = a.dataset.meta.at("word_lists");
  std::map<std::string, std::size_t> word_concept;
  for (std::size_t c = 0; c < wl.at("text").size(); ++c) {
    for (const auto& w : wl.at("text")[c]) word_concept[w.get<std::string>()] = c;
  }
  auto majority_accuracy = [&](bool use_text) {
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> votes;  // concept -> (n0, n1)
    for (const auto& r : recs) {
      std::size_t concept_id;
      if (use_text) {
        concept_id = word_concept.at(split_words(r.text).front());
      } else {
        std::vector<double> mean(r.feat_dim, 0.0);
        for (std::size_t k = 0; k < r.num_regions; ++k) {
          for (std::size_t d = 0; d < r.feat_dim; ++d) {
            mean[d] += r.features[k * r.feat_dim + d];
          }
        }
        concept_id = static_cast<std::size_t>(
            std::max_element(mean.begin(), mean.end()) - mean.begin());
      }
      auto& v = votes[concept_id];
      (r.label == 1 ? v.second : v.first) += 1;
    }
    std::size_t right = 0;
    for (const auto& [c, v] : votes) right += std::max(v.first, v.second);
    return static_cast<double>(right) / static_cast<double>(recs.size());
  };
  const double text_majority = majority_accuracy(true);
  const double image_majority = majority_accuracy(false);
  const bool unimodal_capped = text_majority <= 0.6 && image_majority <= 0.6;

  report(7, deterministic && flips_ok && balanced && unimodal_capped,
         fmt("N=4000 generator: deterministic %s, confounder label flips %s, balance %.3f "
             "(within 0.50+-0.02), majority-rule accuracy text %.3f / image %.3f (cap 0.6)",
             deterministic ? "yes" : "NO", flips_ok ? "hold" : "BROKEN", balance,
             text_majority, image_majority));
}

void criterion_8_round_trips(const SeedRuns& seeds) {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "hmpa_acceptance").string();
  fs::create_directories(dir);

  const Checkpoint& ckpt = seeds.paired[0].best;
  save_checkpoint(ckpt, dir + "/ckpt.bin");
  const bool ckpt_ok =
      serialize_checkpoint(load_checkpoint(dir + "/ckpt.bin")) == serialize_checkpoint(ckpt);

  SyntheticSpec spec;
  spec.samples = 200;
  spec.seed = 8;
  GeneratedData gen = generate_synthetic(spec);
  save_dataset(gen.dataset, dir + "/ds.jsonl");
  const bool ds_ok =
      serialize_dataset(load_dataset(dir + "/ds.jsonl")) == serialize_dataset(gen.dataset);

  const Predictions& preds = seeds.paired[0].best_val_preds;
  Predictions one = ensemble_average({preds});
  const bool ens_ok = one.ids == preds.ids && one.labels == preds.labels &&
                      one.probs.size() == preds.probs.size() &&
                      std::memcmp(one.probs.data(), preds.probs.data(),
                                  preds.probs.size() * sizeof(double)) == 0;

  fs::remove_all(dir);
  report(8, ckpt_ok && ds_ok && ens_ok,
         fmt("round trips: checkpoint bytes %s, dataset file %s, one-member ensemble %s",
             ckpt_ok ? "identical" : "DIFFER", ds_ok ? "identical" : "DIFFERS",
             ens_ok ? "identity" : "NOT identity"));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  try {
    criterion_1_gradients();
    criterion_2_auroc_oracle();

    Benchmark clean;
    GapRuns gap = criterion_3_multimodal_gap(clean);
    SeedRuns seeds = criterion_4_paired_advantage(clean, gap);
    criterion_5_ensemble(seeds);
    criterion_6_determinism(clean, seeds);
    criterion_7_data_invariants();
    criterion_8_round_trips(seeds);
  } catch (const std::exception& e) {
    std::printf("[FAIL] unexpected exception: %s\n", e.what());
    ++failures;
  }
  std::printf("%d of 8 criteria passed in %.0f s\n", 8 - failures, seconds_since(t0));
  return failures;
}
