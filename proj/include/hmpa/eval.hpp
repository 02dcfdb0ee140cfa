#pragma once

#include <string>
#include <vector>

namespace hmpa {

struct Predictions {
  std::vector<std::string> ids;
  std::vector<double> probs;   // P(hateful), in [0,1]
  std::vector<int> labels;     // -1 = unlabeled
  bool has_labels() const;     // true when every label is 0/1
  void validate() const;       // throws input_error
};

struct RocPoint {
  double threshold;  // +inf at (0,0); -inf closes the curve at (1,1)
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;
};

// Threshold sweep over unique scores, descending; tied scores cross together.
RocCurve roc_curve(const Predictions& preds);

// Trapezoidal area under roc_curve. Matches the pairwise ranking statistic
// (ties half credit) within 1e-9; tests hold it to that.
double auroc(const Predictions& preds);

double accuracy(const Predictions& preds, double threshold = 0.5);

// Mean negative log-likelihood of the true labels.
double mean_nll(const Predictions& preds);

// Per-id arithmetic mean of probabilities; all runs must cover the same ids.
Predictions ensemble_average(const std::vector<Predictions>& runs);

struct EvalReport {
  double auroc = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

EvalReport evaluate(const Predictions& preds);

Predictions load_predictions(const std::string& path);
void save_predictions(const Predictions& preds, const std::string& path);
std::string serialize_predictions(const Predictions& preds);

void save_roc_csv(const RocCurve& curve, const std::string& path);
std::string serialize_roc_csv(const RocCurve& curve);

}  // namespace hmpa
