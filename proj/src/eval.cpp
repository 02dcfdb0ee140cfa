#include "hmpa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "json.hpp"

#include "hmpa/error.hpp"
#include "hmpa/io.hpp"

namespace hmpa {

using nlohmann::ordered_json;

bool Predictions::has_labels() const {
  if (ids.empty()) return false;
  for (int l : labels) {
    if (l != 0 && l != 1) return false;
  }
  return true;
}

void Predictions::validate() const {
  if (ids.size() != probs.size() || ids.size() != labels.size()) {
    throw input_error("predictions: ids, probabilities and labels must be parallel");
  }
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw input_error("predictions: probability outside [0,1]");
    }
  }
  for (int l : labels) {
    if (l != -1 && l != 0 && l != 1) {
      throw input_error("predictions: label must be 0, 1 or absent");
    }
  }
}

namespace {

void require_labeled(const Predictions& preds, const char* what) {
  preds.validate();
  if (preds.ids.empty()) throw input_error(std::string(what) + " needs at least one prediction");
  if (!preds.has_labels()) throw input_error(std::string(what) + " needs labeled predictions");
}

}  // namespace

RocCurve roc_curve(const Predictions& preds) {
  require_labeled(preds, "roc_curve");
  std::size_t pos = 0, neg = 0;
  for (int l : preds.labels) (l == 1 ? pos : neg)++;
  if (pos == 0 || neg == 0) {
    throw input_error("ROC is undefined when only one class is present");
  }
  // score -> (positives, negatives) at that score, descending.
  std::map<double, std::pair<std::size_t, std::size_t>, std::greater<double>> groups;
  for (std::size_t i = 0; i < preds.ids.size(); ++i) {
    auto& g = groups[preds.probs[i]];
    (preds.labels[i] == 1 ? g.first : g.second)++;
  }
  RocCurve curve;
  const double inf = std::numeric_limits<double>::infinity();
  curve.points.push_back({inf, 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (const auto& [score, counts] : groups) {
    tp += counts.first;
    fp += counts.second;
    curve.points.push_back({score, static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  const RocPoint& last = curve.points.back();
  if (last.fpr != 1.0 || last.tpr != 1.0) {
    curve.points.push_back({-inf, 1.0, 1.0});
  }
  return curve;
}

double auroc(const Predictions& preds) {
  const RocCurve curve = roc_curve(preds);
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

double accuracy(const Predictions& preds, double threshold) {
  require_labeled(preds, "accuracy");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.ids.size(); ++i) {
    const int predicted = preds.probs[i] >= threshold ? 1 : 0;
    if (predicted == preds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.ids.size());
}

double mean_nll(const Predictions& preds) {
  require_labeled(preds, "mean_nll");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.ids.size(); ++i) {
    const double p_true = preds.labels[i] == 1 ? preds.probs[i] : 1.0 - preds.probs[i];
    sum += -std::log(p_true);
  }
  return sum / static_cast<double>(preds.ids.size());
}

Predictions ensemble_average(const std::vector<Predictions>& runs) {
  if (runs.empty()) throw input_error("ensemble needs at least one prediction set");
  for (const Predictions& r : runs) r.validate();
  const Predictions& first = runs.front();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < first.ids.size(); ++i) {
    if (!index.emplace(first.ids[i], i).second) {
      throw input_error("duplicate id in predictions: '" + first.ids[i] + "'");
    }
  }
  Predictions out = first;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    const Predictions& run = runs[r];
    std::set<std::string> seen;
    std::vector<std::string> extra;
    for (std::size_t i = 0; i < run.ids.size(); ++i) {
      if (!seen.insert(run.ids[i]).second) {
        throw input_error("duplicate id in predictions: '" + run.ids[i] + "'");
      }
      auto it = index.find(run.ids[i]);
      if (it == index.end()) {
        extra.push_back(run.ids[i]);
        continue;
      }
      out.probs[it->second] += run.probs[i];
      if (run.labels[i] != -1 && out.labels[it->second] != -1 &&
          run.labels[i] != out.labels[it->second]) {
        throw input_error("label mismatch across runs for id '" + run.ids[i] + "'");
      }
    }
    std::vector<std::string> missing;
    for (const std::string& id : first.ids) {
      if (!seen.count(id)) missing.push_back(id);
    }
    if (!extra.empty() || !missing.empty()) {
      std::vector<std::string> diff;
      for (const std::string& id : missing) diff.push_back(id);
      for (const std::string& id : extra) diff.push_back(id);
      std::string msg = "prediction sets cover different ids; symmetric difference:";
      for (std::size_t i = 0; i < diff.size() && i < 10; ++i) msg += " " + diff[i];
      if (diff.size() > 10) msg += " ...";
      throw input_error(msg);
    }
  }
  const double k = static_cast<double>(runs.size());
  for (double& p : out.probs) p /= k;
  return out;
}

EvalReport evaluate(const Predictions& preds) {
  require_labeled(preds, "evaluate");
  EvalReport report;
  report.auroc = auroc(preds);
  report.accuracy = accuracy(preds);
  report.n = preds.ids.size();
  for (int l : preds.labels) (l == 1 ? report.positives : report.negatives)++;
  return report;
}

Predictions load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open predictions file: " + path);
  Predictions preds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string context = "line " + std::to_string(lineno);
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw input_error(context + ": not valid JSON (" + std::string(e.what()) + ")");
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("proba")) {
      throw input_error(context + ": expected an object with 'id' and 'proba'");
    }
    for (const auto& [key, value] : j.items()) {
      if (key != "id" && key != "proba" && key != "label") {
        throw input_error(context + ": unknown field '" + key + "'");
      }
    }
    if (!j["id"].is_string()) throw input_error(context + ", field id: expected a string");
    if (!j["proba"].is_number()) throw input_error(context + ", field proba: expected a number");
    preds.ids.push_back(j["id"].get<std::string>());
    preds.probs.push_back(j["proba"].get<double>());
    if (j.contains("label")) {
      if (!j["label"].is_number_integer()) {
        throw input_error(context + ", field label: expected integer 0 or 1");
      }
      preds.labels.push_back(j["label"].get<int>());
    } else {
      preds.labels.push_back(-1);
    }
  }
  preds.validate();
  return preds;
}

std::string serialize_predictions(const Predictions& preds) {
  preds.validate();
  std::string out;
  for (std::size_t i = 0; i < preds.ids.size(); ++i) {
    ordered_json j;
    j["id"] = preds.ids[i];
    j["proba"] = preds.probs[i];
    if (preds.labels[i] != -1) j["label"] = preds.labels[i];
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_predictions(const Predictions& preds, const std::string& path) {
  atomic_write_file(path, serialize_predictions(preds));
}

std::string serialize_roc_csv(const RocCurve& curve) {
  std::string out = "threshold,fpr,tpr\n";
  char buf[128];
  for (const RocPoint& p : curve.points) {
    std::string thr;
    if (std::isinf(p.threshold)) {
      thr = p.threshold > 0 ? "inf" : "-inf";
    } else {
      std::snprintf(buf, sizeof(buf), "%.6f", p.threshold);
      thr = buf;
    }
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", thr.c_str(), p.fpr, p.tpr);
    out += buf;
  }
  return out;
}

void save_roc_csv(const RocCurve& curve, const std::string& path) {
  atomic_write_file(path, serialize_roc_csv(curve));
}

}  // namespace hmpa
