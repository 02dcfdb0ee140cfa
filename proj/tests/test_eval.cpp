#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "hmpa/error.hpp"
#include "hmpa/eval.hpp"
#include "hmpa/io.hpp"
#include "hmpa/rng.hpp"

#include "oracles.hpp"

using namespace hmpa;
namespace fs = std::filesystem;

namespace {

Predictions make_preds(std::vector<double> probs, std::vector<int> labels) {
  Predictions p;
  for (std::size_t i = 0; i < probs.size(); ++i) p.ids.push_back("id" + std::to_string(i));
  p.probs = std::move(probs);
  p.labels = std::move(labels);
  return p;
}

}  // namespace

TEST_CASE("roc curve of a hand-worked example") {
  Predictions p = make_preds({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
  RocCurve curve = roc_curve(p);

  REQUIRE(curve.points.size() == 5);
  CHECK(std::isinf(curve.points[0].threshold));
  CHECK(curve.points[0].fpr == 0.0);
  CHECK(curve.points[0].tpr == 0.0);
  CHECK(curve.points[1].threshold == 0.8);
  CHECK(curve.points[1].tpr == 0.5);
  CHECK(curve.points[1].fpr == 0.0);
  CHECK(curve.points[2].threshold == 0.4);
  CHECK(curve.points[2].tpr == 0.5);
  CHECK(curve.points[2].fpr == 0.5);
  CHECK(curve.points[3].threshold == 0.35);
  CHECK(curve.points[3].tpr == 1.0);
  CHECK(curve.points[3].fpr == 0.5);
  CHECK(curve.points.back().fpr == 1.0);
  CHECK(curve.points.back().tpr == 1.0);

  CHECK(auroc(p) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(auroc(p) == doctest::Approx(oracle::pairwise_auroc(p.probs, p.labels)).epsilon(1e-15));
}

TEST_CASE("curves are monotone and closed for every score pattern") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rand_index(rng, 30);
    std::vector<double> probs;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
      probs.push_back(trial % 3 == 0 ? 0.25 * rand_index(rng, 5)  // heavy ties
                                     : rand_uniform(rng));
      labels.push_back(static_cast<int>(rand_index(rng, 2)));
    }
    bool both = false;
    for (std::size_t i = 1; i < n; ++i) both |= labels[i] != labels[0];
    if (!both) labels[0] = 1 - labels[0];

    RocCurve curve = roc_curve(make_preds(probs, labels));
    REQUIRE(curve.points.size() >= 2);
    CHECK(curve.points.front().fpr == 0.0);
    CHECK(curve.points.front().tpr == 0.0);
    CHECK(curve.points.back().fpr == 1.0);
    CHECK(curve.points.back().tpr == 1.0);
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
      CHECK(curve.points[i].fpr >= curve.points[i - 1].fpr);
      CHECK(curve.points[i].tpr >= curve.points[i - 1].tpr);
      CHECK(curve.points[i].threshold < curve.points[i - 1].threshold);
    }
  }
}

TEST_CASE("area under the curve equals the pairwise ranking statistic") {
  Rng rng(32);
  for (int trial = 0; trial < 80; ++trial) {
    const std::size_t n = 2 + rand_index(rng, 38);
    std::vector<double> probs;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
      // every fourth trial quantizes scores so ties are common
      probs.push_back(trial % 4 == 0 ? 0.2 * rand_index(rng, 6) : rand_uniform(rng));
      labels.push_back(static_cast<int>(rand_index(rng, 2)));
    }
    bool both = false;
    for (std::size_t i = 1; i < n; ++i) both |= labels[i] != labels[0];
    if (!both) labels[0] = 1 - labels[0];

    Predictions p = make_preds(probs, labels);
    CHECK(auroc(p) == doctest::Approx(oracle::pairwise_auroc(probs, labels)).epsilon(1e-9));
  }

  SUBCASE("all scores tied gives exactly one half") {
    Predictions tie = make_preds({0.5, 0.5, 0.5}, {1, 0, 1});
    CHECK(auroc(tie) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("perfect and inverted rankings") {
    CHECK(auroc(make_preds({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0})) == 1.0);
    CHECK(auroc(make_preds({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1})) == 0.0);
  }
}

TEST_CASE("degenerate prediction sets are refused") {
  CHECK_THROWS_WITH_AS(auroc(make_preds({0.5, 0.6}, {1, 1})), doctest::Contains("one class"),
                       input_error);
  CHECK_THROWS_AS(auroc(make_preds({0.5}, {-1})), input_error);  // unlabeled
  CHECK_THROWS_AS(roc_curve(Predictions{}), input_error);

  Predictions bad = make_preds({1.5}, {1});
  CHECK_THROWS_AS(bad.validate(), input_error);
  bad = make_preds({0.5, 0.5}, {1});
  CHECK_THROWS_AS(bad.validate(), input_error);
}

TEST_CASE("accuracy thresholds at one half by default") {
  Predictions p = make_preds({0.5, 0.49, 0.8, 0.2}, {1, 1, 1, 0});
  CHECK(accuracy(p) == doctest::Approx(0.75).epsilon(1e-15));  // 0.5 counts as positive
  CHECK(accuracy(p, 0.9) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("mean negative log likelihood") {
  Predictions p = make_preds({0.8, 0.4}, {1, 0});
  const double expect = (-std::log(0.8) - std::log(0.6)) / 2.0;
  CHECK(mean_nll(p) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("ensembling averages per id and never hurts the log loss") {
  Predictions a = make_preds({0.9, 0.2, 0.6}, {1, 0, 1});
  Predictions b = make_preds({0.5, 0.4, 0.8}, {1, 0, 1});
  Predictions avg = ensemble_average({a, b});
  REQUIRE(avg.ids == a.ids);
  CHECK(avg.probs[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(avg.probs[1] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(avg.labels == a.labels);

  // order of the first run wins even when members are permuted
  Predictions b_perm;
  b_perm.ids = {"id2", "id0", "id1"};
  b_perm.probs = {0.8, 0.5, 0.4};
  b_perm.labels = {1, 1, 0};
  Predictions avg2 = ensemble_average({a, b_perm});
  CHECK(avg2.ids == a.ids);
  CHECK(avg2.probs == avg.probs);

  SUBCASE("convexity of the log loss, randomized") {
    Rng rng(33);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<Predictions> runs;
      const std::size_t n = 5 + rand_index(rng, 20);
      std::vector<int> labels;
      for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(rand_index(rng, 2)));
      const std::size_t members = 2 + rand_index(rng, 4);
      double mean_member_nll = 0.0;
      for (std::size_t m = 0; m < members; ++m) {
        std::vector<double> probs;
        for (std::size_t i = 0; i < n; ++i) probs.push_back(0.01 + 0.98 * rand_uniform(rng));
        runs.push_back(make_preds(probs, labels));
        mean_member_nll += mean_nll(runs.back());
      }
      mean_member_nll /= static_cast<double>(members);
      CHECK(mean_nll(ensemble_average(runs)) <= mean_member_nll + 1e-12);
    }
  }

  SUBCASE("mismatched runs are named") {
    Predictions c = make_preds({0.1}, {0});
    c.ids[0] = "other";
    CHECK_THROWS_WITH_AS(ensemble_average({a, c}), doctest::Contains("different ids"),
                         input_error);

    Predictions dup = a;
    dup.ids[1] = "id0";
    CHECK_THROWS_WITH_AS(ensemble_average({dup}), doctest::Contains("duplicate"), input_error);

    Predictions flipped = b;
    flipped.labels[0] = 0;
    CHECK_THROWS_WITH_AS(ensemble_average({a, flipped}), doctest::Contains("label mismatch"),
                         input_error);

    CHECK_THROWS_AS(ensemble_average({}), input_error);
  }
}

TEST_CASE("evaluate bundles the headline numbers") {
  Predictions p = make_preds({0.9, 0.2, 0.6, 0.3}, {1, 0, 1, 0});
  EvalReport r = evaluate(p);
  CHECK(r.n == 4);
  CHECK(r.positives == 2);
  CHECK(r.negatives == 2);
  CHECK(r.auroc == 1.0);
  CHECK(r.accuracy == 1.0);
}

TEST_CASE("prediction files round trip bitwise, labels optional") {
  Predictions p = make_preds({1.0 / 3.0, 0.25, 0.99999999999999}, {1, -1, 0});
  const std::string path = (fs::temp_directory_path() / "preds_rt.jsonl").string();
  save_predictions(p, path);
  Predictions back = load_predictions(path);
  CHECK(back.ids == p.ids);
  CHECK(back.labels == p.labels);
  REQUIRE(back.probs.size() == p.probs.size());
  CHECK(std::memcmp(back.probs.data(), p.probs.data(), p.probs.size() * sizeof(double)) == 0);
  CHECK(serialize_predictions(back) == serialize_predictions(p));

  SUBCASE("loader errors carry line numbers") {
    atomic_write_file(path, "{\"id\":\"a\",\"proba\":0.5}\n{\"id\":\"b\"}\n");
    CHECK_THROWS_WITH_AS(load_predictions(path), doctest::Contains("line 2"), input_error);
    atomic_write_file(path, "{\"id\":\"a\",\"proba\":0.5,\"score\":1}\n");
    CHECK_THROWS_WITH_AS(load_predictions(path), doctest::Contains("unknown field"),
                         input_error);
  }
  fs::remove(path);
}

TEST_CASE("roc csv export") {
  Predictions p = make_preds({0.75, 0.25}, {1, 0});
  const std::string csv = serialize_roc_csv(roc_curve(p));
  CHECK(csv.rfind("threshold,fpr,tpr\n", 0) == 0);
  CHECK(csv.find("inf,0.000000,0.000000\n") != std::string::npos);
  CHECK(csv.find("0.750000,0.000000,1.000000\n") != std::string::npos);
  CHECK(csv.find("0.250000,1.000000,1.000000\n") != std::string::npos);
}
