#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "hmpa/io.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "hmpa_cli_test";

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult run(const std::string& args) {
  const fs::path out = kWork / "stdout.txt";
  const fs::path err = kWork / "stderr.txt";
  fs::create_directories(kWork);
  const std::string cmd =
      std::string(HMPA_BIN) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = status == -1 ? -1 : WEXITSTATUS(status);
  r.out = hmpa::read_file(out.string());
  r.err = hmpa::read_file(err.string());
  return r;
}

std::string p(const char* rel) { return (kWork / rel).string(); }

ordered_json read_json(const std::string& path) {
  return ordered_json::parse(hmpa::read_file(path));
}

}  // namespace

TEST_CASE("cli end to end: generate, train, eval, ensemble, roc") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);

  RunResult gen = run("gen-data --out " + p("data") + " --samples 60 --data-seed 5");
  REQUIRE(gen.code == 0);
  CHECK(fs::exists(p("data/dataset.jsonl")));
  CHECK(fs::exists(p("data/vocab.txt")));
  CHECK(fs::exists(p("data/config.resolved.json")));
  CHECK(gen.out.find("60 records") != std::string::npos);

  SUBCASE("generation is reproducible through the cli") {
    RunResult again = run("gen-data --out " + p("data2") + " --samples 60 --data-seed 5");
    REQUIRE(again.code == 0);
    CHECK(hmpa::read_file(p("data2/dataset.jsonl")) == hmpa::read_file(p("data/dataset.jsonl")));
    RunResult other = run("gen-data --out " + p("data3") + " --samples 60 --data-seed 6");
    REQUIRE(other.code == 0);
    CHECK(hmpa::read_file(p("data3/dataset.jsonl")) != hmpa::read_file(p("data/dataset.jsonl")));
  }

  const std::string model_flags = " --hidden-dim 8 --num-layers 1 --num-heads 2";
  RunResult train = run("train --data " + p("data/dataset.jsonl") + " --vocab " +
                        p("data/vocab.txt") + " --out " + p("run1") + model_flags +
                        " --epochs 1 --batch-size 8 --eval-every 2 --seed 1");
  REQUIRE(train.code == 0);
  CHECK(fs::exists(p("run1/checkpoint.bin")));
  CHECK(fs::exists(p("run1/metrics.csv")));
  CHECK(fs::exists(p("run1/val_predictions.jsonl")));
  CHECK(fs::exists(p("run1/val_data.jsonl")));

  const ordered_json resolved = read_json(p("run1/config.resolved.json"));
  CHECK(resolved.at("model").at("hidden_dim") == 8);
  CHECK(resolved.at("train").at("epochs") == 1);
  CHECK(resolved.at("command") == "train");
  CHECK(resolved.at("model").at("region_feat_dim") == 16);  // taken from the data

  RunResult eval = run("eval --checkpoint " + p("run1/checkpoint.bin") + " --data " +
                       p("run1/val_data.jsonl") + " --vocab " + p("data/vocab.txt") +
                       " --out " + p("eval1"));
  REQUIRE(eval.code == 0);
  CHECK(fs::exists(p("eval1/predictions.jsonl")));
  CHECK(fs::exists(p("eval1/report.json")));
  CHECK(eval.out.find("auroc=") != std::string::npos);
  const ordered_json report = read_json(p("eval1/report.json"));
  CHECK(report.at("n") == 12);  // 20% of 60

  RunResult train2 = run("train --data " + p("data/dataset.jsonl") + " --vocab " +
                         p("data/vocab.txt") + " --out " + p("run2") + model_flags +
                         " --epochs 1 --batch-size 8 --eval-every 2 --seed 2");
  REQUIRE(train2.code == 0);

  RunResult ens = run("ensemble --pred " + p("run1/val_predictions.jsonl") + " --pred " +
                      p("run2/val_predictions.jsonl") + " --out " + p("ens"));
  REQUIRE(ens.code == 0);
  CHECK(fs::exists(p("ens/ensemble_predictions.jsonl")));
  CHECK(ens.out.find("mean member auroc") != std::string::npos);

  RunResult roc = run("roc --pred " + p("run1/val_predictions.jsonl") + " --out " + p("roc"));
  REQUIRE(roc.code == 0);
  const std::string csv = hmpa::read_file(p("roc/roc.csv"));
  CHECK(csv.rfind("threshold,fpr,tpr\n", 0) == 0);

  SUBCASE("evaluating with a mismatched vocab fails cleanly") {
    hmpa::atomic_write_file(p("tiny_vocab.txt"), "<pad>\n<cls>\n<sep>\n<unk>\n");
    RunResult bad = run("eval --checkpoint " + p("run1/checkpoint.bin") + " --data " +
                        p("run1/val_data.jsonl") + " --vocab " + p("tiny_vocab.txt") +
                        " --out " + p("eval_bad"));
    CHECK(bad.code == 1);
    CHECK(bad.err.find("vocab size") != std::string::npos);
  }
}

TEST_CASE("config file values apply but lose to explicit flags") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);

  ordered_json cfg;
  cfg["data"]["samples"] = 40;
  cfg["data"]["num_concepts"] = 4;
  cfg["data"]["seed"] = 9;
  hmpa::atomic_write_file(p("cfg.json"), cfg.dump());

  RunResult gen = run("gen-data --config " + p("cfg.json") + " --out " + p("gen") +
                      " --samples 48");
  REQUIRE(gen.code == 0);
  const ordered_json resolved = read_json(p("gen/config.resolved.json"));
  CHECK(resolved.at("data").at("samples") == 48);       // flag beat the file
  CHECK(resolved.at("data").at("num_concepts") == 4);   // file beat the default
  CHECK(resolved.at("data").at("seed") == 9);
  CHECK(gen.out.find("48 records") != std::string::npos);
}

TEST_CASE("config and flag mistakes exit with code 1 and a pointed message") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);

  hmpa::atomic_write_file(p("bad.json"), R"({"model":{"hiden_dim":16}})");
  RunResult bad_key = run("gen-data --config " + p("bad.json") + " --out " + p("x"));
  CHECK(bad_key.code == 1);
  CHECK(bad_key.err.find("unknown key model.hiden_dim") != std::string::npos);

  hmpa::atomic_write_file(p("bad_type.json"), R"({"train":{"lr":"fast"}})");
  RunResult bad_type = run("gen-data --config " + p("bad_type.json") + " --out " + p("x"));
  CHECK(bad_type.code == 1);
  CHECK(bad_type.err.find("train.lr") != std::string::npos);

  hmpa::atomic_write_file(p("not_json.json"), "{");
  RunResult not_json = run("gen-data --config " + p("not_json.json") + " --out " + p("x"));
  CHECK(not_json.code == 1);

  RunResult bad_flag = run("train --no-such-flag");
  CHECK(bad_flag.code != 0);

  RunResult missing = run("eval --checkpoint " + p("nope.bin") + " --data " + p("nope.jsonl") +
                          " --vocab " + p("nope.txt") + " --out " + p("x"));
  CHECK(missing.code == 1);
  CHECK(missing.err.find("error:") != std::string::npos);
}

TEST_CASE("the corruption flags reach the dataset") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);

  RunResult clean = run("gen-data --out " + p("clean") + " --samples 40 --data-seed 2");
  RunResult corr = run("gen-data --out " + p("corr") +
                       " --samples 40 --data-seed 2 --corrupt-regions 1.0 --corrupt-seed 4");
  REQUIRE(clean.code == 0);
  REQUIRE(corr.code == 0);
  CHECK(hmpa::read_file(p("clean/dataset.jsonl")) != hmpa::read_file(p("corr/dataset.jsonl")));

  std::istringstream in(hmpa::read_file(p("corr/dataset.jsonl")));
  std::string header;
  std::getline(in, header);
  const ordered_json meta = ordered_json::parse(header);
  CHECK(meta.at("meta").at("corruption").at("regions_rate") == 1.0);
  CHECK(meta.at("meta").at("corruption").at("seed") == 4);
}

TEST_CASE("the builtin gradient check passes quickly") {
  RunResult gc = run("gradcheck --coords 8");
  CHECK(gc.code == 0);
  CHECK(gc.out.find("PASS") != std::string::npos);
}
