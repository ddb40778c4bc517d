#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sgml_cli/cli.hpp"

namespace fs = std::filesystem;
using sgml::cli::run;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome call(std::vector<std::string> args) {
  args.insert(args.begin(), "sgml");
  std::ostringstream out, err;
  Outcome o;
  o.code = run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("sgml_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  std::string dir(const std::string& name) const { return (root_ / name).string(); }

  fs::path root_;
};

// A small problem so every command runs in well under a second.
const std::vector<std::string> kSmall{"--categories", "2",  "--classes-per-category", "5", "--trunk-dims", "8",
                                      "--fc-dim",     "8",  "--emb-dim",              "4", "--epochs",     "2",
                                      "--n-classes",  "4",  "--m-per-class",          "3", "--lr",         "0.01"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail = kSmall) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_F(Cli, GenDataDefaultAndDeterministic) {
  const Outcome a = call({"gen-data", "--seed", "7", "--out", dir("a")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("1000 records"), std::string::npos);
  const Outcome b = call({"gen-data", "--seed", "7", "--out", dir("b")});
  ASSERT_EQ(b.code, 0);
  for (const char* f : {"dataset.sgml", "dataset.sgml.splits.json", "config.json"}) {
    EXPECT_EQ(slurp(root_ / "a" / f), slurp(root_ / "b" / f)) << f;
  }
}

TEST_F(Cli, InvalidSpecFailsCleanly) {
  const Outcome o = call({"gen-data", "--attributes", "4", "--out", dir("bad")});
  EXPECT_NE(o.code, 0);
  EXPECT_NE(o.err.find("K=4"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir("bad")));
}

TEST_F(Cli, UnknownFlagIsAnError) {
  EXPECT_NE(call({"train", "--bogus", "1"}).code, 0);
  EXPECT_NE(call({}).code, 0);
}

TEST_F(Cli, TrainMetricOnlyAndDeterminism) {
  const Outcome a = call(with({"train", "--variant", "metric_only", "--out", dir("a")}));
  ASSERT_EQ(a.code, 0) << a.err;
  const Outcome b = call(with({"train", "--variant", "metric_only", "--out", dir("b")}));
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(root_ / "a" / "history.csv"), slurp(root_ / "b" / "history.csv"));
  EXPECT_EQ(slurp(root_ / "a" / "checkpoint.json"), slurp(root_ / "b" / "checkpoint.json"));

  std::istringstream csv(slurp(root_ / "a" / "history.csv"));
  std::string line;
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    std::stringstream fields(line);
    std::string step, metric, attr;
    std::getline(fields, step, ',');
    std::getline(fields, metric, ',');
    std::getline(fields, attr, ',');
    EXPECT_EQ(std::stod(attr), 0.0);
    ++rows;
  }
  EXPECT_GT(rows, 0);
}

TEST_F(Cli, PaperPresetFlagsAreRecorded) {
  const Outcome o = call(with({"train", "--variant", "sgml", "--alpha", "2", "--beta", "0.5", "--out", dir("t")}));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto cfg = nlohmann::json::parse(slurp(root_ / "t" / "config.json"));
  EXPECT_EQ(cfg["command"], "train");
  EXPECT_EQ(cfg["config"]["train"]["variant"], "sgml");
  EXPECT_EQ(cfg["config"]["train"]["alpha"], 2.0);
  EXPECT_EQ(cfg["config"]["train"]["beta"], 0.5);
}

TEST_F(Cli, ConfigFileThenFlagsPrecedence) {
  const fs::path cfg = root_ / "cfg.json";
  std::ofstream(cfg) << R"({"seed": 3, "train": {"epochs": 4, "learning_rate": 0.005, "beta": 0.1}})";
  const Outcome o = call(with({"train", "--config", cfg.string(), "--out", dir("t")}, kSmall));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto resolved = nlohmann::json::parse(slurp(root_ / "t" / "config.json"))["config"];
  EXPECT_EQ(resolved["seed"], 3);
  EXPECT_EQ(resolved["train"]["seed"], 3);
  EXPECT_EQ(resolved["train"]["epochs"], 2);            // flag beats file
  EXPECT_EQ(resolved["train"]["learning_rate"], 0.01);  // flag beats file
  EXPECT_EQ(resolved["train"]["beta"], 0.1);            // file beats default
  EXPECT_EQ(resolved["train"]["alpha"], 2.0);           // default

  std::ofstream(cfg) << R"({"train": {"epoch": 4}})";
  EXPECT_NE(call({"train", "--config", cfg.string(), "--out", dir("u")}).code, 0);
}

TEST_F(Cli, EvalLayersAndKs) {
  ASSERT_EQ(call(with({"train", "--out", dir("t")})).code, 0);
  const Outcome o = call({"eval", "--checkpoint", dir("t") + "/checkpoint.json", "--categories", "2",
                          "--classes-per-category", "5", "--layers", "emb,fc,trunk", "--ks", "1,2,4,8,16,32",
                          "--out", dir("e")});
  ASSERT_EQ(o.code, 0) << o.err;
  const std::string csv = slurp(root_ / "e" / "recall.csv");
  std::istringstream lines(csv);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 1 + 3 * 6);
  EXPECT_NE(o.out.find("trunk"), std::string::npos);
  EXPECT_NE(o.out.find("R@32"), std::string::npos);

  const Outcome loo = call({"eval", "--checkpoint", dir("t") + "/checkpoint.json", "--categories", "2",
                            "--classes-per-category", "5", "--mode", "leave-one-out", "--out", dir("l")});
  EXPECT_EQ(loo.code, 0) << loo.err;
}

TEST_F(Cli, EvalRejectsMismatchedData) {
  ASSERT_EQ(call(with({"train", "--out", dir("t")})).code, 0);
  const Outcome o = call({"eval", "--checkpoint", dir("t") + "/checkpoint.json", "--feature-dim", "16",
                          "--out", dir("e")});
  EXPECT_EQ(o.code, 2);
  EXPECT_FALSE(fs::exists(dir("e")));
}

TEST_F(Cli, SweepSortedAndSingleCellMatchesTrainEval) {
  const Outcome s = call(with({"sweep", "--alphas", "3,2", "--betas", "0.5,0", "--out", dir("s")}));
  ASSERT_EQ(s.code, 0) << s.err;
  const std::string csv = slurp(root_ / "s" / "sweep.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "alpha,beta,recall_at_1");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  std::vector<std::pair<double, double>> keys;
  while (std::getline(lines, line)) {
    std::stringstream f(line);
    std::string a, b;
    std::getline(f, a, ',');
    std::getline(f, b, ',');
    keys.push_back({std::stod(a), std::stod(b)});
  }
  EXPECT_EQ(keys, (std::vector<std::pair<double, double>>{{2, 0}, {2, 0.5}, {3, 0}, {3, 0.5}}));

  const Outcome one = call(with({"sweep", "--alphas", "2.5", "--betas", "0.3", "--out", dir("one")}));
  ASSERT_EQ(one.code, 0);
  ASSERT_EQ(call(with({"train", "--alpha", "2.5", "--beta", "0.3", "--out", dir("t")})).code, 0);
  ASSERT_EQ(call({"eval", "--checkpoint", dir("t") + "/checkpoint.json", "--categories", "2",
                  "--classes-per-category", "5", "--ks", "1", "--out", dir("e")})
                .code,
            0);
  std::istringstream sweep_csv(slurp(root_ / "one" / "sweep.csv")), eval_csv(slurp(root_ / "e" / "recall.csv"));
  std::getline(sweep_csv, line);
  std::getline(sweep_csv, line);
  const std::string sweep_recall = line.substr(line.rfind(',') + 1);
  std::getline(eval_csv, line);
  std::getline(eval_csv, line);
  std::stringstream f(line);
  std::string layer, k, recall;
  std::getline(f, layer, ',');
  std::getline(f, k, ',');
  std::getline(f, recall, ',');
  EXPECT_EQ(sweep_recall, recall);
}

TEST_F(Cli, AblateRowOrder) {
  const Outcome o = call(with({"ablate", "--ks", "1", "--out", dir("a")}));
  ASSERT_EQ(o.code, 0) << o.err;
  const std::string csv = slurp(root_ / "a" / "ablate.csv");
  const auto p1 = csv.find("\nmetric_only,emb,");
  const auto p2 = csv.find("\nattr_only,fc,");
  const auto p3 = csv.find("\nmultitask,emb,");
  const auto p4 = csv.find("\nsgml,emb,");
  ASSERT_NE(p1, std::string::npos);
  ASSERT_NE(p2, std::string::npos);
  ASSERT_NE(p3, std::string::npos);
  ASSERT_NE(p4, std::string::npos);
  EXPECT_LT(p1, p2);
  EXPECT_LT(p2, p3);
  EXPECT_LT(p3, p4);
}

TEST_F(Cli, GradcheckPassesAndInjectedFaultFails) {
  const Outcome ok = call({"gradcheck", "--scalar-cases", "50", "--network-cases", "2", "--out", dir("g")});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("sgml_objective"), std::string::npos);
  const Outcome bad =
      call({"gradcheck", "--scalar-cases", "50", "--network-cases", "2", "--inject-fault", "--out", dir("f")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, MissingDataFileLeavesNoOutputs) {
  const Outcome o = call(with({"train", "--data", dir("missing.sgml"), "--out", dir("t")}));
  EXPECT_EQ(o.code, 2);
  EXPECT_FALSE(fs::exists(dir("t")));
}

TEST_F(Cli, TrainsOnSavedDataWithItsSplits) {
  ASSERT_EQ(call({"gen-data", "--categories", "2", "--classes-per-category", "5", "--out", dir("d")}).code, 0);
  const Outcome from_file = call(with({"train", "--data", dir("d") + "/dataset.sgml", "--out", dir("a")}));
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  const Outcome generated = call(with({"train", "--out", dir("b")}));
  ASSERT_EQ(generated.code, 0);
  EXPECT_EQ(slurp(root_ / "a" / "checkpoint.json"), slurp(root_ / "b" / "checkpoint.json"));
}
