#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mucot/config.hpp"

namespace mucot {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string output;  // stdout and stderr
};

Run run(const std::string& args) {
  const std::string cmd = std::string(MUCOT_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = ::pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("mucot-cli-" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const auto r = run("synth --out " + (dir_ / "data").string() + " --count 240 --seed 1 --langs en,ml,bn");
    ASSERT_EQ(r.code, 0) << r.output;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static fs::path path(const std::string& name) { return dir_ / name; }

  // A small finetuning run over ml records and their bn translations.
  static std::string write_config(const std::string& name, const std::string& out_dir) {
    const auto cfg = path(name);
    std::ofstream(cfg) << "train_file = aug/augmented.jsonl\n"
                          "validation_file = val.jsonl\n"
                          "out_dir = " << out_dir << "\n"
                          "vocab_size = 300\nd_model = 16\nn_layers = 2\nn_heads = 2\nd_ffn = 32\n"
                          "max_positions = 64\nmax_length = 64\ndoc_stride = 16\nbatch_size = 8\n"
                          "max_steps = 12\nlearning_rate = 1e-3\ncontrastive_interval = 3\n"
                          "max_contrastive_steps = 9\ntap_layer = 1\neval_interval = 6\n";
    return cfg.string();
  }

  static void prepare_training_data() {
    if (fs::exists(path("aug/augmented.jsonl"))) return;
    std::istringstream lines(slurp(path("data/ml.jsonl")));
    std::string line;
    std::string train;
    std::string val;
    for (int i = 0; std::getline(lines, line); ++i) {
      if (i < 24) train += line + "\n";
      else if (i < 32) val += line + "\n";
    }
    std::ofstream(path("ml_train.jsonl")) << train;
    std::ofstream(path("val.jsonl")) << val;
    std::ofstream(path("plan_bn.txt")) << "bn translation bn:dict=ml-bn.tsv\n";
    const auto r = run("augment --input " + path("ml_train.jsonl").string() + " --plan " + path("plan_bn.txt").string() +
                       " --adapters " + path("data/adapters").string() + " --out " + path("aug").string());
    ASSERT_EQ(r.code, 0) << r.output;
  }

  static fs::path dir_;
};

fs::path Cli::dir_;

TEST_F(Cli, HelpDocumentsEveryConfigKey) {
  for (const char* cmd : {"--help", "finetune --help", "pretrain --help"}) {
    const auto r = run(cmd);
    EXPECT_EQ(r.code, 0);
    for (const auto& k : config_keys()) EXPECT_NE(r.output.find(k.name), std::string::npos) << cmd << " " << k.name;
  }
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("split --bogus").code, 2);
}

TEST_F(Cli, SplitDefaultsAndDeterminism) {
  const auto input = path("data/en.jsonl").string();
  const auto a = run("split --input " + input + " --out " + path("split_a").string());
  ASSERT_EQ(a.code, 0) << a.output;
  ASSERT_EQ(run("split --input " + input + " --out " + path("split_b").string()).code, 0);
  const auto manifest = nlohmann::json::parse(slurp(path("split_a/manifest.json")));
  EXPECT_EQ(manifest["test_size"], 100);
  EXPECT_EQ(manifest["val_size"], 100);
  for (const char* f : {"train.jsonl", "validation.jsonl", "test.jsonl", "manifest.json"}) {
    EXPECT_EQ(slurp(path("split_a") / f), slurp(path("split_b") / f)) << f;
  }
  const auto c = run("split --input " + input + " --seed 3 --out " + path("split_c").string());
  ASSERT_EQ(c.code, 0);
  EXPECT_NE(slurp(path("split_a/test.jsonl")), slurp(path("split_c/test.jsonl")));
}

TEST_F(Cli, SplitMissingInputIsUsageError) {
  const auto r = run("split --input /nonexistent/records.jsonl --out " + path("never").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("/nonexistent/records.jsonl"), std::string::npos);
}

TEST_F(Cli, AugmentPivotIdentityAndMissingAdapter) {
  std::ofstream(path("plan_pivot.txt")) << "# two Indo-Aryan style targets through English\n"
                                           "bn translation en:dict=ml-en.tsv bn:dict=en-bn.tsv\n";
  const auto ml = path("data/ml.jsonl").string();
  const auto adapters = path("data/adapters").string();
  const auto pivot = run("augment --input " + ml + " --plan " + path("plan_pivot.txt").string() + " --adapters " +
                         adapters + " --out " + path("aug_pivot").string());
  ASSERT_EQ(pivot.code, 0) << pivot.output;
  const auto report = nlohmann::json::parse(slurp(path("aug_pivot/augment_report.json")));
  EXPECT_EQ(report["total"]["attempted"], 240);
  EXPECT_EQ(report["total"]["attempted"].get<int>(),
            report["total"]["succeeded"].get<int>() + report["total"]["dropped"].get<int>());
  EXPECT_TRUE(fs::exists(path("aug_pivot/augmented.jsonl")));

  std::ofstream(path("plan_identity.txt")) << "ml translation ml:identity\n";
  const auto identity = run("augment --input " + ml + " --plan " + path("plan_identity.txt").string() +
                            " --adapters " + adapters + " --out " + path("aug_identity").string());
  ASSERT_EQ(identity.code, 0) << identity.output;
  EXPECT_EQ(nlohmann::json::parse(slurp(path("aug_identity/augment_report.json")))["total"]["dropped"], 0);

  std::ofstream(path("plan_parallel.txt")) << "te translation te:parallel\n";
  const auto missing = run("augment --input " + ml + " --plan " + path("plan_parallel.txt").string() + " --adapters " +
                           adapters + " --out " + path("aug_missing").string());
  EXPECT_EQ(missing.code, 3);
  EXPECT_NE(missing.output.find("te.jsonl"), std::string::npos) << missing.output;
}

TEST_F(Cli, FinetuneEvaluateAndInspect) {
  prepare_training_data();
  const auto cfg = write_config("run.cfg", "ft");
  const auto r = run("finetune --config " + cfg);
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"best.json", "ckpt-6.json", "ckpt-12.json", "train_log.jsonl", "eval_log.jsonl", "vocab.txt",
                        "config.txt"}) {
    EXPECT_TRUE(fs::exists(path("ft") / f)) << f;
  }
  std::istringstream log(slurp(path("ft/train_log.jsonl")));
  std::size_t with_contrastive = 0;
  for (std::string line; std::getline(log, line);) {
    const auto j = nlohmann::json::parse(line);
    const auto step = j["step"].get<std::size_t>();
    if (step % 3 == 0 && step <= 9) {
      EXPECT_GT(j["l_contrastive"].get<double>(), 0.0) << step;
      ++with_contrastive;
    }
  }
  EXPECT_EQ(with_contrastive, 3u);

  const auto eval = run("evaluate --checkpoint " + path("ft/best.json").string() + " --input " + path("val.jsonl").string() +
                        " --out " + path("report.json").string() + " --per-record");
  ASSERT_EQ(eval.code, 0) << eval.output;
  const auto report = nlohmann::json::parse(slurp(path("report.json")));
  EXPECT_TRUE(report.contains("overall"));
  EXPECT_TRUE(report["per_language"].contains("ml"));
  const auto csv = slurp(path("report.csv"));
  EXPECT_EQ(csv.rfind("id,language,gold,pred,jaccard\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);

  const auto inspect = run("inspect --checkpoint " + path("ft/best.json").string());
  ASSERT_EQ(inspect.code, 0);
  EXPECT_NE(inspect.output.find("\"parameters\""), std::string::npos);
}

TEST_F(Cli, ContrastiveOffOmitsTheTerm) {
  prepare_training_data();
  const auto cfg = write_config("run_off.cfg", "ft_off");
  const auto r = run("finetune --config " + cfg + " --set w_contrastive=0");
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream log(slurp(path("ft_off/train_log.jsonl")));
  for (std::string line; std::getline(log, line);) {
    EXPECT_FALSE(nlohmann::json::parse(line).contains("l_contrastive")) << line;
  }
}

TEST_F(Cli, ResumeReproducesTheFullRun) {
  prepare_training_data();
  const auto cfg = write_config("run_full.cfg", "ft_full");
  ASSERT_EQ(run("finetune --config " + cfg).code, 0);
  fs::copy(path("ft_full"), path("ft_cut"));
  for (const char* f : {"ckpt-12.json", "ckpt-12.bin", "ckpt-12.optim.bin", "best.json", "best.bin"}) {
    fs::remove(path("ft_cut") / f);
  }
  const auto resumed = run("finetune --config " + cfg + " --set out_dir=" + path("ft_cut").string() + " --resume");
  ASSERT_EQ(resumed.code, 0) << resumed.output;
  for (const char* f : {"train_log.jsonl", "eval_log.jsonl", "ckpt-12.bin", "best.bin"}) {
    EXPECT_EQ(slurp(path("ft_full") / f), slurp(path("ft_cut") / f)) << f;
  }
}

TEST_F(Cli, PretrainFeedsFinetune) {
  prepare_training_data();
  const auto pre_cfg = write_config("pre.cfg", "pre");
  const auto pre = run("pretrain --config " + pre_cfg + " --set train_file=" + path("data/en.jsonl").string());
  ASSERT_EQ(pre.code, 0) << pre.output;
  const auto fine = run("finetune --config " + pre_cfg + " --set out_dir=" + path("fine").string() +
                        " --set init_checkpoint=" + path("pre/best.json").string() +
                        " --set vocab_file=" + path("pre/vocab.txt").string());
  ASSERT_EQ(fine.code, 0) << fine.output;
  EXPECT_EQ(slurp(path("pre/vocab.txt")), slurp(path("fine/vocab.txt")));
  const auto mismatch = run("finetune --config " + pre_cfg + " --set out_dir=" + path("bad").string() +
                            " --set init_checkpoint=" + path("pre/best.json").string() + " --set d_model=8");
  EXPECT_EQ(mismatch.code, 2);
}

TEST_F(Cli, ExitCodes) {
  prepare_training_data();
  const auto cfg = write_config("run_nan.cfg", "ft_nan");
  const auto nan = run("finetune --config " + cfg + " --set learning_rate=1e38");
  EXPECT_EQ(nan.code, 4) << nan.output;
  EXPECT_NE(nan.output.find("non-finite"), std::string::npos);
  const auto missing = run("evaluate --checkpoint " + path("none.json").string() + " --input " +
                           path("val.jsonl").string() + " --out " + path("x.json").string());
  EXPECT_EQ(missing.code, 2);
  EXPECT_EQ(run("finetune --config " + cfg + " --set no_such_key=1").code, 2);
}

}  // namespace
}  // namespace mucot
