#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"

namespace fs = std::filesystem;
using towl::cli::run;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result towl_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("towl_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string gen_small(const fs::path& dir, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{"gen-data", "--out", dir.string(), "--n", "20", "--classes", "4",
                                "--d-feat", "12", "--k", "5", "--seed", "3"};
  args.insert(args.end(), extra.begin(), extra.end());
  const Result r = towl_cli(args);
  REQUIRE(r.code == 0);
  return (dir / "manifest.json").string();
}

}  // namespace

TEST_CASE("gen-data is byte-identical for equal seeds") {
  const fs::path a = scratch("gen_a");
  const fs::path b = scratch("gen_b");
  gen_small(a);
  gen_small(b);
  for (const char* f : {"modality_0.csv", "labels.txt", "manifest.json"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const fs::path c = scratch("gen_c");
  towl_cli({"gen-data", "--out", c.string(), "--n", "20", "--classes", "4", "--d-feat", "12",
            "--seed", "4"});
  CHECK(slurp(a / "modality_0.csv") != slurp(c / "modality_0.csv"));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("gen-data writes one file per modality") {
  const fs::path dir = scratch("gen_three");
  gen_small(dir, {"--modalities", "3"});
  for (int i = 0; i < 3; ++i) CHECK(fs::exists(dir / ("modality_" + std::to_string(i) + ".csv")));
  CHECK(slurp(dir / "manifest.json").find("modality_2.csv") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("train dispatches on modality count and eval reproduces its metrics") {
  for (int modalities : {1, 2}) {
    CAPTURE(modalities);
    const fs::path dir = scratch("train_" + std::to_string(modalities));
    const std::string manifest = gen_small(dir, {"--modalities", std::to_string(modalities)});
    const fs::path run_dir = dir / "run";
    const Result tr = towl_cli({"train", "--manifest", manifest, "--out", run_dir.string(),
                                "--epochs", "5"});
    REQUIRE(tr.code == 0);
    CHECK(tr.out.find("protocol=" + std::to_string(modalities)) == 0);
    for (const char* f : {"model.ckpt", "trace.csv", "metrics.txt", "metrics.json"}) {
      CHECK(fs::exists(run_dir / f));
    }
    const std::string trace = slurp(run_dir / "trace.csv");
    CHECK(trace.rfind("epoch,l_k,l_u,l_total,acc_val\n", 0) == 0);
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 6);

    const Result ev = towl_cli({"eval", "--manifest", manifest, "--checkpoint",
                                (run_dir / "model.ckpt").string()});
    REQUIRE(ev.code == 0);
    CHECK(ev.out == slurp(run_dir / "metrics.txt"));

    const Result ag = towl_cli({"agent", "--manifest", manifest, "--checkpoint",
                                (run_dir / "model.ckpt").string()});
    CHECK(ag.code == 0);
    CHECK(ag.out.find("a=") != std::string::npos);
    fs::remove_all(dir);
  }
}

TEST_CASE("train is byte-identical across repeats") {
  const fs::path dir = scratch("train_repeat");
  const std::string manifest = gen_small(dir);
  for (const char* sub : {"r1", "r2"}) {
    REQUIRE(towl_cli({"train", "--manifest", manifest, "--out", (dir / sub).string(), "--epochs",
                      "4"})
                .code == 0);
  }
  for (const char* f : {"model.ckpt", "trace.csv", "metrics.txt", "metrics.json"}) {
    CHECK(slurp(dir / "r1" / f) == slurp(dir / "r2" / f));
  }
  fs::remove_all(dir);
}

TEST_CASE("sweep writes the full grid") {
  const fs::path dir = scratch("sweep");
  const std::string manifest = gen_small(dir);
  const fs::path csv = dir / "sweep.csv";
  const Result r = towl_cli({"sweep", "--manifest", manifest, "--out", csv.string(), "--epochs",
                             "2", "--grid", "0.001,0.01,0.1,1,10,100"});
  REQUIRE(r.code == 0);
  const std::string text = slurp(csv);
  CHECK(text.rfind("lambda1,lambda2,accuracy,unknown_recall,a,final_loss\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 37);
  fs::remove_all(dir);
}

TEST_CASE("command line flags override the config file") {
  const fs::path dir = scratch("config");
  const std::string manifest = gen_small(dir);
  std::ofstream(dir / "cfg.json") << R"({"epochs": 3, "lr": 0.01})";
  const Result from_config = towl_cli({"train", "--manifest", manifest, "--out",
                                       (dir / "a").string(), "--config",
                                       (dir / "cfg.json").string()});
  REQUIRE(from_config.code == 0);
  const std::string trace_a = slurp(dir / "a" / "trace.csv");
  CHECK(std::count(trace_a.begin(), trace_a.end(), '\n') == 4);

  const Result overridden = towl_cli({"train", "--manifest", manifest, "--out",
                                      (dir / "b").string(), "--config",
                                      (dir / "cfg.json").string(), "--epochs", "2"});
  REQUIRE(overridden.code == 0);
  const std::string trace_b = slurp(dir / "b" / "trace.csv");
  CHECK(std::count(trace_b.begin(), trace_b.end(), '\n') == 3);

  std::ofstream(dir / "bad.json") << R"({"epochz": 3})";
  const Result bad = towl_cli({"train", "--manifest", manifest, "--out", (dir / "c").string(),
                               "--config", (dir / "bad.json").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("epochz") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("grad-check and verify-contraction succeed on defaults") {
  const Result gc = towl_cli({"grad-check"});
  CHECK(gc.code == 0);
  CHECK(gc.out.find("PASS") != std::string::npos);

  const fs::path dir = scratch("contraction");
  const std::string manifest = gen_small(dir);
  const Result vc = towl_cli({"verify-contraction", "--manifest", manifest, "--target-norm", "0.9"});
  CHECK(vc.code == 0);
  CHECK(vc.out.find("result=PASS") != std::string::npos);
  CHECK(towl_cli({"verify-contraction"}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  CHECK(towl_cli({"--help"}).code == 0);
  CHECK(towl_cli({"train", "--help"}).code == 0);

  const Result unknown = towl_cli({"frobnicate"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("gen-data") != std::string::npos);

  CHECK(towl_cli({}).code == 2);
  CHECK(towl_cli({"train", "--epochs", "notanumber"}).code == 2);
  CHECK(towl_cli({"train", "--out", "x"}).code == 2);

  const fs::path dir = scratch("exit");
  const std::string manifest = gen_small(dir);
  CHECK(towl_cli({"eval", "--manifest", manifest, "--checkpoint", (dir / "none.ckpt").string()})
            .code == 2);
  CHECK(towl_cli({"train", "--manifest", manifest, "--out", (dir / "r").string(), "--alpha", "1.5"})
            .code == 2);
  std::ofstream(dir / "broken.ckpt") << "towl-checkpoint 1\nseed x\n";
  CHECK(towl_cli({"eval", "--manifest", manifest, "--checkpoint", (dir / "broken.ckpt").string()})
            .code == 1);
  CHECK(towl_cli({"train", "--manifest", (dir / "missing.json").string(), "--out",
                  (dir / "r").string()})
            .code == 2);
  std::ofstream(dir / "bad_manifest.json") << "{";
  CHECK(towl_cli({"train", "--manifest", (dir / "bad_manifest.json").string(), "--out",
                  (dir / "r").string()})
            .code == 1);
  fs::remove_all(dir);
}
