#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fiml/cli.hpp"
#include "fiml/eval.hpp"

using namespace fiml;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "fiml");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t lines(const fs::path& p) {
  std::size_t n = 0;
  for (char c : slurp(p)) n += c == '\n';
  return n;
}

fs::path workdir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("fiml_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_config(const fs::path& dir, const std::string& extra = "") {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << R"({
  // tiny run
  "seed": 1,
  "output_dir": ")" << (dir / "out").string() << R"(",
  "family": {"classes": 30, "split": [10, 10, 10]},
  "embedding": {"kind": "linear"},
  "meta": {"epochs": 1, "batches_per_epoch": 2, "tasks_per_batch": 2, "val_episodes": 10},
  "eval": {"episodes": 20},
  "gradcheck": {"draws": 5, "meta_draws": 1})" << extra << "\n}\n";
  return p;
}

}  // namespace

TEST_CASE("help exits 0 and a missing or unknown subcommand exits 2") {
  CHECK(run({"--help"}).code == cli::kOk);
  CHECK(run({}).code == cli::kConfigError);
  CHECK(run({"bogus"}).code == cli::kConfigError);
  CHECK(run({"eval"}).code == cli::kConfigError);
}

TEST_CASE("an unknown config key exits 2 and names the key") {
  const auto dir = workdir("badkey");
  const auto cfg = write_config(dir, R"(,
  "inner": {"iters_trian": 3})");
  const auto r = run({"train", cfg.string()});
  CHECK(r.code == cli::kConfigError);
  CHECK(r.err.find("iters_trian") != std::string::npos);
}

TEST_CASE("train, eval, sweep, ablate and confidence write their outputs") {
  const auto dir = workdir("pipeline");
  const auto cfg = write_config(dir, R"(,
  "ablation": {"shots": [1, 5]})");
  const fs::path out = dir / "out";
  REQUIRE(run({"train", cfg.string()}).code == cli::kOk);
  CHECK(slurp(out / "train_log.csv").rfind("epoch,meta_loss,val_accuracy,val_ci95\n", 0) == 0);
  CHECK(lines(out / "train_log.csv") == 2);
  CHECK(fs::exists(out / "config.json"));

  const std::string ck = (out / "checkpoint.fiml").string();
  const auto ev = run({"eval", ck, "--episodes", "30"});
  REQUIRE(ev.code == cli::kOk);
  CHECK(ev.out.find("±") != std::string::npos);
  CHECK(lines(out / "eval.csv") == 2);

  REQUIRE(run({"sweep", cfg.string(), "--checkpoint", ck, "--grid", "0,3,6"}).code == cli::kOk);
  CHECK(lines(out / "sweep.csv") == 4);
  CHECK(run({"sweep", cfg.string(), "--grid", "0,x"}).code == cli::kConfigError);

  REQUIRE(run({"ablate", cfg.string()}).code == cli::kOk);
  CHECK(lines(out / "ablation.csv") == 11);

  REQUIRE(run({"confidence", ck, "--config", cfg.string()}).code == cli::kOk);
  CHECK(lines(out / "confidence.csv") == 1 + 2 * 5 * 15);
}

TEST_CASE("eval with zero iterations scores the initializer alone") {
  const auto dir = workdir("iters0");
  const auto cfg = write_config(dir);
  REQUIRE(run({"train", cfg.string()}).code == cli::kOk);
  const fs::path ck = dir / "out" / "checkpoint.fiml";
  const auto r = run({"eval", ck.string(), "--iters", "0", "--episodes", "25", "--seed", "3"});
  REQUIRE(r.code == cli::kOk);

  const auto loaded = meta::load_checkpoint(ck);
  const auto fam = data::TaskFamily::generate(loaded.family, loaded.family_seed);
  eval::EvalProtocol p;
  p.ways = loaded.meta.ways;
  p.shots = loaded.meta.train_shots;
  p.episodes = 25;
  p.iterations = 0;
  p.seed = 3;
  CHECK(r.out == eval::format_accuracy(eval::evaluate(loaded.model, fam, p, 1)) + "\n");
}

TEST_CASE("a corrupted checkpoint exits 4 and a missing one too") {
  const auto dir = workdir("corrupt");
  const auto cfg = write_config(dir);
  REQUIRE(run({"train", cfg.string()}).code == cli::kOk);
  const fs::path ck = dir / "out" / "checkpoint.fiml";
  std::string bytes = slurp(ck);
  bytes[bytes.size() / 2] ^= 0x40;
  std::ofstream(ck, std::ios::binary) << bytes;
  CHECK(run({"eval", ck.string()}).code == cli::kIoError);
  CHECK(run({"eval", (dir / "nope.fiml").string()}).code == cli::kIoError);
}

TEST_CASE("FIML_SEED overrides the config seed") {
  const auto dir = workdir("seed");
  const auto cfg = write_config(dir);
  auto train_with = [&](const char* seed, const std::string& name) {
    ::setenv("FIML_SEED", seed, 1);
    const auto r = run({"train", cfg.string(), "--out", (dir / name).string()});
    ::unsetenv("FIML_SEED");
    REQUIRE(r.code == cli::kOk);
    return slurp(dir / name / "checkpoint.fiml");
  };
  const std::string a = train_with("5", "a"), b = train_with("5", "b"), c = train_with("6", "c");
  CHECK(a == b);
  CHECK(a != c);
  CHECK(slurp(dir / "a" / "config.json").find("\"seed\": 5") != std::string::npos);
  ::setenv("FIML_SEED", "x1", 1);
  CHECK(run({"train", cfg.string()}).code == cli::kConfigError);
  ::unsetenv("FIML_SEED");
}

TEST_CASE("datagen output trains as a file-backed family") {
  const auto dir = workdir("datagen");
  const auto cfg = write_config(dir);
  const fs::path data = dir / "family.fsdt";
  REQUIRE(run({"datagen", "--config", cfg.string(), "--out", data.string(), "--per-class", "40"}).code == cli::kOk);
  const fs::path cfg2 = dir / "file.json";
  std::ofstream(cfg2) << R"({"output_dir": ")" << (dir / "out2").string()
                      << R"(", "family": {"kind": "file-backed", "path": ")" << data.string()
                      << R"(", "split": [10, 10, 10]},
  "embedding": {"kind": "linear", "input_dim": 32},
  "meta": {"epochs": 1, "batches_per_epoch": 1, "tasks_per_batch": 2, "val_episodes": 5}})";
  CHECK(run({"train", cfg2.string()}).code == cli::kOk);
}

TEST_CASE("gradcheck exits 0") {
  const auto dir = workdir("gradcheck");
  const auto r = run({"gradcheck", "--config", write_config(dir).string()});
  CHECK(r.code == cli::kOk);
  CHECK(r.out.find("gradcheck passed") != std::string::npos);
}
