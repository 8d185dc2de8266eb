// Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "fiml/cli.hpp"
#include "fiml/config.hpp"
#include "fiml/eval.hpp"
#include "fiml/rng.hpp"
#include "fiml/verify.hpp"

namespace fs = std::filesystem;
using namespace fiml;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << "criterion " << id << ": " << (ok ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_e(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fiml");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << "fiml " << args[1] << " exited " << code << ": " << err.str();
  return code;
}

void gradient_criteria() {
  verify::SuiteConfig sc;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rs = verify::run_suite(sc);
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& r : rs) std::cout << "  " << verify::describe(r) << '\n';

  const auto& g = rs.at(1);
  report(1, g.passed && g.cases >= 50 && g.worst < 1e-6 && g.seconds < 60,
         "draws=" + std::to_string(g.cases) + " worst=" + fmt_e(g.worst) + " time=" + fmt(g.seconds) + "s");
  const auto& m = rs.at(2);
  report(2, m.passed && m.worst < 1e-4 && m.seconds < 120,
         "worst=" + fmt_e(m.worst) + " time=" + fmt(m.seconds) + "s");
  const auto& ridge = rs.at(3);
  report(3, ridge.passed && ridge.cases >= 20, "episodes=" + std::to_string(ridge.cases) + " " + ridge.detail);
  const auto& step = rs.at(4);
  report(4, step.passed, "worst=" + fmt_e(step.worst) + " " + step.detail);
  const auto& ent = rs.at(5);
  report(5, ent.passed && ent.cases >= 100, "draws=" + std::to_string(ent.cases) + " " + ent.detail);
  const auto& hess = rs.at(6);
  report(6, hess.passed && hess.worst < 1e-9, "worst=" + fmt_e(hess.worst));
  const auto& mi = rs.at(7);
  const auto& mt = rs.at(8);
  report(7, mi.passed && mt.passed, mi.detail + "; " + mt.detail);
  bool all = true;
  for (const auto& r : rs) all = all && r.passed;
  const int code = cli({"gradcheck"});
  report(11, all && code == 0 && total < 300,
         "exit=" + std::to_string(code) + " suite time=" + fmt(total) + "s (limit 300s)");
}

void trend_criteria(const fs::path& source_dir) {
  const config::RunConfig c = config::load_run_config(source_dir / "configs" / "desk.json");
  const data::TaskFamily family = data::TaskFamily::generate(c.family, c.seed);

  eval::AblationConfig ac;
  ac.spec = c.model;
  ac.psi = c.psi;
  ac.meta = c.meta;
  ac.inner = c.inner;
  ac.eval = c.eval;
  ac.shots = {1, 5};
  const auto rows = eval::run_ablation(family, ac, c.seed, c.threads);
  std::vector<const eval::AblationRow*> one, five;
  for (const auto& r : rows) {
    (r.shots == 1 ? one : five).push_back(&r);
    std::cout << "  " << r.rung << " " << r.shots << "-shot: " << eval::format_accuracy(r.report) << '\n';
  }

  // (a) adjacent 1-shot pairs that improve
  std::size_t up = 0;
  for (std::size_t i = 1; i < one.size(); ++i) up += one[i]->report.mean_accuracy > one[i - 1]->report.mean_accuracy;
  const std::size_t pairs = one.size() - 1;
  report(8, up == pairs, "(a) 1-shot ladder improves in " + std::to_string(up) + "/" + std::to_string(pairs) +
                            " adjacent pairs");

  // (b) transductive gain
  const double gain1 = one[4]->report.mean_accuracy - one[3]->report.mean_accuracy;
  const double gain5 = five[4]->report.mean_accuracy - five[3]->report.mean_accuracy;
  report(8, gain1 > gain5, "(b) +Transductive gain 1-shot " + fmt(gain1) + " vs 5-shot " + fmt(gain5));

  // (c) learned lambda_tran after psi fine-tuning at 1 and 5 shots, both
  // starting from the model meta-trained at the higher shot count
  const meta::Checkpoint& pre = five[4]->checkpoint;
  const meta::FinetuneConfig ft = c.meta.finetune;
  const auto ft1 = meta::finetune_psi(pre, family, 1, ft, c.seed, c.threads);
  const auto ft5 = meta::finetune_psi(pre, family, 5, ft, c.seed, c.threads);
  const double lt1 = ft1.model.psi.lambda_tran();
  const double lt5 = ft5.model.psi.lambda_tran();
  report(8, lt1 > lt5, "(c) lambda_tran after fine-tuning: 1-shot " + fmt(lt1, 4) + " vs 5-shot " + fmt(lt5, 4));

  // (d) eval-side sweep rises then saturates; train-side 0-vs-10 gap positive
  eval::EvalProtocol p = c.eval;
  p.ways = c.meta.ways;
  p.shots = 1;
  const auto sw = eval::sweep_eval_iterations(one[4]->checkpoint.model, family, p, c.sweep.grid, c.threads);
  const auto& s = sw.sweep;
  std::string curve;
  for (const auto& r : s) curve += " " + std::to_string(r.iterations) + ":" + fmt(r.accuracy);
  const std::size_t mid = s.size() / 2;
  const double first = s[mid].accuracy - s.front().accuracy;
  const double second = s.back().accuracy - s[mid].accuracy;
  const bool saturates = first > 0 && std::abs(second) < first;

  meta::Model initial = meta::Model::create(c.model, c.psi, c.learn, CounterRng::derive_key(c.seed, {streams::kInit}));
  eval::EvalProtocol pt = p;
  pt.iterations = c.inner.iters_eval;
  const auto tr = eval::sweep_train_iterations(initial, family, c.meta, c.inner, pt, {0, 10}, c.seed, c.threads);
  const double gap = tr.sweep[1].accuracy - tr.sweep[0].accuracy;
  report(8, saturates && gap > 0,
         "(d) eval sweep" + curve + "; train-side 10 vs 0 gap " + fmt(gap));

  // 9: Baseline pipeline vs closed-form ridge on the same episodes
  // 9: Baseline pipeline vs closed-form ridge on the same episodes. The inner
  // solver is run until it reaches the ridge minimum.
  const auto& base = one[0]->checkpoint.model;
  const auto ridge = eval::evaluate_closed_form_ridge(base, family, p, base.psi.value(PsiField::LambdaReg), c.threads);
  eval::EvalProtocol pc = p;
  pc.iterations = 300;
  const auto converged = eval::evaluate(base, family, pc, c.threads);
  const double diff = std::abs(converged.mean_accuracy - ridge.mean_accuracy);
  report(9, diff <= 0.5, "Baseline (D=300) " + fmt(converged.mean_accuracy) + " vs closed-form ridge " +
                             fmt(ridge.mean_accuracy) + " (|diff| " + fmt(diff) + ", limit 0.50; at D=" +
                             std::to_string(p.iterations) + ": " + fmt(one[0]->report.mean_accuracy) + ")");
}

void determinism_criterion(const fs::path& work) {
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path cfg = work / "small.json";
  std::ofstream(cfg) << R"({
  "seed": 3,
  "output_dir": ")" << (work / "out").string() << R"(",
  "meta": {"epochs": 2, "batches_per_epoch": 4, "tasks_per_batch": 4, "val_episodes": 20},
  "eval": {"episodes": 40},
  "sweep": {"grid": [0, 2, 4]},
  "ablation": {"shots": [1]}
})";
  bool same = true;
  std::vector<std::string> first;
  for (const std::string threads : {"1", "3"}) {
    const fs::path out = work / ("t" + threads);
    bool ok = cli({"train", cfg.string(), "--out", out.string(), "--threads", threads}) == 0;
    ok = ok && cli({"eval", (out / "checkpoint.fiml").string(), "--episodes", "60", "--threads", threads}) == 0;
    ok = ok && cli({"sweep", cfg.string(), "--checkpoint", (out / "checkpoint.fiml").string(), "--out",
                    out.string(), "--threads", threads}) == 0;
    ok = ok && cli({"ablate", cfg.string(), "--out", out.string(), "--threads", threads}) == 0;
    if (!ok) {
      same = false;
      break;
    }
    std::vector<std::string> contents;
    for (const char* f : {"train_log.csv", "eval.csv", "sweep.csv", "ablation.csv", "checkpoint.fiml"})
      contents.push_back(slurp(out / f));
    if (first.empty()) {
      first = contents;
    } else {
      same = same && contents == first;
    }
  }
  report(10, same, "train/eval/sweep/ablate outputs byte-identical with 1 and 3 threads");
}

}  // namespace

int main() {
  const fs::path source_dir = FIML_SOURCE_DIR;
  const fs::path work = fs::temp_directory_path() / "fiml_acceptance";
  try {
    gradient_criteria();
    determinism_criterion(work);
    trend_criteria(source_dir);
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  fs::remove_all(work);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion line(s) failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
