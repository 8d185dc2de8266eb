#include "fiml/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fiml/config.hpp"
#include "fiml/rng.hpp"
#include "fiml/verify.hpp"

namespace fiml::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::string checkpoint;
  std::string out;
  std::string resume;
  std::string grid;
  std::string mode;
  std::size_t threads = 0;
  bool threads_set = false;
  // eval
  std::size_t ways = 0, shots = 0, episodes = 600, per_class = 100;
  long long iters = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("FIML_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("FIML_SEED: not an unsigned integer: '") + s + "'");
  }
}

config::RunConfig load_config(const Options& o) {
  config::RunConfig c = o.config_path.empty() ? config::parse_run_config(config::Json::object())
                                              : config::load_run_config(o.config_path);
  if (auto s = env_seed()) c.seed = *s;
  if (o.threads_set) c.threads = o.threads;
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

fs::path prepare_output(const config::RunConfig& c) {
  fs::path dir(c.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  std::ofstream echo(dir / "config.json");
  if (!echo) throw IoError("cannot write " + (dir / "config.json").string());
  echo << config::to_json(c).dump(2) << '\n';
  return dir;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

data::TaskFamily make_family(const config::RunConfig& c) { return data::TaskFamily::generate(c.family, c.seed); }

meta::Model initial_model(const config::RunConfig& c) {
  return meta::Model::create(c.model, c.psi, c.learn, CounterRng::derive_key(c.seed, {streams::kInit}));
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Meta-training with an optional pre-training shot count followed by psi
// fine-tuning at the target shot count.
meta::TrainResult train_from_config(const config::RunConfig& c, const data::TaskFamily& family,
                                    const meta::Checkpoint* resume) {
  meta::TrainResult tr = meta::train(family, initial_model(c), c.meta, c.inner, c.seed, c.threads, resume);
  if (c.meta.pretrain_shots > 0) {
    tr.checkpoint =
        meta::finetune_psi(tr.checkpoint, family, c.meta.train_shots, c.meta.finetune, c.seed, c.threads);
  }
  return tr;
}

int cmd_train(const Options& o, std::ostream& out) {
  const config::RunConfig c = load_config(o);
  const fs::path dir = prepare_output(c);
  const data::TaskFamily family = make_family(c);
  std::optional<meta::Checkpoint> resume;
  if (!o.resume.empty()) resume = meta::load_checkpoint(o.resume);
  const meta::TrainResult tr = train_from_config(c, family, resume ? &*resume : nullptr);

  auto log = open_csv(dir / "train_log.csv");
  log << "epoch,meta_loss,val_accuracy,val_ci95\n";
  for (const auto& row : tr.log) {
    log << row.epoch << ',' << fmt(row.meta_loss) << ',' << fmt(row.val_accuracy) << ',' << fmt(row.val_ci95)
        << '\n';
  }
  meta::save_checkpoint(tr.checkpoint, dir / "checkpoint.fiml");
  out << "trained " << tr.checkpoint.epochs_completed << " epochs, best validation accuracy "
      << fmt(tr.checkpoint.best_val_accuracy) << "% at epoch " << tr.checkpoint.best_epoch << '\n';
  out << "wrote " << (dir / "checkpoint.fiml").string() << '\n';
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const meta::Checkpoint ck = meta::load_checkpoint(o.checkpoint);
  const data::TaskFamily family = data::TaskFamily::generate(ck.family, ck.family_seed);
  eval::EvalProtocol p;
  p.ways = o.ways ? o.ways : ck.meta.ways;
  p.shots = o.shots ? o.shots : ck.meta.train_shots;
  p.episodes = o.episodes;
  p.query_per_class = ck.meta.query_per_class;
  p.iterations = o.iters >= 0 ? static_cast<std::size_t>(o.iters) : ck.inner.iters_eval;
  p.seed = o.seed_set ? o.seed : env_seed().value_or(0);
  const eval::EvalReport r = eval::evaluate(ck.model, family, p, o.threads, "eval");
  const fs::path path = o.out.empty() ? fs::path(o.checkpoint).parent_path() / "eval.csv" : fs::path(o.out);
  auto csv = open_csv(path);
  eval::write_report_csv(csv, {r});
  out << eval::format_accuracy(r) << '\n';
  return kOk;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const config::RunConfig c = load_config(o);
  const fs::path dir = prepare_output(c);
  const data::TaskFamily family = make_family(c);
  eval::AblationConfig ac;
  ac.spec = c.model;
  ac.psi = c.psi;
  ac.meta = c.meta;
  ac.inner = c.inner;
  ac.eval = c.eval;
  ac.shots = c.ablation.shots;
  ac.ladder = c.ablation.ladder;
  const auto rows = eval::run_ablation(family, ac, c.seed, c.threads);
  std::vector<eval::EvalReport> reports;
  for (const auto& row : rows) {
    reports.push_back(row.report);
    out << row.rung << " " << row.shots << "-shot: " << eval::format_accuracy(row.report) << '\n';
  }
  auto csv = open_csv(dir / "ablation.csv");
  eval::write_report_csv(csv, reports);
  return kOk;
}

std::vector<std::size_t> parse_grid(const std::string& s) {
  std::vector<std::size_t> grid;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (v < 0 || used != item.size()) throw std::invalid_argument(item);
      grid.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("--grid: not a list of non-negative integers: '" + s + "'");
    }
  }
  if (grid.empty()) throw ConfigError("--grid: empty");
  return grid;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  config::RunConfig c = load_config(o);
  if (!o.grid.empty()) c.sweep.grid = parse_grid(o.grid);
  if (!o.mode.empty()) c.sweep.mode = eval::sweep_mode_from_string(o.mode);
  const fs::path dir = prepare_output(c);
  const data::TaskFamily family = make_family(c);
  eval::EvalProtocol p = c.eval;
  p.ways = c.meta.ways;
  eval::EvalReport r;
  if (c.sweep.mode == eval::SweepMode::EvalSide) {
    const meta::Model model = o.checkpoint.empty() ? train_from_config(c, family, nullptr).checkpoint.model
                                                   : meta::load_checkpoint(o.checkpoint).model;
    r = eval::sweep_eval_iterations(model, family, p, c.sweep.grid, c.threads);
  } else {
    p.iterations = c.inner.iters_eval;
    r = eval::sweep_train_iterations(initial_model(c), family, c.meta, c.inner, p, c.sweep.grid, c.seed, c.threads);
  }
  auto csv = open_csv(dir / "sweep.csv");
  eval::write_sweep_csv(csv, r);
  for (const auto& row : r.sweep) out << row.iterations << ": " << fmt(row.accuracy) << " ± " << fmt(row.ci95) << '\n';
  return kOk;
}

int cmd_confidence(const Options& o, std::ostream& out) {
  const config::RunConfig c = load_config(o);
  const fs::path dir = prepare_output(c);
  const meta::Checkpoint ck = meta::load_checkpoint(o.checkpoint);
  const data::TaskFamily family = data::TaskFamily::generate(ck.family, ck.family_seed);
  eval::EvalProtocol p = c.eval;
  p.ways = ck.meta.ways;
  p.shots = c.confidence.shots;
  std::vector<eval::ConfidenceRow> rows;
  double tran = 0, plain = 0;
  for (std::size_t e = 0; e < c.confidence.episodes; ++e) {
    const data::Episode ep = data::sample_episode(family, p.split, p.ways, p.shots, p.query_per_class,
                                                  eval::episode_seed(p, e));
    const auto rep = eval::export_confidence_report(ck.model, ep, e, ck.inner.iters_eval);
    rows.insert(rows.end(), rep.rows.begin(), rep.rows.end());
    tran += rep.mean_max_prob_tran;
    plain += rep.mean_max_prob_no_tran;
  }
  auto csv = open_csv(dir / "confidence.csv");
  eval::write_confidence_csv(csv, rows, p.ways);
  const double n = static_cast<double>(std::max<std::size_t>(1, c.confidence.episodes));
  out << "mean max probability: transductive " << fmt(tran / n) << ", inductive " << fmt(plain / n) << '\n';
  return kOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const config::RunConfig c = load_config(o);
  verify::SuiteConfig sc;
  sc.seed = c.seed;
  sc.draws = c.gradcheck.draws;
  sc.meta_draws = c.gradcheck.meta_draws;
  bool ok = true;
  for (const auto& r : verify::run_suite(sc)) {
    out << verify::describe(r) << '\n';
    ok = ok && r.passed;
  }
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  return ok ? kOk : kNumericError;
}

int cmd_datagen(const Options& o, std::ostream& out) {
  const config::RunConfig c = load_config(o);
  if (o.out.empty()) throw ConfigError("datagen: --out is required");
  const data::TaskFamily family = make_family(c);
  data::save_dataset(family, o.out, o.per_class);
  out << "wrote " << o.out << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot meta-learning of a base learner's loss and initializer", "fiml"};
  app.require_subcommand(1);
  Options o;
  auto threads = [&](CLI::App* cmd) {
    cmd->add_option_function<std::size_t>(
        "--threads",
        [&](std::size_t t) {
          o.threads = t;
          o.threads_set = true;
        },
        "Worker threads (0 = all cores)");
  };

  CLI::App* train = app.add_subcommand("train", "Meta-train from a config file");
  train->add_option("config", o.config_path, "Config file")->required();
  train->add_option("--out", o.out, "Output directory (overrides output_dir)");
  train->add_option("--resume", o.resume, "Checkpoint to resume from");
  threads(train);

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on test episodes");
  ev->add_option("checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--ways", o.ways, "Classes per episode (default: as trained)");
  ev->add_option("--shots", o.shots, "Support samples per class (default: as trained)");
  ev->add_option("--episodes", o.episodes, "Episodes to evaluate")->capture_default_str();
  ev->add_option("--iters", o.iters, "Inner iterations (default: iters_eval of the checkpoint)");
  ev->add_option_function<std::uint64_t>(
      "--seed",
      [&](std::uint64_t s) {
        o.seed = s;
        o.seed_set = true;
      },
      "Episode seed");
  ev->add_option("--out", o.out, "Report CSV (default: eval.csv next to the checkpoint)");
  threads(ev);

  CLI::App* ablate = app.add_subcommand("ablate", "Train and evaluate the ablation ladder");
  ablate->add_option("config", o.config_path, "Config file")->required();
  ablate->add_option("--out", o.out, "Output directory");
  threads(ablate);

  CLI::App* sweep = app.add_subcommand("sweep", "Inner-iteration sweeps");
  sweep->add_option("config", o.config_path, "Config file")->required();
  sweep->add_option("--checkpoint", o.checkpoint, "Model for eval-side sweeps (trained from the config if absent)");
  sweep->add_option("--grid", o.grid, "Comma-separated iteration counts");
  sweep->add_option("--mode", o.mode, "eval-side or train-side");
  sweep->add_option("--out", o.out, "Output directory");
  threads(sweep);

  CLI::App* conf = app.add_subcommand("confidence", "Export per-query softmax scores with and without transduction");
  conf->add_option("checkpoint", o.checkpoint, "Checkpoint file")->required();
  conf->add_option("--config", o.config_path, "Config file");
  conf->add_option("--out", o.out, "Output directory");

  CLI::App* grad = app.add_subcommand("gradcheck", "Run the finite-difference and oracle checks");
  grad->add_option("--config", o.config_path, "Config file");

  CLI::App* datagen = app.add_subcommand("datagen", "Write a task family to an FSDT file");
  datagen->add_option("--config", o.config_path, "Config file");
  datagen->add_option("--out", o.out, "Output file")->required();
  datagen->add_option("--per-class", o.per_class, "Examples per class")->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "fiml: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (*train) return cmd_train(o, out);
    if (*ev) return cmd_eval(o, out);
    if (*ablate) return cmd_ablate(o, out);
    if (*sweep) return cmd_sweep(o, out);
    if (*conf) return cmd_confidence(o, out);
    if (*grad) return cmd_gradcheck(o, out);
    if (*datagen) return cmd_datagen(o, out);
  } catch (const ConfigError& e) {
    err << "fiml: config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ShapeError& e) {
    err << "fiml: config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericError& e) {
    err << "fiml: numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const FormatError& e) {
    err << "fiml: " << e.what() << '\n';
    return kIoError;
  } catch (const IoError& e) {
    err << "fiml: " << e.what() << '\n';
    return kIoError;
  }
  return kConfigError;
}

}  // namespace fiml::cli
