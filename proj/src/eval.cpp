#include "fiml/eval.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "fiml/parallel.hpp"
#include "fiml/rng.hpp"

namespace fiml::eval {

namespace {

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

data::Episode episode_for(const data::TaskFamily& family, const EvalProtocol& p, std::size_t i) {
  return data::sample_episode(family, p.split, p.ways, p.shots, p.query_per_class, episode_seed(p, i));
}

void check_protocol(const EvalProtocol& p) {
  if (p.episodes < 2) throw ConfigError("evaluate: at least 2 episodes are needed");
}

}  // namespace

EvalReport summarize(std::string label, std::vector<double> acc) {
  EvalReport r;
  r.label = std::move(label);
  r.episodes = acc.size();
  if (acc.empty()) throw ConfigError("summarize: no episodes");
  const double n = static_cast<double>(acc.size());
  const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / n;
  double ss = 0;
  for (double a : acc) ss += (a - mean) * (a - mean);
  const double sd = acc.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  r.mean_accuracy = 100.0 * mean;
  r.ci95 = 100.0 * 1.96 * sd / std::sqrt(n);
  r.episode_accuracies = std::move(acc);
  return r;
}

std::string format_accuracy(const EvalReport& r) { return fmt(r.mean_accuracy, 2) + "±" + fmt(r.ci95, 2); }

std::uint64_t episode_seed(const EvalProtocol& p, std::size_t index) {
  return CounterRng::derive_key(p.seed, {streams::kEvaluate, static_cast<std::uint64_t>(p.split), index});
}

double episode_accuracy(const meta::Model& model, const data::Episode& episode, std::size_t iterations) {
  ad::Tape tape;
  meta::BoundModel bound = meta::bind_frozen(tape, model);
  meta::EpisodeForward f = meta::forward_episode(tape, model, bound, episode, iterations);
  const learner::Prediction pred = learner::predict(f.logits.value());
  std::size_t correct = 0;
  for (std::size_t j = 0; j < pred.labels.size(); ++j) correct += pred.labels[j] == episode.query_labels[j];
  return static_cast<double>(correct) / static_cast<double>(pred.labels.size());
}

EvalReport evaluate(const meta::Model& model, const data::TaskFamily& family, const EvalProtocol& p,
                    std::size_t threads, std::string label) {
  check_protocol(p);
  std::vector<double> acc(p.episodes);
  parallel_for(p.episodes, threads, [&](std::size_t i) {
    acc[i] = episode_accuracy(model, episode_for(family, p, i), p.iterations);
  });
  EvalReport r = summarize(std::move(label), std::move(acc));
  r.ways = p.ways;
  r.shots = p.shots;
  r.iterations = p.iterations;
  return r;
}

EvalReport evaluate_closed_form_ridge(const meta::Model& model, const data::TaskFamily& family,
                                      const EvalProtocol& p, real lambda_reg, std::size_t threads) {
  check_protocol(p);
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
  auto pooled = [&](const Tensor& x) {
    ad::Tape tape;
    std::vector<ad::Var> phi;
    for (const auto& t : model.phi) phi.push_back(tape.constant(t));
    const Tensor f = embed::spatial_mean(embed::embed(model.spec.embedding, phi, tape.constant(x))).value();
    Mat m(f.dim(0), f.dim(1));
    for (std::size_t i = 0; i < f.dim(0); ++i)
      for (std::size_t j = 0; j < f.dim(1); ++j) m(i, j) = static_cast<double>(f.at(i, j));
    return m;
  };
  std::vector<double> acc(p.episodes);
  parallel_for(p.episodes, threads, [&](std::size_t e) {
    const data::Episode ep = episode_for(family, p, e);
    const Mat x = pooled(ep.support);
    Mat t = Mat::Constant(x.rows(), static_cast<Eigen::Index>(ep.ways), -1.0);
    for (std::size_t j = 0; j < ep.support_labels.size(); ++j) t(j, ep.support_labels[j]) = 1.0;
    Mat a = x.transpose() * x;
    a.diagonal().array() += static_cast<double>(lambda_reg);
    const Mat w = a.ldlt().solve(x.transpose() * t);
    const Mat s = pooled(ep.query) * w;
    std::size_t correct = 0;
    for (Eigen::Index j = 0; j < s.rows(); ++j) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < s.cols(); ++c)
        if (s(j, c) > s(j, best)) best = c;
      correct += static_cast<std::size_t>(best) == ep.query_labels[j];
    }
    acc[e] = static_cast<double>(correct) / static_cast<double>(s.rows());
  });
  EvalReport r = summarize("closed-form-ridge", std::move(acc));
  r.ways = p.ways;
  r.shots = p.shots;
  return r;
}

// --- ablation ladder -------------------------------------------------------

const char* to_string(LadderKind kind) { return kind == LadderKind::Standard ? "standard" : "dense-free"; }

LadderKind ladder_from_string(const std::string& name) {
  if (name == "standard") return LadderKind::Standard;
  if (name == "dense-free") return LadderKind::DenseFree;
  throw ConfigError("unknown ablation ladder '" + name + "'");
}

std::vector<Rung> ablation_ladder(LadderKind kind) {
  using learner::InitKind;
  PsiMask loss;
  for (PsiField f : {PsiField::LPos, PsiField::LNeg, PsiField::APos, PsiField::ANeg, PsiField::OPos, PsiField::ONeg,
                     PsiField::LambdaReg, PsiField::Fusion}) {
    loss.set(f);
  }
  PsiMask full = PsiMask::all();
  if (kind == LadderKind::Standard) {
    return {
        {"Baseline", InitKind::Zero, false, false, PsiMask::none()},
        {"+Initializer", InitKind::Support, false, false, PsiMask::none()},
        {"+DenseFeatures", InitKind::Support, true, false, PsiMask::none()},
        {"+LearnLoss", InitKind::Support, true, false, loss},
        {"+Transductive", InitKind::Support, true, true, full},
    };
  }
  return {
      {"Baseline", InitKind::Zero, false, false, PsiMask::none()},
      {"+Initializer", InitKind::Support, false, false, PsiMask::none()},
      {"+LearnLoss", InitKind::Support, false, false, loss},
      {"+Transductive", InitKind::Support, false, true, full},
      {"+Dense", InitKind::Support, true, true, full},
  };
}

meta::Model rung_model(const Rung& rung, const meta::ModelSpec& spec, const Psi& init, std::uint64_t seed) {
  meta::ModelSpec s = spec;
  s.dense = rung.dense;
  s.init = rung.init;
  const std::size_t locations = s.embedding.locations;
  Psi psi = Psi::baseline(locations);
  for (std::size_t i = 0; i < kPsiScalars; ++i) {
    if (rung.learn[static_cast<PsiField>(i)]) psi.raw[i] = init.raw[i];
  }
  if (rung.learn[PsiField::Fusion] && init.fusion.size() == locations) psi.fusion = init.fusion;
  psi.transductive = rung.transductive;
  if (rung.transductive) {
    psi.raw[static_cast<std::size_t>(PsiField::LambdaTran)] = init.raw[static_cast<std::size_t>(PsiField::LambdaTran)];
    psi.raw[static_cast<std::size_t>(PsiField::Beta)] = init.raw[static_cast<std::size_t>(PsiField::Beta)];
  }
  // Learning a field only matters if it reaches the loss.
  PsiMask learn = rung.learn;
  if (!s.dense) learn.set(PsiField::Fusion, false);
  if (!rung.transductive) {
    learn.set(PsiField::LambdaTran, false);
    learn.set(PsiField::Beta, false);
  }
  if (s.init == learner::InitKind::Zero) {
    learn.set(PsiField::OPos, false);
    learn.set(PsiField::ONeg, false);
  }
  return meta::Model::create(s, std::move(psi), learn, seed);
}

std::vector<AblationRow> run_ablation(const data::TaskFamily& family, const AblationConfig& config,
                                      std::uint64_t seed, std::size_t threads) {
  std::vector<AblationRow> rows;
  const auto ladder = ablation_ladder(config.ladder);
  const std::uint64_t init_seed = CounterRng::derive_key(seed, {streams::kInit});
  for (std::size_t shots : config.shots) {
    for (const Rung& rung : ladder) {
      meta::MetaConfig mc = config.meta;
      mc.train_shots = shots;
      mc.pretrain_shots = 0;
      const meta::Model initial = rung_model(rung, config.spec, config.psi, init_seed);
      meta::TrainResult tr = meta::train(family, initial, mc, config.inner, seed, threads);
      EvalProtocol p = config.eval;
      p.shots = shots;
      p.ways = mc.ways;
      p.iterations = config.inner.iters_eval;
      AblationRow row;
      row.rung = rung.name;
      row.shots = shots;
      row.report = evaluate(tr.checkpoint.model, family, p, threads, rung.name);
      row.checkpoint = std::move(tr.checkpoint);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// --- iteration sweeps --------------------------------------------------------

const char* to_string(SweepMode mode) { return mode == SweepMode::EvalSide ? "eval-side" : "train-side"; }

SweepMode sweep_mode_from_string(const std::string& name) {
  if (name == "eval-side") return SweepMode::EvalSide;
  if (name == "train-side") return SweepMode::TrainSide;
  throw ConfigError("unknown sweep mode '" + name + "'");
}

EvalReport sweep_eval_iterations(const meta::Model& model, const data::TaskFamily& family,
                                 const EvalProtocol& protocol, const std::vector<std::size_t>& grid,
                                 std::size_t threads) {
  if (grid.empty()) throw ConfigError("sweep: grid must not be empty");
  EvalReport out;
  std::vector<SweepRow> rows;
  for (std::size_t it : grid) {
    EvalProtocol p = protocol;
    p.iterations = it;
    out = evaluate(model, family, p, threads, "sweep-eval-side");
    rows.push_back({it, out.mean_accuracy, out.ci95});
  }
  out.sweep = std::move(rows);
  return out;
}

EvalReport sweep_train_iterations(const meta::Model& initial, const data::TaskFamily& family,
                                  const meta::MetaConfig& meta, const learner::InnerConfig& inner,
                                  const EvalProtocol& protocol, const std::vector<std::size_t>& grid,
                                  std::uint64_t seed, std::size_t threads) {
  if (grid.empty()) throw ConfigError("sweep: grid must not be empty");
  EvalReport out;
  std::vector<SweepRow> rows;
  for (std::size_t it : grid) {
    learner::InnerConfig ic = inner;
    ic.iters_train = it;
    const meta::TrainResult tr = meta::train(family, initial, meta, ic, seed, threads);
    out = evaluate(tr.checkpoint.model, family, protocol, threads, "sweep-train-side");
    rows.push_back({it, out.mean_accuracy, out.ci95});
  }
  out.sweep = std::move(rows);
  return out;
}

// --- cross-validation of psi -----------------------------------------------

CrossvalResult crossval_psi(const meta::Model& donor, const meta::Model& target, const data::TaskFamily& family,
                            const EvalProtocol& protocol, std::size_t threads) {
  if (target.spec.embedding.input_dim != family.dim()) {
    throw ConfigError("crossval: model expects inputs of dimension " +
                      std::to_string(target.spec.embedding.input_dim) + ", family has " +
                      std::to_string(family.dim()));
  }
  if (donor.psi.fusion.size() != target.psi.fusion.size()) {
    throw ConfigError("crossval: donor psi has " + std::to_string(donor.psi.fusion.size()) +
                      " fusion weights, target needs " + std::to_string(target.psi.fusion.size()));
  }
  meta::Model transferred = target;
  transferred.psi = donor.psi;
  CrossvalResult r;
  r.native = evaluate(target, family, protocol, threads, "native");
  r.transferred = evaluate(transferred, family, protocol, threads, "transferred");
  r.delta = r.transferred.mean_accuracy - r.native.mean_accuracy;
  return r;
}

// --- confidence reports ------------------------------------------------------

std::vector<ConfidenceRow> confidence_table(const meta::Model& model, const data::Episode& episode,
                                            std::size_t episode_id, std::size_t iterations, bool with_tran) {
  meta::Model m = model;
  if (!with_tran) m.psi.transductive = false;
  ad::Tape tape;
  meta::BoundModel bound = meta::bind_frozen(tape, m);
  meta::EpisodeForward f = meta::forward_episode(tape, m, bound, episode, iterations);
  const learner::Prediction pred = learner::predict(f.logits.value());
  const Tensor& p = pred.confidences;
  std::vector<ConfidenceRow> rows;
  for (std::size_t j = 0; j < p.dim(0); ++j) {
    ConfidenceRow r;
    r.episode_id = episode_id;
    r.query_id = j;
    r.true_class = episode.query_labels[j];
    for (std::size_t c = 0; c < p.dim(1); ++c) r.probs.push_back(static_cast<double>(p.at(j, c)));
    r.variant = with_tran ? "transductive" : "inductive";
    rows.push_back(std::move(r));
  }
  return rows;
}

double mean_max_probability(const std::vector<ConfidenceRow>& rows, const std::string& variant) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.variant != variant) continue;
    sum += *std::max_element(r.probs.begin(), r.probs.end());
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

ConfidenceReport export_confidence_report(const meta::Model& model, const data::Episode& episode,
                                          std::size_t episode_id, std::size_t iterations) {
  ConfidenceReport r;
  r.rows = confidence_table(model, episode, episode_id, iterations, true);
  auto off = confidence_table(model, episode, episode_id, iterations, false);
  r.rows.insert(r.rows.end(), off.begin(), off.end());
  r.mean_max_prob_tran = mean_max_probability(r.rows, "transductive");
  r.mean_max_prob_no_tran = mean_max_probability(r.rows, "inductive");
  return r;
}

// --- CSV -------------------------------------------------------------------

void write_report_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os << "label,ways,shots,iterations,episodes,accuracy,ci95\n";
  for (const auto& r : reports) {
    os << r.label << ',' << r.ways << ',' << r.shots << ',' << r.iterations << ',' << r.episodes << ','
       << fmt(r.mean_accuracy) << ',' << fmt(r.ci95) << '\n';
  }
}

void write_sweep_csv(std::ostream& os, const EvalReport& report) {
  os << "iterations,accuracy,ci95\n";
  for (const auto& row : report.sweep) os << row.iterations << ',' << fmt(row.accuracy) << ',' << fmt(row.ci95) << '\n';
}

void write_confidence_csv(std::ostream& os, const std::vector<ConfidenceRow>& rows, std::size_t ways) {
  os << "episode_id,query_id,true_class";
  for (std::size_t c = 0; c < ways; ++c) os << ",p_" << c;
  os << ",variant\n";
  for (const auto& r : rows) {
    if (r.probs.size() != ways) throw ShapeError("confidence row has the wrong number of classes");
    os << r.episode_id << ',' << r.query_id << ',' << r.true_class;
    for (double p : r.probs) os << ',' << fmt(p, 12);
    os << ',' << r.variant << '\n';
  }
}

}  // namespace fiml::eval
