#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fiml/meta.hpp"

namespace fiml::eval {

struct SweepRow {
  std::size_t iterations = 0;
  double accuracy = 0;
  double ci95 = 0;
};

struct EvalReport {
  std::string label;
  std::size_t ways = 0;
  std::size_t shots = 0;
  std::size_t iterations = 0;
  std::size_t episodes = 0;
  double mean_accuracy = 0;  // percent
  double ci95 = 0;           // 1.96 * sample std / sqrt(E), percent
  std::vector<double> episode_accuracies;  // fractions in [0, 1]
  std::vector<SweepRow> sweep;
};

// Mean and 95% interval of per-episode accuracies (fractions).
EvalReport summarize(std::string label, std::vector<double> episode_accuracies);

// "NN.NN±N.NN"
std::string format_accuracy(const EvalReport& report);

struct EvalProtocol {
  data::Split split = data::Split::Test;
  std::size_t ways = 5;
  std::size_t shots = 1;
  std::size_t episodes = 600;
  std::size_t query_per_class = data::kDefaultQueryPerClass;
  std::size_t iterations = 15;
  std::uint64_t seed = 0;
};

std::uint64_t episode_seed(const EvalProtocol& protocol, std::size_t index);

// Fraction of query samples whose argmax prediction is correct.
double episode_accuracy(const meta::Model& model, const data::Episode& episode, std::size_t iterations);

EvalReport evaluate(const meta::Model& model, const data::TaskFamily& family, const EvalProtocol& protocol,
                    std::size_t threads, std::string label = "eval");

// Accuracy of an independent closed-form ridge classifier on pooled features:
// W = (X^T X + lambda I)^{-1} X^T T with +-1 targets, solved by Cholesky.
// Used as the oracle for the Baseline rung.
EvalReport evaluate_closed_form_ridge(const meta::Model& model, const data::TaskFamily& family,
                                      const EvalProtocol& protocol, real lambda_reg, std::size_t threads);

// --- ablation ladder -------------------------------------------------------

enum class LadderKind { Standard, DenseFree };

const char* to_string(LadderKind kind);
LadderKind ladder_from_string(const std::string& name);

struct Rung {
  std::string name;
  learner::InitKind init = learner::InitKind::Zero;
  bool dense = false;
  bool transductive = false;
  PsiMask learn;
};

// Standard: Baseline, +Initializer, +DenseFeatures, +LearnLoss, +Transductive.
// DenseFree: Baseline, +Initializer, +LearnLoss, +Transductive, +Dense.
std::vector<Rung> ablation_ladder(LadderKind kind);

// Model for a rung: psi pinned to the baseline constants except for the fields
// the rung learns, which start from `init`. o+- = 1 and v = 1/L unless learned.
meta::Model rung_model(const Rung& rung, const meta::ModelSpec& spec, const Psi& init, std::uint64_t seed);

struct AblationConfig {
  meta::ModelSpec spec;
  Psi psi;  // initial values of the learnable fields (lambda_tran, beta, ...)
  meta::MetaConfig meta;
  learner::InnerConfig inner;
  EvalProtocol eval;
  std::vector<std::size_t> shots{1, 5};
  LadderKind ladder = LadderKind::Standard;
};

struct AblationRow {
  std::string rung;
  std::size_t shots = 0;
  EvalReport report;
  meta::Checkpoint checkpoint;
};

std::vector<AblationRow> run_ablation(const data::TaskFamily& family, const AblationConfig& config,
                                      std::uint64_t seed, std::size_t threads);

// --- iteration sweeps --------------------------------------------------------

enum class SweepMode { EvalSide, TrainSide };
const char* to_string(SweepMode mode);
SweepMode sweep_mode_from_string(const std::string& name);

// Fixed model, varying inner iterations at evaluation. The report's headline
// numbers are those of the last grid value.
EvalReport sweep_eval_iterations(const meta::Model& model, const data::TaskFamily& family,
                                 const EvalProtocol& protocol, const std::vector<std::size_t>& grid,
                                 std::size_t threads);

// Retrains per grid value of iters_train, evaluating at protocol.iterations.
EvalReport sweep_train_iterations(const meta::Model& initial, const data::TaskFamily& family,
                                  const meta::MetaConfig& meta, const learner::InnerConfig& inner,
                                  const EvalProtocol& protocol, const std::vector<std::size_t>& grid,
                                  std::uint64_t seed, std::size_t threads);

// --- cross-validation of psi -----------------------------------------------

struct CrossvalResult {
  EvalReport native;       // target model as trained
  EvalReport transferred;  // target embedding with the donor's psi
  double delta = 0;        // transferred - native, accuracy points
};

CrossvalResult crossval_psi(const meta::Model& donor, const meta::Model& target, const data::TaskFamily& family,
                            const EvalProtocol& protocol, std::size_t threads);

// --- confidence reports ------------------------------------------------------

struct ConfidenceRow {
  std::size_t episode_id = 0;
  std::size_t query_id = 0;
  std::size_t true_class = 0;
  std::vector<double> probs;
  std::string variant;  // "transductive" or "inductive"
};

// Per-query softmax of the fused logits. with_tran = false forces lambda_tran
// to 0 for this run.
std::vector<ConfidenceRow> confidence_table(const meta::Model& model, const data::Episode& episode,
                                            std::size_t episode_id, std::size_t iterations, bool with_tran);

struct ConfidenceReport {
  std::vector<ConfidenceRow> rows;
  double mean_max_prob_tran = 0;
  double mean_max_prob_no_tran = 0;
};

// Both variants for one episode.
ConfidenceReport export_confidence_report(const meta::Model& model, const data::Episode& episode,
                                          std::size_t episode_id, std::size_t iterations);

double mean_max_probability(const std::vector<ConfidenceRow>& rows, const std::string& variant);

// --- CSV -------------------------------------------------------------------

void write_report_csv(std::ostream& os, const std::vector<EvalReport>& reports);
void write_sweep_csv(std::ostream& os, const EvalReport& report);
void write_confidence_csv(std::ostream& os, const std::vector<ConfidenceRow>& rows, std::size_t ways);

}  // namespace fiml::eval
