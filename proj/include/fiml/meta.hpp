#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fiml/base_learner.hpp"
#include "fiml/data.hpp"
#include "fiml/embedding.hpp"
#include "fiml/optimizer.hpp"
#include "fiml/psi.hpp"

namespace fiml::meta {

struct ModelSpec {
  embed::EmbeddingConfig embedding;
  bool dense = true;
  learner::InitKind init = learner::InitKind::Support;
  objective::TransductiveMode transductive_mode = objective::TransductiveMode::Fused;

  friend bool operator==(const ModelSpec& a, const ModelSpec& b) {
    return a.embedding.kind == b.embedding.kind && a.embedding.input_dim == b.embedding.input_dim &&
           a.embedding.features == b.embedding.features && a.embedding.locations == b.embedding.locations &&
           a.embedding.hidden == b.embedding.hidden && a.dense == b.dense && a.init == b.init &&
           a.transductive_mode == b.transductive_mode;
  }
};

/// Everything the meta-learner owns: embedding parameters phi and the
/// base-learner parameters psi, plus which psi fields are learnable.
struct Model {
  ModelSpec spec;
  std::vector<Tensor> phi;
  Psi psi;
  PsiMask learn;

  static Model create(const ModelSpec& spec, Psi psi, PsiMask learn, std::uint64_t seed);
};

struct BoundModel {
  std::vector<ad::Var> phi;
  PsiVars psi;
};

BoundModel bind(ad::Tape& tape, const Model& model, bool train_phi, const PsiMask& learn);
inline BoundModel bind_frozen(ad::Tape& tape, const Model& model) {
  return bind(tape, model, false, PsiMask::none());
}

struct EpisodeForward {
  objective::EpisodeTensors tensors;
  learner::InnerResult inner;
  ad::Var logits;  // fused query logits [Q, k]
};

EpisodeForward forward_episode(ad::Tape& tape, const Model& model, const BoundModel& bound,
                               const data::Episode& episode, std::size_t iterations, bool record_trace = false);

// Mean over queries of -log softmax(logits)[true class].
ad::Var query_cross_entropy(ad::Var logits, const std::vector<std::size_t>& labels);

// Mean over tasks of the per-task query cross-entropy, on a single tape.
ad::Var meta_loss(ad::Tape& tape, const Model& model, const BoundModel& bound,
                  std::span<const data::Episode> episodes, std::size_t iterations);

struct MetaGradient {
  real loss = 0;
  std::vector<Tensor> phi;
  Psi psi;  // raw-space gradient
};

// Meta-loss and its gradient, one tape per episode, reduced in episode order.
MetaGradient meta_gradient(const Model& model, std::span<const data::Episode> episodes, std::size_t iterations,
                           bool train_phi, std::size_t threads);

// Flat parameter view used by the optimizer: phi tensors, then the nine psi
// scalars, then the fusion vector.
std::vector<Tensor> flatten(const Model& model);
void unflatten(Model& model, const std::vector<Tensor>& params);
std::vector<Tensor> flatten(const MetaGradient& grad);
std::vector<ParamSlot> param_slots(const Model& model, bool train_phi);

struct FinetuneConfig {
  std::size_t epochs = 10;
  std::size_t batches_per_epoch = 50;
  real lr = real(1e-3);
  bool freeze_embedding = true;
};

struct MetaConfig {
  std::size_t epochs = 5;
  std::size_t batches_per_epoch = 50;
  std::size_t tasks_per_batch = 16;
  real lr = real(0.01);
  real momentum = real(0.9);
  real weight_decay = real(5e-4);
  // Step decay: lr *= lr_decay_factor every lr_decay_every epochs (0 = constant).
  std::size_t lr_decay_every = 0;
  real lr_decay_factor = real(0.1);
  std::size_t ways = 5;
  std::size_t train_shots = 1;
  std::size_t query_per_class = data::kDefaultQueryPerClass;
  std::size_t val_episodes = 200;
  // > 0: meta-train at this shot count first, then fine-tune psi at train_shots.
  std::size_t pretrain_shots = 0;
  FinetuneConfig finetune;
};

void validate(const MetaConfig& config);

struct TrainLogRow {
  std::size_t epoch = 0;
  double meta_loss = 0;
  double val_accuracy = 0;
  double val_ci95 = 0;
};

struct Checkpoint {
  static constexpr std::uint8_t kVersion = 1;

  Model model;  // best-validation parameters
  Model last;   // parameters after the last completed epoch
  std::vector<Tensor> velocity;  // optimizer state belonging to `last`
  data::FamilyConfig family;     // the family trained on, for later evaluation
  std::uint64_t family_seed = 0;
  MetaConfig meta;
  learner::InnerConfig inner;
  std::uint64_t seed = 0;
  std::size_t epochs_completed = 0;
  double best_val_accuracy = 0;
  std::size_t best_epoch = 0;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
};

// Episodic meta-training with per-epoch validation on the validation split.
// Resuming from a checkpoint continues at its epochs_completed and reproduces
// the uninterrupted run exactly.
TrainResult train(const data::TaskFamily& family, const Model& initial, const MetaConfig& meta,
                  const learner::InnerConfig& inner, std::uint64_t seed, std::size_t threads,
                  const Checkpoint* resume = nullptr);

// Updates only psi (embedding frozen) on episodes with `shots` support samples.
Checkpoint finetune_psi(const Checkpoint& checkpoint, const data::TaskFamily& family, std::size_t shots,
                        const FinetuneConfig& config, std::uint64_t seed, std::size_t threads);

}  // namespace fiml::meta
