#include "fiml/meta.hpp"

#include <cmath>

#include "fiml/eval.hpp"
#include "fiml/parallel.hpp"
#include "fiml/rng.hpp"

namespace fiml::meta {

using ad::Var;

Model Model::create(const ModelSpec& spec, Psi psi, PsiMask learn, std::uint64_t seed) {
  embed::validate(spec.embedding);
  if (psi.fusion.size() != spec.embedding.locations) {
    psi.fusion.assign(spec.embedding.locations, real{1} / static_cast<real>(spec.embedding.locations));
  }
  Model m;
  m.spec = spec;
  m.phi = embed::init_params(spec.embedding, seed);
  m.psi = std::move(psi);
  m.learn = learn;
  return m;
}

namespace {

void check_model(const Model& model) {
  const auto expected = embed::init_params(model.spec.embedding, 0);
  if (expected.size() != model.phi.size()) throw ConfigError("model: wrong number of embedding tensors");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].shape() != model.phi[i].shape()) {
      throw ConfigError("model: embedding tensor " + std::to_string(i) + " has shape " +
                        shape_string(model.phi[i].shape()) + ", expected " + shape_string(expected[i].shape()));
    }
  }
  if (model.psi.fusion.size() != model.spec.embedding.locations) {
    throw ConfigError("model: fusion weights do not match the location count");
  }
}

}  // namespace

BoundModel bind(ad::Tape& tape, const Model& model, bool train_phi, const PsiMask& learn) {
  BoundModel b;
  b.phi.reserve(model.phi.size());
  for (const auto& t : model.phi) b.phi.push_back(train_phi ? tape.parameter(t) : tape.constant(t));
  b.psi = bind_psi(tape, model.psi, learn);
  return b;
}

EpisodeForward forward_episode(ad::Tape& tape, const Model& model, const BoundModel& bound,
                               const data::Episode& episode, std::size_t iterations, bool record_trace) {
  const auto& cfg = model.spec.embedding;
  Var support = embed::embed(cfg, bound.phi, tape.constant(episode.support));
  Var query = embed::embed(cfg, bound.phi, tape.constant(episode.query));
  EpisodeForward f;
  f.tensors = objective::make_episode_tensors(support, episode.support_labels, query, episode.ways,
                                              model.spec.dense, model.spec.transductive_mode);
  f.inner = learner::run_inner(f.tensors, bound.psi, model.spec.init, iterations, record_trace);
  f.logits = learner::fuse_logits(f.inner.theta, f.tensors.query, objective::fusion_weights(f.tensors, bound.psi));
  return f;
}

Var query_cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  if (labels.empty()) throw ConfigError("meta loss: episode has no query samples");
  const std::size_t k = logits.shape()[1];
  Var y = logits.tape().constant(objective::one_hot(labels, k));
  return ad::mean(ad::logsumexp(logits) - ad::sum(logits * y, 1));
}

Var meta_loss(ad::Tape& tape, const Model& model, const BoundModel& bound, std::span<const data::Episode> episodes,
              std::size_t iterations) {
  if (episodes.empty()) throw ConfigError("meta loss: empty batch");
  Var total;
  for (const auto& ep : episodes) {
    Var l = query_cross_entropy(forward_episode(tape, model, bound, ep, iterations).logits, ep.query_labels);
    total = total.valid() ? total + l : l;
  }
  return ad::scale(total, real{1} / static_cast<real>(episodes.size()));
}

MetaGradient meta_gradient(const Model& model, std::span<const data::Episode> episodes, std::size_t iterations,
                           bool train_phi, std::size_t threads) {
  if (episodes.empty()) throw ConfigError("meta loss: empty batch");
  std::vector<MetaGradient> parts(episodes.size());
  parallel_for(episodes.size(), threads, [&](std::size_t i) {
    ad::Tape tape;
    BoundModel bound = bind(tape, model, train_phi, model.learn);
    Var loss = query_cross_entropy(forward_episode(tape, model, bound, episodes[i], iterations).logits,
                                   episodes[i].query_labels);
    ad::Gradients grads = tape.backward(loss);
    MetaGradient& g = parts[i];
    g.loss = loss.item();
    for (const auto& p : bound.phi) g.phi.push_back(grads[p]);
    g.psi = psi_gradient(grads, bound.psi);
  });
  const real inv = real{1} / static_cast<real>(episodes.size());
  MetaGradient out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    out.loss += parts[i].loss;
    for (std::size_t t = 0; t < out.phi.size(); ++t) {
      auto dst = out.phi[t].mutable_data();
      auto src = parts[i].phi[t].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    for (std::size_t j = 0; j < kPsiScalars; ++j) out.psi.raw[j] += parts[i].psi.raw[j];
    for (std::size_t j = 0; j < out.psi.fusion.size(); ++j) out.psi.fusion[j] += parts[i].psi.fusion[j];
  }
  out.loss *= inv;
  for (auto& t : out.phi)
    for (auto& x : t.mutable_data()) x *= inv;
  for (auto& x : out.psi.raw) x *= inv;
  for (auto& x : out.psi.fusion) x *= inv;
  return out;
}

std::vector<Tensor> flatten(const Model& model) {
  std::vector<Tensor> out = model.phi;
  for (real r : model.psi.raw) out.push_back(Tensor::scalar(r));
  out.emplace_back(Shape{model.psi.fusion.size()}, model.psi.fusion);
  return out;
}

void unflatten(Model& model, const std::vector<Tensor>& params) {
  const std::size_t np = model.phi.size();
  if (params.size() != np + kPsiScalars + 1) throw ShapeError("unflatten: parameter count mismatch");
  for (std::size_t i = 0; i < np; ++i) model.phi[i] = params[i];
  for (std::size_t i = 0; i < kPsiScalars; ++i) model.psi.raw[i] = params[np + i].item();
  const Tensor& v = params[np + kPsiScalars];
  model.psi.fusion.assign(v.data().begin(), v.data().end());
}

std::vector<Tensor> flatten(const MetaGradient& grad) {
  std::vector<Tensor> out = grad.phi;
  for (real r : grad.psi.raw) out.push_back(Tensor::scalar(r));
  out.emplace_back(Shape{grad.psi.fusion.size()}, grad.psi.fusion);
  return out;
}

std::vector<ParamSlot> param_slots(const Model& model, bool train_phi) {
  std::vector<ParamSlot> slots(model.phi.size(), ParamSlot{train_phi, true});
  for (std::size_t i = 0; i < kPsiFields; ++i) {
    slots.push_back(ParamSlot{model.learn[static_cast<PsiField>(i)], false});
  }
  return slots;
}

void validate(const MetaConfig& c) {
  if (!(c.lr > 0)) throw ConfigError("meta: lr must be positive");
  if (c.tasks_per_batch == 0) throw ConfigError("meta: tasks_per_batch must be at least 1");
  if (c.ways == 0 || c.train_shots == 0) throw ConfigError("meta: ways and train_shots must be positive");
  if (c.query_per_class == 0) throw ConfigError("meta: query_per_class must be positive");
  if (c.val_episodes < 2) throw ConfigError("meta: val_episodes must be at least 2");
  if (c.momentum < 0 || c.momentum >= 1) throw ConfigError("meta: momentum must be in [0, 1)");
  if (c.weight_decay < 0) throw ConfigError("meta: weight_decay must be non-negative");
  if (!(c.finetune.lr > 0)) throw ConfigError("meta: finetune lr must be positive");
}

namespace {

real scheduled_lr(const MetaConfig& c, std::size_t epoch) {
  if (c.lr_decay_every == 0) return c.lr;
  return c.lr * static_cast<real>(std::pow(c.lr_decay_factor, static_cast<real>(epoch / c.lr_decay_every)));
}

eval::EvalProtocol validation_protocol(const MetaConfig& meta, const learner::InnerConfig& inner,
                                       std::uint64_t seed) {
  eval::EvalProtocol p;
  p.split = data::Split::Validation;
  p.ways = meta.ways;
  p.shots = meta.train_shots;
  p.episodes = meta.val_episodes;
  p.query_per_class = meta.query_per_class;
  p.iterations = inner.iters_eval;
  p.seed = CounterRng::derive_key(seed, {streams::kValidate});
  return p;
}

std::vector<data::Episode> sample_batch(const data::TaskFamily& family, std::size_t ways, std::size_t shots,
                                        std::size_t queries, std::size_t count, std::uint64_t seed,
                                        std::initializer_list<std::uint64_t> path) {
  std::vector<data::Episode> batch;
  batch.reserve(count);
  const std::uint64_t key = CounterRng::derive_key(seed, path);
  for (std::size_t t = 0; t < count; ++t) {
    batch.push_back(data::sample_episode(family, data::Split::Train, ways, shots, queries,
                                         CounterRng::derive_key(key, {t})));
  }
  return batch;
}

}  // namespace

TrainResult train(const data::TaskFamily& family, const Model& initial, const MetaConfig& meta,
                  const learner::InnerConfig& inner, std::uint64_t seed, std::size_t threads,
                  const Checkpoint* resume) {
  validate(meta);
  check_model(initial);
  const std::size_t shots = meta.pretrain_shots > 0 ? meta.pretrain_shots : meta.train_shots;
  const eval::EvalProtocol val = validation_protocol(meta, inner, seed);

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  NesterovSgd opt(meta.momentum, meta.weight_decay);
  Model model = initial;
  if (resume) {
    ck = *resume;
    model = resume->last;
    opt.set_velocity(resume->velocity);
  } else {
    ck.model = initial;
    ck.best_val_accuracy = evaluate(initial, family, val, threads).mean_accuracy;
    ck.best_epoch = 0;
    ck.epochs_completed = 0;
  }
  ck.meta = meta;
  ck.inner = inner;
  ck.seed = seed;
  ck.family = family.config();
  ck.family_seed = family.seed();

  const auto slots = param_slots(model, true);
  for (std::size_t epoch = ck.epochs_completed; epoch < meta.epochs; ++epoch) {
    const real lr = scheduled_lr(meta, epoch);
    double loss_sum = 0;
    for (std::size_t b = 0; b < meta.batches_per_epoch; ++b) {
      const auto batch = sample_batch(family, meta.ways, shots, meta.query_per_class, meta.tasks_per_batch, seed,
                                      {streams::kTrain, epoch, b});
      MetaGradient g;
      try {
        g = meta_gradient(model, batch, inner.iters_train, true, threads);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b) + ": " + e.what());
      }
      auto params = flatten(model);
      opt.step(params, flatten(g), slots, lr);
      unflatten(model, params);
      loss_sum += g.loss;
    }
    const eval::EvalReport report = evaluate(model, family, val, threads);
    TrainLogRow row;
    row.epoch = epoch + 1;
    row.meta_loss = meta.batches_per_epoch ? loss_sum / static_cast<double>(meta.batches_per_epoch) : 0.0;
    row.val_accuracy = report.mean_accuracy;
    row.val_ci95 = report.ci95;
    result.log.push_back(row);
    if (report.mean_accuracy > ck.best_val_accuracy) {
      ck.best_val_accuracy = report.mean_accuracy;
      ck.best_epoch = epoch + 1;
      ck.model = model;
    }
    ck.epochs_completed = epoch + 1;
  }
  ck.last = model;
  ck.velocity = opt.velocity();
  return result;
}

Checkpoint finetune_psi(const Checkpoint& checkpoint, const data::TaskFamily& family, std::size_t shots,
                        const FinetuneConfig& config, std::uint64_t seed, std::size_t threads) {
  check_model(checkpoint.model);
  if (shots == 0) throw ConfigError("finetune: shots must be positive");
  if (!(config.lr > 0)) throw ConfigError("finetune: lr must be positive");
  const MetaConfig& meta = checkpoint.meta;
  Model model = checkpoint.model;
  const bool train_phi = !config.freeze_embedding;
  const auto slots = param_slots(model, train_phi);
  NesterovSgd opt(meta.momentum, meta.weight_decay);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t b = 0; b < config.batches_per_epoch; ++b) {
      const auto batch = sample_batch(family, meta.ways, shots, meta.query_per_class, meta.tasks_per_batch, seed,
                                      {streams::kFinetune, shots, epoch, b});
      MetaGradient g = meta_gradient(model, batch, checkpoint.inner.iters_train, train_phi, threads);
      auto params = flatten(model);
      opt.step(params, flatten(g), slots, config.lr);
      unflatten(model, params);
    }
  }
  Checkpoint out = checkpoint;
  out.model = model;
  out.last = model;
  out.velocity.clear();
  out.meta.train_shots = shots;
  return out;
}

}  // namespace fiml::meta
