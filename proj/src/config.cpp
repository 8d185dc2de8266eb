#include "fiml/config.hpp"

#include <fstream>
#include <set>

namespace fiml::config {

namespace {

// Reads keys of one JSON object and rejects whatever was not consumed.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

data::GeneratorKind generator_from_string(const std::string& s) {
  if (s == "gaussian-mixture") return data::GeneratorKind::GaussianMixture;
  if (s == "ring-mixture") return data::GeneratorKind::RingMixture;
  if (s == "file-backed") return data::GeneratorKind::FileBacked;
  throw ConfigError("family.kind: unknown generator '" + s + "'");
}

data::Split split_from_string(const std::string& s) {
  if (s == "train") return data::Split::Train;
  if (s == "val") return data::Split::Validation;
  if (s == "test") return data::Split::Test;
  throw ConfigError("unknown split '" + s + "'");
}

objective::TransductiveMode mode_from_string(const std::string& s) {
  if (s == "fused") return objective::TransductiveMode::Fused;
  if (s == "per-location") return objective::TransductiveMode::PerLocation;
  throw ConfigError("model.transductive_mode: unknown mode '" + s + "'");
}

template <class T>
real as_real(T v) {
  return static_cast<real>(v);
}

}  // namespace

data::FamilyConfig family_config_from_json(const Json& j, bool check_path) {
  ObjectReader r(j, "family");
  data::FamilyConfig f;
  std::string kind = data::to_string(f.kind);
  r.get("kind", kind);
  f.kind = generator_from_string(kind);
  r.get("classes", f.classes);
  r.get("dim", f.dim);
  std::vector<std::size_t> split(f.split.begin(), f.split.end());
  r.get("split", split);
  if (split.size() != 3) throw ConfigError("family.split: expected [train, val, test]");
  std::copy(split.begin(), split.end(), f.split.begin());
  r.get("prior_std", f.prior_std);
  r.get("within_std", f.within_std);
  r.get("cell_scales", f.cell_scales);
  r.get("shared_cells", f.shared_cells);
  r.get("cell_dropout", f.cell_dropout);
  r.get("path", f.path);
  r.finish();
  if (check_path && f.kind == data::GeneratorKind::FileBacked && f.path.empty()) {
    throw ConfigError("family.path: required for file-backed families");
  }
  return f;
}

Json to_json(const data::FamilyConfig& f) {
  Json j;
  j["kind"] = data::to_string(f.kind);
  j["classes"] = f.classes;
  j["dim"] = f.dim;
  j["split"] = std::vector<std::size_t>(f.split.begin(), f.split.end());
  j["prior_std"] = f.prior_std;
  j["within_std"] = f.within_std;
  j["cell_scales"] = f.cell_scales;
  j["shared_cells"] = f.shared_cells;
  j["cell_dropout"] = f.cell_dropout;
  j["path"] = f.path;
  return j;
}

namespace {

embed::EmbeddingConfig embedding_from_json(const Json& j, std::size_t default_dim) {
  ObjectReader r(j, "embedding");
  embed::EmbeddingConfig e;
  e.input_dim = default_dim;
  std::string kind = embed::to_string(e.kind);
  r.get("kind", kind);
  e.kind = embed::kind_from_string(kind);
  r.get("input_dim", e.input_dim);
  r.get("features", e.features);
  r.get("locations", e.locations);
  r.get("hidden", e.hidden);
  r.finish();
  embed::validate(e);
  return e;
}

Json to_json(const embed::EmbeddingConfig& e) {
  Json j;
  j["kind"] = embed::to_string(e.kind);
  j["input_dim"] = e.input_dim;
  j["features"] = e.features;
  j["locations"] = e.locations;
  j["hidden"] = e.hidden;
  return j;
}

void model_fields_from_json(const Json& j, meta::ModelSpec& m) {
  ObjectReader r(j, "model");
  r.get("dense", m.dense);
  std::string init = learner::to_string(m.init);
  r.get("init", init);
  m.init = learner::init_kind_from_string(init);
  std::string mode = objective::to_string(m.transductive_mode);
  r.get("transductive_mode", mode);
  m.transductive_mode = mode_from_string(mode);
  r.finish();
}

Json model_fields_to_json(const meta::ModelSpec& m) {
  Json j;
  j["dense"] = m.dense;
  j["init"] = learner::to_string(m.init);
  j["transductive_mode"] = objective::to_string(m.transductive_mode);
  return j;
}

void psi_from_json(const Json& j, Psi& psi, PsiMask& mask) {
  ObjectReader r(j, "psi");
  for (std::size_t i = 0; i < kPsiScalars; ++i) {
    const auto f = static_cast<PsiField>(i);
    double v = static_cast<double>(psi.value(f));
    r.get(to_string(f), v);
    psi.set_value(f, as_real(v));
  }
  if (const Json* fusion = r.child("fusion"); fusion && !fusion->is_null()) {
    try {
      psi.fusion = fusion->get<std::vector<real>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("psi.fusion: ") + e.what());
    }
  }
  r.get("transductive", psi.transductive);
  if (const Json* learn = r.child("learn")) mask = mask_from_json(*learn);
  r.finish();
}

Json psi_to_json(const Psi& psi, const PsiMask& mask) {
  Json j;
  for (std::size_t i = 0; i < kPsiScalars; ++i) {
    const auto f = static_cast<PsiField>(i);
    j[to_string(f)] = static_cast<double>(psi.value(f));
  }
  j["fusion"] = std::vector<double>(psi.fusion.begin(), psi.fusion.end());
  j["transductive"] = psi.transductive;
  j["learn"] = mask_to_json(mask);
  return j;
}

meta::FinetuneConfig finetune_from_json(const Json& j) {
  ObjectReader r(j, "meta.finetune");
  meta::FinetuneConfig f;
  r.get("epochs", f.epochs);
  r.get("batches_per_epoch", f.batches_per_epoch);
  r.get("lr", f.lr);
  r.get("freeze_embedding", f.freeze_embedding);
  r.finish();
  return f;
}

eval::EvalProtocol eval_from_json(const Json& j) {
  ObjectReader r(j, "eval");
  eval::EvalProtocol p;
  std::string split = data::to_string(p.split);
  r.get("split", split);
  p.split = split_from_string(split);
  r.get("ways", p.ways);
  r.get("shots", p.shots);
  r.get("episodes", p.episodes);
  r.get("query_per_class", p.query_per_class);
  r.get("iterations", p.iterations);
  r.get("seed", p.seed);
  r.finish();
  if (p.episodes < 2) throw ConfigError("eval.episodes: at least 2 episodes are needed for an interval");
  return p;
}

Json to_json(const eval::EvalProtocol& p) {
  Json j;
  j["split"] = data::to_string(p.split);
  j["ways"] = p.ways;
  j["shots"] = p.shots;
  j["episodes"] = p.episodes;
  j["query_per_class"] = p.query_per_class;
  j["iterations"] = p.iterations;
  j["seed"] = p.seed;
  return j;
}

}  // namespace

Json mask_to_json(const PsiMask& mask) {
  Json j = Json::array();
  for (std::size_t i = 0; i < kPsiFields; ++i) {
    if (mask[static_cast<PsiField>(i)]) j.push_back(to_string(static_cast<PsiField>(i)));
  }
  return j;
}

PsiMask mask_from_json(const Json& j) {
  if (j.is_string()) {
    if (j == "all") return PsiMask::all();
    if (j == "none") return PsiMask::none();
    throw ConfigError("psi.learn: expected \"all\", \"none\" or a list of field names");
  }
  if (!j.is_array()) throw ConfigError("psi.learn: expected a list of field names");
  PsiMask m;
  for (const auto& name : j) {
    if (!name.is_string()) throw ConfigError("psi.learn: field names must be strings");
    m.set(psi_field_from_string(name.get<std::string>()));
  }
  return m;
}

Json to_json(const meta::ModelSpec& spec) {
  Json j;
  j["embedding"] = to_json(spec.embedding);
  j["model"] = model_fields_to_json(spec);
  return j;
}

meta::ModelSpec model_spec_from_json(const Json& j) {
  ObjectReader r(j, "spec");
  meta::ModelSpec spec;
  const Json* e = r.child("embedding");
  const Json* m = r.child("model");
  r.finish();
  if (!e || !m) throw ConfigError("spec: embedding and model sections are required");
  spec.embedding = embedding_from_json(*e, spec.embedding.input_dim);
  model_fields_from_json(*m, spec);
  return spec;
}

Json to_json(const meta::MetaConfig& m) {
  Json j;
  j["epochs"] = m.epochs;
  j["batches_per_epoch"] = m.batches_per_epoch;
  j["tasks_per_batch"] = m.tasks_per_batch;
  j["lr"] = static_cast<double>(m.lr);
  j["momentum"] = static_cast<double>(m.momentum);
  j["weight_decay"] = static_cast<double>(m.weight_decay);
  j["lr_decay_every"] = m.lr_decay_every;
  j["lr_decay_factor"] = static_cast<double>(m.lr_decay_factor);
  j["ways"] = m.ways;
  j["train_shots"] = m.train_shots;
  j["query_per_class"] = m.query_per_class;
  j["val_episodes"] = m.val_episodes;
  j["pretrain_shots"] = m.pretrain_shots;
  Json f;
  f["epochs"] = m.finetune.epochs;
  f["batches_per_epoch"] = m.finetune.batches_per_epoch;
  f["lr"] = static_cast<double>(m.finetune.lr);
  f["freeze_embedding"] = m.finetune.freeze_embedding;
  j["finetune"] = f;
  return j;
}

meta::MetaConfig meta_config_from_json(const Json& j) {
  ObjectReader r(j, "meta");
  meta::MetaConfig m;
  r.get("epochs", m.epochs);
  r.get("batches_per_epoch", m.batches_per_epoch);
  r.get("tasks_per_batch", m.tasks_per_batch);
  r.get("lr", m.lr);
  r.get("momentum", m.momentum);
  r.get("weight_decay", m.weight_decay);
  r.get("lr_decay_every", m.lr_decay_every);
  r.get("lr_decay_factor", m.lr_decay_factor);
  r.get("ways", m.ways);
  r.get("train_shots", m.train_shots);
  r.get("query_per_class", m.query_per_class);
  r.get("val_episodes", m.val_episodes);
  r.get("pretrain_shots", m.pretrain_shots);
  if (const Json* f = r.child("finetune")) m.finetune = finetune_from_json(*f);
  r.finish();
  meta::validate(m);
  return m;
}

Json to_json(const learner::InnerConfig& inner) {
  Json j;
  j["iters_train"] = inner.iters_train;
  j["iters_eval"] = inner.iters_eval;
  return j;
}

learner::InnerConfig inner_config_from_json(const Json& j) {
  ObjectReader r(j, "inner");
  learner::InnerConfig c;
  r.get("iters_train", c.iters_train);
  r.get("iters_eval", c.iters_eval);
  r.finish();
  return c;
}

RunConfig parse_run_config(const Json& doc) {
  ObjectReader r(doc, "config");
  RunConfig c;
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("threads", c.threads);
  if (const Json* f = r.child("family")) c.family = family_config_from_json(*f);
  c.model.embedding.input_dim = c.family.dim;
  if (const Json* e = r.child("embedding")) {
    c.model.embedding = embedding_from_json(*e, c.family.dim);
  } else {
    embed::validate(c.model.embedding);
  }
  if (const Json* m = r.child("model")) model_fields_from_json(*m, c.model);
  c.psi = Psi::baseline(c.model.embedding.locations);
  if (const Json* p = r.child("psi")) psi_from_json(*p, c.psi, c.learn);
  if (c.psi.fusion.size() != c.model.embedding.locations) {
    throw ConfigError("psi.fusion: needs one weight per location (" +
                      std::to_string(c.model.embedding.locations) + ")");
  }
  if (const Json* i = r.child("inner")) c.inner = inner_config_from_json(*i);
  if (const Json* m = r.child("meta")) c.meta = meta_config_from_json(*m);
  if (const Json* e = r.child("eval")) c.eval = eval_from_json(*e);
  if (const Json* s = r.child("sweep")) {
    ObjectReader sr(*s, "sweep");
    std::string mode = eval::to_string(c.sweep.mode);
    sr.get("mode", mode);
    c.sweep.mode = eval::sweep_mode_from_string(mode);
    sr.get("grid", c.sweep.grid);
    sr.finish();
    if (c.sweep.grid.empty()) throw ConfigError("sweep.grid: must not be empty");
  }
  if (const Json* a = r.child("ablation")) {
    ObjectReader ar(*a, "ablation");
    std::string ladder = eval::to_string(c.ablation.ladder);
    ar.get("ladder", ladder);
    c.ablation.ladder = eval::ladder_from_string(ladder);
    ar.get("shots", c.ablation.shots);
    ar.finish();
  }
  if (const Json* cf = r.child("confidence")) {
    ObjectReader cr(*cf, "confidence");
    cr.get("episodes", c.confidence.episodes);
    cr.get("shots", c.confidence.shots);
    cr.finish();
  }
  if (const Json* g = r.child("gradcheck")) {
    ObjectReader gr(*g, "gradcheck");
    gr.get("draws", c.gradcheck.draws);
    gr.get("meta_draws", c.gradcheck.meta_draws);
    gr.finish();
  }
  r.finish();
  if (c.model.embedding.input_dim != c.family.dim && c.family.kind != data::GeneratorKind::FileBacked) {
    throw ConfigError("embedding.input_dim must equal family.dim");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json doc;
  try {
    doc = Json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

Json to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  j["family"] = to_json(c.family);
  j["embedding"] = to_json(c.model.embedding);
  j["model"] = model_fields_to_json(c.model);
  j["psi"] = psi_to_json(c.psi, c.learn);
  j["inner"] = to_json(c.inner);
  j["meta"] = to_json(c.meta);
  j["eval"] = to_json(c.eval);
  j["sweep"] = {{"mode", eval::to_string(c.sweep.mode)}, {"grid", c.sweep.grid}};
  j["ablation"] = {{"ladder", eval::to_string(c.ablation.ladder)}, {"shots", c.ablation.shots}};
  j["confidence"] = {{"episodes", c.confidence.episodes}, {"shots", c.confidence.shots}};
  j["gradcheck"] = {{"draws", c.gradcheck.draws}, {"meta_draws", c.gradcheck.meta_draws}};
  return j;
}

}  // namespace fiml::config
