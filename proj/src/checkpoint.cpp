#include "binary_io.hpp"
#include "fiml/config.hpp"
#include "fiml/meta.hpp"

// FIML checkpoint: "FIML", u8 version, u32-length JSON header, then f64
// payloads for the best model, the last model and the optimizer velocity,
// then a CRC32 of everything before it.
namespace fiml::meta {

namespace {

using config::Json;

void write_tensor(io::Writer& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (real v : t.data()) w.f64(static_cast<double>(v));
}

Tensor read_tensor(io::Reader& r) {
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError("checkpoint: implausible tensor rank");
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  const std::size_t n = shape_size(shape);
  if (n * 8 > r.remaining()) throw FormatError("checkpoint: truncated payload");
  std::vector<real> values(n);
  for (auto& v : values) v = static_cast<real>(r.f64());
  return Tensor(std::move(shape), std::move(values));
}

void write_model_payload(io::Writer& w, const Model& m) {
  w.u32(static_cast<std::uint32_t>(m.phi.size()));
  for (const auto& t : m.phi) write_tensor(w, t);
  for (real v : m.psi.raw) w.f64(static_cast<double>(v));
  w.u32(static_cast<std::uint32_t>(m.psi.fusion.size()));
  for (real v : m.psi.fusion) w.f64(static_cast<double>(v));
}

void read_model_payload(io::Reader& r, Model& m) {
  const std::uint32_t count = r.u32();
  if (count > 64) throw FormatError("checkpoint: implausible parameter count");
  m.phi.clear();
  for (std::uint32_t i = 0; i < count; ++i) m.phi.push_back(read_tensor(r));
  for (auto& v : m.psi.raw) v = static_cast<real>(r.f64());
  const std::uint32_t fl = r.u32();
  if (std::size_t{fl} * 8 > r.remaining()) throw FormatError("checkpoint: truncated payload");
  m.psi.fusion.assign(fl, 0);
  for (auto& v : m.psi.fusion) v = static_cast<real>(r.f64());
}

Json model_header(const Model& m) {
  Json j = config::to_json(m.spec);
  j["learn"] = config::mask_to_json(m.learn);
  j["transductive"] = m.psi.transductive;
  return j;
}

Model model_from_header(const Json& j) {
  Json spec;
  spec["embedding"] = j.at("embedding");
  spec["model"] = j.at("model");
  Model m;
  m.spec = config::model_spec_from_json(spec);
  m.learn = config::mask_from_json(j.at("learn"));
  m.psi.transductive = j.at("transductive").get<bool>();
  return m;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  Json h;
  h["format"] = "fiml-checkpoint";
  h["seed"] = c.seed;
  h["epochs_completed"] = c.epochs_completed;
  h["best_val_accuracy"] = c.best_val_accuracy;
  h["best_epoch"] = c.best_epoch;
  h["meta"] = config::to_json(c.meta);
  h["inner"] = config::to_json(c.inner);
  h["family"] = config::to_json(c.family);
  h["family_seed"] = c.family_seed;
  h["model"] = model_header(c.model);
  h["last"] = model_header(c.last);

  io::Writer w;
  w.bytes("FIML", 4);
  w.u8(Checkpoint::kVersion);
  w.str(h.dump());
  write_model_payload(w, c.model);
  write_model_payload(w, c.last);
  w.u32(static_cast<std::uint32_t>(c.velocity.size()));
  for (const auto& t : c.velocity) write_tensor(w, t);
  w.seal();
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string what = "checkpoint " + path.string();
  io::Reader r = io::Reader::load(path, what);
  r.expect_magic("FIML");
  const std::uint8_t version = r.byte_at(4);
  if (version != Checkpoint::kVersion) {
    throw UnsupportedVersionError(what + ": unsupported version " + std::to_string(version));
  }
  r.verify_crc();
  r.u8();

  Json h;
  try {
    h = Json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": bad header: " + e.what());
  }

  Checkpoint c;
  try {
    c.seed = h.at("seed").get<std::uint64_t>();
    c.epochs_completed = h.at("epochs_completed").get<std::size_t>();
    c.best_val_accuracy = h.at("best_val_accuracy").get<double>();
    c.best_epoch = h.at("best_epoch").get<std::size_t>();
    c.meta = config::meta_config_from_json(h.at("meta"));
    c.inner = config::inner_config_from_json(h.at("inner"));
    c.family = config::family_config_from_json(h.at("family"), false);
    c.family_seed = h.at("family_seed").get<std::uint64_t>();
    c.model = model_from_header(h.at("model"));
    c.last = model_from_header(h.at("last"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": bad header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(what + ": bad header: " + e.what());
  }

  read_model_payload(r, c.model);
  read_model_payload(r, c.last);
  const std::uint32_t nv = r.u32();
  if (nv > 256) throw FormatError(what + ": implausible velocity count");
  for (std::uint32_t i = 0; i < nv; ++i) c.velocity.push_back(read_tensor(r));
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes");

  // Shapes must agree with what the model spec would create.
  const auto expect = embed::init_params(c.model.spec.embedding, 0);
  for (const Model* m : {&c.model, &c.last}) {
    if (m->phi.size() != expect.size()) throw FormatError(what + ": parameter count mismatch");
    for (std::size_t i = 0; i < expect.size(); ++i) {
      if (m->phi[i].shape() != expect[i].shape()) throw FormatError(what + ": parameter shape mismatch");
    }
    if (m->psi.fusion.size() != m->spec.embedding.locations) throw FormatError(what + ": fusion size mismatch");
  }
  return c;
}

}  // namespace fiml::meta
