#include "fiml/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "binary_io.hpp"
#include "fiml/rng.hpp"

namespace fiml::data {

namespace {

constexpr std::uint8_t kDatasetVersion = 1;

void validate(const FamilyConfig& c) {
  if (c.classes == 0) throw ConfigError("family: class count must be positive");
  if (c.dim == 0) throw ConfigError("family: input dim must be positive");
  if (c.split[0] + c.split[1] + c.split[2] != c.classes) {
    throw ConfigError("family: split sizes " + std::to_string(c.split[0]) + "/" + std::to_string(c.split[1]) +
                      "/" + std::to_string(c.split[2]) + " do not add up to " + std::to_string(c.classes) +
                      " classes");
  }
  if (c.prior_std < 0 || c.within_std < 0) throw ConfigError("family: dispersions must be non-negative");
  if (!c.cell_scales.empty() && c.dim % c.cell_scales.size() != 0) {
    throw ConfigError("family: dim must be divisible by the number of cell scales");
  }
  if (c.cell_dropout < 0 || c.cell_dropout >= 1) throw ConfigError("family: cell_dropout must be in [0, 1)");
  if (c.shared_cells && c.cell_scales.empty()) {
    throw ConfigError("family: shared_cells needs cell_scales to define the cells");
  }
  if (c.cell_dropout > 0 && c.cell_scales.empty()) {
    throw ConfigError("family: cell_dropout needs cell_scales to define the cells");
  }
}

}  // namespace

const char* to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::GaussianMixture: return "gaussian-mixture";
    case GeneratorKind::RingMixture: return "ring-mixture";
    case GeneratorKind::FileBacked: return "file-backed";
  }
  return "?";
}

const char* to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

TaskFamily TaskFamily::generate(const FamilyConfig& config, std::uint64_t seed) {
  if (config.kind == GeneratorKind::FileBacked) {
    // Class count, dim and split come from the file header.
    TaskFamily f = load_dataset(config.path);
    f.config_.path = config.path;
    return f;
  }
  validate(config);
  TaskFamily f;
  f.config_ = config;
  f.seed_ = seed;
  const std::size_t d = config.dim;
  f.means_ = Tensor::zeros({config.classes, d});
  if (config.kind == GeneratorKind::GaussianMixture) {
    const std::size_t cell = config.cell_scales.empty() ? d : d / config.cell_scales.size();
    for (std::size_t c = 0; c < config.classes; ++c) {
      CounterRng rng = CounterRng::stream(seed, {streams::kFamily, c});
      std::vector<double> tmpl(config.shared_cells ? cell : 0);
      for (auto& x : tmpl) x = rng.normal();
      for (std::size_t i = 0; i < d; ++i) {
        const double s = config.cell_scales.empty() ? 1.0 : config.cell_scales[i / cell];
        const double z = config.shared_cells ? tmpl[i % cell] : rng.normal();
        f.means_.at(c, i) = static_cast<real>(config.prior_std * s * z);
      }
    }
  } else {
    // Orthonormal plane (u, w) by Gram-Schmidt on two random directions.
    CounterRng rng = CounterRng::stream(seed, {streams::kFamily});
    std::vector<double> u(d), w(d);
    for (auto& x : u) x = rng.normal();
    for (auto& x : w) x = rng.normal();
    auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
      return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
    };
    const double nu = std::sqrt(dot(u, u));
    for (auto& x : u) x /= nu;
    const double proj = dot(u, w);
    for (std::size_t i = 0; i < d; ++i) w[i] -= proj * u[i];
    const double nw = std::sqrt(dot(w, w));
    for (auto& x : w) x /= (nw > 0 ? nw : 1.0);
    if (d == 1) std::fill(w.begin(), w.end(), 0.0);
    const double radius = config.prior_std * std::sqrt(static_cast<double>(d));
    for (std::size_t c = 0; c < config.classes; ++c) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(config.classes);
      for (std::size_t i = 0; i < d; ++i) {
        f.means_.at(c, i) = static_cast<real>(radius * (std::cos(angle) * u[i] + std::sin(angle) * w[i]));
      }
    }
  }
  return f;
}

TaskFamily TaskFamily::from_examples(Tensor inputs, std::vector<std::uint32_t> labels,
                                     std::array<std::size_t, 3> split) {
  if (inputs.rank() != 2) throw ShapeError("dataset inputs must be [count, dim]");
  if (inputs.dim(0) != labels.size()) throw ShapeError("dataset: one label per example required");
  TaskFamily f;
  f.config_.kind = GeneratorKind::FileBacked;
  f.config_.classes = split[0] + split[1] + split[2];
  f.config_.dim = inputs.dim(1);
  f.config_.split = split;
  validate(f.config_);
  f.by_class_.assign(f.config_.classes, {});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= f.config_.classes) {
      throw FormatError("dataset: label " + std::to_string(labels[i]) + " outside class count");
    }
    f.by_class_[labels[i]].push_back(i);
  }
  f.inputs_ = std::move(inputs);
  f.labels_ = std::move(labels);
  return f;
}

std::vector<std::size_t> TaskFamily::split_classes(Split split) const {
  std::size_t begin = 0;
  const auto idx = static_cast<std::size_t>(split);
  for (std::size_t i = 0; i < idx; ++i) begin += config_.split[i];
  std::vector<std::size_t> out(config_.split[idx]);
  std::iota(out.begin(), out.end(), begin);
  return out;
}

std::size_t TaskFamily::examples_in_class(std::size_t cls) const {
  if (infinite()) return static_cast<std::size_t>(-1);
  return by_class_.at(cls).size();
}

void TaskFamily::example(std::size_t cls, std::uint64_t index, std::span<real> out) const {
  const std::size_t d = config_.dim;
  if (cls >= config_.classes) throw Error("example: class out of range");
  if (!infinite()) {
    const std::size_t row = by_class_[cls].at(index);
    std::copy_n(inputs_.data().begin() + static_cast<std::ptrdiff_t>(row * d), d, out.begin());
    return;
  }
  CounterRng rng = CounterRng::stream(seed_, {streams::kExample, cls, index});
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = means_.at(cls, i) + static_cast<real>(config_.within_std * rng.normal());
  }
  if (config_.cell_dropout > 0) {
    const std::size_t cells = config_.cell_scales.size();
    const std::size_t width = d / cells;
    for (std::size_t c = 0; c < cells; ++c) {
      if (rng.uniform() >= config_.cell_dropout) continue;
      for (std::size_t i = c * width; i < (c + 1) * width; ++i) {
        out[i] = static_cast<real>(config_.prior_std * config_.cell_scales[c] * rng.normal());
      }
    }
  }
}

Tensor TaskFamily::example(std::size_t cls, std::uint64_t index) const {
  Tensor t = Tensor::zeros({config_.dim});
  example(cls, index, t.mutable_data());
  return t;
}

TaskFamily TaskFamily::materialize(std::size_t per_class) const {
  const std::size_t d = config_.dim;
  std::size_t total = 0;
  for (std::size_t c = 0; c < config_.classes; ++c) total += std::min(per_class, examples_in_class(c));
  Tensor inputs = Tensor::zeros({total, d});
  std::vector<std::uint32_t> labels;
  labels.reserve(total);
  std::size_t row = 0;
  for (std::size_t c = 0; c < config_.classes; ++c) {
    const std::size_t m = std::min(per_class, examples_in_class(c));
    for (std::size_t i = 0; i < m; ++i, ++row) {
      auto dst = inputs.mutable_data().subspan(row * d, d);
      example(c, i, dst);
      for (auto& x : dst) x = static_cast<real>(static_cast<float>(x));
      labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return from_examples(std::move(inputs), std::move(labels), config_.split);
}

Episode sample_episode(const TaskFamily& family, Split split, std::size_t ways, std::size_t shots,
                       std::size_t query_per_class, std::uint64_t seed) {
  if (ways == 0 || shots == 0) throw ConfigError("episode: ways and shots must be positive");
  std::vector<std::size_t> pool = family.split_classes(split);
  if (pool.size() < ways) {
    throw ConfigError("episode: split '" + std::string(to_string(split)) + "' has " + std::to_string(pool.size()) +
                      " classes, need " + std::to_string(ways));
  }
  CounterRng rng = CounterRng::stream(seed, {streams::kEpisode});
  // Partial Fisher-Yates: uniform choice without replacement.
  for (std::size_t i = 0; i < ways; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  Episode ep;
  ep.ways = ways;
  ep.shots = shots;
  ep.query_per_class = query_per_class;
  ep.seed = seed;
  ep.classes.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(ways));

  const std::size_t d = family.dim();
  const std::size_t per = shots + query_per_class;
  ep.support = Tensor::zeros({ways * shots, d});
  ep.query = Tensor::zeros({ways * query_per_class, d});
  for (std::size_t local = 0; local < ways; ++local) {
    const std::size_t cls = ep.classes[local];
    std::vector<std::uint64_t> picks(per);
    if (family.infinite()) {
      // Consecutive indices from a random offset are distinct by construction.
      const std::uint64_t start = rng() >> 16;
      std::iota(picks.begin(), picks.end(), start);
    } else {
      const std::size_t avail = family.examples_in_class(cls);
      if (avail < per) {
        throw ConfigError("episode: class " + std::to_string(cls) + " has " + std::to_string(avail) +
                          " examples, need " + std::to_string(per));
      }
      std::vector<std::uint64_t> idx(avail);
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < per; ++i) {
        const std::size_t j = i + rng.below(avail - i);
        std::swap(idx[i], idx[j]);
      }
      std::copy_n(idx.begin(), per, picks.begin());
    }
    for (std::size_t s = 0; s < shots; ++s) {
      const std::size_t row = local * shots + s;
      family.example(cls, picks[s], ep.support.mutable_data().subspan(row * d, d));
      ep.support_labels.push_back(local);
      ep.support_ids.emplace_back(cls, picks[s]);
    }
    for (std::size_t q = 0; q < query_per_class; ++q) {
      const std::size_t row = local * query_per_class + q;
      family.example(cls, picks[shots + q], ep.query.mutable_data().subspan(row * d, d));
      ep.query_labels.push_back(local);
      ep.query_ids.emplace_back(cls, picks[shots + q]);
    }
  }
  return ep;
}

Episode permute_classes(const Episode& episode, const std::vector<std::size_t>& perm) {
  if (perm.size() != episode.ways) throw ConfigError("permutation size must equal ways");
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse.at(perm[i]) = i;
  Episode out = episode;
  for (std::size_t i = 0; i < perm.size(); ++i) out.classes[i] = episode.classes[perm[i]];
  for (auto& y : out.support_labels) y = inverse[y];
  for (auto& y : out.query_labels) y = inverse[y];
  return out;
}

void save_dataset(const TaskFamily& family, const std::filesystem::path& path, std::size_t per_class) {
  const TaskFamily finite = family.infinite() ? family.materialize(per_class) : family;
  const auto& cfg = finite.config();
  io::Writer w;
  w.bytes("FSDT", 4);
  w.u8(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(finite.labels().size()));
  w.u32(static_cast<std::uint32_t>(cfg.dim));
  w.u32(static_cast<std::uint32_t>(cfg.classes));
  for (std::size_t s : cfg.split) w.u32(static_cast<std::uint32_t>(s));
  for (real x : finite.inputs().data()) w.f32(static_cast<float>(x));
  for (std::uint32_t y : finite.labels()) w.u32(y);
  w.seal();
  w.save(path);
}

TaskFamily load_dataset(const std::filesystem::path& path) {
  io::Reader r = io::Reader::load(path, "dataset " + path.string());
  r.expect_magic("FSDT");
  const std::uint8_t version = r.byte_at(4);
  if (version != kDatasetVersion) {
    throw UnsupportedVersionError("dataset " + path.string() + ": unsupported version " + std::to_string(version));
  }
  r.verify_crc();
  r.u8();
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  const std::uint32_t classes = r.u32();
  std::array<std::size_t, 3> split{};
  for (auto& s : split) s = r.u32();
  if (split[0] + split[1] + split[2] != classes) throw FormatError("dataset: split sizes disagree with class count");
  const std::size_t n = static_cast<std::size_t>(count) * dim;
  if (r.remaining() != n * 4 + static_cast<std::size_t>(count) * 4) {
    throw FormatError("dataset " + path.string() + ": truncated payload");
  }
  std::vector<real> values(n);
  for (auto& x : values) x = static_cast<real>(r.f32());
  std::vector<std::uint32_t> labels(count);
  for (auto& y : labels) y = r.u32();
  TaskFamily f = TaskFamily::from_examples(Tensor({count, dim}, std::move(values)), std::move(labels), split);
  return f;
}

}  // namespace fiml::data
