#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fiml/eval.hpp"

// Run configuration: a nested JSON document. Every object rejects keys it
// does not know; omitted keys take the defaults documented in docs/config.md.
namespace fiml::config {

using Json = nlohmann::ordered_json;

struct SweepSettings {
  eval::SweepMode mode = eval::SweepMode::EvalSide;
  std::vector<std::size_t> grid{0, 3, 6, 9, 12, 15, 18, 21, 24};
};

struct AblationSettings {
  eval::LadderKind ladder = eval::LadderKind::Standard;
  std::vector<std::size_t> shots{1, 5};
};

struct ConfidenceSettings {
  std::size_t episodes = 1;
  std::size_t shots = 1;
};

struct GradcheckSettings {
  std::size_t draws = 50;       // random (episode, psi) draws per objective check
  std::size_t meta_draws = 3;   // episodes for the unrolled meta-gradient check
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "fiml_out";
  std::size_t threads = 0;  // 0 = all cores
  data::FamilyConfig family;
  meta::ModelSpec model;
  Psi psi = Psi::baseline(4);
  PsiMask learn = PsiMask::all();
  learner::InnerConfig inner;
  meta::MetaConfig meta;
  eval::EvalProtocol eval;
  SweepSettings sweep;
  AblationSettings ablation;
  ConfidenceSettings confidence;
  GradcheckSettings gradcheck;
};

RunConfig parse_run_config(const Json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
Json to_json(const RunConfig& config);

// Pieces shared with the checkpoint header.
Json to_json(const data::FamilyConfig& family);
// check_path = false skips the file-backed path requirement.
data::FamilyConfig family_config_from_json(const Json& j, bool check_path = true);
Json to_json(const meta::ModelSpec& spec);
meta::ModelSpec model_spec_from_json(const Json& j);
Json to_json(const meta::MetaConfig& meta);
meta::MetaConfig meta_config_from_json(const Json& j);
Json to_json(const learner::InnerConfig& inner);
learner::InnerConfig inner_config_from_json(const Json& j);
Json mask_to_json(const PsiMask& mask);
PsiMask mask_from_json(const Json& j);

}  // namespace fiml::config
