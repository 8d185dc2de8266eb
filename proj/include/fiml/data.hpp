#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fiml/tensor.hpp"

namespace fiml::data {

enum class GeneratorKind { GaussianMixture, RingMixture, FileBacked };
enum class Split { Train, Validation, Test };

const char* to_string(GeneratorKind kind);
const char* to_string(Split split);

struct FamilyConfig {
  GeneratorKind kind = GeneratorKind::GaussianMixture;
  std::size_t classes = 100;
  std::size_t dim = 32;
  // Class counts of the train / validation / test partitions.
  std::array<std::size_t, 3> split{64, 16, 20};
  // Class means are drawn from N(0, prior_std^2 I); ring families place them
  // on a circle of radius prior_std * sqrt(dim).
  double prior_std = 1.0;
  // Within-class isotropic standard deviation.
  double within_std = 1.0;
  // Optional per-cell multipliers of the class mean. The input is divided
  // into cell_scales.size() equal contiguous cells.
  std::vector<double> cell_scales;
  // Draw one class template of cell width and repeat it in every cell (scaled
  // by cell_scales), so the class looks the same at every location.
  bool shared_cells = false;
  // Per-sample nuisance: with this probability a cell of a sample is replaced
  // by pure noise of standard deviation `prior_std`.
  double cell_dropout = 0.0;
  std::string path;  // file-backed families only
};

/// Immutable source of labeled examples with a disjoint class partition.
///
/// Synthetic families are infinite: example (c, i) is a pure function of the
/// family seed, the class and the index. File-backed families hold a finite
/// list of examples per class.
class TaskFamily {
 public:
  static TaskFamily generate(const FamilyConfig& config, std::uint64_t seed);
  static TaskFamily from_examples(Tensor inputs, std::vector<std::uint32_t> labels,
                                  std::array<std::size_t, 3> split);

  const FamilyConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t classes() const { return config_.classes; }
  std::size_t dim() const { return config_.dim; }
  bool infinite() const { return config_.kind != GeneratorKind::FileBacked; }

  // Dataset-global class ids of a partition, ascending.
  std::vector<std::size_t> split_classes(Split split) const;
  std::size_t examples_in_class(std::size_t cls) const;
  void example(std::size_t cls, std::uint64_t index, std::span<real> out) const;
  Tensor example(std::size_t cls, std::uint64_t index) const;

  // Finite copy holding `per_class` examples of every class, rounded to
  // 32-bit floats so the copy is exactly representable on disk.
  TaskFamily materialize(std::size_t per_class) const;

  const Tensor& inputs() const { return inputs_; }
  const std::vector<std::uint32_t>& labels() const { return labels_; }

 private:
  FamilyConfig config_;
  std::uint64_t seed_ = 0;
  Tensor means_;                                   // [classes, dim], synthetic
  Tensor inputs_;                                  // [count, dim], file-backed
  std::vector<std::uint32_t> labels_;              // file-backed
  std::vector<std::vector<std::size_t>> by_class_; // row indices per class
};

/// One N-way n-shot task. Support and query are stored class-major with
/// episode-local labels in [0, ways).
struct Episode {
  std::size_t ways = 0;
  std::size_t shots = 0;
  std::size_t query_per_class = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> classes;  // local label -> dataset class
  Tensor support;                    // [ways*shots, dim]
  std::vector<std::size_t> support_labels;
  Tensor query;                      // [ways*query_per_class, dim]
  std::vector<std::size_t> query_labels;
  // (dataset class, example index) of every sample, for disjointness checks.
  std::vector<std::pair<std::size_t, std::uint64_t>> support_ids;
  std::vector<std::pair<std::size_t, std::uint64_t>> query_ids;

  std::size_t support_size() const { return support_labels.size(); }
  std::size_t query_size() const { return query_labels.size(); }
};

inline constexpr std::size_t kDefaultQueryPerClass = 15;

Episode sample_episode(const TaskFamily& family, Split split, std::size_t ways, std::size_t shots,
                       std::size_t query_per_class, std::uint64_t seed);

// Episode whose class order is permuted: new local label i is old label perm[i].
Episode permute_classes(const Episode& episode, const std::vector<std::size_t>& perm);

// FSDT binary format: "FSDT", u8 version (1), u32 count, u32 dim, u32 classes,
// u32 train/val/test class counts, f32 inputs row-major, u32 labels, CRC32.
// All integers little-endian. Synthetic families are materialized first.
void save_dataset(const TaskFamily& family, const std::filesystem::path& path,
                  std::size_t per_class = 100);
TaskFamily load_dataset(const std::filesystem::path& path);

}  // namespace fiml::data
