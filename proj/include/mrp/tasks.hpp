#ifndef MRP_TASKS_HPP
#define MRP_TASKS_HPP

// Synthetic few-shot classification tasks with a base/new class split.
//
// Class prototypes are Gaussian vectors; samples are prototype + Gaussian
// within-class noise + a task-wide domain offset. The first
// ceil(base_fraction * N_c) classes are base classes: they get `shots`
// training samples and `test_per_class` test samples each. New classes only
// appear in new-test.
//
// On disk a dataset is a directory holding manifest.json and samples.csv
// (see docs/formats.md).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrp/encoder.hpp"
#include "mrp/tensor.hpp"

namespace mrp::tasks {

using encoder::ClassId;

enum class Split { base_train, base_test, new_test };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct DomainShift {
  enum class Kind { none, noise, rotation };
  Kind kind = Kind::none;
  double amount = 0.0;  // noise stddev, or rotation angle in radians

  /// "none", "noise:<sigma>" or "rotation:<radians>"; a zero amount parses
  /// as none.
  static DomainShift parse(std::string_view text);
  std::string to_string() const;
  bool is_identity() const noexcept { return kind == Kind::none || amount == 0.0; }
  bool operator==(const DomainShift&) const = default;
};

struct TaskSpec {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 16;
  std::size_t shots = 16;
  std::size_t test_per_class = 50;
  double prototype_scale = 1.0;
  /// Expected norm of the within-class noise as a fraction of the minimum
  /// prototype distance (per-coordinate stddev = scale * d_min / sqrt(d_x)).
  double noise_scale = 0.6;
  double base_fraction = 0.5;
  /// Per-coordinate stddev of the offset shared by every sample of the task.
  double domain_offset = 0.5;
  DomainShift shift;
  std::uint64_t seed = 0;

  /// Throws Error(config_error) on an invalid spec.
  void validate() const;
  std::size_t num_base() const;

  bool operator==(const TaskSpec&) const = default;
};

struct Sample {
  std::uint64_t id = 0;
  Split split = Split::base_train;
  ClassId label = 0;
  std::vector<double> features;
  bool operator==(const Sample&) const = default;
};

struct Dataset {
  TaskSpec spec;
  Tensor prototypes;  // [d_x, N_c]
  Tensor offset;      // [d_x, 1], shared by every sample
  double noise_sigma = 0.0;  // per-coordinate stddev
  std::vector<ClassId> base_classes;
  std::vector<ClassId> new_classes;
  std::vector<Sample> samples;

  std::size_t feature_dim() const noexcept { return prototypes.rows(); }
  std::size_t num_classes() const noexcept { return prototypes.cols(); }
  std::vector<std::size_t> indices(Split split) const;
  /// Classes that may be predicted on a split: base classes for base splits,
  /// new classes for new-test.
  const std::vector<ClassId>& candidates(Split split) const;
  /// Feature columns [d_x, n] of the given sample indices.
  Tensor features(std::span<const std::size_t> idx) const;
  std::vector<ClassId> labels(std::span<const std::size_t> idx) const;
  encoder::Batch batch(Split split) const;

  bool operator==(const Dataset&) const = default;
};

Dataset generate(const TaskSpec& spec);

/// Applies the shift to every test feature (base-test and new-test); labels,
/// ids and splits are unchanged. Draws come from the dataset seed's "shift"
/// stream, so the result is a pure function of (dataset, descriptor).
Dataset domain_shift(const Dataset& dataset, const DomainShift& shift);

void save(const Dataset& dataset, const std::filesystem::path& dir);
/// Throws Error(parse_error) with the file and line of the first problem.
Dataset load(const std::filesystem::path& dir);
/// SHA-256 of the manifest and samples files as written by save().
std::string digest(const Dataset& dataset);

std::string manifest_text(const Dataset& dataset);
std::string samples_text(const Dataset& dataset);

/// Accuracy (%) of the nearest-prototype rule on a split.
double nearest_prototype_accuracy(const Dataset& dataset, Split split);

}  // namespace mrp::tasks

#endif  // MRP_TASKS_HPP
