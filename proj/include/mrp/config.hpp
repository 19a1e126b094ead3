#ifndef MRP_CONFIG_HPP
#define MRP_CONFIG_HPP

// Flat JSON run configuration. Every key has a --kebab-case command-line
// override (lr_conv -> --lr-conv); docs/config.md lists them. Unknown keys,
// wrong types and out-of-range values are Error(config_error); malformed
// JSON is Error(parse_error) with the line and column.

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mrp/tasks.hpp"
#include "mrp/trainer.hpp"

namespace mrp::config {

enum class KeyGroup { task, model, train, run };

struct KeyInfo {
  std::string name;  // snake_case config key
  KeyGroup group;
  std::string type;  // "uint", "number", "string", "bool", "uint list"
  std::string help;
};

/// All keys in documentation order.
const std::vector<KeyInfo>& keys();
std::string flag_name(std::string_view key);  // "--lr-conv"

struct RunConfig {
  tasks::TaskSpec task;
  trainer::ModelConfig model;
  trainer::TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  /// Keys given explicitly (file or flag); used for regime conflict checks.
  std::set<std::string> explicit_keys;

  /// Sets one key from JSON text ("0.01", "true", "\"prometar\"", "[1,2]").
  /// Bare words are accepted for string keys.
  void set(std::string_view key, std::string_view value_text);
  /// Merges a flat JSON object; `source` names it in error messages.
  void merge_json(std::string_view text, std::string_view source);

  /// Range checks plus regime conflicts (lambda outside loss-reg,
  /// prometar-only keys outside prometar).
  void validate() const;

  /// Effective configuration of the given groups, keys in documentation order.
  std::string to_json(std::initializer_list<KeyGroup> groups) const;
};

}  // namespace mrp::config

#endif  // MRP_CONFIG_HPP
