#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affes/model.hpp"
#include "affes/space.hpp"
#include "affes/train.hpp"

namespace affes::cli {

/// Parses the config text format: `[section]` headers, `key = value` lines
/// with JSON values, dotted keys for nesting and `#` comments. Throws
/// ConfigError naming the line on malformed input.
nlohmann::json parse_config_text(std::string_view text, std::string_view source = "config");

/// Writes `doc` back in the same format. Sections and keys come out sorted,
/// so equal documents serialize to equal bytes.
void write_config_text(std::ostream& out, const nlohmann::json& doc);

/// Every key the format accepts, with its default value.
nlohmann::json default_config();

/// Overlays `user` on the defaults. Throws ConfigError with the dotted key
/// path on unknown keys or mismatched value types.
nlohmann::json resolve_config(const nlohmann::json& user);

enum class Split { train, test };

struct DataConfig {
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::size_t train_subset = 0;
  std::uint64_t train_subset_seed = 0;
  std::size_t test_subset = 0;
  std::uint64_t test_subset_seed = 0;
};

struct LandscapeConfig {
  Param axis1 = Param::delta_u;
  Param axis2 = Param::theta;
  int count1 = 13;
  int count2 = 31;
  bool norm_mode = false;
  NormKind norm = NormKind::l2;
  Split split = Split::test;
};

struct AttackCommandConfig {
  AttackSpec method;
  Split split = Split::test;
  std::uint64_t seed = 1;
};

/// Typed view of a resolved config document.
struct RunConfig {
  DataConfig data;
  ConstraintSpace space = ConstraintSpace::translations_rotation();
  Architecture architecture = Architecture::small();
  std::uint64_t model_seed = 1;
  TrainConfig train;
  int log_every = 50;
  Regime regime;
  std::vector<EvalMode> eval_modes;
  std::vector<std::uint64_t> eval_seeds;
  Split eval_split = Split::test;
  AttackCommandConfig attack;
  LandscapeConfig landscape;
  std::filesystem::path output_dir;

  /// Throws ConfigError naming the offending key.
  static RunConfig from_json(const nlohmann::json& resolved);
};

/// "worst_of_k(10)", "grid(5,5,31)", "es(10)" or "cma(2)". Throws ConfigError.
AttackSpec parse_attack(std::string_view text);

/// Loads the requested split and applies its subset settings.
Dataset load_split(const DataConfig& data, Split split);

}  // namespace affes::cli
