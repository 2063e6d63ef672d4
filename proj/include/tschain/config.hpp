// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration and its line-oriented `key = value` file format.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tschain/chain.hpp"
#include "tschain/dataset.hpp"
#include "tschain/learner.hpp"

namespace tschain {

/// Invalid configuration key or value. The CLI maps it to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSource {
  enum class Kind { synthetic, files };
  Kind kind = Kind::synthetic;
  SyntheticSpec synthetic;  // seed defaults to the master seed
  std::filesystem::path train;
  std::filesystem::path validation;
  std::filesystem::path test;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t runs = 5;
  std::vector<double> fractions{0.0025, 0.005, 0.01, 0.05, 0.20, 1.0};
  DataSource data;
  double early_stop_fraction = 0.01;
  bool balance_labelled = false;
  /// input/output widths are filled in from the data.
  ArchSpec arch{0, {32}, 0};
  TrainConfig train;
  ChainConfig chain;
  /// When set, K is floor(k_pool_fraction * pool_size / classes) per cell
  /// and overrides chain.distill.k.
  std::optional<double> k_pool_fraction = 0.8;
  /// The chain command also runs the baseline sweep for its reference line.
  bool chain_with_baseline = true;
  bool dump_pseudo_labels = false;
  std::size_t jobs = 1;
  std::filesystem::path out = "results";

  void validate() const;
};

/// Ordered key/value settings. Later assignments replace earlier ones.
using Settings = std::map<std::string, std::string>;

/// Parses `key = value` lines; '#' starts a comment; blank lines ignored.
Settings parse_settings(const std::string& text, const std::string& origin = "<config>");
Settings load_settings(const std::filesystem::path& path);

/// Every recognised key.
const std::vector<std::string>& known_setting_keys();

/// Builds a validated config from defaults plus `settings`. `train.*` values
/// seed both `chain.pretrain.*` and `chain.finetune.*`, which may then be
/// overridden individually.
ExperimentConfig build_config(const Settings& settings);

/// Canonical `key = value` dump of every setting, used as a run record.
std::string describe_config(const ExperimentConfig& cfg);

}  // namespace tschain
