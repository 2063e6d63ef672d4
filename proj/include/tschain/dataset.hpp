// SPDX-License-Identifier: Apache-2.0
//
// Data model, CSV I/O, seeded train splits, feature normalization and the
// synthetic Gaussian benchmark.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tschain {

using SampleId = std::uint64_t;
using ClassIndex = std::size_t;

/// Raised for malformed table files. The message names the offending line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Ordered, unique class names. Index order is the class index.
class ClassCatalog {
 public:
  explicit ClassCatalog(std::vector<std::string> names);

  /// The nine tissue classes ADI, BACK, DEB, LYM, MUC, MUS, NORM, STR, TUM.
  static ClassCatalog tissue_default();
  /// Names "c0".."c{count-1}".
  static ClassCatalog numbered(std::size_t count);

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(ClassIndex c) const { return names_.at(c); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::optional<ClassIndex> find(std::string_view name) const;

  friend bool operator==(const ClassCatalog&, const ClassCatalog&) = default;

 private:
  std::vector<std::string> names_;
};

struct Sample {
  SampleId id = 0;
  std::vector<double> features;
  std::optional<ClassIndex> label;

  friend bool operator==(const Sample&, const Sample&) = default;
};

class DataTable {
 public:
  DataTable(ClassCatalog catalog, std::size_t dim);
  /// Validates every sample against the catalog and dimension.
  DataTable(ClassCatalog catalog, std::size_t dim, std::vector<Sample> samples);

  const ClassCatalog& catalog() const noexcept { return catalog_; }
  std::size_t num_classes() const noexcept { return catalog_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const std::vector<Sample>& samples() const noexcept { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  /// Appends after checking dimension, label range and id uniqueness.
  void add(Sample sample);

  bool fully_labelled() const noexcept;
  /// Per-class label counts; unlabelled samples are ignored.
  std::vector<std::size_t> class_counts() const;

  friend bool operator==(const DataTable&, const DataTable&) = default;

 private:
  void check(const Sample& sample) const;

  ClassCatalog catalog_;
  std::size_t dim_;
  std::vector<Sample> samples_;
};

class PseudoLabelQualityAccess;

/// True labels of the unlabelled pool. They can be handed around freely but
/// only the pseudo-label diagnostics can read them back.
class HiddenLabels {
 public:
  HiddenLabels() = default;
  /// Captures the labels of a fully labelled table.
  explicit HiddenLabels(const DataTable& labelled_pool);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t num_classes() const noexcept { return num_classes_; }

 private:
  friend class PseudoLabelQualityAccess;

  std::vector<std::pair<SampleId, ClassIndex>> entries_;  // sorted by id
  std::size_t num_classes_ = 0;
};

struct SplitSpec {
  double labelled_fraction = 0.01;
  double early_stop_fraction = 0.01;
  std::uint64_t seed = 0;
  bool balance_labelled = false;
};

struct SplitAudit {
  std::uint64_t seed = 0;
  std::size_t total = 0;
  std::size_t labelled = 0;
  std::size_t early_stop = 0;
  std::size_t pool = 0;
  /// Number of early-stop draws needed until every class was present.
  std::size_t early_stop_draws = 0;
};

struct SplitResult {
  DataTable labelled;
  DataTable early_stop;
  /// Pool features with labels removed.
  DataTable pool;
  HiddenLabels pool_truth;
  SplitAudit audit;
};

struct Normalizer {
  std::vector<double> mean;
  std::vector<double> std;

  DataTable apply(const DataTable& table) const;
  void apply_in_place(std::vector<double>& features) const;
};

struct SyntheticSpec {
  std::size_t classes = 9;
  std::size_t per_class = 900;
  std::size_t dim = 16;
  double spread = 0.9;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  DataTable train;
  DataTable validation;
  DataTable test;
};

/// Class means used by generate_synthetic: seeded unit directions scaled so
/// the closest pair of means is exactly distance 1 apart. Row c is class c.
std::vector<std::vector<double>> synthetic_class_means(std::size_t classes, std::size_t dim,
                                                       std::uint64_t seed);

/// Isotropic Gaussian classes around synthetic_class_means. Each class
/// contributes per_class samples split 8:1:1 into train, validation and test
/// (validation and test take floor(per_class / 10) each, train the rest).
/// Ids are unique across the three tables. Requires per_class >= 10.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Reads `path` and its catalog sidecar (same stem, `.classes` extension).
DataTable read_table(const std::filesystem::path& path);
/// Reads with an explicit catalog, ignoring any sidecar.
DataTable read_table(const std::filesystem::path& path, const ClassCatalog& catalog);
/// Writes the CSV and its `.classes` sidecar.
void write_table(const std::filesystem::path& path, const DataTable& table);

std::filesystem::path catalog_path_for(const std::filesystem::path& table_path);

/// Early-stop set first, then the labelled set from the remainder; what is
/// left becomes the pool. Sizes are floor(fraction * N) with N the full table,
/// except that fractions summing to one leave the pool empty.
SplitResult make_splits(const DataTable& train, const SplitSpec& spec);

/// Per-feature mean and population std over `reference`; std below 1e-12 is
/// replaced by 1.
Normalizer fit_normalizer(const DataTable& reference);

std::pair<Normalizer, std::vector<DataTable>> normalize(const DataTable& reference,
                                                        const std::vector<DataTable>& targets);

}  // namespace tschain
