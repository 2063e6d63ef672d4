// SPDX-License-Identifier: Apache-2.0

#include "tschain/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "tschain/rng.hpp"
#include "tschain/text.hpp"

namespace tschain {

// ---------------------------------------------------------------------------
// ClassCatalog

ClassCatalog::ClassCatalog(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) throw std::invalid_argument("class catalog needs at least 2 classes");
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw std::invalid_argument("class catalog contains an empty name");
    if (n.find_first_of(",\r\n") != std::string::npos)
      throw std::invalid_argument("class name '" + n + "' contains a separator");
    if (!seen.insert(n).second) throw std::invalid_argument("duplicate class name '" + n + "'");
  }
}

ClassCatalog ClassCatalog::tissue_default() {
  return ClassCatalog({"ADI", "BACK", "DEB", "LYM", "MUC", "MUS", "NORM", "STR", "TUM"});
}

ClassCatalog ClassCatalog::numbered(std::size_t count) {
  std::vector<std::string> names;
  names.reserve(count);
  for (std::size_t c = 0; c < count; ++c) names.push_back("c" + std::to_string(c));
  return ClassCatalog(std::move(names));
}

std::optional<ClassIndex> ClassCatalog::find(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<ClassIndex>(it - names_.begin());
}

// ---------------------------------------------------------------------------
// DataTable

DataTable::DataTable(ClassCatalog catalog, std::size_t dim)
    : catalog_(std::move(catalog)), dim_(dim) {
  if (dim_ == 0) throw std::invalid_argument("table dimension must be positive");
}

DataTable::DataTable(ClassCatalog catalog, std::size_t dim, std::vector<Sample> samples)
    : DataTable(std::move(catalog), dim) {
  std::unordered_set<SampleId> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) {
    check(s);
    if (!ids.insert(s.id).second)
      throw std::invalid_argument("duplicate sample id " + std::to_string(s.id));
  }
  samples_ = std::move(samples);
}

void DataTable::check(const Sample& sample) const {
  if (sample.features.size() != dim_)
    throw std::invalid_argument("sample " + std::to_string(sample.id) + " has " +
                                std::to_string(sample.features.size()) + " features, expected " +
                                std::to_string(dim_));
  if (sample.label && *sample.label >= catalog_.size())
    throw std::invalid_argument("sample " + std::to_string(sample.id) + " label out of range");
}

void DataTable::add(Sample sample) {
  check(sample);
  for (const auto& s : samples_)
    if (s.id == sample.id)
      throw std::invalid_argument("duplicate sample id " + std::to_string(sample.id));
  samples_.push_back(std::move(sample));
}

bool DataTable::fully_labelled() const noexcept {
  return std::all_of(samples_.begin(), samples_.end(),
                     [](const Sample& s) { return s.label.has_value(); });
}

std::vector<std::size_t> DataTable::class_counts() const {
  std::vector<std::size_t> counts(catalog_.size(), 0);
  for (const auto& s : samples_)
    if (s.label) ++counts[*s.label];
  return counts;
}

// ---------------------------------------------------------------------------
// HiddenLabels

HiddenLabels::HiddenLabels(const DataTable& labelled_pool)
    : num_classes_(labelled_pool.num_classes()) {
  entries_.reserve(labelled_pool.size());
  for (const auto& s : labelled_pool.samples()) {
    if (!s.label)
      throw std::invalid_argument("hidden labels require a labelled sample, id " +
                                  std::to_string(s.id));
    entries_.emplace_back(s.id, *s.label);
  }
  std::sort(entries_.begin(), entries_.end());
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

std::vector<std::vector<double>> synthetic_class_means(std::size_t classes, std::size_t dim,
                                                       std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
  if (dim == 0) throw std::invalid_argument("synthetic dimension must be positive");

  Rng rng(derive_seed(seed, 0x6D65616E));  // "mean"
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::vector<double>> dirs(classes, std::vector<double>(dim));
    for (auto& d : dirs) {
      double norm2 = 0.0;
      do {
        norm2 = 0.0;
        for (auto& x : d) {
          x = rng.normal();
          norm2 += x * x;
        }
      } while (norm2 < 1e-24);
      const double inv = 1.0 / std::sqrt(norm2);
      for (auto& x : d) x *= inv;
    }
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < classes; ++a)
      for (std::size_t b = a + 1; b < classes; ++b) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
          const double diff = dirs[a][k] - dirs[b][k];
          d2 += diff * diff;
        }
        min_dist = std::min(min_dist, std::sqrt(d2));
      }
    if (min_dist < 1e-6) continue;  // coincident directions, redraw
    for (auto& d : dirs)
      for (auto& x : d) x /= min_dist;
    return dirs;
  }
  throw std::invalid_argument("cannot place " + std::to_string(classes) +
                              " distinct class means in dimension " + std::to_string(dim));
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
  if (spec.per_class < 10)
    throw std::invalid_argument("per_class must be at least 10 for an 8:1:1 split");
  if (spec.dim == 0) throw std::invalid_argument("synthetic dimension must be positive");
  if (!(spec.spread > 0.0) || !std::isfinite(spec.spread))
    throw std::invalid_argument("spread must be a positive finite number");

  const auto means = synthetic_class_means(spec.classes, spec.dim, spec.seed);
  const auto catalog = spec.classes == 9 ? ClassCatalog::tissue_default()
                                         : ClassCatalog::numbered(spec.classes);
  const std::size_t held = spec.per_class / 10;
  const std::size_t counts[3] = {spec.per_class - 2 * held, held, held};

  SampleId next_id = 0;
  std::vector<DataTable> tables;
  for (int part = 0; part < 3; ++part) {
    Rng rng(derive_seed(spec.seed, 1 + static_cast<std::uint64_t>(part)));
    std::vector<Sample> samples;
    samples.reserve(counts[part] * spec.classes);
    // Round-robin over classes keeps every table interleaved and balanced.
    for (std::size_t i = 0; i < counts[part] * spec.classes; ++i) {
      const ClassIndex c = i % spec.classes;
      Sample s;
      s.id = next_id++;
      s.label = c;
      s.features.resize(spec.dim);
      for (std::size_t k = 0; k < spec.dim; ++k)
        s.features[k] = means[c][k] + spec.spread * rng.normal();
      samples.push_back(std::move(s));
    }
    tables.emplace_back(catalog, spec.dim, std::move(samples));
  }
  return {std::move(tables[0]), std::move(tables[1]), std::move(tables[2])};
}

// ---------------------------------------------------------------------------
// CSV I/O

std::filesystem::path catalog_path_for(const std::filesystem::path& table_path) {
  auto p = table_path;
  p.replace_extension(".classes");
  return p;
}

namespace {

ClassCatalog read_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open class catalog " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto names = split_fields(line);
  try {
    return ClassCatalog(std::move(names));
  } catch (const std::invalid_argument& e) {
    throw ParseError(path.string() + ":1: " + e.what(), 1);
  }
}

}  // namespace

DataTable read_table(const std::filesystem::path& path) {
  return read_table(path, read_catalog(catalog_path_for(path)));
}

DataTable read_table(const std::filesystem::path& path, const ClassCatalog& catalog) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open table " + path.string());

  const auto fail = [&](std::size_t line_no, const std::string& msg) -> ParseError {
    return ParseError(path.string() + ":" + std::to_string(line_no) + ": " + msg, line_no);
  };

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw fail(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label")
    throw fail(1, "header must start with 'id,label' followed by feature columns");
  const std::size_t dim = header.size() - 2;
  for (std::size_t k = 0; k < dim; ++k)
    if (header[k + 2] != "f" + std::to_string(k))
      throw fail(1, "feature column " + std::to_string(k) + " must be named f" + std::to_string(k));

  DataTable table(catalog, dim);
  std::vector<Sample> samples;
  std::unordered_set<SampleId> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != dim + 2)
      throw fail(line_no, "expected " + std::to_string(dim + 2) + " fields, found " +
                              std::to_string(fields.size()));
    Sample s;
    const auto id = parse_u64(fields[0]);
    if (!id) throw fail(line_no, "invalid sample id '" + fields[0] + "'");
    s.id = *id;
    if (!fields[1].empty()) {
      const auto c = catalog.find(fields[1]);
      if (!c) throw fail(line_no, "unknown class label '" + fields[1] + "'");
      s.label = *c;
    }
    s.features.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const auto v = parse_double(fields[k + 2]);
      if (!v || !std::isfinite(*v))
        throw fail(line_no, "invalid feature value '" + fields[k + 2] + "'");
      s.features[k] = *v;
    }
    if (!ids.insert(s.id).second) throw fail(line_no, "duplicate sample id " + fields[0]);
    samples.push_back(std::move(s));
  }
  return DataTable(catalog, dim, std::move(samples));
}

void write_table(const std::filesystem::path& path, const DataTable& table) {
  {
    std::ofstream out(catalog_path_for(path), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + catalog_path_for(path).string());
    out << join_fields(table.catalog().names()) << '\n';
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id,label";
  for (std::size_t k = 0; k < table.dim(); ++k) out << ",f" << k;
  out << '\n';
  for (const auto& s : table.samples()) {
    out << s.id << ',';
    if (s.label) out << table.catalog().name(*s.label);
    for (double x : s.features) out << ',' << format_double(x);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Splitting

namespace {

std::size_t floor_count(double fraction, std::size_t n) {
  // Guard against 0.29 * 100 = 28.999999999999996.
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

DataTable subset(const DataTable& source, const std::vector<std::size_t>& rows, bool keep_labels) {
  std::vector<Sample> samples;
  samples.reserve(rows.size());
  for (auto r : rows) {
    Sample s = source[r];
    if (!keep_labels) s.label.reset();
    samples.push_back(std::move(s));
  }
  std::sort(samples.begin(), samples.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });
  return DataTable(source.catalog(), source.dim(), std::move(samples));
}

}  // namespace

SplitResult make_splits(const DataTable& train, const SplitSpec& spec) {
  if (!(spec.labelled_fraction > 0.0 && spec.labelled_fraction <= 1.0))
    throw std::invalid_argument("labelled_fraction must lie in (0, 1]");
  if (!(spec.early_stop_fraction >= 0.0 && spec.early_stop_fraction < 1.0))
    throw std::invalid_argument("early_stop_fraction must lie in [0, 1)");
  if (spec.labelled_fraction + spec.early_stop_fraction > 1.0 + 1e-12)
    throw std::invalid_argument("labelled_fraction + early_stop_fraction exceeds 1");
  if (!train.fully_labelled()) throw std::invalid_argument("training table must be fully labelled");

  const std::size_t n = train.size();
  const std::size_t classes = train.num_classes();
  const std::size_t es_size = std::max(classes, floor_count(spec.early_stop_fraction, n));
  // Fractions summing to one label everything outside the early-stop set.
  const bool exhaustive = spec.early_stop_fraction > 0.0 &&
                          spec.labelled_fraction + spec.early_stop_fraction >= 1.0 - 1e-12;
  const std::size_t lab_size = exhaustive && es_size <= n ? n - es_size
                                                          : floor_count(spec.labelled_fraction, n);
  if (lab_size < 1)
    throw std::invalid_argument("labelled fraction " + format_double(spec.labelled_fraction) +
                                " of " + std::to_string(n) + " samples selects no sample");
  if (es_size + lab_size > n)
    throw std::invalid_argument("split needs " + std::to_string(es_size) + " early-stop + " +
                                std::to_string(lab_size) + " labelled samples but only " +
                                std::to_string(n) + " are available");
  const auto counts = train.class_counts();
  if (std::find(counts.begin(), counts.end(), 0u) != counts.end())
    throw std::invalid_argument("every class needs a training sample to populate the early-stop set");

  // Row indices ordered by ascending id, so the shuffle input is independent
  // of table order.
  std::vector<std::size_t> by_id(n);
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::sort(by_id.begin(), by_id.end(),
            [&](std::size_t a, std::size_t b) { return train[a].id < train[b].id; });

  Rng es_rng(derive_seed(spec.seed, 1));
  std::vector<std::size_t> perm;
  std::size_t draws = 0;
  constexpr std::size_t kMaxDraws = 10000;
  for (;;) {
    if (draws == kMaxDraws)
      throw std::invalid_argument("could not draw an early-stop set covering every class");
    ++draws;
    perm = by_id;
    es_rng.shuffle(std::span(perm));
    std::vector<bool> seen(classes, false);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < es_size; ++i) {
      const auto c = *train[perm[i]].label;
      if (!seen[c]) {
        seen[c] = true;
        ++covered;
      }
    }
    if (covered == classes) break;
  }
  std::vector<std::size_t> es_rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(es_size));

  std::vector<bool> taken(n, false);
  for (auto r : es_rows) taken[r] = true;
  std::vector<std::size_t> remainder;
  remainder.reserve(n - es_size);
  for (auto r : by_id)
    if (!taken[r]) remainder.push_back(r);

  Rng lab_rng(derive_seed(spec.seed, 2));
  lab_rng.shuffle(std::span(remainder));
  std::vector<std::size_t> lab_rows;
  lab_rows.reserve(lab_size);
  if (!spec.balance_labelled) {
    lab_rows.assign(remainder.begin(), remainder.begin() + static_cast<std::ptrdiff_t>(lab_size));
  } else {
    // Round-robin over per-class queues in shuffled order.
    std::vector<std::vector<std::size_t>> queues(classes);
    for (auto r : remainder) queues[*train[r].label].push_back(r);
    std::vector<std::size_t> head(classes, 0);
    while (lab_rows.size() < lab_size) {
      for (std::size_t c = 0; c < classes && lab_rows.size() < lab_size; ++c)
        if (head[c] < queues[c].size()) lab_rows.push_back(queues[c][head[c]++]);
    }
  }
  for (auto r : lab_rows) taken[r] = true;
  std::vector<std::size_t> pool_rows;
  pool_rows.reserve(n - es_size - lab_size);
  for (auto r : by_id)
    if (!taken[r]) pool_rows.push_back(r);

  const DataTable labelled_pool = subset(train, pool_rows, true);
  SplitResult result{subset(train, lab_rows, true), subset(train, es_rows, true),
                     subset(train, pool_rows, false), HiddenLabels(labelled_pool), SplitAudit{}};
  result.audit = {spec.seed, n, lab_rows.size(), es_rows.size(), pool_rows.size(), draws};
  return result;
}

// ---------------------------------------------------------------------------
// Normalization

Normalizer fit_normalizer(const DataTable& reference) {
  if (reference.empty()) throw std::invalid_argument("normalization reference is empty");
  const std::size_t d = reference.dim();
  const double n = static_cast<double>(reference.size());
  Normalizer norm{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& s : reference.samples())
    for (std::size_t k = 0; k < d; ++k) norm.mean[k] += s.features[k];
  for (auto& m : norm.mean) m /= n;
  for (const auto& s : reference.samples())
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = s.features[k] - norm.mean[k];
      norm.std[k] += diff * diff;
    }
  for (auto& v : norm.std) {
    v = std::sqrt(v / n);
    if (v < 1e-12) v = 1.0;
  }
  return norm;
}

void Normalizer::apply_in_place(std::vector<double>& features) const {
  if (features.size() != mean.size())
    throw std::invalid_argument("feature dimension " + std::to_string(features.size()) +
                                " does not match normalizer dimension " +
                                std::to_string(mean.size()));
  for (std::size_t k = 0; k < features.size(); ++k) features[k] = (features[k] - mean[k]) / std[k];
}

DataTable Normalizer::apply(const DataTable& table) const {
  if (table.dim() != mean.size())
    throw std::invalid_argument("table dimension " + std::to_string(table.dim()) +
                                " does not match normalizer dimension " +
                                std::to_string(mean.size()));
  std::vector<Sample> samples = table.samples();
  for (auto& s : samples) apply_in_place(s.features);
  return DataTable(table.catalog(), table.dim(), std::move(samples));
}

std::pair<Normalizer, std::vector<DataTable>> normalize(const DataTable& reference,
                                                        const std::vector<DataTable>& targets) {
  Normalizer norm = fit_normalizer(reference);
  std::vector<DataTable> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(norm.apply(t));
  return {std::move(norm), std::move(out)};
}

}  // namespace tschain
