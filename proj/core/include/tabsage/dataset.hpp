#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tabsage {

// Dense row-major matrix of doubles. Used for raw and engineered feature
// tables; the autodiff engine has its own tensor type.
class RowMatrix {
 public:
  RowMatrix() = default;
  RowMatrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  RowMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const noexcept { return data_; }
  std::vector<double> column(std::size_t c) const;

  // Rows selected by index, in the given order.
  RowMatrix select_rows(std::span<const std::size_t> indices) const;

  bool operator==(const RowMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Canonical input columns, in canonical order.
enum class Column : std::size_t {
  cement,
  slag,
  fly_ash,
  water,
  superplasticizer,
  coarse_agg,
  fine_agg,
  age,
};

inline constexpr std::size_t kInputColumns = 8;
inline constexpr std::array<std::string_view, kInputColumns> kColumnNames = {
    "cement", "slag", "fly_ash", "water", "superplasticizer", "coarse_agg", "fine_agg", "age"};
inline constexpr std::string_view kTargetName = "strength";

// Maps header names found in a file to canonical names. Lookup is
// case-insensitive after trimming; canonical names always map to themselves.
class ColumnMapping {
 public:
  // Canonical names plus the UCI spreadsheet headers and the usual
  // snake_case variants (blast_furnace_slag, compressive_strength, ...).
  static ColumnMapping defaults();

  void add(std::string alias, std::string canonical);
  // Canonical name for a header, or empty if unknown.
  std::string resolve(std::string_view header) const;

 private:
  std::map<std::string, std::string> aliases_;
};

// Validated mixture records: 8 inputs (kg/m^3, age in days) and strength (MPa).
struct RawDataset {
  RowMatrix inputs;              // n x 8, canonical column order
  std::vector<double> strength;  // n

  std::size_t size() const noexcept { return strength.size(); }
  double value(std::size_t row, Column c) const { return inputs(row, static_cast<std::size_t>(c)); }
};

// Reads a comma-separated file with a header row. Column order in the file is
// free; the result is in canonical order. Rows are numbered from 1 (first data
// row) in error messages.
RawDataset load_csv(const std::filesystem::path& path, const ColumnMapping& mapping = ColumnMapping::defaults());
RawDataset parse_csv(std::string_view text, const ColumnMapping& mapping = ColumnMapping::defaults());

// One engineered feature, as a function of a raw record.
struct FeatureDerivation {
  std::string name;
  std::function<double(const RawDataset&, std::size_t row)> formula;
};

struct FeatureGroup {
  char tag = 'A';
  std::vector<FeatureDerivation> derivations;

  std::size_t size() const noexcept { return derivations.size(); }
  std::vector<std::string> names() const;
};

// One of the five groups 'A'..'E':
//   A  the 8 raw inputs
//   B  cement, water, superplasticizer, age
//   C  binder, aggregate, fluidity, w/b, agg/b, sp/b, age
//   D  cement, slag, fly ash, water, superplasticizer, aggregate, age
//   E  cement, SCM, water, superplasticizer, aggregate, age
// where binder = cement + slag + fly ash, aggregate = coarse + fine,
// fluidity = water + superplasticizer, SCM = slag + fly ash.
FeatureGroup feature_group(char tag);

struct EngineeredTable {
  std::vector<std::string> names;
  RowMatrix values;
};

// Throws DivisionByZero naming the row when a group-C ratio has zero binder.
EngineeredTable apply_feature_group(const RawDataset& raw, const FeatureGroup& group);

// Per-column min-max scaling of features to [0, 1]; degenerate columns (max ==
// min) map to 0. The target is standardized to zero mean and unit (population)
// variance; a constant target maps to 0.
class Normalizer {
 public:
  struct Range {
    double min = 0.0;
    double max = 0.0;
    bool operator==(const Range&) const = default;
  };
  struct Standardization {
    double mean = 0.0;
    double std = 1.0;
    bool operator==(const Standardization&) const = default;
  };

  Normalizer() = default;
  Normalizer(std::vector<Range> features, Standardization target) : features_(std::move(features)), target_(target) {}

  static Normalizer fit(const RowMatrix& table, std::span<const double> target);

  RowMatrix normalize(const RowMatrix& table) const;
  double normalize_target(double strength) const;
  double denormalize_target(double value) const;
  std::vector<double> normalize_target(std::span<const double> strength) const;
  std::vector<double> denormalize_target(std::span<const double> values) const;

  const std::vector<Range>& feature_ranges() const noexcept { return features_; }
  Standardization target_scale() const noexcept { return target_; }

  bool operator==(const Normalizer&) const = default;

 private:
  std::vector<Range> features_;
  Standardization target_;
};

// Normalized features and targets of one feature group, ready for the graph.
struct FeatureTable {
  char group = 'A';
  std::vector<std::string> names;
  RowMatrix features;          // normalized, n x d
  std::vector<double> target;  // normalized, n
  std::vector<double> strength;  // MPa, n
  Normalizer normalizer;

  std::size_t size() const noexcept { return target.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
};

// Engineers the group and fits the normalizer on every record.
FeatureTable make_feature_table(const RawDataset& raw, char group);

struct SplitMasks {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;

  // validation ∪ test, ascending; the forest baseline's 30% test set.
  std::vector<std::size_t> holdout() const;

  bool operator==(const SplitMasks&) const = default;
};

// Shuffles 0..n-1 and takes floor(0.70 n) train, floor(0.15 n) validation and
// the rest as test. Each index set is returned in ascending order.
SplitMasks split(std::size_t n, std::uint64_t seed);

}  // namespace tabsage
