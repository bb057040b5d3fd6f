#include "tabsage/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "tabsage/error.hpp"
#include "tabsage/rng.hpp"

namespace tabsage {

RowMatrix::RowMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::ShapeMismatch, "matrix data size does not match " + std::to_string(rows_) + "x" +
                                              std::to_string(cols_));
  }
}

std::vector<double> RowMatrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

RowMatrix RowMatrix::select_rows(std::span<const std::size_t> indices) const {
  RowMatrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == ',' && !quoted) {
      fields.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  fields.push_back(trim(line.substr(start)));
  return fields;
}

std::optional<double> parse_double(std::string_view s) {
  double value = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return value;
}

std::string location(std::size_t row, std::string_view column) {
  return "row=" + std::to_string(row) + ", col=" + std::string(column);
}

}  // namespace

ColumnMapping ColumnMapping::defaults() {
  ColumnMapping m;
  for (auto name : kColumnNames) m.add(std::string(name), std::string(name));
  m.add(std::string(kTargetName), std::string(kTargetName));

  m.add("blast_furnace_slag", "slag");
  m.add("blast furnace slag", "slag");
  m.add("flyash", "fly_ash");
  m.add("fly ash", "fly_ash");
  m.add("sp", "superplasticizer");
  m.add("coarse_aggregate", "coarse_agg");
  m.add("coarse aggregate", "coarse_agg");
  m.add("fine_aggregate", "fine_agg");
  m.add("fine aggregate", "fine_agg");
  m.add("compressive_strength", "strength");
  m.add("compressive strength", "strength");
  m.add("csmpa", "strength");

  // Headers of the UCI spreadsheet export.
  m.add("Cement (component 1)(kg in a m^3 mixture)", "cement");
  m.add("Blast Furnace Slag (component 2)(kg in a m^3 mixture)", "slag");
  m.add("Fly Ash (component 3)(kg in a m^3 mixture)", "fly_ash");
  m.add("Water  (component 4)(kg in a m^3 mixture)", "water");
  m.add("Water (component 4)(kg in a m^3 mixture)", "water");
  m.add("Superplasticizer (component 5)(kg in a m^3 mixture)", "superplasticizer");
  m.add("Coarse Aggregate  (component 6)(kg in a m^3 mixture)", "coarse_agg");
  m.add("Coarse Aggregate (component 6)(kg in a m^3 mixture)", "coarse_agg");
  m.add("Fine Aggregate (component 7)(kg in a m^3 mixture)", "fine_agg");
  m.add("Age (day)", "age");
  m.add("Concrete compressive strength(MPa, megapascals)", "strength");
  m.add("Concrete compressive strength(MPa, megapascals) ", "strength");
  return m;
}

void ColumnMapping::add(std::string alias, std::string canonical) {
  aliases_[lower(trim(alias))] = std::move(canonical);
}

std::string ColumnMapping::resolve(std::string_view header) const {
  const auto it = aliases_.find(lower(trim(header)));
  return it == aliases_.end() ? std::string{} : it->second;
}

RawDataset load_csv(const std::filesystem::path& path, const ColumnMapping& mapping) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str(), mapping);
}

RawDataset parse_csv(std::string_view text, const ColumnMapping& mapping) {
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start < text.size();) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  // Trailing blank lines are not records.
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorCode::SchemaMismatch, "missing header row");

  if (lines[0].starts_with("\xEF\xBB\xBF")) lines[0].remove_prefix(3);
  const auto header = split_fields(lines[0]);

  // file column -> canonical slot (0..7 inputs, 8 target)
  constexpr std::size_t kTargetSlot = kInputColumns;
  std::vector<std::size_t> slot_of(header.size());
  std::array<std::optional<std::size_t>, kInputColumns + 1> file_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto canonical = mapping.resolve(header[c]);
    if (canonical.empty()) throw Error(ErrorCode::SchemaMismatch, "unexpected column '" + std::string(header[c]) + "'");
    std::size_t slot = kTargetSlot;
    if (canonical != kTargetName) {
      const auto it = std::find(kColumnNames.begin(), kColumnNames.end(), canonical);
      if (it == kColumnNames.end()) throw Error(ErrorCode::SchemaMismatch, "mapping names unknown column '" + canonical + "'");
      slot = static_cast<std::size_t>(it - kColumnNames.begin());
    }
    if (file_col[slot]) throw Error(ErrorCode::SchemaMismatch, "duplicate column '" + canonical + "'");
    file_col[slot] = c;
    slot_of[c] = slot;
  }
  for (std::size_t s = 0; s <= kTargetSlot; ++s) {
    if (!file_col[s]) {
      const std::string name(s == kTargetSlot ? kTargetName : kColumnNames[s]);
      throw Error(ErrorCode::SchemaMismatch, "missing column '" + name + "'");
    }
  }

  const std::size_t n = lines.size() - 1;
  if (n == 0) throw Error(ErrorCode::EmptyData, "no data rows");

  auto slot_name = [](std::size_t s) { return s == kTargetSlot ? kTargetName : kColumnNames[s]; };

  RawDataset raw{RowMatrix(n, kInputColumns), std::vector<double>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t row_number = r + 1;
    const auto fields = split_fields(lines[r + 1]);
    if (fields.size() > header.size()) {
      throw Error(ErrorCode::ParseError, location(row_number, "*") + ": " + std::to_string(fields.size()) +
                                             " fields, expected " + std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < header.size(); ++c) {
      const auto slot = slot_of[c];
      if (c >= fields.size() || fields[c].empty()) {
        throw Error(ErrorCode::MissingValue, location(row_number, slot_name(slot)));
      }
      const auto value = parse_double(fields[c]);
      if (!value) {
        throw Error(ErrorCode::ParseError, location(row_number, slot_name(slot)) + ": '" + std::string(fields[c]) + "'");
      }
      if (!std::isfinite(*value)) throw Error(ErrorCode::InvalidValue, location(row_number, slot_name(slot)) + ": not finite");
      if (slot == kTargetSlot) {
        if (*value <= 0) throw Error(ErrorCode::InvalidValue, location(row_number, slot_name(slot)) + ": strength must be > 0");
        raw.strength[r] = *value;
      } else {
        if (slot == static_cast<std::size_t>(Column::age) && *value <= 0) {
          throw Error(ErrorCode::InvalidValue, location(row_number, slot_name(slot)) + ": age must be > 0");
        }
        raw.inputs(r, slot) = *value;
      }
    }
  }
  return raw;
}

std::vector<std::string> FeatureGroup::names() const {
  std::vector<std::string> out;
  out.reserve(derivations.size());
  for (const auto& d : derivations) out.push_back(d.name);
  return out;
}

namespace {

FeatureDerivation raw_column(Column c) {
  return {std::string(kColumnNames[static_cast<std::size_t>(c)]),
          [c](const RawDataset& raw, std::size_t r) { return raw.value(r, c); }};
}

double binder(const RawDataset& raw, std::size_t r) {
  return raw.value(r, Column::cement) + raw.value(r, Column::slag) + raw.value(r, Column::fly_ash);
}

double aggregate(const RawDataset& raw, std::size_t r) {
  return raw.value(r, Column::coarse_agg) + raw.value(r, Column::fine_agg);
}

double binder_checked(const RawDataset& raw, std::size_t r) {
  const double b = binder(raw, r);
  if (b == 0.0) throw Error(ErrorCode::DivisionByZero, "binder is zero at row " + std::to_string(r + 1));
  return b;
}

}  // namespace

FeatureGroup feature_group(char tag) {
  using C = Column;
  switch (tag) {
    case 'A':
      return {'A',
              {raw_column(C::cement), raw_column(C::slag), raw_column(C::fly_ash), raw_column(C::water),
               raw_column(C::superplasticizer), raw_column(C::coarse_agg), raw_column(C::fine_agg), raw_column(C::age)}};
    case 'B':
      return {'B', {raw_column(C::cement), raw_column(C::water), raw_column(C::superplasticizer), raw_column(C::age)}};
    case 'C':
      return {'C',
              {{"binder", binder},
               {"aggregate", aggregate},
               {"fluidity",
                [](const RawDataset& raw, std::size_t r) {
                  return raw.value(r, C::water) + raw.value(r, C::superplasticizer);
                }},
               {"w_b", [](const RawDataset& raw, std::size_t r) { return raw.value(r, C::water) / binder_checked(raw, r); }},
               {"agg_b", [](const RawDataset& raw, std::size_t r) { return aggregate(raw, r) / binder_checked(raw, r); }},
               {"sp_b",
                [](const RawDataset& raw, std::size_t r) {
                  return raw.value(r, C::superplasticizer) / binder_checked(raw, r);
                }},
               raw_column(C::age)}};
    case 'D':
      return {'D',
              {raw_column(C::cement), raw_column(C::slag), raw_column(C::fly_ash), raw_column(C::water),
               raw_column(C::superplasticizer), {"aggregate", aggregate}, raw_column(C::age)}};
    case 'E':
      return {'E',
              {raw_column(C::cement),
               {"scm", [](const RawDataset& raw, std::size_t r) { return raw.value(r, C::slag) + raw.value(r, C::fly_ash); }},
               raw_column(C::water),
               raw_column(C::superplasticizer),
               {"aggregate", aggregate},
               raw_column(C::age)}};
    default:
      throw Error(ErrorCode::UnknownFeatureGroup, std::string("feature group '") + tag + "' (expected A-E)");
  }
}

EngineeredTable apply_feature_group(const RawDataset& raw, const FeatureGroup& group) {
  EngineeredTable out{group.names(), RowMatrix(raw.size(), group.size())};
  for (std::size_t r = 0; r < raw.size(); ++r) {
    for (std::size_t c = 0; c < group.size(); ++c) out.values(r, c) = group.derivations[c].formula(raw, r);
  }
  return out;
}

namespace {

Normalizer::Range range_of(std::span<const double> values) {
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return {*lo, *hi};
}

double scale(double x, Normalizer::Range r) { return r.max == r.min ? 0.0 : (x - r.min) / (r.max - r.min); }

Normalizer::Standardization standardization_of(std::span<const double> values) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

}  // namespace

Normalizer Normalizer::fit(const RowMatrix& table, std::span<const double> target) {
  if (table.rows() == 0 || target.empty()) throw Error(ErrorCode::EmptyTable, "cannot fit normalizer on an empty table");
  if (table.rows() != target.size()) throw Error(ErrorCode::LengthMismatch, "table rows and targets differ");
  std::vector<Range> ranges;
  ranges.reserve(table.cols());
  for (std::size_t c = 0; c < table.cols(); ++c) ranges.push_back(range_of(table.column(c)));
  return Normalizer(std::move(ranges), standardization_of(target));
}

RowMatrix Normalizer::normalize(const RowMatrix& table) const {
  if (table.cols() != features_.size()) throw Error(ErrorCode::DimensionMismatch, "normalizer fitted on a different width");
  RowMatrix out(table.rows(), table.cols());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.cols(); ++c) out(r, c) = scale(table(r, c), features_[c]);
  }
  return out;
}

double Normalizer::normalize_target(double strength) const {
  return target_.std == 0.0 ? 0.0 : (strength - target_.mean) / target_.std;
}

double Normalizer::denormalize_target(double value) const { return target_.mean + value * target_.std; }

std::vector<double> Normalizer::normalize_target(std::span<const double> strength) const {
  std::vector<double> out(strength.size());
  std::transform(strength.begin(), strength.end(), out.begin(), [this](double s) { return normalize_target(s); });
  return out;
}

std::vector<double> Normalizer::denormalize_target(std::span<const double> values) const {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [this](double v) { return denormalize_target(v); });
  return out;
}

FeatureTable make_feature_table(const RawDataset& raw, char group) {
  auto engineered = apply_feature_group(raw, feature_group(group));
  auto normalizer = Normalizer::fit(engineered.values, raw.strength);
  FeatureTable table;
  table.group = group;
  table.names = std::move(engineered.names);
  table.features = normalizer.normalize(engineered.values);
  table.target = normalizer.normalize_target(raw.strength);
  table.strength = raw.strength;
  table.normalizer = std::move(normalizer);
  return table;
}

std::vector<std::size_t> SplitMasks::holdout() const {
  std::vector<std::size_t> out;
  out.reserve(validation.size() + test.size());
  std::merge(validation.begin(), validation.end(), test.begin(), test.end(), std::back_inserter(out));
  return out;
}

SplitMasks split(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw Error(ErrorCode::TooFewRecords, std::to_string(n) + " records, need at least 10");
  Rng rng(derive_seed(seed, streams::split));
  const auto order = permutation(n, rng);
  const std::size_t n_train = n * 70 / 100;
  const std::size_t n_val = n * 15 / 100;

  SplitMasks masks;
  masks.seed = seed;
  masks.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  masks.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                          order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  masks.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  std::sort(masks.train.begin(), masks.train.end());
  std::sort(masks.validation.begin(), masks.validation.end());
  std::sort(masks.test.begin(), masks.test.end());
  return masks;
}

}  // namespace tabsage
