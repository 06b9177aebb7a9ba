#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "layerlab/table.hpp"

namespace layerlab {

enum class ColumnKind { kNumeric, kCategorical };

struct RawColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kNumeric;
  std::vector<std::string> missing_sentinels;  // values treated as missing
};

// Parsed CSV: string cells column-major, with the binary target already
// mapped to 0/1 by first appearance.
struct RawTable {
  std::string id;
  std::vector<RawColumnSpec> columns;                 // feature columns only
  std::vector<std::vector<std::string>> cells;        // per feature column
  std::vector<int> target;

  int64_t rows() const { return static_cast<int64_t>(target.size()); }
};

struct PreprocessResult {
  Table table;
  std::vector<std::string> warnings;  // e.g. dropped all-missing columns
};

inline const std::vector<std::string> kDefaultMissingSentinels = {
    "", "NA", "N/A", "NULL", "null", "?", "nan", "NaN"};

// Loads a comma-separated file (first row headers, quoted fields with embedded
// commas/quotes/newlines supported). The target column must hold exactly two
// distinct non-missing values. Column kinds come from the optional schema
// file, otherwise a column is numeric when every non-missing value parses as
// a number. Errors carry row/column locations.
RawTable load_csv(const std::filesystem::path& path, const std::string& target_column,
                  const std::optional<std::filesystem::path>& schema_path = std::nullopt);

// Ordinal codes by first appearance; missing sentinels act as a regular
// (dedicated) category.
std::vector<double> ordinal_encode(std::span<const std::string> values,
                                   std::span<const std::string> sentinels);

// Numeric columns: impute missing with the column mean, then standardize
// (constant columns become all zeros). Categorical columns: ordinal-encode,
// then standardize. All-missing numeric columns are dropped with a warning.
// Deterministic, and idempotent on its own output up to float tolerance.
PreprocessResult preprocess(const RawTable& raw);

}  // namespace layerlab
