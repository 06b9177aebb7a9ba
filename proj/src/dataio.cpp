#include "layerlab/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "layerlab/errors.hpp"

namespace layerlab {

namespace {

// RFC-4180 style CSV reader over the whole file contents.
std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                const std::string& where) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  size_t i = 0;
  const size_t n = text.size();
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  while (i < n) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < n && text[i + 1] == '"') {
          field += '"';
          i += 2;
        } else {
          quoted = false;
          ++i;
        }
      } else {
        field += c;
        ++i;
      }
    } else if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
      ++i;
    } else if (c == ',') {
      end_field();
      ++i;
    } else if (c == '\r') {
      ++i;  // swallow CR of CRLF
    } else if (c == '\n') {
      end_row();
      ++i;
    } else {
      field += c;
      field_started = true;
      ++i;
    }
  }
  if (quoted)
    throw IoError(where + ": unterminated quoted field at end of file");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

bool parses_as_number(const std::string& s) {
  if (s.empty()) return false;
  const char* begin = s.c_str();
  char* end = nullptr;
  std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  return end && *end == '\0' && end != begin;
}

bool is_missing(const std::string& v, std::span<const std::string> sentinels) {
  return std::find(sentinels.begin(), sentinels.end(), v) != sentinels.end();
}

struct SchemaFile {
  std::map<std::string, ColumnKind> kinds;
  std::vector<std::string> sentinels = kDefaultMissingSentinels;
};

// Schema format: one `column = numeric|categorical` per line, plus an
// optional `missing = a|b|c` line; `#` starts a comment.
SchemaFile load_schema(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open schema file: " + path.string());
  SchemaFile schema;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected `name = numeric|categorical`");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "missing") {
      schema.sentinels.clear();
      std::stringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, '|')) schema.sentinels.push_back(trim(tok));
    } else if (value == "numeric") {
      schema.kinds[key] = ColumnKind::kNumeric;
    } else if (value == "categorical") {
      schema.kinds[key] = ColumnKind::kCategorical;
    } else {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown column kind '" +
                        value + "'");
    }
  }
  return schema;
}

}  // namespace

RawTable load_csv(const std::filesystem::path& path, const std::string& target_column,
                  const std::optional<std::filesystem::path>& schema_path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open CSV file: " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  const auto rows = parse_csv(buf.str(), path.string());
  if (rows.size() < 2)
    throw IoError(path.string() + ": need a header row and at least one data row");

  SchemaFile schema;
  if (schema_path) schema = load_schema(*schema_path);
  for (const auto& [name, kind] : schema.kinds) {
    if (std::find(rows[0].begin(), rows[0].end(), name) == rows[0].end())
      throw ConfigError("schema names unknown column '" + name + "'");
  }

  const auto& header = rows[0];
  const size_t ncols = header.size();
  int64_t target_idx = -1;
  for (size_t c = 0; c < ncols; ++c) {
    if (header[c] == target_column) target_idx = static_cast<int64_t>(c);
    for (size_t c2 = c + 1; c2 < ncols; ++c2)
      if (header[c] == header[c2])
        throw IoError(path.string() + ": duplicate column name '" + header[c] + "'");
  }
  if (target_idx < 0)
    throw IoError(path.string() + ": target column '" + target_column + "' not found");

  for (size_t r = 1; r < rows.size(); ++r)
    if (rows[r].size() != ncols)
      throw IoError(path.string() + ": row " + std::to_string(r + 1) + " has " +
                    std::to_string(rows[r].size()) + " fields, expected " +
                    std::to_string(ncols));

  // Target: exactly two distinct non-missing values, coded by first appearance.
  std::vector<std::string> target_levels;
  std::vector<int> target;
  for (size_t r = 1; r < rows.size(); ++r) {
    const std::string& v = rows[r][static_cast<size_t>(target_idx)];
    if (is_missing(v, schema.sentinels))
      throw IoError(path.string() + ": row " + std::to_string(r + 1) +
                    ": missing value in target column");
    auto it = std::find(target_levels.begin(), target_levels.end(), v);
    if (it == target_levels.end()) {
      target_levels.push_back(v);
      target.push_back(static_cast<int>(target_levels.size()) - 1);
    } else {
      target.push_back(static_cast<int>(it - target_levels.begin()));
    }
  }
  if (target_levels.size() != 2) {
    std::string classes;
    for (size_t i = 0; i < target_levels.size(); ++i) {
      if (i) classes += ", ";
      classes += "'" + target_levels[i] + "'";
    }
    throw IoError(path.string() + ": target column '" + target_column + "' has " +
                  std::to_string(target_levels.size()) + " classes (" + classes +
                  "), expected exactly 2");
  }

  RawTable out;
  out.id = path.stem().string();
  out.target = std::move(target);
  for (size_t c = 0; c < ncols; ++c) {
    if (static_cast<int64_t>(c) == target_idx) continue;
    RawColumnSpec spec;
    spec.name = header[c];
    spec.missing_sentinels = schema.sentinels;
    std::vector<std::string> col;
    col.reserve(rows.size() - 1);
    bool all_numeric = true;
    for (size_t r = 1; r < rows.size(); ++r) {
      const std::string& v = rows[r][c];
      if (!is_missing(v, schema.sentinels) && !parses_as_number(v)) all_numeric = false;
      col.push_back(v);
    }
    auto it = schema.kinds.find(spec.name);
    spec.kind = it != schema.kinds.end() ? it->second
                                         : (all_numeric ? ColumnKind::kNumeric
                                                        : ColumnKind::kCategorical);
    out.columns.push_back(std::move(spec));
    out.cells.push_back(std::move(col));
  }
  return out;
}

std::vector<double> ordinal_encode(std::span<const std::string> values,
                                   std::span<const std::string> sentinels) {
  std::vector<std::string> levels;
  std::vector<double> codes;
  codes.reserve(values.size());
  const std::string missing_token = "\x01missing";
  for (const auto& v : values) {
    const std::string key = is_missing(v, sentinels) ? missing_token : v;
    auto it = std::find(levels.begin(), levels.end(), key);
    if (it == levels.end()) {
      levels.push_back(key);
      codes.push_back(static_cast<double>(levels.size() - 1));
    } else {
      codes.push_back(static_cast<double>(it - levels.begin()));
    }
  }
  return codes;
}

PreprocessResult preprocess(const RawTable& raw) {
  const int64_t n = raw.rows();
  if (n == 0) throw IoError("preprocess: table has no rows");

  PreprocessResult res;
  res.table.id = raw.id;
  res.table.y = raw.target;

  std::vector<std::vector<double>> kept;
  for (size_t c = 0; c < raw.columns.size(); ++c) {
    const RawColumnSpec& spec = raw.columns[c];
    const auto& cells = raw.cells[c];
    std::vector<double> col(static_cast<size_t>(n), 0.0);

    if (spec.kind == ColumnKind::kNumeric) {
      double sum = 0.0;
      int64_t present = 0;
      for (int64_t i = 0; i < n; ++i) {
        const std::string& v = cells[static_cast<size_t>(i)];
        if (is_missing(v, spec.missing_sentinels)) continue;
        col[static_cast<size_t>(i)] = std::strtod(v.c_str(), nullptr);
        sum += col[static_cast<size_t>(i)];
        ++present;
      }
      if (present == 0) {
        res.warnings.push_back("column '" + spec.name + "' dropped: all values missing");
        continue;
      }
      const double mean_impute = sum / static_cast<double>(present);
      for (int64_t i = 0; i < n; ++i)
        if (is_missing(cells[static_cast<size_t>(i)], spec.missing_sentinels))
          col[static_cast<size_t>(i)] = mean_impute;
    } else {
      col = ordinal_encode(cells, spec.missing_sentinels);
    }

    // standardize in place (population variance; constant columns -> zeros)
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : col) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    if (var > 0.0) {
      const double inv = 1.0 / std::sqrt(var);
      for (double& v : col) v = (v - mean) * inv;
    } else {
      std::fill(col.begin(), col.end(), 0.0);
    }
    kept.push_back(std::move(col));
  }

  res.table.x = Matrix(n, static_cast<int64_t>(kept.size()));
  for (int64_t j = 0; j < res.table.x.cols; ++j)
    for (int64_t i = 0; i < n; ++i)
      res.table.x.at(i, j) = kept[static_cast<size_t>(j)][static_cast<size_t>(i)];
  return res;
}

}  // namespace layerlab
