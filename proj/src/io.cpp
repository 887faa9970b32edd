#include "ha/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

namespace ha {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (ch != '\r' && ch != '\n') {
      field += ch;
    }
  }
  if (quoted) throw InputError("unterminated quoted field");
  out.push_back(std::move(field));
  return out;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw InputError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) { return parse_key_values(read_file(path)); }

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "NaN";
  if (std::isinf(x)) return x > 0 ? "Inf" : "-Inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out << content;
    if (!out) throw InputError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

double parse_number(const std::string& raw, std::size_t row, const std::string& column) {
  const std::string s = trim(raw);
  if (s.empty()) throw InputError("row " + std::to_string(row) + ": missing value for response '" + column + "'");
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InputError("row " + std::to_string(row) + ": non-numeric response '" + s + "' in column '" + column + "'");
  }
  return v;
}

}  // namespace

LongData read_long_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  if (schema.factor_columns.empty()) throw InputError("schema names no factor columns");
  if (schema.response_columns.empty()) throw InputError("schema names no response columns");
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
  const auto header = split_csv_line(line);
  auto column_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) return i;
    }
    throw InputError(path.string() + ": no column named '" + name + "'");
  };
  std::vector<std::size_t> fcol, rcol;
  for (const auto& c : schema.factor_columns) fcol.push_back(column_of(c));
  for (const auto& c : schema.response_columns) rcol.push_back(column_of(c));

  const std::size_t K = fcol.size();
  const std::size_t p = rcol.size();
  std::vector<std::vector<std::string>> raw_levels;
  std::vector<std::vector<double>> responses;
  std::size_t row = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw InputError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    std::vector<std::string> lv(K);
    for (std::size_t f = 0; f < K; ++f) {
      lv[f] = trim(fields[fcol[f]]);
      if (lv[f].empty()) throw InputError("row " + std::to_string(row) + ": missing level for '" + schema.factor_columns[f] + "'");
    }
    std::vector<double> y(p);
    for (std::size_t r = 0; r < p; ++r) y[r] = parse_number(fields[rcol[r]], row, schema.response_columns[r]);
    raw_levels.push_back(std::move(lv));
    responses.push_back(std::move(y));
  }

  LongData data;
  data.layout.responses = p;
  data.layout.factor_names = schema.factor_columns;
  data.layout.response_names = schema.response_columns;
  data.layout.labels.resize(K);
  for (std::size_t f = 0; f < K; ++f) {
    const auto declared = schema.levels.find(schema.factor_columns[f]);
    auto& labels = data.layout.labels[f];
    if (declared != schema.levels.end()) {
      labels = declared->second;
      for (std::size_t i = 0; i < raw_levels.size(); ++i) {
        const auto& v = raw_levels[i][f];
        if (std::find(labels.begin(), labels.end(), v) == labels.end()) {
          if (!schema.extend_levels) {
            throw InputError("unknown level '" + v + "' for factor '" + schema.factor_columns[f] + "'");
          }
          labels.push_back(v);
        }
      }
    } else {
      std::set<std::string> seen;
      for (const auto& lv : raw_levels) seen.insert(lv[f]);
      labels.assign(seen.begin(), seen.end());
    }
    if (labels.empty()) throw InputError("factor '" + schema.factor_columns[f] + "' has no levels");
    data.layout.levels.push_back(labels.size());
  }
  data.layout.validate();

  data.cells.reserve(raw_levels.size());
  for (const auto& lv : raw_levels) {
    std::vector<std::size_t> cell(K);
    for (std::size_t f = 0; f < K; ++f) {
      const auto& labels = data.layout.labels[f];
      cell[f] = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), lv[f]) - labels.begin());
    }
    data.cells.push_back(std::move(cell));
  }
  data.responses = std::move(responses);
  return data;
}

CellStats to_cell_stats(const LongData& data) {
  CellStats stats = CellStats::empty(data.layout);
  for (std::size_t i = 0; i < data.cells.size(); ++i) stats.add_observation(data.cells[i], data.responses[i]);
  return stats;
}

CellStats ingest_long_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  return to_cell_stats(read_long_csv(path, schema));
}

}  // namespace ha
