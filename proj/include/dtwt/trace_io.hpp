#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtwt/error.hpp"
#include "dtwt/expr.hpp"
#include "dtwt/observations.hpp"
#include "dtwt/schedule.hpp"
#include "dtwt/thing_description.hpp"
#include "dtwt/trajectory.hpp"

namespace dtwt {

/// A recorded table: strictly increasing t plus named columns; NaN = empty cell.
struct Trace {
  std::vector<std::string> columns;
  std::vector<double> times;
  std::vector<std::vector<double>> rows;

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  }
  void add_row(double t, std::vector<double> values) {
    if (values.size() != columns.size()) throw Error(ErrorCode::SchemaMismatch, "row width differs from the header");
    if (!times.empty() && !(t > times.back()))
      throw Error(ErrorCode::NonMonotoneTime, "time is not strictly increasing", "row " + std::to_string(times.size() + 2));
    times.push_back(t);
    rows.push_back(std::move(values));
  }
  bool operator==(const Trace& o) const {
    if (columns != o.columns || times != o.times || rows.size() != o.rows.size()) return false;
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (std::size_t c = 0; c < columns.size(); ++c) {
        const double a = rows[k][c], b = o.rows[k][c];
        if (!((std::isnan(a) && std::isnan(b)) || a == b)) return false;
      }
    return true;
  }
};

inline std::string trace_to_csv(const Trace& tr) {
  std::string out = "t";
  for (const auto& c : tr.columns) out += "," + c;
  out += "\n";
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    out += format_number(tr.times[k]);
    for (double v : tr.rows[k]) out += "," + (std::isnan(v) ? std::string() : format_number(v));
    out += "\n";
  }
  return out;
}

inline Trace trace_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::SchemaMismatch, "empty trace", "row 1");
  auto header = csv_detail::split(line);
  if (header.empty() || header[0] != "t") throw Error(ErrorCode::SchemaMismatch, "first column must be 't'", "row 1 column 1");
  Trace tr;
  tr.columns.assign(header.begin() + 1, header.end());
  for (std::size_t i = 0; i < tr.columns.size(); ++i) {
    if (tr.columns[i].empty()) throw Error(ErrorCode::SchemaMismatch, "empty column name", "row 1 column " + std::to_string(i + 2));
    for (std::size_t j = 0; j < i; ++j)
      if (tr.columns[j] == tr.columns[i]) throw Error(ErrorCode::SchemaMismatch, "duplicate column '" + tr.columns[i] + "'", "row 1");
  }
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cells = csv_detail::split(line);
    const std::string where = "row " + std::to_string(row);
    if (cells.size() != header.size())
      throw Error(ErrorCode::SchemaMismatch, "expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()), where);
    std::vector<double> vals;
    double t = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      std::optional<double> v;
      try {
        v = csv_detail::number(cells[c]);
      } catch (const std::invalid_argument&) {
        throw Error(ErrorCode::SchemaMismatch, "not a number: '" + cells[c] + "'", where + " column " + header[c]);
      }
      if (c == 0) {
        if (!v) throw Error(ErrorCode::SchemaMismatch, "missing time", where + " column t");
        t = *v;
      } else {
        vals.push_back(v ? *v : ObservationSet::kMissing);
      }
    }
    if (!tr.times.empty() && !(t > tr.times.back())) throw Error(ErrorCode::NonMonotoneTime, "time is not strictly increasing", where);
    tr.times.push_back(t);
    tr.rows.push_back(std::move(vals));
  }
  return tr;
}

inline nlohmann::json trace_to_json(const Trace& tr) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    nlohmann::json values = nlohmann::json::object();
    for (std::size_t c = 0; c < tr.columns.size(); ++c)
      if (!std::isnan(tr.rows[k][c])) values[tr.columns[c]] = tr.rows[k][c];
    out.push_back({{"t", tr.times[k]}, {"values", values}});
  }
  return out;
}

/// JSON variant: [{"t": seconds, "values": {name: number}}, ...]. Columns come
/// back in key order (JSON objects are unordered).
inline Trace trace_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::SchemaMismatch, "trace must be an array of records");
  Trace tr;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const auto& rec = j[k];
    const std::string where = "record " + std::to_string(k);
    if (!rec.is_object() || !rec.contains("t") || !rec["t"].is_number())
      throw Error(ErrorCode::SchemaMismatch, "record needs a numeric 't'", where);
    if (rec.contains("values") && rec["values"].is_object())
      for (const auto& [name, v] : rec["values"].items()) {
        if (!v.is_number() && !v.is_null()) throw Error(ErrorCode::SchemaMismatch, "value of '" + name + "' is not a number", where);
        if (tr.column(name) < 0) {
          tr.columns.push_back(name);
          for (auto& r : tr.rows) r.push_back(ObservationSet::kMissing);
        }
      }
  }
  for (std::size_t k = 0; k < j.size(); ++k) {
    const auto& rec = j[k];
    std::vector<double> vals(tr.columns.size(), ObservationSet::kMissing);
    if (rec.contains("values") && rec["values"].is_object())
      for (const auto& [name, v] : rec["values"].items())
        if (v.is_number()) vals[static_cast<std::size_t>(tr.column(name))] = v.get<double>();
    const double t = rec["t"].get<double>();
    if (!tr.times.empty() && !(t > tr.times.back()))
      throw Error(ErrorCode::NonMonotoneTime, "time is not strictly increasing", "record " + std::to_string(k));
    tr.times.push_back(t);
    tr.rows.push_back(std::move(vals));
  }
  return tr;
}

/// Maps trace columns onto a TD: writable properties and unmodeled readable
/// properties become schedule channels (breakpoints where the value changes),
/// modeled read-only properties become observations.
inline std::pair<ObservationSet, ActionSchedule> split_trace(const ThingDescription& td, const Trace& tr) {
  ObservationSet obs;
  ActionSchedule actions;
  for (std::size_t c = 0; c < tr.columns.size(); ++c) {
    const std::string& name = tr.columns[c];
    const PropertySpec* p = td.property(name);
    if (!p) throw Error(ErrorCode::SchemaMismatch, "column '" + name + "' is not a property of the TD", "row 1 column " + name);
    const bool is_channel = p->writable() || !p->model;
    if (is_channel) {
      ActionSchedule::Series s;
      for (std::size_t k = 0; k < tr.times.size(); ++k) {
        const double v = tr.rows[k][c];
        if (std::isnan(v)) continue;
        if (s.empty() || s.back().second != v) s.emplace_back(tr.times[k], v);
      }
      if (!s.empty()) actions.set_series(name, std::move(s));
    }
  }
  std::vector<std::string> observed;
  for (std::size_t c = 0; c < tr.columns.size(); ++c) {
    const PropertySpec* p = td.property(tr.columns[c]);
    if (!p->writable() && p->model) observed.push_back(tr.columns[c]);
  }
  obs = ObservationSet(observed);
  for (std::size_t k = 0; k < tr.times.size(); ++k)
    for (const auto& name : observed) {
      const double v = tr.rows[k][static_cast<std::size_t>(tr.column(name))];
      if (!std::isnan(v)) obs.set(tr.times[k], name, v);
    }
  return {obs, actions};
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot open '" + path + "'", path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::Io, "cannot write '" + path + "'", path);
  f << content;
  if (!f) throw Error(ErrorCode::Io, "write failed for '" + path + "'", path);
}

enum class TraceFormat { Csv, Json };

inline TraceFormat guess_format(const std::string& path) {
  return path.size() >= 5 && path.substr(path.size() - 5) == ".json" ? TraceFormat::Json : TraceFormat::Csv;
}

inline Trace read_trace(const std::string& path, std::optional<TraceFormat> fmt = std::nullopt) {
  const std::string text = read_file(path);
  if (fmt.value_or(guess_format(path)) == TraceFormat::Csv) return trace_from_csv(text);
  try {
    return trace_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::SchemaMismatch, e.what(), path);
  }
}

/// Loads a trace and splits it per the TD's property flags.
inline std::pair<ObservationSet, ActionSchedule> load_trace(const std::string& path, const ThingDescription& td,
                                                            std::optional<TraceFormat> fmt = std::nullopt) {
  return split_trace(td, read_trace(path, fmt));
}

}  // namespace dtwt
