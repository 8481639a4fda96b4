#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtwt/error.hpp"

namespace dtwt {

/// Piecewise-constant histories of writable channels (zero-order hold).
class ActionSchedule {
 public:
  using Series = std::vector<std::pair<double, double>>;  // (time, value), strictly increasing time

  ActionSchedule() = default;

  /// Replaces a channel's whole history. Times must be strictly increasing.
  void set_series(const std::string& name, Series s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!std::isfinite(s[i].first) || !std::isfinite(s[i].second))
        throw Error(ErrorCode::NonMonotoneSchedule, "non-finite breakpoint in channel '" + name + "'", name);
      if (i && !(s[i].first > s[i - 1].first))
        throw Error(ErrorCode::NonMonotoneSchedule, "breakpoint times of '" + name + "' are not strictly increasing",
                    name + "[" + std::to_string(i) + "]");
    }
    channels_[name] = std::move(s);
  }

  /// Inserts one breakpoint; an existing breakpoint at the same time is overwritten.
  void set(const std::string& name, double t, double value) {
    if (!std::isfinite(t) || !std::isfinite(value))
      throw Error(ErrorCode::NonMonotoneSchedule, "non-finite breakpoint", name);
    auto& s = channels_[name];
    auto it = std::lower_bound(s.begin(), s.end(), t, [](const auto& bp, double x) { return bp.first < x; });
    if (it != s.end() && it->first == t) it->second = value;
    else s.insert(it, {t, value});
  }

  bool has(const std::string& name) const { return channels_.count(name) != 0; }
  bool empty() const { return channels_.empty(); }
  const std::map<std::string, Series>& channels() const { return channels_; }
  const Series& series(const std::string& name) const {
    auto it = channels_.find(name);
    if (it == channels_.end()) throw Error(ErrorCode::UnknownChannel, "no schedule for channel '" + name + "'", name);
    return it->second;
  }

  /// Zero-order hold; before the first breakpoint the first value is held.
  double value(const std::string& name, double t) const {
    const Series& s = series(name);
    if (s.empty()) throw Error(ErrorCode::UnknownChannel, "channel '" + name + "' has no breakpoints", name);
    auto it = std::upper_bound(s.begin(), s.end(), t, [](double x, const auto& bp) { return x < bp.first; });
    if (it == s.begin()) return s.front().second;
    return std::prev(it)->second;
  }

  /// Sorted union of breakpoint times of the given channels lying strictly inside (a, b).
  std::vector<double> breakpoints(const std::vector<std::string>& names, double a, double b) const {
    std::set<double> out;
    for (const auto& n : names) {
      auto it = channels_.find(n);
      if (it == channels_.end()) continue;
      for (const auto& [t, v] : it->second)
        if (t > a && t < b) out.insert(t);
    }
    return {out.begin(), out.end()};
  }

  /// Copy of this schedule with `other`'s breakpoints written on top (last-write-wins).
  ActionSchedule overlay(const ActionSchedule& other) const {
    ActionSchedule out = *this;
    for (const auto& [name, s] : other.channels_)
      for (const auto& [t, v] : s) out.set(name, t, v);
    return out;
  }

  /// Drops breakpoints after `t` (keeps t itself).
  void truncate_after(double t) {
    for (auto& [name, s] : channels_)
      s.erase(std::upper_bound(s.begin(), s.end(), t, [](double x, const auto& bp) { return x < bp.first; }), s.end());
  }

  std::pair<double, double> horizon() const {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& [n, s] : channels_)
      if (!s.empty()) lo = std::min(lo, s.front().first), hi = std::max(hi, s.back().first);
    return {lo, hi};
  }

  bool operator==(const ActionSchedule&) const = default;

  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [name, s] : channels_) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& [t, v] : s) arr.push_back({t, v});
      out[name] = std::move(arr);
    }
    return out;
  }

  /// Accepts {"name": [[t, v], ...]} or [{"name":..., "t":..., "value":...}, ...].
  static ActionSchedule from_json(const nlohmann::json& j) {
    ActionSchedule out;
    if (j.is_object()) {
      for (const auto& [name, arr] : j.items()) {
        if (!arr.is_array()) throw Error(ErrorCode::InvalidActions, "channel '" + name + "' must be an array of [t, value]", name);
        Series s;
        for (const auto& bp : arr) {
          if (!bp.is_array() || bp.size() != 2 || !bp[0].is_number() || !bp[1].is_number())
            throw Error(ErrorCode::InvalidActions, "breakpoint must be [t, value]", name);
          s.emplace_back(bp[0].get<double>(), bp[1].get<double>());
        }
        out.set_series(name, std::move(s));
      }
    } else if (j.is_array()) {
      for (const auto& a : j) {
        if (!a.is_object() || !a.contains("name") || !a.contains("t") || !a.contains("value") || !a["name"].is_string() ||
            !a["t"].is_number() || !a["value"].is_number())
          throw Error(ErrorCode::InvalidActions, "action must be {name, t, value}");
        out.set(a["name"].get<std::string>(), a["t"].get<double>(), a["value"].get<double>());
      }
    } else {
      throw Error(ErrorCode::InvalidActions, "actions must be an object or an array");
    }
    return out;
  }

 private:
  std::map<std::string, Series> channels_;
};

inline double sample_action(const ActionSchedule& s, const std::string& name, double t) { return s.value(name, t); }

}  // namespace dtwt
