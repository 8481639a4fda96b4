#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dtwt/error.hpp"

namespace dtwt {

/// Timestamped, possibly partial observations of named states.
class ObservationSet {
 public:
  ObservationSet() = default;
  explicit ObservationSet(std::vector<std::string> names) : names_(std::move(names)) {}

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<double>& times() const { return times_; }
  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    return -1;
  }

  /// Records one value; a new time must not precede the last one.
  void set(double t, const std::string& name, double value) {
    if (!std::isfinite(t)) throw Error(ErrorCode::NonMonotoneTime, "non-finite observation time");
    int c = column(name);
    if (c < 0) {
      names_.push_back(name);
      for (auto& r : rows_) r.push_back(kMissing);
      c = static_cast<int>(names_.size()) - 1;
    }
    if (times_.empty() || t > times_.back()) {
      times_.push_back(t);
      rows_.emplace_back(names_.size(), kMissing);
    } else if (t != times_.back()) {
      auto it = std::lower_bound(times_.begin(), times_.end(), t);
      if (it == times_.end() || *it != t)
        throw Error(ErrorCode::NonMonotoneTime, "observations must be added in time order");
      rows_[static_cast<std::size_t>(it - times_.begin())][c] = value;
      return;
    }
    rows_.back()[c] = value;
  }

  std::optional<double> get(std::size_t k, int col) const {
    const double v = rows_[k][col];
    if (std::isnan(v)) return std::nullopt;
    return v;
  }
  std::optional<double> get(std::size_t k, std::string_view name) const {
    const int c = column(name);
    return c < 0 ? std::nullopt : get(k, c);
  }

  /// Observations with lo <= t <= hi (or lo < t when open_lo).
  ObservationSet window(double lo, double hi, bool open_lo = false) const {
    ObservationSet out(names_);
    for (std::size_t k = 0; k < times_.size(); ++k) {
      const double t = times_[k];
      if ((open_lo ? t > lo : t >= lo) && t <= hi) {
        out.times_.push_back(t);
        out.rows_.push_back(rows_[k]);
      }
    }
    return out;
  }

  /// Keeps only the given columns (in the given order).
  ObservationSet select(const std::vector<std::string>& keep) const {
    ObservationSet out(keep);
    std::vector<int> cols;
    for (const auto& n : keep) cols.push_back(column(n));
    for (std::size_t k = 0; k < times_.size(); ++k) {
      std::vector<double> r;
      bool any = false;
      for (int c : cols) {
        r.push_back(c < 0 ? kMissing : rows_[k][c]);
        any = any || !std::isnan(r.back());
      }
      if (!any) continue;
      out.times_.push_back(times_[k]);
      out.rows_.push_back(std::move(r));
    }
    return out;
  }

  /// Number of observed (non-missing) values.
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& r : rows_)
      for (double v : r) n += std::isnan(v) ? 0 : 1;
    return n;
  }

  /// Value equality (missing cells compare equal).
  bool operator==(const ObservationSet& o) const {
    if (names_ != o.names_ || times_ != o.times_) return false;
    for (std::size_t k = 0; k < rows_.size(); ++k)
      for (std::size_t c = 0; c < names_.size(); ++c) {
        const double a = rows_[k][c], b = o.rows_[k][c];
        if (!((std::isnan(a) && std::isnan(b)) || a == b)) return false;
      }
    return true;
  }

  static constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

 private:
  std::vector<std::string> names_;
  std::vector<double> times_;
  std::vector<std::vector<double>> rows_;
};

}  // namespace dtwt
