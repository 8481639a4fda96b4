#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "dtwt/dtwt.hpp"

namespace dtwt::testing {

inline std::string data(const std::string& name) { return std::string(DTWT_DATA_DIR) + "/" + name; }
inline ThingDescription room_td() { return parse_td(read_file(data("room.td.json"))); }
inline ThingDescription drone_td() { return parse_td(read_file(data("drone.td.json"))); }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& tag) {
  static std::mt19937_64 gen(std::random_device{}());
  auto p = std::filesystem::temp_directory_path() / ("dtwt-" + tag + "-" + std::to_string(gen()));
  std::filesystem::create_directories(p);
  return p;
}

/// Minimal TD around one property model string.
inline std::string td_with(const std::string& props_json) {
  return R"({"title": "t", "properties": {)" + props_json + "}}";
}

/// One tank: level' = gain * inflow - leak * level, inflow is a writable switch.
inline const char* kTankTd = R"j({
  "title": "tank",
  "properties": {
    "level": {
      "type": "number", "readOnly": true,
      "dtwt:initialBounds": [0, 100],
      "dtwt:modelInput": [{"title": "in", "propertyName": "inflow", "model": "self"}],
      "dtwt:model": "dot(self) = params[0] * input(in) - params[1] * self | params[0] >= 0, params[1] >= 0 | params[0] = 1, params[1] = 0.5"
    },
    "inflow": {"type": "number", "readOnly": false, "dtwt:model": "self = value()"}
  }
})j";

struct Tank {
  std::shared_ptr<const ThingDescription> td = std::make_shared<const ThingDescription>(parse_td(kTankTd));
  std::shared_ptr<const CompiledSystem> sys = std::make_shared<const CompiledSystem>(assemble_system(resolve_models(*td), {"level"}));
  Eigen::VectorXd truth = Eigen::Vector2d(2.0, 0.3);

  ActionSchedule inflow() const {
    ActionSchedule s;
    s.set_series("inflow", {{0, 1}, {4, 0}, {7, 2}, {12, 0}});
    return s;
  }
  /// Noise-free level samples every 0.25 s on [0, t_end].
  ObservationSet observe(double t_end, const Eigen::VectorXd& p, double x0 = 1.0) const {
    std::vector<double> ts;
    for (int k = 0; k * 0.25 <= t_end; ++k) ts.push_back(k * 0.25);
    const auto tr = integrate(*sys, Eigen::VectorXd::Constant(1, x0), p, inflow(), {0, t_end}, ts);
    ObservationSet obs({"level"});
    for (std::size_t k = 0; k < ts.size(); ++k) obs.set(ts[k], "level", tr.values(static_cast<Eigen::Index>(k), 0));
    return obs;
  }
  /// Recorded table with the level sensor and the inflow switch.
  Trace trace(double t_end) const {
    const auto obs = observe(t_end, truth);
    Trace tr;
    tr.columns = {"level", "inflow"};
    for (std::size_t k = 0; k < obs.size(); ++k) tr.add_row(obs.times()[k], {*obs.get(k, 0), inflow().value("inflow", obs.times()[k])});
    return tr;
  }
};

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no dtwt::Error thrown";
  return ErrorCode::Io;
}

}  // namespace dtwt::testing
