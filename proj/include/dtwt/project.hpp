#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtwt/error.hpp"
#include "dtwt/learning.hpp"
#include "dtwt/resolve.hpp"
#include "dtwt/system.hpp"
#include "dtwt/thing_description.hpp"
#include "dtwt/trace_io.hpp"
#include "dtwt/twin.hpp"

namespace dtwt {

/// 64-bit FNV-1a of the TD text, as 16 hex digits.
inline std::string td_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline bool is_safe_name(std::string_view name) {
  if (name.empty() || name.size() > 128 || name.front() == '.') return false;
  return std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isalnum(c) || c == '_' || c == '-' || c == '.'; });
}

inline void require_safe_name(std::string_view name, const char* what) {
  if (!is_safe_name(name))
    throw Error(ErrorCode::InvalidConfig, std::string(what) + " name must match [A-Za-z0-9._-]+ and not start with '.'", std::string(name));
}

// ---- solver configuration ---------------------------------------------

/// Everything a fit run needs beyond the TD and the trace.
struct PipelineConfig {
  FitConfig fit;
  std::vector<std::string> outputs;  // empty: every modeled state observed in the trace
  std::optional<double> holdout_after;
};

namespace project_detail {

inline std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c); };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(d)) throw Error(ErrorCode::InvalidConfig, "'" + v + "' is not a finite number", key);
  return d;
}

inline int to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d) || std::fabs(d) > 1e9) throw Error(ErrorCode::InvalidConfig, "'" + v + "' is not an integer", key);
  return static_cast<int>(d);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::InvalidConfig, "'" + v + "' is not a boolean", key);
}

inline std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

}  // namespace project_detail

/// Applies one `key = value` setting.
inline void apply_setting(PipelineConfig& c, const std::string& key, const std::string& value) {
  using namespace project_detail;
  if (key == "outputs") c.outputs = to_list(value);
  else if (key == "integrator") {
    if (value == "dopri" || value == "dormand-prince") c.fit.ode.method = OdeMethod::DormandPrince;
    else if (value == "rosenbrock") c.fit.ode.method = OdeMethod::Rosenbrock;
    else throw Error(ErrorCode::InvalidConfig, "integrator must be 'dopri' or 'rosenbrock'", key);
  } else if (key == "rtol") c.fit.ode.rtol = to_double(key, value);
  else if (key == "atol") c.fit.ode.atol = to_double(key, value);
  else if (key == "h_max") c.fit.ode.h_max = to_double(key, value);
  else if (key == "max_steps") c.fit.ode.max_steps = to_int(key, value);
  else if (key == "max_iterations") c.fit.max_iterations = to_int(key, value);
  else if (key == "ftol") c.fit.ftol = to_double(key, value);
  else if (key == "xtol") c.fit.xtol = to_double(key, value);
  else if (key == "fd_rel_step") c.fit.fd_rel_step = to_double(key, value);
  else if (key == "fix_initial_state") c.fit.fix_initial_state = to_bool(key, value);
  else if (key == "evaluate_only") c.fit.evaluate_only = to_bool(key, value);
  else if (key == "holdout_after") c.holdout_after = to_double(key, value);
  else if (key.rfind("weight.", 0) == 0) c.fit.weights[key.substr(7)] = to_double(key, value);
  else throw Error(ErrorCode::InvalidConfig, "unknown setting '" + key + "'", key);
}

/// Parses `key = value` lines; '#' starts a comment.
inline void apply_config_text(PipelineConfig& c, const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  int n = 0;
  while (std::getline(ss, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = project_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "expected key = value", "line " + std::to_string(n));
    apply_setting(c, project_detail::trim(line.substr(0, eq)), project_detail::trim(line.substr(eq + 1)));
  }
  c.fit.validate();
}

/// Same keys as the text form, as a JSON object of scalars or string lists.
inline void apply_config_json(PipelineConfig& c, const nlohmann::json& j) {
  if (j.is_null()) return;
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be an object");
  for (const auto& [k, v] : j.items()) {
    std::string s;
    if (v.is_string()) s = v.get<std::string>();
    else if (v.is_boolean()) s = v.get<bool>() ? "true" : "false";
    else if (v.is_number()) s = format_number(v.get<double>());
    else if (v.is_array()) {
      for (const auto& e : v) {
        if (!e.is_string()) throw Error(ErrorCode::InvalidConfig, "list entries must be strings", k);
        s += (s.empty() ? "" : ",") + e.get<std::string>();
      }
    } else throw Error(ErrorCode::InvalidConfig, "unsupported value", k);
    apply_setting(c, k, s);
  }
  c.fit.validate();
}

// ---- pipelines shared by the CLI and the service ------------------------

struct FitRun {
  FitResult fit;
  std::vector<std::string> outputs;
};

inline std::vector<std::string> default_outputs(const ThingDescription& td, const ObservationSet& obs) {
  const ResolvedModelSet resolved = resolve_models(td);
  std::vector<std::string> out;
  for (const auto& n : obs.names()) {
    const bool modeled = std::any_of(resolved.differential.begin(), resolved.differential.end(), [&](const auto& s) { return s.name == n; }) ||
                         std::any_of(resolved.algebraic.begin(), resolved.algebraic.end(), [&](const auto& s) { return s.name == n; });
    if (modeled) out.push_back(n);
  }
  return out;
}

inline CompiledSystem build_system(const ThingDescription& td, const std::vector<std::string>& outputs) {
  return assemble_system(resolve_models(td), outputs);
}

/// Splits the trace per the TD, fits on [start, holdout_after] and scores the rest.
inline FitRun fit_pipeline(const ThingDescription& td, const Trace& trace, const PipelineConfig& cfg) {
  auto [obs, actions] = split_trace(td, trace);
  FitRun run;
  run.outputs = cfg.outputs.empty() ? default_outputs(td, obs) : cfg.outputs;
  if (run.outputs.empty()) throw Error(ErrorCode::InsufficientCoverage, "the trace observes no modeled state");
  const CompiledSystem sys = build_system(td, run.outputs);
  const ObservationSet observed = obs.select(run.outputs);
  const double inf = std::numeric_limits<double>::infinity();
  const ObservationSet train = cfg.holdout_after ? observed.window(-inf, *cfg.holdout_after) : observed;
  run.fit = fit_parameters(sys, train, actions, cfg.fit);
  run.fit.td_hash = td_hash(td.source);
  if (cfg.holdout_after) {
    const ObservationSet test = observed.window(*cfg.holdout_after, inf, true);
    if (!test.empty()) run.fit.test_mse = heldout_mse(sys, run.fit, actions, test, run.outputs, cfg.fit.ode);
  }
  return run;
}

/// Twin anchored on the fit's forecast at `at` (default: the last training
/// observation), with channel values from the trace it was trained on.
inline TwinState spawn_pipeline(std::string id, std::shared_ptr<const ThingDescription> td, const FitRun& run, const Trace& trace,
                                std::optional<double> at, const OdeOptions& ode = {}) {
  require_safe_name(id, "twin");
  if (!run.fit.td_hash.empty() && run.fit.td_hash != td_hash(td->source))
    throw Error(ErrorCode::StaleFit, "the fit was made against a different version of the TD");
  auto sys = std::make_shared<const CompiledSystem>(build_system(*td, run.outputs));
  const auto actions = split_trace(*td, trace).second;
  TwinAnchor anchor = anchor_from_fit(*sys, run.fit, actions, at.value_or(run.fit.t_end), ode);
  return spawn_twin(std::move(id), std::move(td), std::move(sys), run.fit, std::move(anchor), ode);
}

inline nlohmann::json fit_record(const FitRun& run, const std::string& trace_name, const PipelineConfig& cfg) {
  nlohmann::json j = to_json(run.fit);
  j["trace"] = trace_name;
  j["outputs"] = run.outputs;
  j["integrator"] = cfg.fit.ode.method == OdeMethod::Rosenbrock ? "rosenbrock" : "dopri";
  return j;
}

inline FitRun fit_run_from_json(const nlohmann::json& j) {
  FitRun r;
  r.fit = fit_from_json(j);
  r.outputs = j.value("outputs", std::vector<std::string>{});
  return r;
}

// ---- on-disk project ----------------------------------------------------

/// A directory holding td.json, config.txt (optional solver defaults),
/// traces/, fits/ and twins/<id>/<seq>.json. Traces and fits are never
/// overwritten; each twin change adds a new snapshot file.
class Project {
 public:
  static Project create(const std::filesystem::path& root, const std::string& td_text) {
    parse_td(td_text);
    std::filesystem::create_directories(root);
    if (std::filesystem::exists(root / "td.json")) throw Error(ErrorCode::Conflict, "project already exists", root.string());
    write_file((root / "td.json").string(), td_text);
    return open(root);
  }

  static Project open(const std::filesystem::path& root) {
    Project p;
    p.root_ = root;
    if (!std::filesystem::exists(root / "td.json")) throw Error(ErrorCode::NotFound, "no td.json in project", root.string());
    p.td_ = std::make_shared<const ThingDescription>(parse_td(read_file((root / "td.json").string())));
    p.hash_ = td_hash(p.td_->source);
    for (const char* d : {"traces", "fits", "twins"}) std::filesystem::create_directories(root / d);
    if (std::filesystem::exists(root / "config.txt")) apply_config_text(p.defaults_, read_file((root / "config.txt").string()));
    return p;
  }

  const std::filesystem::path& root() const { return root_; }
  std::string name() const { return root_.filename().string(); }
  const ThingDescription& td() const { return *td_; }
  std::shared_ptr<const ThingDescription> td_ptr() const { return td_; }
  const std::string& hash() const { return hash_; }
  const PipelineConfig& defaults() const { return defaults_; }

  std::vector<std::string> traces() const { return stems("traces"); }
  std::vector<std::string> fits() const { return stems("fits"); }
  std::vector<std::string> twins() const {
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(root_ / "twins"))
      if (e.is_directory()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
  }

  void add_trace(const std::string& name, const Trace& trace) const {
    require_safe_name(name, "trace");
    write_new(root_ / "traces" / (name + ".csv"), trace_to_csv(trace));
  }
  Trace trace(const std::string& name) const {
    require_safe_name(name, "trace");
    const auto path = root_ / "traces" / (name + ".csv");
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::NotFound, "no trace '" + name + "'", name);
    return read_trace(path.string(), TraceFormat::Csv);
  }

  void add_fit(const std::string& name, const nlohmann::json& record) const {
    require_safe_name(name, "fit");
    write_new(root_ / "fits" / (name + ".json"), record.dump(2));
  }
  nlohmann::json fit_json(const std::string& name) const {
    require_safe_name(name, "fit");
    const auto path = root_ / "fits" / (name + ".json");
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::NotFound, "no fit '" + name + "'", name);
    return parse_json(read_file(path.string()), name);
  }
  /// Loads a fit and refuses it when the TD changed since.
  FitRun fit(const std::string& name) const {
    const auto j = fit_json(name);
    FitRun r = fit_run_from_json(j);
    if (r.fit.td_hash != hash_) throw Error(ErrorCode::StaleFit, "fit '" + name + "' was made against a different TD version", name);
    return r;
  }

  /// Next free name of the form prefix-N.
  std::string fresh_fit_name(const std::string& prefix = "fit") const {
    const auto have = fits();
    for (int i = 1;; ++i)
      if (auto n = prefix + "-" + std::to_string(i); std::find(have.begin(), have.end(), n) == have.end()) return n;
  }

  /// Stores a twin snapshot as the next revision; returns the revision number.
  int save_twin(const TwinState& twin, const std::string& fit_name) const {
    require_safe_name(twin.id(), "twin");
    const auto dir = root_ / "twins" / twin.id();
    std::filesystem::create_directories(dir);
    const int rev = latest_revision(dir) + 1;
    nlohmann::json j = {{"twin", twin.snapshot()}, {"fit", fit_name}, {"revision", rev}};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d.json", rev);
    write_new(dir / buf, j.dump(2));
    return rev;
  }

  /// Latest revision of a twin, rebuilt on the system of the fit it came from.
  std::pair<TwinState, std::string> load_twin(const std::string& id) const {
    require_safe_name(id, "twin");
    const auto dir = root_ / "twins" / id;
    const int rev = std::filesystem::exists(dir) ? latest_revision(dir) : 0;
    if (rev == 0) throw Error(ErrorCode::NotFound, "no twin '" + id + "'", id);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d.json", rev);
    const auto j = parse_json(read_file((dir / buf).string()), id);
    const std::string fit_name = j.value("fit", "");
    const FitRun run = fit(fit_name);
    auto sys = std::make_shared<const CompiledSystem>(build_system(*td_, run.outputs));
    return {TwinState::from_snapshot(j.at("twin"), td_, sys, defaults_.fit.ode), fit_name};
  }

 private:
  static nlohmann::json parse_json(const std::string& text, const std::string& where) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::SchemaMismatch, e.what(), where);
    }
  }

  static void write_new(const std::filesystem::path& path, const std::string& content) {
    if (std::filesystem::exists(path)) throw Error(ErrorCode::Conflict, "'" + path.filename().string() + "' already exists", path.string());
    write_file(path.string(), content);
  }

  static int latest_revision(const std::filesystem::path& dir) {
    int best = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      const auto stem = e.path().stem().string();
      if (e.path().extension() == ".json" && !stem.empty() && std::all_of(stem.begin(), stem.end(), ::isdigit))
        best = std::max(best, std::stoi(stem));
    }
    return best;
  }

  std::vector<std::string> stems(const char* sub) const {
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(root_ / sub))
      if (e.is_regular_file()) out.push_back(e.path().stem().string());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::filesystem::path root_;
  std::shared_ptr<const ThingDescription> td_;
  std::string hash_;
  PipelineConfig defaults_;
};

}  // namespace dtwt
