#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtwt/error.hpp"
#include "dtwt/project.hpp"
#include "dtwt/twin.hpp"

namespace dtwt {

struct Response {
  int status = 200;
  nlohmann::json body;
};

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::NotFound:
    case ErrorCode::UnknownProperty: return 404;
    case ErrorCode::Conflict:
    case ErrorCode::StaleFit:
    case ErrorCode::SystemMismatch: return 409;
    case ErrorCode::JsonSyntax:
    case ErrorCode::InvalidConfig:
    case ErrorCode::ReadOnlyProperty:
    case ErrorCode::TimeInPast:
    case ErrorCode::TimeBeforeAnchor:
    case ErrorCode::InvalidActions:
    case ErrorCode::UnknownState:
    case ErrorCode::UnknownChannel:
    case ErrorCode::UnknownOutput:
    case ErrorCode::Io: return 400;
    default: return 422;
  }
}

inline Response error_response(const Error& e) {
  return {http_status(e.code()), {{"error", std::string(to_string(e.code()))}, {"message", e.detail()}, {"where", e.where()}}};
}

/// The HTTP surface as a plain function of (method, path, query, body).
/// Each subdirectory of the service root holding a td.json is one thing.
class Service {
 public:
  using Query = std::map<std::string, std::string>;

  explicit Service(std::filesystem::path root) : root_(std::move(root)) {
    if (!std::filesystem::is_directory(root_)) throw Error(ErrorCode::NotFound, "service root is not a directory", root_.string());
    for (const auto& e : std::filesystem::directory_iterator(root_)) {
      if (!e.is_directory() || !std::filesystem::exists(e.path() / "td.json")) continue;
      Project p = Project::open(e.path());
      const std::string id = p.name();
      for (const auto& tid : p.twins()) {
        try {
          auto [tw, fit] = p.load_twin(tid);
          twins_[tid] = std::make_shared<TwinEntry>(std::move(tw), id, fit);
        } catch (const Error&) {
          // a twin of a stale fit stays on disk but is not served
        }
      }
      things_.emplace(id, std::make_shared<Project>(std::move(p)));
    }
  }

  ~Service() {
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Response handle(const std::string& method, const std::string& path, const Query& query = {}, const std::string& body = {}) {
    try {
      return route(method, split_path(path), query, body);
    } catch (const Error& e) {
      return error_response(e);
    } catch (const nlohmann::json::exception& e) {
      return {400, {{"error", "JsonSyntax"}, {"message", e.what()}, {"where", ""}}};
    } catch (const std::filesystem::filesystem_error& e) {
      return {400, {{"error", "Io"}, {"message", e.what()}, {"where", ""}}};
    }
  }

 private:
  struct TwinEntry {
    TwinEntry(TwinState t, std::string th, std::string f) : twin(std::move(t)), thing(std::move(th)), fit(std::move(f)) {}
    std::mutex mu;
    TwinState twin;
    std::string thing;
    std::string fit;
  };
  struct Job {
    std::string status = "running";
    Response result;
  };
  struct Recorded {
    double t;
    double value;
    std::string source;
  };

  static std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : path.substr(0, path.find('?'))) {
      if (c == '/') {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  static nlohmann::json parse_body(const std::string& body) {
    if (body.empty()) return nlohmann::json::object();
    try {
      return nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::JsonSyntax, e.what(), "body");
    }
  }

  static double number_field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number()) throw Error(ErrorCode::InvalidConfig, std::string("'") + key + "' must be a number", key);
    return j[key].get<double>();
  }
  static std::optional<double> optional_number(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return number_field(j, key);
  }
  static std::optional<double> query_number(const Query& q, const std::string& key) {
    auto it = q.find(key);
    if (it == q.end() || it->second.empty()) return std::nullopt;
    return project_detail::to_double(key, it->second);
  }

  static Response method_not_allowed(const std::string& m) {
    return {405, {{"error", "MethodNotAllowed"}, {"message", m + " is not supported here"}, {"where", ""}}};
  }

  std::shared_ptr<Project> thing(const std::string& id) const {
    std::shared_lock lk(mu_);
    auto it = things_.find(id);
    if (it == things_.end()) throw Error(ErrorCode::NotFound, "no thing '" + id + "'", id);
    return it->second;
  }
  std::shared_ptr<TwinEntry> twin(const std::string& id) const {
    std::shared_lock lk(mu_);
    auto it = twins_.find(id);
    if (it == twins_.end()) throw Error(ErrorCode::NotFound, "no twin '" + id + "'", id);
    return it->second;
  }

  Response route(const std::string& m, const std::vector<std::string>& seg, const Query& q, const std::string& body) {
    const auto n = seg.size();
    if (n == 0) return {200, {{"service", "dtwt"}, {"routes", {"/things", "/twins", "/jobs/{id}"}}}};
    if (seg[0] == "things") {
      if (n == 1) return m == "GET" ? list_things() : method_not_allowed(m);
      auto p = thing(seg[1]);
      if (n == 2) return m == "GET" ? Response{200, nlohmann::json::parse(p->td().source)} : method_not_allowed(m);
      if (n == 4 && seg[2] == "properties") {
        if (m == "GET") return thing_property_get(*p, seg[3]);
        if (m == "PUT") return thing_property_put(*p, seg[3], parse_body(body));
        return method_not_allowed(m);
      }
      if (n == 3 && seg[2] == "traces") {
        if (m == "GET") return {200, p->traces()};
        if (m == "POST") return add_trace(*p, parse_body(body));
        return method_not_allowed(m);
      }
      if (n == 4 && seg[2] == "traces") return m == "GET" ? Response{200, trace_to_json(p->trace(seg[3]))} : method_not_allowed(m);
      if (n == 3 && seg[2] == "fits") return m == "GET" ? Response{200, p->fits()} : method_not_allowed(m);
      if (n == 4 && seg[2] == "fits") return m == "GET" ? Response{200, p->fit_json(seg[3])} : method_not_allowed(m);
      if (n == 3 && seg[2] == "fit") return m == "POST" ? start_fit(p, parse_body(body)) : method_not_allowed(m);
      if (n == 3 && seg[2] == "spawn") return m == "POST" ? spawn(p, parse_body(body)) : method_not_allowed(m);
    } else if (seg[0] == "twins") {
      if (n == 1) return m == "GET" ? list_twins() : method_not_allowed(m);
      auto e = twin(seg[1]);
      std::lock_guard lk(e->mu);
      if (n == 2) return m == "GET" ? Response{200, e->twin.snapshot()} : method_not_allowed(m);
      if (n == 4 && seg[2] == "properties") {
        if (m == "GET") {
          const double t = query_number(q, "t").value_or(e->twin.virtual_time());
          return {200, {{"value", e->twin.read_property(seg[3], t)}, {"t", t}}};
        }
        if (m == "PUT") {
          const auto j = parse_body(body);
          const double v = number_field(j, "value");
          const double t = optional_number(j, "t").value_or(query_number(q, "t").value_or(e->twin.virtual_time()));
          e->twin.write_property(seg[3], v, t);
          persist(*e);
          return {200, {{"value", v}, {"t", t}}};
        }
        return method_not_allowed(m);
      }
      if (n == 3 && seg[2] == "time") {
        if (m == "GET") return {200, {{"t", e->twin.virtual_time()}}};
        if (m != "PUT") return method_not_allowed(m);
        e->twin.set_time(number_field(parse_body(body), "t"));
        persist(*e);
        return {200, {{"t", e->twin.virtual_time()}}};
      }
      if (n == 3 && seg[2] == "resync") return m == "POST" ? resync(*e, parse_body(body)) : method_not_allowed(m);
      if (n == 3 && seg[2] == "whatif") return m == "POST" ? what_if(*e, parse_body(body)) : method_not_allowed(m);
      if (n == 3 && seg[2] == "trajectory") return m == "GET" ? trajectory(*e, q) : method_not_allowed(m);
    } else if (seg[0] == "jobs" && n == 2) {
      if (m != "GET") return method_not_allowed(m);
      std::lock_guard lk(jobs_mu_);
      auto it = jobs_.find(seg[1]);
      if (it == jobs_.end()) throw Error(ErrorCode::NotFound, "no job '" + seg[1] + "'", seg[1]);
      nlohmann::json j = {{"job", seg[1]}, {"status", it->second->status}};
      if (it->second->status != "running") j["result"] = it->second->result.body, j["httpStatus"] = it->second->result.status;
      return {200, j};
    }
    throw Error(ErrorCode::NotFound, "no route for " + m, "/" + [&] {
      std::string s;
      for (const auto& x : seg) s += (s.empty() ? "" : "/") + x;
      return s;
    }());
  }

  Response list_things() const {
    std::shared_lock lk(mu_);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [id, p] : things_)
      out.push_back({{"id", id}, {"title", p->td().title}, {"tdHash", p->hash()}, {"traces", p->traces()}, {"fits", p->fits()}});
    return {200, out};
  }

  Response list_twins() const {
    std::map<std::string, std::shared_ptr<TwinEntry>> all;
    {
      std::shared_lock lk(mu_);
      all = twins_;
    }
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [id, e] : all) {
      std::lock_guard tl(e->mu);
      out.push_back({{"id", id}, {"thing", e->thing}, {"fit", e->fit}, {"virtualTime", e->twin.virtual_time()}});
    }
    return {200, out};
  }

  // Thing properties: the value from a PUT, else the last recorded value in
  // the newest trace holding that column.
  Response thing_property_get(const Project& p, const std::string& name) {
    if (!p.td().property(name)) throw Error(ErrorCode::UnknownProperty, "no property '" + name + "'", name);
    {
      std::lock_guard lk(props_mu_);
      auto it = props_[p.name()].find(name);
      if (it != props_[p.name()].end()) return {200, {{"value", it->second.value}, {"t", it->second.t}, {"source", it->second.source}}};
    }
    auto names = p.traces();
    for (auto it = names.rbegin(); it != names.rend(); ++it) {
      const Trace tr = p.trace(*it);
      const int c = tr.column(name);
      if (c < 0) continue;
      for (std::size_t k = tr.times.size(); k-- > 0;)
        if (!std::isnan(tr.rows[k][static_cast<std::size_t>(c)]))
          return {200, {{"value", tr.rows[k][static_cast<std::size_t>(c)]}, {"t", tr.times[k]}, {"source", "trace:" + *it}}};
    }
    throw Error(ErrorCode::NotFound, "no recorded value of '" + name + "'", name);
  }

  Response thing_property_put(const Project& p, const std::string& name, const nlohmann::json& j) {
    const PropertySpec* spec = p.td().property(name);
    if (!spec) throw Error(ErrorCode::UnknownProperty, "no property '" + name + "'", name);
    if (!spec->writable()) throw Error(ErrorCode::ReadOnlyProperty, "property '" + name + "' is read-only", name);
    const double v = number_field(j, "value");
    const double t = optional_number(j, "t").value_or(0.0);
    std::lock_guard lk(props_mu_);
    props_[p.name()][name] = {t, v, "command"};
    return {200, {{"value", v}, {"t", t}}};
  }

  Response add_trace(const Project& p, const nlohmann::json& j) {
    if (!j.contains("name") || !j["name"].is_string()) throw Error(ErrorCode::InvalidConfig, "'name' must be a string", "name");
    Trace tr;
    if (j.contains("csv") && j["csv"].is_string()) tr = trace_from_csv(j["csv"].get<std::string>());
    else if (j.contains("trace")) tr = trace_from_json(j["trace"]);
    else throw Error(ErrorCode::InvalidConfig, "give the trace as 'csv' text or a 'trace' object");
    split_trace(p.td(), tr);  // rejects columns the TD does not know
    p.add_trace(j["name"].get<std::string>(), tr);
    return {201, {{"name", j["name"]}, {"rows", tr.times.size()}, {"columns", tr.columns}}};
  }

  Response run_fit(const std::shared_ptr<Project>& p, const nlohmann::json& j) {
    try {
      if (!j.contains("trace") || !j["trace"].is_string()) throw Error(ErrorCode::InvalidConfig, "'trace' must name a trace", "trace");
      PipelineConfig cfg = p->defaults();
      apply_config_json(cfg, j.value("config", nlohmann::json()));
      if (auto h = optional_number(j, "holdoutAfter")) cfg.holdout_after = h;
      const std::string trace_name = j["trace"].get<std::string>();
      const Trace trace = p->trace(trace_name);
      std::string name;
      {
        std::lock_guard lk(fit_names_mu_);
        name = j.contains("name") ? j["name"].get<std::string>() : p->fresh_fit_name();
        require_safe_name(name, "fit");
        if (auto f = p->fits(); std::find(f.begin(), f.end(), name) != f.end())
          throw Error(ErrorCode::Conflict, "fit '" + name + "' already exists", name);
      }
      const FitRun run = fit_pipeline(p->td(), trace, cfg);
      nlohmann::json rec = fit_record(run, trace_name, cfg);
      p->add_fit(name, rec);
      rec["name"] = name;
      return {200, rec};
    } catch (const Error& e) {
      return error_response(e);
    } catch (const nlohmann::json::exception& e) {
      return {400, {{"error", "JsonSyntax"}, {"message", e.what()}, {"where", ""}}};
    }
  }

  Response start_fit(const std::shared_ptr<Project>& p, const nlohmann::json& j) {
    if (!j.value("async", false)) return run_fit(p, j);
    const std::string id = "job-" + std::to_string(++job_counter_);
    auto job = std::make_shared<Job>();
    {
      std::lock_guard lk(jobs_mu_);
      jobs_[id] = job;
      workers_.emplace_back([this, p, j, job] {
        Response r = run_fit(p, j);
        std::lock_guard lk2(jobs_mu_);
        job->result = std::move(r);
        job->status = job->result.status == 200 ? "done" : "failed";
      });
    }
    return {202, {{"job", id}, {"status", "running"}}};
  }

  Response spawn(const std::shared_ptr<Project>& p, const nlohmann::json& j) {
    if (!j.contains("fit") || !j["fit"].is_string()) throw Error(ErrorCode::InvalidConfig, "'fit' must name a fit", "fit");
    if (!j.contains("twin") || !j["twin"].is_string()) throw Error(ErrorCode::InvalidConfig, "'twin' must be an id", "twin");
    const std::string fit_name = j["fit"].get<std::string>(), id = j["twin"].get<std::string>();
    const nlohmann::json rec = p->fit_json(fit_name);
    const FitRun run = p->fit(fit_name);
    const Trace trace = p->trace(rec.value("trace", ""));
    TwinState tw = spawn_pipeline(id, p->td_ptr(), run, trace, optional_number(j, "at"), p->defaults().fit.ode);
    std::unique_lock lk(mu_);
    if (twins_.count(id)) throw Error(ErrorCode::Conflict, "twin '" + id + "' already exists", id);
    p->save_twin(tw, fit_name);
    nlohmann::json snap = tw.snapshot();
    twins_[id] = std::make_shared<TwinEntry>(std::move(tw), p->name(), fit_name);
    return {201, snap};
  }

  Response resync(TwinEntry& e, const nlohmann::json& j) {
    std::map<std::string, double> snap;
    if (j.contains("state")) {
      if (!j["state"].is_object()) throw Error(ErrorCode::InvalidConfig, "'state' must be an object", "state");
      for (const auto& [k, v] : j["state"].items()) {
        if (!v.is_number()) throw Error(ErrorCode::InvalidConfig, "state values must be numbers", k);
        snap[k] = v.get<double>();
      }
    }
    e.twin.resync(number_field(j, "t"), snap, j.value("clearActions", false));
    persist(e);
    return {200, e.twin.snapshot()};
  }

  static Response what_if(const TwinEntry& e, const nlohmann::json& j) {
    const ActionSchedule actions = ActionSchedule::from_json(j.value("actions", nlohmann::json::object()));
    std::optional<GeoFence> fence;
    if (j.contains("fence") && !j["fence"].is_null()) {
      const auto& f = j["fence"];
      GeoFence g;
      g.center_x = number_field(f, "cx");
      g.center_y = number_field(f, "cy");
      g.radius = number_field(f, "radius");
      g.x_state = f.value("xState", g.x_state);
      g.y_state = f.value("yState", g.y_state);
      fence = g;
    }
    const int samples = j.value("samples", 100);
    return {200, to_json(e.twin.what_if(actions, number_field(j, "lookahead"), fence, samples))};
  }

  static Response trajectory(TwinEntry& e, const Query& q) {
    const double from = query_number(q, "from").value_or(e.twin.virtual_time());
    const auto to = query_number(q, "to");
    if (!to) throw Error(ErrorCode::InvalidConfig, "'to' is required", "to");
    if (!(*to >= from)) throw Error(ErrorCode::InvalidConfig, "'to' must not precede 'from'", "to");
    const double step = query_number(q, "step").value_or((*to - from) / 100.0);
    if (*to > from && !(step > 0.0)) throw Error(ErrorCode::InvalidConfig, "'step' must be positive", "step");
    if (*to > from && (*to - from) / step > 100000) throw Error(ErrorCode::InvalidConfig, "more than 100000 samples requested", "step");
    std::vector<double> ts;
    for (long k = 0;; ++k) {
      const double t = from + static_cast<double>(k) * step;
      if (t >= *to || step <= 0.0) break;
      ts.push_back(t);
    }
    ts.push_back(*to);
    Trajectory tr;
    tr.names = e.twin.system().state_names();
    tr.nx = e.twin.system().nx();
    tr.times = ts;
    tr.values.resize(static_cast<Eigen::Index>(ts.size()), static_cast<Eigen::Index>(tr.names.size()));
    for (std::size_t k = 0; k < ts.size(); ++k) tr.values.row(static_cast<Eigen::Index>(k)) = e.twin.state_at(ts[k]).transpose();
    return {200, trajectory_to_json(tr)};
  }

  void persist(const TwinEntry& e) const { thing(e.thing)->save_twin(e.twin, e.fit); }

  std::filesystem::path root_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Project>> things_;
  std::map<std::string, std::shared_ptr<TwinEntry>> twins_;
  std::mutex props_mu_;
  std::map<std::string, std::map<std::string, Recorded>> props_;
  std::mutex jobs_mu_, fit_names_mu_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::vector<std::thread> workers_;
  std::atomic<int> job_counter_{0};
};

}  // namespace dtwt
