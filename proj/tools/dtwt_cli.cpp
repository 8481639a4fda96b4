#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dtwt/dtwt.hpp"
#include "dtwt/http_server.hpp"

using namespace dtwt;

namespace {

// 1: the input was rejected, 2: the numerics failed on valid input.
int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::StepSizeUnderflow:
    case ErrorCode::IntegrationFailed:
    case ErrorCode::NumericDomain:
    case ErrorCode::NoProgress: return 2;
    default: return 1;
  }
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::JsonSyntax, e.what(), path);
  }
}

void emit(const nlohmann::json& j, const std::string& out) {
  if (out.empty() || out == "-") std::cout << j.dump(2) << "\n";
  else write_file(out, j.dump(2) + "\n");
}

std::shared_ptr<const ThingDescription> load_td(const std::string& path) {
  return std::make_shared<const ThingDescription>(parse_td(read_file(path)));
}

PipelineConfig load_config(const std::string& path, const std::string& integrator) {
  PipelineConfig c;
  if (!path.empty()) apply_config_text(c, read_file(path));
  if (!integrator.empty()) apply_setting(c, "integrator", integrator);
  return c;
}

TwinState load_twin(const std::shared_ptr<const ThingDescription>& td, const std::string& path, const OdeOptions& ode) {
  const auto j = read_json(path);
  auto sys = std::make_shared<const CompiledSystem>(build_system(*td, {}));
  return TwinState::from_snapshot(j.contains("twin") ? j["twin"] : j, td, sys, ode);
}

GeoFence parse_fence(const std::string& text) {
  GeoFence f;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> f.center_x >> c1 >> f.center_y >> c2 >> f.radius) || c1 != ',' || c2 != ',' || !(in >> std::ws).eof())
    throw Error(ErrorCode::InvalidConfig, "fence must be cx,cy,r", "--fence");
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Digital twin synthesis from Thing Descriptions"};
  app.require_subcommand(1);

  std::string td_path, trace_path, out, config_path, integrator, fit_path, twin_path, actions_path, truth_path, fence, id, kind, root;
  std::string project_dir, trace_name, fit_name;
  std::optional<double> holdout, spawn_at, at;
  double lookahead = 0.0, tla = 0.0, dthr = 0.0, step = 0.5;
  std::optional<double> from, to;
  int port = 0;
  std::string truth_out;

  auto* parse = app.add_subcommand("parse", "validate a TD and print its resolved model");
  parse->add_option("td", td_path)->required();

  auto* simulate = app.add_subcommand("simulate", "run a ground-truth simulator and write its trace");
  simulate->add_option("kind", kind, "room or drone")->required()->check(CLI::IsMember({"room", "drone"}));
  simulate->add_option("--config", config_path, "JSON scenario");
  simulate->add_option("--out", out, "trace CSV")->required();
  simulate->add_option("--truth", truth_out, "noise-free state CSV");

  auto* fit = app.add_subcommand("fit", "fit a TD's parameters to a trace");
  fit->add_option("td", td_path);
  fit->add_option("trace", trace_path);
  fit->add_option("--config", config_path, "key = value solver settings");
  fit->add_option("--integrator", integrator)->check(CLI::IsMember({"dopri", "rosenbrock"}));
  fit->add_option("--holdout-after", holdout, "train on t <= T, score on t > T");
  fit->add_option("--spawn-at", spawn_at, "also spawn a twin anchored at T");
  fit->add_option("--twin-id", id, "id of the spawned twin")->default_val("twin");
  fit->add_option("--twin-out", twin_path, "where to write the spawned twin");
  fit->add_option("--out", out, "fit JSON (default stdout)");
  fit->add_option("--project", project_dir, "fit a trace stored in a project instead of files");
  fit->add_option("--trace-name", trace_name);
  fit->add_option("--name", fit_name, "fit name inside the project");

  auto* spawn = app.add_subcommand("spawn", "spawn a twin from a stored fit");
  spawn->add_option("td", td_path)->required();
  spawn->add_option("trace", trace_path, "trace the fit was trained on")->required();
  spawn->add_option("fit", fit_path)->required();
  spawn->add_option("--id", id)->default_val("twin");
  spawn->add_option("--at", at, "anchor time (default: end of training)");
  spawn->add_option("--integrator", integrator)->check(CLI::IsMember({"dopri", "rosenbrock"}));
  spawn->add_option("--out", out, "twin JSON (default stdout)");

  auto* whatif = app.add_subcommand("whatif", "evaluate actions on a twin without changing it");
  whatif->add_option("td", td_path)->required();
  whatif->add_option("twin", twin_path)->required();
  whatif->add_option("--actions", actions_path, "JSON schedule")->required();
  whatif->add_option("--lookahead", lookahead)->required();
  whatif->add_option("--fence", fence, "cx,cy,r");
  whatif->add_option("--integrator", integrator)->check(CLI::IsMember({"dopri", "rosenbrock"}));
  whatif->add_option("--out", out);

  auto* precision = app.add_subcommand("precision", "geo-fence precision of a twin against a reference trajectory");
  precision->add_option("td", td_path)->required();
  precision->add_option("twin", twin_path)->required();
  precision->add_option("--truth", truth_path, "trajectory CSV")->required();
  precision->add_option("--actions", actions_path, "JSON schedule applied before evaluation");
  precision->add_option("--tla", tla)->required();
  precision->add_option("--dthr", dthr)->required();
  precision->add_option("--step", step, "sample spacing")->default_val(0.5);
  precision->add_option("--from", from);
  precision->add_option("--to", to);

  auto* serve = app.add_subcommand("serve", "serve every project under a root directory over HTTP");
  serve->add_option("--root", root)->required();
  serve->add_option("--port", port, "default: DTWT_PORT, else 8080");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*parse) {
      const auto td = parse_td(read_file(td_path));
      const auto diags = validate_td(td);
      for (const auto& d : diags)
        std::cerr << (d.severity == Severity::Error ? "error " : "warning ") << to_string(d.code) << " at " << d.path << ": " << d.message << "\n";
      if (has_errors(diags)) return 1;
      std::cout << resolve_models(td).listing();
      return 0;
    }

    if (*simulate) {
      const nlohmann::json cfg = config_path.empty() ? nlohmann::json::object() : read_json(config_path);
      SimulationResult res;
      if (kind == "room") {
        const auto s = room_scenario_from_json(cfg);
        res = simulate_room(s.config, s.heater, s.cooler);
      } else {
        const auto s = drone_scenario_from_json(cfg);
        res = simulate_drone(s.config, s.joystick);
      }
      write_file(out, trace_to_csv(res.trace));
      if (!truth_out.empty()) write_file(truth_out, trajectory_to_csv(res.truth));
      return 0;
    }

    if (*fit) {
      if (!project_dir.empty()) {
        // Same path as POST /things/{id}/fit.
        if (trace_name.empty()) throw Error(ErrorCode::InvalidConfig, "--trace-name is required with --project");
        Service svc(std::filesystem::path(project_dir).parent_path().empty() ? "." : std::filesystem::path(project_dir).parent_path());
        nlohmann::json body = {{"trace", trace_name}};
        if (!fit_name.empty()) body["name"] = fit_name;
        if (holdout) body["holdoutAfter"] = *holdout;
        if (!integrator.empty()) body["config"] = {{"integrator", integrator}};
        const auto r = svc.handle("POST", "/things/" + std::filesystem::path(project_dir).filename().string() + "/fit", {}, body.dump());
        emit(r.body, out);
        if (r.status == 200) return 0;
        return r.status == 422 && r.body.value("error", "") != "SchemaMismatch" ? 2 : 1;
      }
      if (td_path.empty() || trace_path.empty()) throw Error(ErrorCode::InvalidConfig, "fit needs <td> <trace> or --project");
      PipelineConfig cfg = load_config(config_path, integrator);
      if (holdout) cfg.holdout_after = holdout;
      const auto td = load_td(td_path);
      const Trace trace = read_trace(trace_path);
      const FitRun run = fit_pipeline(*td, trace, cfg);
      emit(fit_record(run, trace_path, cfg), out);
      if (run.fit.test_mse) std::cerr << "test MSE " << format_number(*run.fit.test_mse) << "\n";
      if (spawn_at) {
        const TwinState tw = spawn_pipeline(id, td, run, trace, spawn_at, cfg.fit.ode);
        if (twin_path.empty()) std::cerr << tw.snapshot().dump(2) << "\n";
        else write_file(twin_path, tw.snapshot().dump(2) + "\n");
      }
      return 0;
    }

    if (*spawn) {
      const PipelineConfig cfg = load_config("", integrator);
      const auto td = load_td(td_path);
      const FitRun run = fit_run_from_json(read_json(fit_path));
      const TwinState tw = spawn_pipeline(id, td, run, read_trace(trace_path), at, cfg.fit.ode);
      emit(tw.snapshot(), out);
      return 0;
    }

    if (*whatif) {
      const PipelineConfig cfg = load_config("", integrator);
      const auto td = load_td(td_path);
      const TwinState tw = load_twin(td, twin_path, cfg.fit.ode);
      const ActionSchedule actions = ActionSchedule::from_json(read_json(actions_path));
      std::optional<GeoFence> f;
      if (!fence.empty()) f = parse_fence(fence);
      emit(to_json(tw.what_if(actions, lookahead, f)), out);
      return 0;
    }

    if (*precision) {
      const auto td = load_td(td_path);
      TwinState tw = load_twin(td, twin_path, {});
      if (!actions_path.empty()) {
        const ActionSchedule extra = ActionSchedule::from_json(read_json(actions_path));
        for (const auto& [name, s] : extra.channels())
          for (const auto& [t, v] : s) tw.write_property(name, v, std::max(t, tw.virtual_time()));
      }
      const Trajectory truth = trajectory_from_csv(read_file(truth_path));
      if (truth.times.empty()) throw Error(ErrorCode::InsufficientCoverage, "empty truth trajectory");
      const double t0 = from.value_or(std::max(truth.times.front(), tw.anchor_time()));
      const double t1 = to.value_or(truth.times.back() - tla);
      if (!(step > 0.0)) throw Error(ErrorCode::InvalidConfig, "--step must be positive");
      std::vector<double> samples;
      for (long k = 0; t0 + static_cast<double>(k) * step <= t1; ++k) samples.push_back(t0 + static_cast<double>(k) * step);
      std::cout << to_json(evaluate_precision(truth, tw, samples, tla, dthr)).dump(2) << "\n";
      return 0;
    }

    if (*serve) {
      Service svc(root);
      httplib::Server server;
      mount(server, svc);
      const int p = port > 0 ? port : port_from_env();
      std::cerr << "listening on port " << p << "\n";
      if (!server.listen("0.0.0.0", p)) throw Error(ErrorCode::Io, "cannot listen on port " + std::to_string(p));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
