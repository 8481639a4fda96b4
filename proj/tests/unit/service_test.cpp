#include <chrono>
#include <thread>

#include "common.hpp"
#include "dtwt/http_server.hpp"

using namespace dtwt;
using namespace dtwt::testing;
using nlohmann::json;

namespace {

/// A service root holding one tank project with one trace.
struct Root {
  std::filesystem::path dir = scratch("svc");
  Root() {
    Project p = Project::create(dir / "tank", kTankTd);
    p.add_trace("run1", Tank().trace(12));
  }
  ~Root() { std::filesystem::remove_all(dir); }
};

}  // namespace

TEST(Config, TextAndJson) {
  PipelineConfig c;
  apply_config_text(c, "# solver\nintegrator = rosenbrock\nrtol = 1e-7\nmax_iterations = 12\nfix_initial_state = true\nweight.level = 2\noutputs = level\n");
  EXPECT_EQ(c.fit.ode.method, OdeMethod::Rosenbrock);
  EXPECT_EQ(c.fit.ode.rtol, 1e-7);
  EXPECT_EQ(c.fit.max_iterations, 12);
  EXPECT_TRUE(c.fit.fix_initial_state);
  EXPECT_EQ(c.fit.weights.at("level"), 2);
  EXPECT_EQ(c.outputs, std::vector<std::string>{"level"});
  EXPECT_EQ(code_of([&] { apply_setting(c, "bogus", "1"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([&] { apply_setting(c, "rtol", "abc"); }), ErrorCode::InvalidConfig);
  apply_config_json(c, json::parse(R"({"integrator": "dopri", "holdout_after": 5})"));
  EXPECT_EQ(c.fit.ode.method, OdeMethod::DormandPrince);
  EXPECT_EQ(*c.holdout_after, 5);
}

TEST(Project, LayoutAndStaleFit) {
  Root r;
  Project p = Project::open(r.dir / "tank");
  EXPECT_EQ(p.traces(), std::vector<std::string>{"run1"});
  EXPECT_EQ(code_of([&] { p.add_trace("run1", Tank().trace(2)); }), ErrorCode::Conflict);
  EXPECT_EQ(code_of([&] { p.add_trace("../x", Tank().trace(2)); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([&] { Project::create(r.dir / "tank", kTankTd); }), ErrorCode::Conflict);

  PipelineConfig cfg;
  const FitRun run = fit_pipeline(p.td(), p.trace("run1"), cfg);
  EXPECT_EQ(run.fit.td_hash, p.hash());
  p.add_fit("f1", fit_record(run, "run1", cfg));
  EXPECT_EQ(p.fit("f1").fit.params, run.fit.params);

  // editing the TD invalidates the fit
  std::string td = kTankTd;
  td.replace(td.find("params[1] = 0.5"), 15, "params[1] = 0.6");
  write_file((r.dir / "tank" / "td.json").string(), td);
  EXPECT_EQ(code_of([&] { Project::open(r.dir / "tank").fit("f1"); }), ErrorCode::StaleFit);
}

TEST(Project, TwinRevisions) {
  Root r;
  Project p = Project::open(r.dir / "tank");
  PipelineConfig cfg;
  const FitRun run = fit_pipeline(p.td(), p.trace("run1"), cfg);
  p.add_fit("f1", fit_record(run, "run1", cfg));
  TwinState tw = spawn_pipeline("tw", p.td_ptr(), run, p.trace("run1"), std::nullopt);
  EXPECT_EQ(p.save_twin(tw, "f1"), 1);
  tw.write_property("inflow", 3, tw.virtual_time() + 1);
  EXPECT_EQ(p.save_twin(tw, "f1"), 2);
  auto [back, fit] = p.load_twin("tw");
  EXPECT_EQ(fit, "f1");
  EXPECT_EQ(back.snapshot(), tw.snapshot());
}

TEST(Service, ThingRoutes) {
  Root r;
  Service s(r.dir);
  auto res = s.handle("GET", "/things");
  ASSERT_EQ(res.status, 200);
  EXPECT_EQ(res.body[0]["id"], "tank");
  EXPECT_EQ(s.handle("GET", "/things/tank").body["title"], "tank");
  EXPECT_EQ(s.handle("GET", "/things/nope").status, 404);
  EXPECT_EQ(s.handle("GET", "/things/tank/properties/ghost").status, 404);
  EXPECT_EQ(s.handle("PUT", "/things/tank/properties/level", {}, R"({"value": 1})").status, 400);
  EXPECT_EQ(s.handle("PUT", "/things/tank/properties/inflow", {}, R"({"value": 2.5, "t": 3})").status, 200);
  EXPECT_EQ(s.handle("GET", "/things/tank/properties/inflow").body["value"], 2.5);
  const auto lvl = s.handle("GET", "/things/tank/properties/level");
  EXPECT_EQ(lvl.body["t"], 12.0);
  EXPECT_EQ(lvl.body["source"], "trace:run1");
  EXPECT_EQ(s.handle("DELETE", "/things").status, 405);
  EXPECT_EQ(s.handle("PUT", "/things/tank/properties/inflow", {}, "{not json").status, 400);
}

TEST(Service, TraceRoutes) {
  Root r;
  Service s(r.dir);
  EXPECT_EQ(s.handle("POST", "/things/tank/traces", {}, json{{"name", "run2"}, {"csv", "t,level,inflow\n0,1,0\n1,0.8,0\n"}}.dump()).status, 201);
  EXPECT_EQ(s.handle("POST", "/things/tank/traces", {}, json{{"name", "run2"}, {"csv", "t,level\n0,1\n"}}.dump()).status, 409);
  EXPECT_EQ(s.handle("POST", "/things/tank/traces", {}, json{{"name", "run3"}, {"csv", "t,depth\n0,1\n"}}.dump()).status, 422);
  EXPECT_EQ(s.handle("GET", "/things/tank/traces").body, json::array({"run1", "run2"}));
  EXPECT_EQ(s.handle("GET", "/things/tank/traces/run2").body.size(), 2u);
}

TEST(Service, FitMatchesLibrary) {
  Root r;
  Service s(r.dir);
  const auto res = s.handle("POST", "/things/tank/fit", {}, R"({"trace": "run1", "name": "f1", "holdoutAfter": 8})");
  ASSERT_EQ(res.status, 200) << res.body.dump();
  PipelineConfig cfg;
  cfg.holdout_after = 8;
  const Project p = Project::open(r.dir / "tank");
  const FitRun lib = fit_pipeline(p.td(), p.trace("run1"), cfg);
  EXPECT_EQ(res.body, [&] {
    json j = fit_record(lib, "run1", cfg);
    j["name"] = "f1";
    return j;
  }());
  EXPECT_EQ(s.handle("POST", "/things/tank/fit", {}, R"({"trace": "run1", "name": "f1"})").status, 409);
  EXPECT_EQ(s.handle("POST", "/things/tank/fit", {}, R"({"trace": "nope"})").status, 404);
  EXPECT_EQ(s.handle("POST", "/things/tank/fit", {}, R"({"trace": "run1", "config": {"rtol": -1}})").status, 400);
  EXPECT_EQ(s.handle("GET", "/things/tank/fits").body, json::array({"f1"}));
}

TEST(Service, AsyncFitJob) {
  Root r;
  Service s(r.dir);
  const auto res = s.handle("POST", "/things/tank/fit", {}, R"({"trace": "run1", "async": true})");
  ASSERT_EQ(res.status, 202);
  const std::string job = res.body["job"];
  json st;
  for (int i = 0; i < 600; ++i) {
    st = s.handle("GET", "/jobs/" + job).body;
    if (st["status"] != "running") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  EXPECT_EQ(st["status"], "done");
  EXPECT_EQ(st["httpStatus"], 200);
  EXPECT_EQ(s.handle("GET", "/jobs/none").status, 404);
}

TEST(Service, TwinRoutes) {
  Root r;
  Service s(r.dir);
  ASSERT_EQ(s.handle("POST", "/things/tank/fit", {}, R"({"trace": "run1", "name": "f1"})").status, 200);
  auto sp = s.handle("POST", "/things/tank/spawn", {}, R"({"fit": "f1", "twin": "tw"})");
  ASSERT_EQ(sp.status, 201) << sp.body.dump();
  EXPECT_EQ(sp.body["anchor"]["t"], 12.0);
  EXPECT_EQ(s.handle("POST", "/things/tank/spawn", {}, R"({"fit": "f1", "twin": "tw"})").status, 409);
  EXPECT_EQ(s.handle("POST", "/things/tank/spawn", {}, R"({"fit": "zz", "twin": "tw2"})").status, 404);

  // GET with ?t= agrees with the library twin
  Project p = Project::open(r.dir / "tank");
  TwinState lib = spawn_pipeline("tw", p.td_ptr(), p.fit("f1"), p.trace("run1"), std::nullopt);
  EXPECT_EQ(s.handle("GET", "/twins/tw/properties/level", {{"t", "14"}}).body["value"], lib.read_property("level", 14.0));
  EXPECT_EQ(s.handle("PUT", "/twins/tw/properties/level", {}, R"({"value": 1})").status, 400);
  EXPECT_EQ(s.handle("PUT", "/twins/tw/properties/inflow", {}, R"({"value": 0, "t": 1})").status, 400);
  EXPECT_EQ(s.handle("GET", "/twins/tw/properties/ghost").status, 404);
  EXPECT_EQ(s.handle("PUT", "/twins/tw/properties/inflow", {}, R"({"value": 0, "t": 13})").status, 200);
  lib.write_property("inflow", 0, 13);
  EXPECT_EQ(s.handle("GET", "/twins/tw/properties/level", {{"t", "15"}}).body["value"], lib.read_property("level", 15.0));

  EXPECT_EQ(s.handle("PUT", "/twins/tw/time", {}, R"({"t": 13.5})").body["t"], 13.5);
  EXPECT_EQ(s.handle("PUT", "/twins/tw/time", {}, R"({"t": 2})").status, 400);
  const auto w = s.handle("POST", "/twins/tw/whatif", {}, R"({"actions": {"inflow": [[14, 2]]}, "lookahead": 2, "samples": 4})");
  ASSERT_EQ(w.status, 200) << w.body.dump();
  EXPECT_EQ(s.handle("GET", "/twins/tw/time").body["t"], 13.5);
  EXPECT_EQ(s.handle("POST", "/twins/tw/whatif", {}, R"({"actions": {"inflow": [[99, 2]]}, "lookahead": 2})").status, 400);
  const auto tr = s.handle("GET", "/twins/tw/trajectory", {{"from", "13.5"}, {"to", "14.5"}, {"step", "0.5"}});
  ASSERT_EQ(tr.status, 200);
  EXPECT_EQ(tr.body.size(), 3u);
  EXPECT_EQ(s.handle("POST", "/twins/tw/resync", {}, R"({"t": 14, "state": {"level": 3}, "clearActions": true})").status, 200);
  EXPECT_EQ(s.handle("GET", "/twins/tw/properties/level").body["value"], 3.0);
  EXPECT_EQ(s.handle("GET", "/twins").body[0]["fit"], "f1");

  // a restarted service reloads the latest revision
  Service again(r.dir);
  EXPECT_EQ(again.handle("GET", "/twins/tw").body, s.handle("GET", "/twins/tw").body);
}

TEST(Http, ServesTheSameRoutes) {
  Root r;
  Service s(r.dir);
  httplib::Server server;
  mount(server, s);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Get("/things/tank");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["title"], "tank");
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  res = cli.Put("/things/tank/properties/level", R"({"value": 1})", "application/json");
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["error"], "ReadOnlyProperty");
  res = cli.Post("/things/tank/fit", R"({"trace": "run1", "name": "f1"})", "application/json");
  EXPECT_EQ(res->status, 200);
  res = cli.Get("/twins/none");
  EXPECT_EQ(res->status, 404);
  res = cli.Options("/things");
  EXPECT_EQ(res->status, 204);
  server.stop();
  th.join();
}

TEST(Http, PortFromEnvironment) {
  ::setenv("DTWT_PORT", "9123", 1);
  EXPECT_EQ(port_from_env(), 9123);
  ::setenv("DTWT_PORT", "junk", 1);
  EXPECT_EQ(code_of([] { port_from_env(7000); }), ErrorCode::InvalidConfig);
  ::unsetenv("DTWT_PORT");
  EXPECT_EQ(port_from_env(), 8080);
}
