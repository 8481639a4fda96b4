#include <cstdlib>
#include <sys/wait.h>

#include "common.hpp"

using namespace dtwt;
using namespace dtwt::testing;

namespace {

int run(const std::string& args) {
  const int rc = std::system((std::string(DTWT_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

struct Dir {
  std::filesystem::path p = scratch("cli");
  ~Dir() { std::filesystem::remove_all(p); }
  std::string operator/(const std::string& f) const { return (p / f).string(); }
};

}  // namespace

TEST(Cli, ParseExitCodes) {
  Dir d;
  EXPECT_EQ(run("parse " + data("room.td.json")), 0);
  write_file(d / "bad.json", td_with(R"j("x": {"dtwt:model": "dot(self) = input(nope)"})j"));
  EXPECT_EQ(run("parse " + (d / "bad.json")), 1);
  write_file(d / "broken.json", "{");
  EXPECT_EQ(run("parse " + (d / "broken.json")), 1);
  EXPECT_EQ(run("parse " + (d / "missing.json")), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, SimulateFitSpawnWhatIf) {
  Dir d;
  write_file(d / "sim.json", R"({"duration": 12, "seed": 2})");
  ASSERT_EQ(run("simulate drone --config " + (d / "sim.json") + " --out " + (d / "trace.csv") + " --truth " + (d / "truth.csv")), 0);
  ASSERT_EQ(run("fit " + data("drone.td.json") + " " + (d / "trace.csv") + " --holdout-after 8 --out " + (d / "fit.json")), 0);
  const auto fit = nlohmann::json::parse(read_file(d / "fit.json"));
  EXPECT_TRUE(fit.contains("testMse") || fit.contains("test_mse")) << fit.dump();
  ASSERT_EQ(run("spawn " + data("drone.td.json") + " " + (d / "trace.csv") + " " + (d / "fit.json") + " --id d1 --out " + (d / "twin.json")), 0);
  write_file(d / "act.json", R"({"El": [[8.5, 1]]})");
  EXPECT_EQ(run("whatif " + data("drone.td.json") + " " + (d / "twin.json") + " --actions " + (d / "act.json") +
                " --lookahead 3 --fence 0,0,1 --out " + (d / "w.json")),
            0);
  const auto w = nlohmann::json::parse(read_file(d / "w.json"));
  EXPECT_TRUE(w.contains("alert") || w.contains("insideFence")) << w.dump().substr(0, 200);
  write_file(d / "late.json", R"({"El": [[99, 1]]})");
  EXPECT_EQ(run("whatif " + data("drone.td.json") + " " + (d / "twin.json") + " --actions " + (d / "late.json") + " --lookahead 3"), 1);
  EXPECT_EQ(run("precision " + data("drone.td.json") + " " + (d / "twin.json") + " --truth " + (d / "truth.csv") + " --tla 1 --dthr 2"), 0);
}

TEST(Cli, NumericFailureExitsWithTwo) {
  Dir d;
  write_file(d / "sim.json", R"({"duration": 4})");
  ASSERT_EQ(run("simulate drone --config " + (d / "sim.json") + " --out " + (d / "trace.csv")), 0);
  // a step budget too small to reach the end of the trace
  write_file(d / "tiny.txt", "max_steps = 5\n");
  const int rc = run("fit " + data("drone.td.json") + " " + (d / "trace.csv") + " --config " + (d / "tiny.txt"));
  EXPECT_EQ(rc, 2);
}

TEST(Cli, BadInputExitsWithOne) {
  Dir d;
  write_file(d / "trace.csv", "t,humidity\n0,1\n");
  EXPECT_EQ(run("fit " + data("room.td.json") + " " + (d / "trace.csv")), 1);
  write_file(d / "sim.json", R"({"sede": 1})");
  EXPECT_EQ(run("simulate room --config " + (d / "sim.json") + " --out " + (d / "x.csv")), 1);
  write_file(d / "cfg.txt", "bogus = 1\n");
  EXPECT_EQ(run("fit " + data("room.td.json") + " " + (d / "trace.csv") + " --config " + (d / "cfg.txt")), 1);
}
