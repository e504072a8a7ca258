#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cli_pipeline.hpp"

using namespace divac;
using namespace divac::cli;
using namespace divac::cli_fixture;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status;
  std::string out, err;
};

Run run(const io::RunConfig& cfg) {
  std::ostringstream out, err;
  const int s = run_command(cfg, out, err);
  return {s, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "divac_test_cli" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int shell(const std::string& cmd) {
  const int s = std::system(cmd.c_str());
  return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
}

}  // namespace

TEST(Cli, EveryCommandIsByteReproducible) {
  std::map<std::string, std::string> first;
  std::set<std::string> covered;
  for (const char* round : {"a", "b"}) {
    const auto dir = fresh_dir(std::string("repro_") + round);
    write_fixtures(dir);
    for (auto cfg : pipeline(dir)) {
      const auto r = run(cfg);
      ASSERT_EQ(r.status, 0) << cfg.command[0] << " " << cfg.command[1] << ": " << r.err;
      covered.insert(cfg.command[0] + " " + cfg.command[1]);
      const auto name = fs::path(cfg.output).filename().string();
      // Manifests name their (directory-specific) paths; compare everything else.
      auto manifest = json::parse(slurp(manifest_path(cfg.output)));
      manifest.erase("output");
      for (auto& in : manifest["inputs"]) in.erase("path");
      const auto bytes = slurp(cfg.output) + manifest.dump();
      if (std::string(round) == "a")
        first[name] = bytes;
      else
        EXPECT_EQ(bytes, first[name]) << name;
    }
  }
  for (const auto& c : registry()) EXPECT_TRUE(covered.count(c.group + " " + c.name)) << c.group << " " << c.name;
}

TEST(Cli, SameDirectoryRerunIsIdentical) {
  const auto dir = fresh_dir("rerun");
  auto cfg = config("ple", "simulate", {{"mode", "ensemble"}, {"defects", "3"}}, {}, (dir / "x.csv").string());
  cfg.seed = 99;
  ASSERT_EQ(run(cfg).status, 0);
  const auto a = slurp(dir / "x.csv"), ma = slurp(manifest_path(cfg.output));
  ASSERT_EQ(run(cfg).status, 0);
  EXPECT_EQ(slurp(dir / "x.csv"), a);
  EXPECT_EQ(slurp(manifest_path(cfg.output)), ma);
  cfg.seed = 100;
  ASSERT_EQ(run(cfg).status, 0);
  EXPECT_NE(slurp(dir / "x.csv"), a);
}

TEST(Cli, StrainFanMatchesLibrary) {
  const auto r = run(config("ple", "simulate", {{"strain_points", "11"}, {"strain_max", "10"}, {"form", "hh"}}));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto pre = excited::preset(excited::Form::hh);
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i);
  const auto fan = excited::strain_fan(pre.params, pre.zpl_THz, pre.D_ground_GHz, grid);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 22), "strain(GHz),Ex(THz),Ey");
  for (const auto& row : fan) {
    std::getline(in, line);
    std::string expect = io::format_number(row.delta_perp);
    for (double f : row.frequency_THz) expect += "," + io::format_number(f);
    for (double f : row.ms0_fraction) expect += "," + io::format_number(f);
    EXPECT_EQ(line, expect);
  }
}

TEST(Cli, RatesFitEqualsLibraryFit) {
  const auto dir = fresh_dir("rates");
  const auto cw = (dir / "cw.csv").string();
  ASSERT_EQ(run(config("rates", "simulate", {{"points", "121"}, {"noise", "0.03"}}, {}, cw)).status, 0);
  const auto r = run(config("rates", "fit", {}, {cw}));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto j = json::parse(r.out);
  const auto [traces, ids] = io::pl_traces(io::parse_table(cw, io::TableKind::pl_trace));
  EXPECT_EQ(traces.size(), 22u);
  const auto fit = optical::global_rate_fit(traces, optical::RateConstraints{}, optical::RateParams{});
  EXPECT_EQ(j["estimates"]["k_r"]["value"].get<double>(), fit.rates.k_r);
  EXPECT_EQ(j["estimates"]["G_s"]["value"].get<double>(), fit.rates.G_s);
  EXPECT_EQ(j["estimates"]["beta"]["upper"].get<double>(), fit.intervals[2].upper);
  EXPECT_NEAR(fit.rates.k_r, optical::RateParams{}.k_r, 0.1 * optical::RateParams{}.k_r);
}

TEST(Cli, BackgroundCorrectionValue) {
  const auto r = run(config("g2", "correct", {{"raw", "0.15"}, {"rho", "0.95"}}));
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream in(r.out);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "raw,rho,corrected");
  EXPECT_EQ(row.substr(row.rfind(',') + 1), io::format_number(optical::background_correct_g2(0.15, 0.95)));
}

TEST(Cli, ManifestContents) {
  const auto dir = fresh_dir("manifest");
  write_fixtures(dir);
  const auto in = (dir / "saturation.csv").string();
  const auto before = slurp(in);
  auto cfg = config("saturation", "fit", {}, {in}, (dir / "sat.json").string());
  cfg.seed = 7;
  ASSERT_EQ(run(cfg).status, 0);
  EXPECT_EQ(slurp(in), before);
  const auto text = slurp(manifest_path(cfg.output));
  const auto m = json::parse(text);
  EXPECT_EQ(m["command"], "saturation fit");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["inputs"][0]["path"], in);
  EXPECT_EQ(m["inputs"][0]["bytes"], before.size());
  EXPECT_EQ(m["inputs"][0]["fnv1a64"].get<std::string>().size(), 16u);
  EXPECT_FALSE(m.contains("wall_time_s"));
  EXPECT_LT(text.find("\"command\""), text.find("\"seed\""));  // keys sorted
  cfg.timing = true;
  ASSERT_EQ(run(cfg).status, 0);
  EXPECT_TRUE(json::parse(slurp(manifest_path(cfg.output))).contains("wall_time_s"));
  const auto report = json::parse(slurp(cfg.output));
  EXPECT_NEAR(report["estimates"]["R_max"]["value"].get<double>(), 330.0, 10.0);
}

TEST(Cli, FormatSwitch) {
  const auto csv = run(config("mixing", "report", {{"strains", "1,5"}}));
  ASSERT_EQ(csv.status, 0);
  EXPECT_EQ(csv.out.substr(0, 11), "strain(GHz)");
  auto cfg = config("mixing", "report", {{"strains", "1,5"}});
  cfg.format = "json";
  const auto js = run(cfg);
  ASSERT_EQ(js.status, 0);
  const auto j = json::parse(js.out);
  EXPECT_EQ(j["rows"].size(), 2u);
  EXPECT_EQ(j["columns"][0], "strain(GHz)");
}

TEST(Cli, UsageErrorsExitTwo) {
  auto r = run(config("ple", "explode"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("usage:"), std::string::npos);
  r = run(config("mixing", "report", {{"lambda", "3"}}));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("unknown key 'lambda'"), std::string::npos);
  r = run(config("mixing", "report", {{"strains", "one"}}));
  EXPECT_EQ(r.status, 2);
  r = run(config("linewidth", "fit"));
  EXPECT_EQ(r.status, 2);
  auto cfg = config("mixing", "report");
  cfg.format = "xml";
  EXPECT_EQ(run(cfg).status, 2);
  const auto dir = fresh_dir("clobber");
  write_fixtures(dir);
  const auto in = (dir / "saturation.csv").string();
  const auto before = slurp(in);
  EXPECT_EQ(run(config("saturation", "fit", {}, {in}, in)).status, 2);
  EXPECT_EQ(slurp(in), before);
}

TEST(Cli, FailuresExitOneWithOneLineCause) {
  const auto dir = fresh_dir("fail");
  const auto p = (dir / "ple.csv").string();
  ASSERT_EQ(run(config("ple", "simulate", {{"mode", "ensemble"}, {"defects", "4"}, {"lines", "2"}}, {}, p)).status, 0);
  auto r = run(config("ple", "fit", {{"sample", "0"}}, {p}));
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("divac: error: ", 0), 0u);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  std::ofstream(dir / "nan.csv") << "temperature(K),width(MHz)\n5,1\n10,nan\n";
  r = run(config("linewidth", "fit", {}, {(dir / "nan.csv").string()}));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("row 3"), std::string::npos);
  EXPECT_NE(r.err.find("width"), std::string::npos);
}

TEST(CliBinary, ExitStatusesAndConfigFile) {
  const std::string bin = DIVAC_CLI_PATH;
  const auto dir = fresh_dir("binary");
  const auto log = (dir / "log.txt").string();
  EXPECT_EQ(shell(bin + " frobnicate > " + log + " 2>&1"), 2);
  EXPECT_NE(slurp(log).find("usage:"), std::string::npos);
  EXPECT_EQ(shell(bin + " > " + log + " 2>&1"), 2);
  EXPECT_EQ(shell(bin + " --help > " + log + " 2>&1"), 0);

  std::ofstream(dir / "run.cfg") << "# spin-mixing table\ncommand = mixing report\nstrains = 1, 5, 10\nseed = 5\nout = "
                                 << (dir / "cfg.csv").string() << "\n";
  ASSERT_EQ(shell(bin + " --config " + (dir / "run.cfg").string() + " > " + log + " 2>&1"), 0) << slurp(log);
  const auto direct = (dir / "direct.csv").string();
  ASSERT_EQ(shell(bin + " mixing report --set strains=1,5,10 --seed 5 --out " + direct + " > " + log + " 2>&1"), 0)
      << slurp(log);
  EXPECT_EQ(slurp(dir / "cfg.csv"), slurp(direct));
  // Options after the subcommand and inputs as positionals.
  std::ofstream(dir / "sat.csv") << "power(mW),rate(kHz)\n0.1,66\n0.2,110\n0.4,165\n0.8,220\n1.6,264\n3.2,293\n";
  EXPECT_EQ(shell(bin + " saturation fit " + (dir / "sat.csv").string() + " --format csv > " + log + " 2>&1"), 0)
      << slurp(log);
  EXPECT_EQ(slurp(log).substr(0, 31), "parameter,value,lower,upper,uni");
  EXPECT_EQ(shell(bin + " saturation fit " + (dir / "missing.csv").string() + " > " + log + " 2>&1"), 1);
}
