#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "choquard/experiments.hpp"
#include "oracles.hpp"

using namespace choquard;
namespace fs = std::filesystem;

namespace {

const char* minimal = R"([domain]
dim = 2
kind = ball
center = 0 0
radius = 1.0
r_margin = 0.3

[params]
mu = 1.0
lambda = 0.0
eps = 0.5

[grid]
resolution = 32
)";

std::string with(std::string text, const std::string& from, const std::string& to) {
  const auto at = text.find(from);
  if (at == std::string::npos) throw std::logic_error("fixture missing " + from);
  return text.replace(at, from.size(), to);
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("choquard_test_" + name);
  fs::remove_all(d);
  return d;
}

} // namespace

TEST(ParseConfig, MinimalConfigGetsDefaults) {
  const auto cfg = parse_config(minimal);
  EXPECT_EQ(cfg.domain.dim, 2);
  EXPECT_EQ(cfg.resolution, 32);
  EXPECT_EQ(cfg.mu, 1.0);
  EXPECT_EQ(cfg.lambda, 0.0);
  ASSERT_TRUE(cfg.eps.has_value());
  EXPECT_EQ(*cfg.eps, 0.5);
  EXPECT_EQ(cfg.n_eff, 3);
  EXPECT_FALSE(cfg.path_minmax);
  EXPECT_EQ(cfg.name, "run");
  EXPECT_EQ(cfg.text, minimal);
  EXPECT_EQ(cfg.params().p, ChoquardParams::from_eps(3, 1.0, 0.0, 0.5).p);
}

TEST(ParseConfig, ShippedConfigsParse) {
  for (const char* name : {"disk", "annulus", "multi_hole", "shell_sweep", "annulus_sweep"}) {
    const auto cfg = load_config(fs::path(CHOQUARD_CONFIG_DIR) / (std::string(name) + ".ini"));
    EXPECT_EQ(cfg.name, name);
  }
}

TEST(ParseConfig, MuAtDimensionIsRejected) {
  const auto msg = config_error(with(minimal, "mu = 1.0", "mu = 3.0"));
  EXPECT_NE(msg.find("must lie in (0, n)"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 9"), std::string::npos) << msg;
}

TEST(ParseConfig, EpsListMustStrictlyDecrease) {
  const auto msg = config_error(with(minimal, "eps = 0.5", "eps_list = 0.5, 0.5"));
  EXPECT_NE(msg.find("strictly decreasing"), std::string::npos) << msg;
}

TEST(ParseConfig, UnknownKeyNamesItsLine) {
  const auto msg = config_error(with(minimal, "resolution = 32", "resolution = 32\nresolutoin = 40"));
  EXPECT_NE(msg.find("line 15"), std::string::npos) << msg;
  EXPECT_NE(msg.find("resolutoin"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unknown key"), std::string::npos) << msg;
  EXPECT_NE(config_error(std::string(minimal) + "[extra]\nx = 1\n").find("unknown section [extra]"), std::string::npos);
}

TEST(ParseConfig, RejectsBadValues) {
  EXPECT_NE(config_error(with(minimal, "lambda = 0.0", "lambda = -1")).find("λ must be >= 0"),
            std::string::npos);
  EXPECT_NE(config_error(with(minimal, "mu = 1.0\n", "")).find("[params] mu: required"), std::string::npos);
  EXPECT_FALSE(config_error(with(minimal, "eps = 0.5", "eps = 4.0")).empty());
  EXPECT_FALSE(config_error(with(minimal, "resolution = 32", "resolution = many")).empty());
  EXPECT_FALSE(config_error(std::string(minimal) + "[solver]\nseed_count = 0\n").empty());
  EXPECT_FALSE(config_error(with(minimal, "kind = ball", "kind = torus")).empty());
}

TEST(OutputDir, EnvironmentRootWins) {
  auto cfg = parse_config(minimal);
  cfg.name = "alpha";
  cfg.output_dir = "/somewhere";
  ::unsetenv(output_root_env);
  EXPECT_EQ(resolve_output_dir(cfg), fs::path("/somewhere"));
  ::setenv(output_root_env, "/tmp/root", 1);
  EXPECT_EQ(resolve_output_dir(cfg), fs::path("/tmp/root/alpha"));
  ::unsetenv(output_root_env);
  cfg.output_dir.clear();
  EXPECT_EQ(resolve_output_dir(cfg), fs::path("runs/alpha"));
}

TEST(WriteAtomic, LeavesOnlyTheTarget) {
  const auto d = scratch("atomic");
  write_atomic(d / "a" / "x.txt", "first");
  write_atomic(d / "a" / "x.txt", "second");
  EXPECT_EQ(read_file(d / "a" / "x.txt"), "second");
  int entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(d / "a")) ++entries;
  EXPECT_EQ(entries, 1);
  fs::remove_all(d);
}

TEST(RunSolve, ManifestRoundTripAndRerunBytes) {
  auto cfg = parse_config(std::string(minimal) + "[solver]\nseed_count = 2\nthreads = 1\n[run]\nname = small\n");
  const auto d1 = scratch("solve1"), d2 = scratch("solve2");
  const auto a = run_solve(cfg, d1);
  EXPECT_EQ(a.verdict.kind, VerdictKind::pass);
  EXPECT_EQ(a.manifest.rows.size(), 2u);
  const auto loaded = load_manifest(d1);
  EXPECT_EQ(summary_text(loaded), read_file(d1 / "summary.txt"));
  EXPECT_EQ(manifest_csv(loaded), read_file(d1 / "manifest.csv"));
  EXPECT_EQ(read_file(d1 / "config.ini"), cfg.text);
  EXPECT_TRUE(fs::exists(d1 / "fields" / "record_000.chqf"));
  run_solve(cfg, d2);
  for (const char* f : {"manifest.csv", "classes.csv", "verdict.csv", "summary.txt"})
    EXPECT_EQ(read_file(d1 / f), read_file(d2 / f)) << f;
  const auto dump = read_field_dump(*std::make_unique<std::ifstream>(d1 / "fields" / "record_000.chqf", std::ios::binary));
  const auto u = field_from_dump(a.multistart.records[0].field.grid(), dump);
  EXPECT_EQ(energy(u, cfg.params(), build_kernel(u.grid(), 1.0)).value, a.multistart.records[0].energy);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Constants, ReportsExactRationals) {
  const auto r = run_constants(4, 2.0);
  EXPECT_NE(r.text.find("3 (3)"), std::string::npos) << r.text;
  EXPECT_NE(r.text.find("(3/2)"), std::string::npos) << r.text;
  EXPECT_NEAR(r.constants.m_star, oracle::m_star(4, 2.0), 1e-9 * r.constants.m_star);
  EXPECT_GE(r.defect, 0.0);
  EXPECT_THROW(run_constants(3, 3.0), ParameterError);
}

TEST(Verify, PassesAndCatchesInjectedFault) {
  const auto good = run_verify();
  for (const auto& c : good.checks) EXPECT_TRUE(c.passed) << c.name << " " << c.value << " > " << c.tolerance;
  const auto bad = run_verify(VerifyFault::zero_singular_cell);
  EXPECT_FALSE(bad.passed());
  EXPECT_EQ(run_verify().csv, good.csv);
}
