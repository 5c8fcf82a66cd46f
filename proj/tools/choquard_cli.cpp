#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "choquard/choquard.hpp"

namespace fs = std::filesystem;
using namespace choquard;

namespace {

fs::path default_dir(const std::string& name) {
  if (const char* root = std::getenv(output_root_env); root && *root) return fs::path(root) / name;
  return fs::path("runs") / name;
}

int code(ExitCode c) { return static_cast<int>(c); }

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational solver suite for the slightly subcritical Choquard problem"};
  app.require_subcommand(1);
  app.set_version_flag("--version", code_version);

  int dim = 3;
  double mu = 1.0;
  int quad = 8;
  std::string csv_out;
  auto* constants = app.add_subcommand("constants", "whole-space constants by radial quadrature");
  constants->add_option("--dim", dim, "analytic dimension N >= 3")->required();
  constants->add_option("--mu", mu, "Riesz exponent in (0, N)")->required();
  constants->add_option("--quad", quad, "Gauss points per panel (checked against twice as many)");
  constants->add_option("--csv", csv_out, "also write the CSV row to this file");

  std::string config_file, out_dir;
  auto* solve = app.add_subcommand("solve", "multistart Nehari descent on one configuration");
  solve->add_option("--config", config_file, "INI run configuration")->required()->check(CLI::ExistingFile);
  solve->add_option("--out", out_dir, "run directory (overrides config and environment)");

  auto* sweep = app.add_subcommand("sweep", "eps sweep with warm starts");
  sweep->add_option("--config", config_file, "INI run configuration")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", out_dir, "run directory (overrides config and environment)");

  std::string fault = "none";
  auto* verify = app.add_subcommand("verify", "oracle self-checks");
  verify->add_option("--inject-fault", fault, "test hook")->check(CLI::IsMember({"none", "zero-singular-cell"}));
  verify->add_option("--out", out_dir, "directory for verify.csv");

  std::vector<int> sizes{16, 32, 64};
  auto* bench = app.add_subcommand("bench", "convolution and energy timings on square lattices");
  bench->add_option("--sizes", sizes, "interior nodes per axis")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*constants) {
      const auto r = run_constants(dim, mu, quad);
      std::cout << r.text << '\n' << r.csv;
      if (!csv_out.empty()) write_atomic(csv_out, r.csv);
      return code(ExitCode::ok);
    }
    if (*solve) {
      const auto cfg = load_config(config_file);
      const auto out = run_solve(cfg, out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir));
      std::cout << summary_text(out.manifest) << "written to " << out.manifest.dir.string() << '\n';
      return code(ExitCode::ok);
    }
    if (*sweep) {
      const auto cfg = load_config(config_file);
      const auto out = run_sweep(cfg, out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir));
      std::cout << summary_text(out.manifest) << "m_star: " << out.m_star << '\n'
                << "written to " << out.manifest.dir.string() << '\n';
      bool ok = true;
      for (const auto& r : out.manifest.sweep) ok = ok && r.ok;
      return code(ok ? ExitCode::ok : ExitCode::runtime_failure);
    }
    if (*verify) {
      const auto r = run_verify(fault == "zero-singular-cell" ? VerifyFault::zero_singular_cell : VerifyFault::none);
      const fs::path dir = out_dir.empty() ? default_dir("verify") : fs::path(out_dir);
      write_atomic(dir / "verify.csv", r.csv);
      for (const auto& c : r.checks)
        std::cout << (c.passed ? "ok    " : "FAILED") << ' ' << c.name << "  value=" << c.value
                  << "  tol=" << c.tolerance << '\n';
      std::cout << "written to " << (dir / "verify.csv").string() << '\n';
      return code(r.passed() ? ExitCode::ok : ExitCode::check_failure);
    }
    if (*bench) {
      std::cout << bench_text(run_bench(sizes));
      return code(ExitCode::ok);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return code(ExitCode::config_error);
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return code(ExitCode::config_error);
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return code(ExitCode::runtime_failure);
  }
  return code(ExitCode::ok);
}
