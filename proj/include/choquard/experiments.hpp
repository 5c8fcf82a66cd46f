#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "choquard/bubbles.hpp"
#include "choquard/diagnostics.hpp"
#include "choquard/energy.hpp"
#include "choquard/error.hpp"
#include "choquard/grid.hpp"
#include "choquard/riesz.hpp"
#include "choquard/solver.hpp"

namespace choquard {

inline constexpr const char* code_version = "choquard 0.1.0";
inline constexpr const char* output_root_env = "CHOQUARD_OUTPUT_ROOT";

struct RunConfig {
  DomainSpec domain;
  double resolution = 0.0;
  double mu = 0.0;
  double lambda = 0.0;
  std::optional<double> eps;
  std::vector<double> eps_list;
  int n_eff = 3;
  SolverConfig solver;
  bool path_minmax = false;
  std::string output_dir;  // empty: runs/<name>
  bool dump_fields = true;
  std::uint64_t rng_seed = 0;
  std::string name = "run";
  std::string text;  // source, kept verbatim for the snapshot

  [[nodiscard]] ChoquardParams params() const {
    if (!eps) throw ConfigError("[params] eps is required for a single solve");
    return ChoquardParams::from_eps(n_eff, mu, lambda, *eps);
  }
};

namespace detail {

// Line of `key` inside `[section]`, or of the section header when key is empty.
inline int locate_key(const std::string& text, const std::string& section, const std::string& key) {
  std::istringstream in(text);
  std::string line, current;
  int n = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == ';' || t[0] == '#') continue;
    if (t.front() == '[') {
      current = trim(t.substr(1, t.find(']') - 1));
      if (key.empty() && current == section) return n;
      continue;
    }
    if (current == section && trim(t.substr(0, t.find('='))) == key) return n;
  }
  return 0;
}

inline std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<double> parse_numbers(const std::string& s, const std::string& where) {
  std::vector<double> out;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size() || !std::isfinite(v)) throw ConfigError(where + ": not a number: '" + token + "'");
    out.push_back(v);
    token.clear();
  };
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') flush();
    else token += c;
  }
  flush();
  return out;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

} // namespace detail

/// Strict INI parser: every key must belong to the schema; physics parameters
/// (mu, lambda, eps or eps_list) have no defaults.
inline RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  {
    std::istringstream in(text);
    try {
      pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
      throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
    }
  }
  static const std::map<std::string, std::set<std::string>> schema = {
      {"domain", {"dim", "kind", "center", "radius", "r_inner", "r_outer", "holes", "lower", "upper", "r_margin"}},
      {"params", {"mu", "lambda", "eps", "eps_list", "n_eff"}},
      {"grid", {"resolution"}},
      {"solver", {"max_iters", "grad_tol", "step_init", "step_shrink", "lbfgs_memory", "armijo", "cg_tol", "seed_R",
                  "seed_count", "energy_rtol", "bary_dist", "delta_factor", "threads", "path_images", "path_iters",
                  "path_climb_iters", "path_minmax"}},
      {"output", {"dir", "dump_fields"}},
      {"run", {"seed", "name"}},
  };
  auto where = [&](const std::string& sec, const std::string& key) {
    const int line = detail::locate_key(text, sec, key);
    return (line > 0 ? "line " + std::to_string(line) + ": " : std::string()) + "[" + sec + "] " + key;
  };
  for (const auto& [sec, body] : tree) {
    const auto it = schema.find(sec);
    if (it == schema.end()) {
      if (body.empty() && !body.data().empty())
        throw ConfigError(where("", sec) + ": key outside any section");
      const int line = detail::locate_key(text, sec, "");
      throw ConfigError((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) + "unknown section [" +
                        sec + "]");
    }
    for (const auto& [key, value] : body)
      if (!it->second.count(key)) throw ConfigError(where(sec, key) + ": unknown key");
  }
  auto raw = [&](const std::string& sec, const std::string& key) -> std::optional<std::string> {
    const auto v = tree.get_optional<std::string>(pt::ptree::path_type(sec + "/" + key, '/'));
    if (!v) return std::nullopt;
    return detail::trim_copy(*v);
  };
  auto number = [&](const std::string& sec, const std::string& key) -> std::optional<double> {
    const auto s = raw(sec, key);
    if (!s) return std::nullopt;
    const auto v = detail::parse_numbers(*s, where(sec, key));
    if (v.size() != 1) throw ConfigError(where(sec, key) + ": expected one number");
    return v.front();
  };
  auto integer = [&](const std::string& sec, const std::string& key) -> std::optional<long> {
    const auto v = number(sec, key);
    if (!v) return std::nullopt;
    if (*v != std::floor(*v)) throw ConfigError(where(sec, key) + ": expected an integer");
    return static_cast<long>(*v);
  };
  auto boolean = [&](const std::string& sec, const std::string& key) -> std::optional<bool> {
    const auto s = raw(sec, key);
    if (!s) return std::nullopt;
    if (*s == "true" || *s == "1" || *s == "yes") return true;
    if (*s == "false" || *s == "0" || *s == "no") return false;
    throw ConfigError(where(sec, key) + ": expected true or false");
  };
  auto point = [&](const std::string& sec, const std::string& key, int dim) -> Point {
    const auto s = raw(sec, key);
    if (!s) throw ConfigError(where(sec, key) + ": required");
    const auto v = detail::parse_numbers(*s, where(sec, key));
    if (static_cast<int>(v.size()) != dim)
      throw ConfigError(where(sec, key) + ": expected " + std::to_string(dim) + " coordinates");
    Point p{};
    for (int a = 0; a < dim; ++a) p[a] = v[a];
    return p;
  };
  auto required = [&](auto opt, const std::string& sec, const std::string& key) {
    if (!opt) throw ConfigError("[" + sec + "] " + key + ": required");
    return *opt;
  };

  RunConfig cfg;
  cfg.text = text;
  const long dim = required(integer("domain", "dim"), "domain", "dim");
  if (dim != 2 && dim != 3) throw ConfigError(where("domain", "dim") + ": grid dimension must be 2 or 3");
  const std::string kind = required(raw("domain", "kind"), "domain", "kind");
  const double r_margin = number("domain", "r_margin").value_or(-1.0);
  const int n = static_cast<int>(dim);
  Point center{};
  if (kind != "box") center = raw("domain", "center") ? point("domain", "center", n) : Point{};
  try {
    if (kind == "ball") {
      cfg.domain = DomainSpec::ball(n, center, required(number("domain", "radius"), "domain", "radius"), r_margin);
    } else if (kind == "annulus") {
      cfg.domain = DomainSpec::annulus(n, center, required(number("domain", "r_inner"), "domain", "r_inner"),
                                       required(number("domain", "r_outer"), "domain", "r_outer"), r_margin);
    } else if (kind == "multi_hole") {
      std::vector<Ball> holes;
      const std::string spec = required(raw("domain", "holes"), "domain", "holes");
      std::istringstream parts(spec);
      std::string part;
      while (std::getline(parts, part, ';')) {
        if (detail::trim_copy(part).empty()) continue;
        const auto v = detail::parse_numbers(part, where("domain", "holes"));
        if (static_cast<int>(v.size()) != n + 1)
          throw ConfigError(where("domain", "holes") + ": each hole needs " + std::to_string(n) +
                            " coordinates and a radius");
        Ball b;
        for (int a = 0; a < n; ++a) b.center[a] = v[a];
        b.radius = v[n];
        holes.push_back(b);
      }
      cfg.domain =
          DomainSpec::multi_hole(n, center, required(number("domain", "radius"), "domain", "radius"), holes, r_margin);
    } else if (kind == "box") {
      cfg.domain = DomainSpec::box(n, point("domain", "lower", n), point("domain", "upper", n), r_margin);
    } else {
      throw ConfigError(where("domain", "kind") + ": unknown domain kind '" + kind + "'");
    }
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind("line ", 0) == 0 || msg.rfind("[", 0) == 0) throw;
    throw ConfigError("[domain]: " + msg);
  }

  cfg.resolution = required(number("grid", "resolution"), "grid", "resolution");
  if (!(cfg.resolution > 0.0)) throw ConfigError(where("grid", "resolution") + ": must be positive");

  cfg.mu = required(number("params", "mu"), "params", "mu");
  if (!(cfg.mu > 0.0 && cfg.mu < n))
    throw ConfigError(where("params", "mu") + ": μ must lie in (0, n) with n = " + std::to_string(n) +
                      " the grid dimension, got " + detail::fmt(cfg.mu));
  cfg.lambda = required(number("params", "lambda"), "params", "lambda");
  if (!(cfg.lambda >= 0.0)) throw ConfigError(where("params", "lambda") + ": λ must be >= 0");
  cfg.n_eff = static_cast<int>(integer("params", "n_eff").value_or(default_n_eff(n)));
  if (cfg.n_eff < std::max(3, n)) throw ConfigError(where("params", "n_eff") + ": must be >= max(3, dim)");
  cfg.eps = number("params", "eps");
  if (const auto s = raw("params", "eps_list")) cfg.eps_list = detail::parse_numbers(*s, where("params", "eps_list"));
  if (!cfg.eps && cfg.eps_list.empty()) throw ConfigError("[params] eps or eps_list: required");
  const double crit = critical_exponent(cfg.n_eff, cfg.mu);
  if (cfg.eps && !(*cfg.eps >= 0.0 && *cfg.eps < crit - 1.0))
    throw ConfigError(where("params", "eps") + ": must lie in [0, 2mu* - 1) = [0, " + detail::fmt(crit - 1.0) + ")");
  for (std::size_t i = 0; i < cfg.eps_list.size(); ++i) {
    if (!(cfg.eps_list[i] > 0.0 && cfg.eps_list[i] < crit - 1.0))
      throw ConfigError(where("params", "eps_list") + ": values must lie in (0, " + detail::fmt(crit - 1.0) + ")");
    if (i > 0 && !(cfg.eps_list[i] < cfg.eps_list[i - 1]))
      throw ConfigError(where("params", "eps_list") + ": must be strictly decreasing");
  }

  auto& s = cfg.solver;
  auto set_int = [&](const char* key, int& dst) {
    if (auto v = integer("solver", key)) dst = static_cast<int>(*v);
  };
  auto set_num = [&](const char* key, double& dst) {
    if (auto v = number("solver", key)) dst = *v;
  };
  set_int("max_iters", s.max_iters);
  set_num("grad_tol", s.grad_tol);
  set_num("step_init", s.step_init);
  set_num("step_shrink", s.step_shrink);
  set_int("lbfgs_memory", s.lbfgs_memory);
  set_num("armijo", s.armijo);
  set_num("cg_tol", s.cg_tol);
  set_num("seed_R", s.seed_R);
  set_int("seed_count", s.seed_count);
  set_num("energy_rtol", s.energy_rtol);
  set_num("bary_dist", s.bary_dist);
  set_num("delta_factor", s.delta_factor);
  set_int("threads", s.threads);
  set_int("path_images", s.path_images);
  set_int("path_iters", s.path_iters);
  set_int("path_climb_iters", s.path_climb_iters);
  cfg.path_minmax = boolean("solver", "path_minmax").value_or(false);
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("[solver]: ") + e.what());
  }
  if (s.seed_count < cfg.domain.declared_category())
    throw ConfigError(where("solver", "seed_count") + ": below the declared category " +
                      std::to_string(cfg.domain.declared_category()));

  cfg.output_dir = raw("output", "dir").value_or("");
  cfg.dump_fields = boolean("output", "dump_fields").value_or(true);
  if (auto v = integer("run", "seed")) {
    if (*v < 0) throw ConfigError(where("run", "seed") + ": must be >= 0");
    cfg.rng_seed = static_cast<std::uint64_t>(*v);
  }
  cfg.name = raw("run", "name").value_or("run");
  if (cfg.name.empty() || cfg.name.find_first_of("/\\") != std::string::npos)
    throw ConfigError(where("run", "name") + ": must be a plain non-empty name");
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + file.string());
  std::ostringstream os;
  os << in.rdbuf();
  RunConfig cfg = parse_config(os.str());
  if (!os.str().empty() && cfg.name == "run" && detail::locate_key(os.str(), "run", "name") == 0)
    cfg.name = file.stem().string();
  return cfg;
}

/// CHOQUARD_OUTPUT_ROOT/<name> when the variable is set, else [output] dir,
/// else runs/<name>.
inline std::filesystem::path resolve_output_dir(const RunConfig& cfg) {
  if (const char* root = std::getenv(output_root_env); root && *root) return std::filesystem::path(root) / cfg.name;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return std::filesystem::path("runs") / cfg.name;
}

/// Writes through a sibling temp file and renames it into place.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ComputeError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw ComputeError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestRow {
  int id = 0;
  double eps = 0.0;
  double energy = 0.0;
  Point barycenter{};
  double grad_norm = 0.0;
  double nehari_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string classification;
  int class_id = -1;
  std::string origin;
  std::string file;
};

struct ClassRow {
  int class_id = 0;
  double energy = 0.0;
  Point barycenter{};
  int members = 0;
  bool in_omega_r_plus = true;
  std::string classification;
};

struct VerdictRow {
  std::string verdict;
  int low_energy_classes = 0;
  int declared_category = 1;
  double m_eps = 0.0;
  double delta = 0.0;
  int localization_checked = 0;
  int localization_violations = 0;
  std::string path_outcome = "none";
  double path_max_energy = 0.0;  // upper bound on the min-max level along the final path
  std::string path_report;
  std::string advice;
};

struct SweepTableRow {
  double eps = 0.0;
  double m_eps = 0.0;
  Point barycenter{};
  double sup_norm = 0.0;
  int classes = 0;
  int unconverged = 0;
  bool ok = true;
  double m_star_ratio = 0.0;
  std::string error;
};

struct RunManifest {
  std::string version = code_version;
  std::string name;
  std::string config_text;
  std::vector<ManifestRow> rows;
  std::vector<ClassRow> classes;
  VerdictRow verdict;
  std::vector<SweepTableRow> sweep;  // empty for a single solve
  std::filesystem::path dir;
};

inline std::string manifest_csv(const RunManifest& m) {
  std::ostringstream os;
  os << "id,eps,energy,beta_x,beta_y,beta_z,grad_norm,nehari_residual,iterations,converged,classification,class_id,"
        "origin,file\n";
  for (const auto& r : m.rows)
    os << r.id << ',' << detail::fmt(r.eps) << ',' << detail::fmt(r.energy) << ',' << detail::fmt(r.barycenter[0])
       << ',' << detail::fmt(r.barycenter[1]) << ',' << detail::fmt(r.barycenter[2]) << ',' << detail::fmt(r.grad_norm)
       << ',' << detail::fmt(r.nehari_residual) << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ','
       << r.classification << ',' << r.class_id << ',' << r.origin << ',' << r.file << '\n';
  return os.str();
}

inline std::string classes_csv(const RunManifest& m) {
  std::ostringstream os;
  os << "class_id,energy,beta_x,beta_y,beta_z,members,in_omega_r_plus,classification\n";
  for (const auto& c : m.classes)
    os << c.class_id << ',' << detail::fmt(c.energy) << ',' << detail::fmt(c.barycenter[0]) << ','
       << detail::fmt(c.barycenter[1]) << ',' << detail::fmt(c.barycenter[2]) << ',' << c.members << ','
       << (c.in_omega_r_plus ? 1 : 0) << ',' << c.classification << '\n';
  return os.str();
}

inline std::string verdict_csv(const RunManifest& m) {
  const auto& v = m.verdict;
  std::ostringstream os;
  os << "verdict,low_energy_classes,declared_category,m_eps,delta,localization_checked,localization_violations,"
        "path_outcome,path_max_energy,path_report,advice\n";
  os << v.verdict << ',' << v.low_energy_classes << ',' << v.declared_category << ',' << detail::fmt(v.m_eps) << ','
     << detail::fmt(v.delta) << ',' << v.localization_checked << ',' << v.localization_violations << ','
     << v.path_outcome << ',' << detail::fmt(v.path_max_energy) << ',' << v.path_report << ',' << v.advice << '\n';
  return os.str();
}

inline std::string sweep_csv(const RunManifest& m) {
  std::ostringstream os;
  os << "eps,m_eps,beta_x,beta_y,beta_z,sup_norm,classes,unconverged,ok,m_star_ratio,error\n";
  for (const auto& r : m.sweep)
    os << detail::fmt(r.eps) << ',' << detail::fmt(r.m_eps) << ',' << detail::fmt(r.barycenter[0]) << ','
       << detail::fmt(r.barycenter[1]) << ',' << detail::fmt(r.barycenter[2]) << ',' << detail::fmt(r.sup_norm) << ','
       << r.classes << ',' << r.unconverged << ',' << (r.ok ? 1 : 0) << ',' << detail::fmt(r.m_star_ratio) << ','
       << r.error << '\n';
  return os.str();
}

/// sup norm strictly increasing as eps decreases, every row ok.
inline bool sweep_sup_norm_increasing(const std::vector<SweepTableRow>& rows) {
  if (rows.size() < 2) return false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].ok) return false;
    if (i > 0 && !(rows[i].sup_norm > rows[i - 1].sup_norm)) return false;
  }
  return true;
}

/// Human-readable summary; built from manifest data only, so a reloaded
/// manifest reproduces it byte for byte.
inline std::string summary_text(const RunManifest& m) {
  std::ostringstream os;
  os << "code version: " << m.version << '\n' << "run: " << m.name << '\n';
  const auto& v = m.verdict;
  int converged = 0;
  for (const auto& r : m.rows) converged += r.converged ? 1 : 0;
  os << "records: " << m.rows.size() << " (" << converged << " converged)\n";
  os << "m_eps: " << detail::fmt(v.m_eps) << "  delta: " << detail::fmt(v.delta) << '\n';
  os << "classes:\n";
  for (const auto& c : m.classes)
    os << "  " << std::setw(3) << c.class_id << "  E=" << std::setw(22) << std::left << detail::fmt(c.energy)
       << std::right << " beta=(" << detail::fmt(c.barycenter[0]) << ", " << detail::fmt(c.barycenter[1]) << ", "
       << detail::fmt(c.barycenter[2]) << ")  members=" << c.members << "  " << c.classification
       << (c.in_omega_r_plus ? "" : "  OUTSIDE outer set") << '\n';
  os << "localization: " << v.localization_checked << " low-energy class(es) checked, "
     << v.localization_violations << " outside the outer set\n";
  os << "multiplicity verdict: " << v.verdict << " (" << v.low_energy_classes << " low-energy class(es), category "
     << v.declared_category << ")\n";
  if (!v.advice.empty()) os << "advice: " << v.advice << '\n';
  os << "path min-max: " << v.path_outcome;
  if (!v.path_report.empty())
    os << " (" << v.path_report << "; max path energy " << detail::fmt(v.path_max_energy) << ")";
  os << '\n';
  if (!m.sweep.empty()) {
    os << "eps sweep:\n";
    for (const auto& r : m.sweep)
      os << "  eps=" << detail::fmt(r.eps) << "  m_eps=" << detail::fmt(r.m_eps) << "  sup=" << detail::fmt(r.sup_norm)
         << "  m_eps/m_star=" << detail::fmt(r.m_star_ratio) << (r.ok ? "" : "  FAILED: " + r.error) << '\n';
    os << "sup norm increasing: " << (sweep_sup_norm_increasing(m.sweep) ? "true" : "false") << '\n';
  }
  return os.str();
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline double to_d(const std::string& s) { return std::stod(s); }
inline int to_i(const std::string& s) { return std::stoi(s); }

inline std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

} // namespace detail

inline void write_manifest(const RunManifest& m) {
  const auto& d = m.dir;
  write_atomic(d / "config.ini", m.config_text);
  write_atomic(d / "classes.csv", classes_csv(m));
  write_atomic(d / "verdict.csv", verdict_csv(m));
  if (!m.sweep.empty()) write_atomic(d / "sweep.csv", sweep_csv(m));
  write_atomic(d / "summary.txt", summary_text(m));
  write_atomic(d / "manifest.csv", manifest_csv(m));
}

/// Rebuilds a manifest from a run directory without recomputing anything.
inline RunManifest load_manifest(const std::filesystem::path& dir) {
  RunManifest m;
  m.dir = dir;
  m.config_text = read_file(dir / "config.ini");
  const std::string summary = read_file(dir / "summary.txt");
  {
    std::istringstream in(summary);
    std::string line;
    std::getline(in, line);
    m.version = line.substr(line.find(": ") + 2);
    std::getline(in, line);
    m.name = line.substr(line.find(": ") + 2);
  }
  try {
    for (const auto& c : detail::read_csv_rows(dir / "manifest.csv")) {
      if (c.size() != 14) throw ConfigError("manifest.csv: bad row");
      ManifestRow r;
      r.id = detail::to_i(c[0]);
      r.eps = detail::to_d(c[1]);
      r.energy = detail::to_d(c[2]);
      r.barycenter = {detail::to_d(c[3]), detail::to_d(c[4]), detail::to_d(c[5])};
      r.grad_norm = detail::to_d(c[6]);
      r.nehari_residual = detail::to_d(c[7]);
      r.iterations = detail::to_i(c[8]);
      r.converged = c[9] == "1";
      r.classification = c[10];
      r.class_id = detail::to_i(c[11]);
      r.origin = c[12];
      r.file = c[13];
      m.rows.push_back(r);
    }
    for (const auto& c : detail::read_csv_rows(dir / "classes.csv")) {
      if (c.size() != 8) throw ConfigError("classes.csv: bad row");
      ClassRow r;
      r.class_id = detail::to_i(c[0]);
      r.energy = detail::to_d(c[1]);
      r.barycenter = {detail::to_d(c[2]), detail::to_d(c[3]), detail::to_d(c[4])};
      r.members = detail::to_i(c[5]);
      r.in_omega_r_plus = c[6] == "1";
      r.classification = c[7];
      m.classes.push_back(r);
    }
    const auto v = detail::read_csv_rows(dir / "verdict.csv");
    if (v.size() != 1 || v[0].size() != 11) throw ConfigError("verdict.csv: expected one row");
    const auto& c = v[0];
    m.verdict = {c[0], detail::to_i(c[1]), detail::to_i(c[2]), detail::to_d(c[3]), detail::to_d(c[4]),
                 detail::to_i(c[5]), detail::to_i(c[6]), c[7], detail::to_d(c[8]), c[9], c[10]};
    if (std::filesystem::exists(dir / "sweep.csv"))
      for (const auto& c : detail::read_csv_rows(dir / "sweep.csv")) {
        if (c.size() != 11) throw ConfigError("sweep.csv: bad row");
        SweepTableRow r;
        r.eps = detail::to_d(c[0]);
        r.m_eps = detail::to_d(c[1]);
        r.barycenter = {detail::to_d(c[2]), detail::to_d(c[3]), detail::to_d(c[4])};
        r.sup_norm = detail::to_d(c[5]);
        r.classes = detail::to_i(c[6]);
        r.unconverged = detail::to_i(c[7]);
        r.ok = c[8] == "1";
        r.m_star_ratio = detail::to_d(c[9]);
        r.error = c[10];
        m.sweep.push_back(r);
      }
  } catch (const std::invalid_argument&) {
    throw ConfigError("malformed manifest in " + dir.string());
  } catch (const std::out_of_range&) {
    throw ConfigError("malformed manifest in " + dir.string());
  }
  return m;
}

// ---------------------------------------------------------------------------
// solve / sweep

struct SolveOutcome {
  RunManifest manifest;
  MultistartResult multistart;
  std::optional<PathResult> path;
  LocalizationReport localization;
  Verdict verdict;
};

namespace detail {

// Fills manifest rows and classes from a multistart, dumping fields if asked.
inline void record_run(RunManifest& m, const MultistartResult& ms, const DomainSpec& spec, bool dump,
                       const std::filesystem::path& dir) {
  std::vector<int> class_of(ms.records.size(), -1);
  {
    std::vector<std::size_t> good_index;
    for (std::size_t i = 0; i < ms.records.size(); ++i)
      if (ms.records[i].converged) good_index.push_back(i);
    for (std::size_t k = 0; k < ms.classes.size(); ++k)
      for (std::size_t g : ms.classes[k].members) class_of[good_index[g]] = static_cast<int>(k);
  }
  for (std::size_t i = 0; i < ms.records.size(); ++i) {
    const auto& r = ms.records[i];
    ManifestRow row;
    row.id = static_cast<int>(i);
    row.eps = r.eps;
    row.energy = r.energy;
    row.barycenter = r.barycenter;
    row.grad_norm = r.final_grad_norm;
    row.nehari_residual = r.nehari_rel_residual;
    row.iterations = r.iterations;
    row.converged = r.converged;
    row.classification = r.converged ? to_string(r.classification) : "unconverged";
    row.class_id = class_of[i];
    row.origin = r.origin_label();
    m.rows.push_back(row);
  }
  for (std::size_t k = 0; k < ms.classes.size(); ++k) {
    const auto& c = ms.classes[k];
    m.classes.push_back({static_cast<int>(k), c.energy(), c.barycenter, static_cast<int>(c.member_count()),
                         in_omega_r_plus(spec, c.barycenter), to_string(c.representative.classification)});
  }
  if (dump) {
    for (std::size_t i = 0; i < ms.records.size(); ++i) {
      std::ostringstream name;
      name << "fields/record_" << std::setw(3) << std::setfill('0') << i << ".chqf";
      std::ostringstream bytes;
      write_field(bytes, ms.records[i].field);
      write_atomic(dir / name.str(), bytes.str());
      m.rows[i].file = name.str();
    }
  }
}

inline void fill_verdict(RunManifest& m, const MultistartResult& ms, const LocalizationReport& loc, const Verdict& v) {
  m.verdict.verdict = to_string(v.kind);
  m.verdict.low_energy_classes = v.low_energy_classes;
  m.verdict.declared_category = v.declared_category;
  m.verdict.m_eps = ms.m_eps;
  m.verdict.delta = ms.delta;
  m.verdict.localization_checked = static_cast<int>(loc.checked.size());
  m.verdict.localization_violations = static_cast<int>(loc.violations.size());
  m.verdict.advice = sanitize(v.advice);
}

// The two low-energy classes with the largest barycenter distance.
inline std::optional<std::pair<std::size_t, std::size_t>> farthest_low_pair(const MultistartResult& ms) {
  std::optional<std::pair<std::size_t, std::size_t>> best;
  double dist = -1.0;
  for (std::size_t i = 0; i < ms.classes.size(); ++i)
    for (std::size_t j = i + 1; j < ms.classes.size(); ++j) {
      if (ms.classes[i].representative.classification != Classification::low_energy ||
          ms.classes[j].representative.classification != Classification::low_energy)
        continue;
      const double d = distance(ms.classes[i].barycenter, ms.classes[j].barycenter);
      if (d > dist) {
        dist = d;
        best = std::make_pair(i, j);
      }
    }
  return best;
}

} // namespace detail

/// Margin so that a candidate clears both max(E_a, E_b) and m_eps + delta.
inline double path_margin(const MultistartResult& ms, const SolutionRecord& a, const SolutionRecord& b,
                          double energy_rtol) {
  const double top = std::max(a.energy, b.energy);
  return std::max(ms.m_eps + ms.delta - top, energy_rtol * top);
}

inline SolveOutcome solve_from_multistart(const RunConfig& cfg, MultistartResult ms, const ChoquardParams& params,
                                          const RieszKernel& kernel, const std::filesystem::path& dir) {
  SolveOutcome out;
  out.localization = barycenter_localization_check(ms.classes, cfg.domain, ms.m_eps, ms.delta);
  out.verdict = multiplicity_verdict(ms.classes, cfg.domain, ms.m_eps, ms.delta);
  RunManifest& m = out.manifest;
  m.name = cfg.name;
  m.config_text = cfg.text;
  m.dir = dir;
  detail::record_run(m, ms, cfg.domain, cfg.dump_fields, dir);
  detail::fill_verdict(m, ms, out.localization, out.verdict);
  if (cfg.path_minmax) {
    const auto pair = detail::farthest_low_pair(ms);
    if (!pair) {
      m.verdict.path_outcome = "skipped";
    } else {
      const auto& a = ms.classes[pair->first].representative;
      const auto& b = ms.classes[pair->second].representative;
      auto res = path_minmax(a, b, params, kernel, cfg.solver, path_margin(ms, a, b, cfg.solver.energy_rtol));
      std::ostringstream csv;
      csv << "image,energy\n";
      for (std::size_t i = 0; i < res.path_energies.size(); ++i)
        csv << i << ',' << detail::fmt(res.path_energies[i]) << '\n';
      write_atomic(dir / "path.csv", csv.str());
      m.verdict.path_max_energy = *std::max_element(res.path_energies.begin(), res.path_energies.end());
      m.verdict.path_report = detail::sanitize(res.report);
      if (res.candidate) {
        const auto& c = *res.candidate;
        ManifestRow row;
        row.id = static_cast<int>(m.rows.size());
        row.eps = c.eps;
        row.energy = c.energy;
        row.barycenter = c.barycenter;
        row.grad_norm = c.final_grad_norm;
        row.nehari_residual = c.nehari_rel_residual;
        row.iterations = c.iterations;
        row.converged = c.converged;
        row.classification = to_string(c.classification);
        row.class_id = static_cast<int>(m.classes.size());
        row.origin = c.origin_label();
        if (cfg.dump_fields) {
          std::ostringstream name, bytes;
          name << "fields/record_" << std::setw(3) << std::setfill('0') << row.id << ".chqf";
          write_field(bytes, c.field);
          write_atomic(dir / name.str(), bytes.str());
          row.file = name.str();
        }
        m.rows.push_back(row);
        m.classes.push_back({row.class_id, c.energy, c.barycenter, 1, in_omega_r_plus(cfg.domain, c.barycenter),
                             to_string(c.classification)});
        m.verdict.path_outcome = "candidate";
      } else {
        m.verdict.path_outcome = res.collapsed ? "collapsed" : "no-candidate";
      }
      out.path = std::move(res);
    }
  }
  out.multistart = std::move(ms);
  return out;
}

/// Multistart at the configured eps, verdicts, optional path search; writes
/// the run directory (manifest last).
inline SolveOutcome run_solve(const RunConfig& cfg, std::optional<std::filesystem::path> dir = std::nullopt) {
  const auto out_dir = dir ? *dir : resolve_output_dir(cfg);
  try {
    const auto params = cfg.params();
    const auto grid = build_grid(cfg.domain, cfg.resolution);
    const auto kernel = build_kernel(grid, cfg.mu);
    auto ms = multistart(grid, cfg.domain, params, kernel, cfg.solver);
    auto out = solve_from_multistart(cfg, std::move(ms), params, kernel, out_dir);
    write_manifest(out.manifest);
    return out;
  } catch (const ComputeError& e) {
    throw ComputeError("solve '" + cfg.name + "': " + e.what());
  }
}

struct SweepOutcome {
  RunManifest manifest;
  SweepResult sweep;
  double m_star = 0.0;
  bool sup_norm_increasing = false;
};

inline SweepOutcome run_sweep(const RunConfig& cfg, std::optional<std::filesystem::path> dir = std::nullopt) {
  if (cfg.eps_list.empty()) throw ConfigError("[params] eps_list is required for a sweep");
  const auto out_dir = dir ? *dir : resolve_output_dir(cfg);
  try {
    const auto base = ChoquardParams::from_eps(cfg.n_eff, cfg.mu, cfg.lambda, cfg.eps_list.front());
    const auto grid = build_grid(cfg.domain, cfg.resolution);
    const auto kernel = build_kernel(grid, cfg.mu);
    SweepOutcome out;
    out.sweep = eps_sweep(grid, cfg.domain, base, kernel, cfg.eps_list, cfg.solver);
    out.m_star = critical_constants(cfg.n_eff, cfg.mu).m_star;
    RunManifest& m = out.manifest;
    m.name = cfg.name;
    m.config_text = cfg.text;
    m.dir = out_dir;
    for (const auto& r : out.sweep.rows)
      m.sweep.push_back({r.eps, r.m_eps, r.barycenter, r.sup_norm, r.classes, r.unconverged, r.ok,
                         r.ok ? r.m_eps / out.m_star : 0.0, detail::sanitize(r.error)});
    out.sup_norm_increasing = sweep_sup_norm_increasing(m.sweep);
    const auto& last = out.sweep.last;
    if (!last.classes.empty()) {
      const auto loc = barycenter_localization_check(last.classes, cfg.domain, last.m_eps, last.delta);
      const auto v = multiplicity_verdict(last.classes, cfg.domain, last.m_eps, last.delta);
      detail::record_run(m, last, cfg.domain, cfg.dump_fields, out_dir);
      detail::fill_verdict(m, last, loc, v);
    } else {
      m.verdict.verdict = to_string(VerdictKind::inconclusive);
      m.verdict.declared_category = cfg.domain.declared_category();
      m.verdict.advice = "no eps produced a converged run";
    }
    write_manifest(m);
    return out;
  } catch (const ComputeError& e) {
    throw ComputeError("sweep '" + cfg.name + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// constants

struct ConstantsReport {
  CriticalConstants constants;
  double m_star_projected = 0.0;  // (1/2 - 1/(2*2mu*)) * ||t U_1||^2
  double defect = 0.0;
  std::string text;
  std::string csv;
};

namespace detail {
// p/q with small q when x is (nearly) rational, else the decimal.
inline std::string as_fraction(double x) {
  for (int q = 1; q <= 12; ++q) {
    const double p = std::round(x * q);
    if (std::abs(p / q - x) < 1e-12) {
      std::ostringstream os;
      os << static_cast<long>(p);
      if (q > 1) os << '/' << q;
      return os.str();
    }
  }
  return fmt(x);
}
} // namespace detail

inline ConstantsReport run_constants(int N, double mu, int quad_points = 8) {
  ConstantsReport r;
  r.constants = critical_constants(N, mu, quad_points);
  const auto& c = r.constants;
  const double q = c.two_mu_star();
  r.m_star_projected = (0.5 - 1.0 / (2.0 * q)) * c.t_star_U1 * c.t_star_U1 * c.grad_U1_sq;
  r.defect = bubble_nehari_defect(c);
  std::ostringstream t;
  t << std::left;
  auto line = [&](const std::string& k, const std::string& v) { t << std::setw(28) << k << v << '\n'; };
  line("N", std::to_string(N));
  line("mu", detail::fmt(mu));
  line("2mu*", detail::fmt(q) + " (" + detail::as_fraction(q) + ")");
  line("m_star exponent", detail::fmt(c.m_star_exponent()) + " (" + detail::as_fraction(c.m_star_exponent()) + ")");
  line("grad_U1_sq", detail::fmt(c.grad_U1_sq));
  line("d_crit_U1", detail::fmt(c.d_crit_U1));
  line("S_HL", detail::fmt(c.S_HL));
  line("m_star", detail::fmt(c.m_star));
  line("m_star (projected bubble)", detail::fmt(r.m_star_projected));
  line("t_star_U1", detail::fmt(c.t_star_U1));
  line("bubble_nehari_defect", detail::fmt(r.defect));
  line("refinement_change", detail::fmt(c.refinement_change));
  r.text = t.str();
  std::ostringstream csv;
  csv << "N,mu,two_mu_star,m_star_exponent,grad_U1_sq,d_crit_U1,S_HL,m_star,m_star_projected,t_star_U1,defect,"
         "refinement_change\n"
      << N << ',' << detail::fmt(mu) << ',' << detail::fmt(q) << ',' << detail::fmt(c.m_star_exponent()) << ','
      << detail::fmt(c.grad_U1_sq) << ',' << detail::fmt(c.d_crit_U1) << ',' << detail::fmt(c.S_HL) << ','
      << detail::fmt(c.m_star) << ',' << detail::fmt(r.m_star_projected) << ',' << detail::fmt(c.t_star_U1) << ','
      << detail::fmt(r.defect) << ',' << detail::fmt(c.refinement_change) << '\n';
  r.csv = csv.str();
  return r;
}

// ---------------------------------------------------------------------------
// verify

/// Box lattice with `n` interior nodes per axis, spacing 1/(n+1), every
/// interior node masked in (one exterior layer per face).
inline GridPtr box_lattice(int dim, int n) {
  if (n < 1) throw ConfigError("box lattice needs at least one node per axis");
  const int m = n + 2;
  std::array<int, 3> shape{m, m, dim == 3 ? m : 1};
  const double h = 1.0 / (n + 1);
  const std::size_t total = static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  std::vector<std::uint8_t> mask(total, 0);
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= n; ++j)
      for (int k = (dim == 3 ? 1 : 0); k <= (dim == 3 ? n : 0); ++k)
        mask[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k] = 1;
  return std::make_shared<const Grid>(dim, shape, std::array<double, 3>{h, h, dim == 3 ? h : 1.0}, Point{},
                                      std::move(mask));
}

inline Field random_field(const GridPtr& grid, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(grid->interior_size());
  for (auto& x : v) x = dist(rng);
  return Field(grid, std::move(v));
}

struct CheckRow {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct VerifyOutcome {
  std::vector<CheckRow> checks;
  std::string csv;
  [[nodiscard]] bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckRow& c) { return c.passed; });
  }
};

enum class VerifyFault { none, zero_singular_cell };

/// Oracle suite. Each check records the measured deviation and its tolerance.
inline VerifyOutcome run_verify(VerifyFault fault = VerifyFault::none) {
  VerifyOutcome out;
  KernelOptions opts;
  opts.zero_singular_cell = fault == VerifyFault::zero_singular_cell;
  std::mt19937_64 rng(20240917);
  auto add = [&](std::string name, double value, double tol) {
    out.checks.push_back({std::move(name), value, tol, value <= tol});
  };

  for (const auto& [dim, n] : {std::pair{2, 16}, std::pair{3, 8}}) {
    const auto g = box_lattice(dim, n);
    const auto k = build_kernel(g, 1.3, opts);
    double worst = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
      const auto f = random_field(g, rng, -1.0, 1.0);
      const auto a = convolve_fft(k, f), b = convolve_direct(k, f);
      double scale = 0.0;
      for (std::size_t c = 0; c < b.size(); ++c) scale = std::max(scale, std::abs(b[c]));
      for (std::size_t c = 0; c < b.size(); ++c) worst = std::max(worst, std::abs(a[c] - b[c]) / scale);
    }
    add("fft_vs_direct_" + std::to_string(dim) + "d", worst, 1e-10);
  }

  const auto disk = DomainSpec::ball(2, {}, 1.0, 0.3);
  const auto dgrid = build_grid(disk, 16);
  const auto dkernel = build_kernel(dgrid, 1.0, opts);
  const auto params = ChoquardParams::from_eps(3, 1.0, 0.5, 0.5);
  {
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const auto u = random_field(dgrid, rng, -0.2, 1.0);
      const auto phi = random_field(dgrid, rng, -1.0, 1.0);
      const double t = 1e-5;
      const double fd = (energy(u.plus_scaled(phi, t), params, dkernel).value -
                         energy(u.plus_scaled(phi, -t), params, dkernel).value) /
                        (2.0 * t);
      const double an = l2_inner(gradient(u, params, dkernel), phi);
      worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-300));
    }
    add("gradient_directional_derivative", worst, 1e-6);
  }
  {
    double sbp = 0.0, ident = 0.0, proj = 0.0, scale_inv = 0.0, holder = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const auto u = random_field(dgrid, rng, 0.0, 1.0);
      const auto v = random_field(dgrid, rng, -1.0, 1.0);
      const double lhs = l2_inner(apply_operator(v, params.lambda), v);
      sbp = std::max(sbp, std::abs(lhs - h1_lambda_sq(v, params.lambda)) / h1_lambda_sq(v, params.lambda));
      const auto rep = energy(u, params, dkernel);
      ident = std::max(ident, std::abs(rep.value - (0.5 * rep.norm_lambda_sq - rep.d_term / (2.0 * params.p))) /
                                  std::abs(rep.value));
      const auto w = nehari_project(u, params, dkernel);
      const auto t = energy_terms(w, params, dkernel);
      proj = std::max(proj, std::abs(t.norm_lambda_sq - t.d_term) / t.norm_lambda_sq);
      const auto w2 = nehari_project(u.scaled(3.7), params, dkernel);
      double d = 0.0, s = 0.0;
      for (std::size_t c = 0; c < w.size(); ++c) {
        d = std::max(d, std::abs(w[c] - w2[c]));
        s = std::max(s, std::abs(w[c]));
      }
      scale_inv = std::max(scale_inv, d / s);
      const auto sub = ChoquardParams::from_eps(3, 1.0, 0.5, 0.2);
      const auto hb = holder_interpolation_bound(u, sub, dkernel);
      holder = std::max(holder, (hb.lhs - hb.rhs) / hb.rhs);
    }
    add("summation_by_parts", sbp, 1e-10);
    add("energy_identity", ident, 1e-12);
    add("nehari_projection_residual", proj, 1e-12);
    add("nehari_projection_scale_invariance", scale_inv, 1e-10);
    add("holder_interpolation_bound", std::max(0.0, holder), 0.0);
  }
  {
    const auto& c = critical_constants(3, 1.0);
    const double q = c.two_mu_star();
    const double alt = (0.5 - 1.0 / (2.0 * q)) * c.t_star_U1 * c.t_star_U1 * c.grad_U1_sq;
    add("m_star_two_ways_3_1", std::abs(alt - c.m_star) / c.m_star, 1e-6);
    add("radial_refinement_3_1", c.refinement_change, 1e-6);
  }
  {
    // Gaussian double integral on a 2D lattice against the radial oracle.
    const double sigma = 0.2, mu = 1.0;
    const auto box = DomainSpec::box(2, {-1.0, -1.0, 0.0}, {1.0, 1.0, 0.0}, 0.2);
    const auto g = build_grid(box, 32);
    const auto k = build_kernel(g, mu, opts);
    const auto f = Field::from_function(g, [&](const Point& x) {
      return std::exp(-(x[0] * x[0] + x[1] * x[1]) / (2.0 * sigma * sigma));
    });
    const auto pot = convolve_fft(k, f);
    const double d = g->cell_volume() * compensated_sum(f.times(pot).values());
    const double oracle =
        radial_double_integral(2, mu, [&](double r) { return std::exp(-r * r / (2.0 * sigma * sigma)); }, 16);
    add("gaussian_d_term_vs_radial_oracle", std::abs(d - oracle) / oracle, 2e-2);
  }

  std::ostringstream csv;
  csv << "check,value,tolerance,passed\n";
  for (const auto& c : out.checks)
    csv << c.name << ',' << detail::fmt(c.value) << ',' << detail::fmt(c.tolerance) << ',' << (c.passed ? 1 : 0)
        << '\n';
  out.csv = csv.str();
  return out;
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
  int size = 0;
  std::size_t nodes = 0;
  double fft_ms = 0.0;
  double direct_ms = -1.0;  // negative: skipped
  double energy_ms = 0.0;
};

inline std::vector<BenchRow> run_bench(const std::vector<int>& sizes, double mu = 1.0) {
  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  std::mt19937_64 rng(7);
  for (int n : sizes) {
    if (n < 1) throw ConfigError("bench sizes must be positive");
    const auto g = box_lattice(2, n);
    const auto k = build_kernel(g, mu);
    const auto f = random_field(g, rng, 0.0, 1.0);
    BenchRow row;
    row.size = n;
    row.nodes = g->interior_size();
    auto time_ms = [&](auto&& fn, int reps) {
      const auto t0 = clock::now();
      for (int i = 0; i < reps; ++i) fn();
      return std::chrono::duration<double, std::milli>(clock::now() - t0).count() / reps;
    };
    row.fft_ms = time_ms([&] { (void)convolve_fft(k, f); }, 10);
    if (row.nodes <= 4096) row.direct_ms = time_ms([&] { (void)convolve_direct(k, f); }, 1);
    const auto params = ChoquardParams::from_eps(3, mu, 0.0, 0.5);
    row.energy_ms = time_ms([&] { (void)energy(f, params, k); }, 10);
    rows.push_back(row);
  }
  return rows;
}

inline std::string bench_text(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << std::setw(6) << "size" << std::setw(10) << "nodes" << std::setw(12) << "fft_ms" << std::setw(12)
     << "direct_ms" << std::setw(12) << "energy_ms" << '\n';
  os << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    os << std::setw(6) << r.size << std::setw(10) << r.nodes << std::setw(12) << r.fft_ms;
    if (r.direct_ms < 0.0) os << std::setw(12) << "-";
    else os << std::setw(12) << r.direct_ms;
    os << std::setw(12) << r.energy_ms << '\n';
  }
  return os.str();
}

} // namespace choquard
