#include "veeqsd/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <yaml-cpp/yaml.h>

#include "veeqsd/coefficients.hpp"
#include "veeqsd/ensemble.hpp"
#include "veeqsd/master.hpp"

namespace veeqsd {

namespace {

std::string located(const std::string& field, const std::string& message, int line, int column) {
  std::ostringstream out;
  if (line > 0) out << "line " << line << ", column " << column << ": ";
  if (!field.empty()) out << field << ": ";
  out << message;
  return out.str();
}

[[noreturn]] void fail(ConfigError::Kind kind, const std::string& field, const std::string& message,
                       const YAML::Node& node) {
  const YAML::Mark mark = node.Mark();
  const bool known = mark.line >= 0 && !mark.is_null();
  throw ConfigError(kind, field, message, known ? mark.line + 1 : -1, known ? mark.column + 1 : -1);
}

[[noreturn]] void invalid(const std::string& field, const std::string& message, const YAML::Node& node) {
  fail(ConfigError::Kind::validation, field, message, node);
}

void require_keys(const YAML::Node& map, const std::string& where, const std::set<std::string>& allowed) {
  if (!map.IsMap()) invalid(where, "expected a mapping", map);
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key))
      invalid(where.empty() ? key : where + "." + key, "unknown key", kv.first);
  }
}

YAML::Node required(const YAML::Node& map, const std::string& key, const std::string& field) {
  const YAML::Node node = map[key];
  if (!node) invalid(field, "missing required key", map);
  return node;
}

double as_double(const YAML::Node& node, const std::string& field) {
  if (!node.IsScalar()) invalid(field, "expected a number", node);
  try {
    const double v = node.as<double>();
    if (!std::isfinite(v)) invalid(field, "must be finite", node);
    return v;
  } catch (const YAML::BadConversion&) {
    invalid(field, "expected a number, got '" + node.Scalar() + "'", node);
  }
}

std::uint64_t as_uint(const YAML::Node& node, const std::string& field) {
  if (!node.IsScalar()) invalid(field, "expected a non-negative integer", node);
  const std::string& text = node.Scalar();
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
    invalid(field, "expected a non-negative integer, got '" + text + "'", node);
  try {
    return node.as<std::uint64_t>();
  } catch (const YAML::BadConversion&) {
    invalid(field, "integer out of range", node);
  }
}

std::string as_string(const YAML::Node& node, const std::string& field) {
  if (!node.IsScalar()) invalid(field, "expected a string", node);
  return node.Scalar();
}

// A number, or [re, im].
cplx as_complex(const YAML::Node& node, const std::string& field) {
  if (node.IsSequence()) {
    if (node.size() != 2) invalid(field, "complex values are written [re, im]", node);
    return {as_double(node[0], field + "[0]"), as_double(node[1], field + "[1]")};
  }
  return as_double(node, field);
}

bool nearly_equal(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)}); }

void parse_system(const YAML::Node& node, ScenarioConfig& cfg) {
  require_keys(node, "system", {"upper_count", "energies"});
  const YAML::Node count = required(node, "upper_count", "system.upper_count");
  cfg.upper_count = as_uint(count, "system.upper_count");
  if (cfg.upper_count < 1) invalid("system.upper_count", "must be >= 1", count);
  const YAML::Node energies = required(node, "energies", "system.energies");
  if (!energies.IsSequence()) invalid("system.energies", "expected a list", energies);
  if (energies.size() != cfg.upper_count)
    invalid("system.energies", "expected " + std::to_string(cfg.upper_count) + " entries", energies);
  for (std::size_t m = 0; m < energies.size(); ++m)
    cfg.energies.push_back(as_double(energies[m], "system.energies[" + std::to_string(m) + "]"));
}

void parse_channels(const YAML::Node& node, ScenarioConfig& cfg) {
  if (!node.IsSequence()) invalid("channels", "expected a list", node);
  if (node.size() != cfg.upper_count)
    invalid("channels", "expected one channel per upper level (" + std::to_string(cfg.upper_count) + ")", node);
  for (std::size_t m = 0; m < node.size(); ++m) {
    const std::string at = "channels[" + std::to_string(m) + "]";
    const YAML::Node ch = node[m];
    require_keys(ch, at, {"kappa", "Gamma", "gamma", "Omega", "Delta"});

    const double gamma = as_double(required(ch, "gamma", at + ".gamma"), at + ".gamma");
    if (gamma <= 0.0) invalid(at + ".gamma", "must be > 0", ch["gamma"]);

    cplx kappa;
    if (ch["kappa"]) {
      kappa = as_complex(ch["kappa"], at + ".kappa");
      if (ch["Gamma"]) {
        const double Gamma = as_double(ch["Gamma"], at + ".Gamma");
        if (!nearly_equal(std::norm(kappa), Gamma))
          fail(ConfigError::Kind::contradiction, at + ".Gamma",
               "Gamma must equal |kappa|^2 (kappa gives " + std::to_string(std::norm(kappa)) + ")", ch["Gamma"]);
      }
    } else if (ch["Gamma"]) {
      const double Gamma = as_double(ch["Gamma"], at + ".Gamma");
      if (Gamma < 0.0) invalid(at + ".Gamma", "must be >= 0", ch["Gamma"]);
      kappa = std::sqrt(Gamma);
    } else {
      invalid(at, "one of kappa or Gamma is required", ch);
    }

    const double level_energy = cfg.energies[m];
    double Omega;
    if (ch["Omega"]) {
      Omega = as_double(ch["Omega"], at + ".Omega");
      if (ch["Delta"] && !nearly_equal(level_energy - Omega, as_double(ch["Delta"], at + ".Delta")))
        fail(ConfigError::Kind::contradiction, at + ".Delta", "Delta must equal energy - Omega", ch["Delta"]);
    } else if (ch["Delta"]) {
      Omega = level_energy - as_double(ch["Delta"], at + ".Delta");
    } else {
      invalid(at, "one of Omega or Delta is required", ch);
    }
    cfg.channels.push_back(make_channel(kappa, gamma, Omega));
  }
}

void parse_initial_state(const YAML::Node& node, ScenarioConfig& cfg) {
  const std::string field = "initial_state";
  InitialStateSpec& spec = cfg.initial_state;
  if (node.IsMap()) {
    require_keys(node, field, {"custom"});
    const YAML::Node amps = required(node, "custom", field + ".custom");
    if (!amps.IsSequence() || amps.size() != cfg.upper_count + 1)
      invalid(field + ".custom", "expected " + std::to_string(cfg.upper_count + 1) + " amplitudes", amps);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < amps.size(); ++i) {
      spec.amplitudes.push_back(as_complex(amps[i], field + ".custom[" + std::to_string(i) + "]"));
      norm2 += std::norm(spec.amplitudes.back());
    }
    if (norm2 <= 0.0) invalid(field + ".custom", "amplitudes are all zero", amps);
    for (cplx& a : spec.amplitudes) a /= std::sqrt(norm2);
    spec.kind = InitialStateSpec::Kind::custom;
    return;
  }
  const std::string text = as_string(node, field);
  if (text == "phi-plus" || text == "phi-minus") {
    if (cfg.upper_count != 2) invalid(field, text + " needs exactly two upper levels", node);
    if (std::norm(cfg.channels[0].kappa) + std::norm(cfg.channels[1].kappa) == 0.0)
      invalid(field, text + " is undefined when both couplings vanish", node);
    spec.kind = text == "phi-plus" ? InitialStateSpec::Kind::phi_plus : InitialStateSpec::Kind::phi_minus;
    return;
  }
  if (text.rfind("level-", 0) == 0) {
    const std::string digits = text.substr(6);
    if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos) {
      const std::size_t level = std::stoul(digits);
      if (level >= 1 && level <= cfg.upper_count + 1) {
        spec.kind = InitialStateSpec::Kind::level;
        spec.level = level - 1;
        return;
      }
    }
    invalid(field, "level must be between 1 and " + std::to_string(cfg.upper_count + 1), node);
  }
  invalid(field, "expected level-<k>, phi-plus, phi-minus or {custom: [...]}", node);
}

void parse_grid(const YAML::Node& node, ScenarioConfig& cfg) {
  require_keys(node, "grid", {"dt", "T", "substeps"});
  if (node["dt"]) {
    cfg.dt = as_double(node["dt"], "grid.dt");
    if (cfg.dt <= 0.0) invalid("grid.dt", "must be > 0", node["dt"]);
  }
  if (node["T"]) {
    cfg.horizon = as_double(node["T"], "grid.T");
    if (cfg.horizon <= 0.0) invalid("grid.T", "must be > 0", node["T"]);
  }
  if (node["substeps"]) {
    cfg.substeps = as_uint(node["substeps"], "grid.substeps");
    if (cfg.substeps < 1) invalid("grid.substeps", "must be >= 1", node["substeps"]);
  }
}

void parse_ensemble(const YAML::Node& node, ScenarioConfig& cfg) {
  require_keys(node, "ensemble", {"count", "seed", "shift_convention"});
  if (node["count"]) {
    cfg.ensemble_count = as_uint(node["count"], "ensemble.count");
    if (cfg.ensemble_count < 1) invalid("ensemble.count", "must be >= 1", node["count"]);
  }
  if (node["seed"]) cfg.seed = as_uint(node["seed"], "ensemble.seed");
  if (node["shift_convention"]) {
    try {
      cfg.shift_convention = parse_shift_convention(as_string(node["shift_convention"], "ensemble.shift_convention"));
    } catch (const std::invalid_argument& e) {
      invalid("ensemble.shift_convention", e.what(), node["shift_convention"]);
    }
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string level_label(std::size_t i, std::size_t j) { return std::to_string(i + 1) + std::to_string(j + 1); }

TimeSeriesDataset make_dataset(const ScenarioConfig& cfg, const TimeGrid& grid, const std::vector<CMatrix>& rho,
                               const std::vector<CMatrix>* std_error, Method method, std::uint64_t seed,
                               bool full_rho, bool exact_trace) {
  const std::size_t D = cfg.upper_count + 1;
  const std::size_t M = cfg.upper_count;
  TimeSeriesDataset ds;
  ds.provenance.push_back(std::string("veeqsd ") + VEEQSD_VERSION);
  ds.provenance.push_back("scenario: " + cfg.name);
  ds.provenance.push_back(std::string("method: ") + method_name(method));
  ds.provenance.push_back("seed: " + std::to_string(seed));
  ds.provenance.push_back("grid: dt=" + format_double(grid.dt) + " steps=" + std::to_string(grid.steps));
  if (!cfg.source.empty()) ds.provenance.push_back("config file: " + cfg.source.filename().string());
  std::istringstream echo(cfg.source_text);
  for (std::string line; std::getline(echo, line);) ds.provenance.push_back("config| " + line);

  struct Column {
    std::string name;
    std::vector<double> values;
    std::vector<double> se;
  };
  std::vector<Column> cols;
  auto entry = [](const CMatrix& m, std::size_t i, std::size_t j) {
    return m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };
  cols.push_back({"t", {}, {}});
  for (std::size_t i = 0; i < D; ++i) cols.push_back({"rho" + level_label(i, i), {}, {}});
  if (M >= 2) {
    cols.push_back({"abs_rho12", {}, {}});
    cols.push_back({"re_rho12", {}, {}});
    cols.push_back({"im_rho12", {}, {}});
  }
  if (full_rho)
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = i + 1; j < D; ++j) {
        if (M >= 2 && i == 0 && j == 1) continue;
        cols.push_back({"re_rho" + level_label(i, j), {}, {}});
        cols.push_back({"im_rho" + level_label(i, j), {}, {}});
      }
  cols.push_back({"p", {}, {}});

  for (std::size_t k = 0; k < rho.size(); ++k) {
    const CMatrix& r = rho[k];
    const CMatrix* se = std_error ? &(*std_error)[k] : nullptr;
    std::size_t c = 0;
    auto push = [&](double v, double e) {
      cols[c].values.push_back(v);
      cols[c].se.push_back(e);
      ++c;
    };
    push(grid.time(k), 0.0);
    for (std::size_t i = 0; i < D; ++i) push(entry(r, i, i).real(), se ? entry(*se, i, i).real() : 0.0);
    if (M >= 2) {
      const cplx z = entry(r, 0, 1);
      const cplx e = se ? entry(*se, 0, 1) : cplx{};
      const double a = std::abs(z);
      const double se_abs =
          a > 0.0 ? std::hypot(z.real() * e.real(), z.imag() * e.imag()) / a : std::hypot(e.real(), e.imag());
      push(a, se_abs);
      push(z.real(), e.real());
      push(z.imag(), e.imag());
    }
    if (full_rho)
      for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = i + 1; j < D; ++j) {
          if (M >= 2 && i == 0 && j == 1) continue;
          const cplx e = se ? entry(*se, i, j) : cplx{};
          push(entry(r, i, j).real(), e.real());
          push(entry(r, i, j).imag(), e.imag());
        }
    double p = 0.0, se_p = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      p += entry(r, m, m).real();
      if (se) se_p += entry(*se, m, m).real();
    }
    // With a unit trace per sample, p = 1 - rho_gg and shares its error.
    if (se && exact_trace) se_p = entry(*se, M, M).real();
    push(p, se_p);
  }

  for (const Column& c : cols) {
    ds.names.push_back(c.name);
    ds.columns.push_back(c.values);
  }
  if (std_error)
    for (const Column& c : cols) {
      if (c.name == "t") continue;
      ds.names.push_back("se_" + c.name);
      ds.columns.push_back(c.se);
    }
  return ds;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

ConfigError::ConfigError(Kind kind, std::string field, const std::string& message, int line, int column)
    : Error(located(field, message, line, column)),
      kind_(kind),
      field_(std::move(field)),
      line_(line),
      column_(column) {}

const char* method_name(Method m) {
  switch (m) {
    case Method::analytic:
      return "analytic";
    case Method::master_ode:
      return "master-ode";
    case Method::qsd_linear:
      return "qsd-linear";
    case Method::qsd_nonlinear:
      return "qsd-nonlinear";
  }
  return "unknown";
}

Method parse_method(const std::string& text) {
  for (Method m : {Method::analytic, Method::master_ode, Method::qsd_linear, Method::qsd_nonlinear})
    if (text == method_name(m)) return m;
  throw std::invalid_argument("unknown method '" + text + "' (analytic, master-ode, qsd-linear, qsd-nonlinear)");
}

CVector ScenarioConfig::initial_vector() const {
  const SystemSpec sys = system();
  switch (initial_state.kind) {
    case InitialStateSpec::Kind::level:
      return level_state(sys, initial_state.level).amplitudes;
    case InitialStateSpec::Kind::phi_plus:
    case InitialStateSpec::Kind::phi_minus: {
      const std::vector<cplx> kappas{channels.at(0).kappa, channels.at(1).kappa};
      const auto [plus, minus] = superposition_states(sys, kappas);
      return initial_state.kind == InitialStateSpec::Kind::phi_plus ? plus.amplitudes : minus.amplitudes;
    }
    case InitialStateSpec::Kind::custom: {
      CVector v(static_cast<Eigen::Index>(initial_state.amplitudes.size()));
      for (std::size_t i = 0; i < initial_state.amplitudes.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = initial_state.amplitudes[i];
      return v;
    }
  }
  throw std::logic_error("initial_vector: unknown kind");
}

ScenarioConfig parse_config(const std::string& text, const std::filesystem::path& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(ConfigError::Kind::parse, "", e.msg, e.mark.line + 1, e.mark.column + 1);
  }
  if (!root.IsMap()) throw ConfigError(ConfigError::Kind::parse, "", "config must be a mapping of sections");
  require_keys(root, "",
               {"version", "name", "system", "channels", "initial_state", "grid", "method", "ensemble", "output"});

  ScenarioConfig cfg;
  cfg.source = source;
  cfg.source_text = text;
  const YAML::Node version = required(root, "version", "version");
  if (as_uint(version, "version") != static_cast<std::uint64_t>(kConfigVersion))
    invalid("version", "unsupported config version (expected " + std::to_string(kConfigVersion) + ")", version);
  cfg.name = root["name"] ? as_string(root["name"], "name") : source.stem().string();
  parse_system(required(root, "system", "system"), cfg);
  parse_channels(required(root, "channels", "channels"), cfg);
  parse_initial_state(required(root, "initial_state", "initial_state"), cfg);
  if (root["grid"]) parse_grid(root["grid"], cfg);
  if (root["method"]) {
    try {
      cfg.method = parse_method(as_string(root["method"], "method"));
    } catch (const std::invalid_argument& e) {
      invalid("method", e.what(), root["method"]);
    }
  }
  if (root["ensemble"]) parse_ensemble(root["ensemble"], cfg);
  if (root["output"]) cfg.output = as_string(root["output"], "output");
  return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path);
}

const std::vector<double>& TimeSeriesDataset::column(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("dataset has no column '" + name + "'");
  return columns[static_cast<std::size_t>(it - names.begin())];
}

bool TimeSeriesDataset::has_column(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

TimeSeriesDataset run_scenario(const ScenarioConfig& config, const RunOptions& options) {
  const Method method = options.method.value_or(config.method);
  const std::uint64_t seed = options.seed.value_or(config.seed);
  const SystemSpec system = config.system();
  const CorrelationKernel kernel = config.kernel();
  const TimeGrid grid = config.grid();
  const CVector psi0 = config.initial_vector();
  const CMatrix rho0 = psi0 * psi0.adjoint();

  switch (method) {
    case Method::analytic: {
      const MasterSolution sol = assemble_state(system, propagate_pair(system, kernel, grid, config.substeps), rho0);
      return make_dataset(config, sol.grid, sol.rho, nullptr, method, seed, options.full_rho, true);
    }
    case Method::master_ode: {
      RiccatiOptions ropts;
      ropts.substeps = config.substeps;
      ropts.estimate_error = false;
      const CoefficientField field = solve_F_ou(system, kernel, grid.refined(2), ropts);
      const MasterSolution sol = integrate_master_direct(system, field, rho0);
      return make_dataset(config, sol.grid, sol.rho, nullptr, method, seed, options.full_rho, true);
    }
    case Method::qsd_linear:
    case Method::qsd_nonlinear: {
      EnsembleOptions eopts;
      eopts.threads = options.threads;
      eopts.convention = config.shift_convention;
      eopts.riccati_substeps = config.substeps;
      const QsdMode mode = method == Method::qsd_linear ? QsdMode::linear : QsdMode::nonlinear;
      const EnsembleEstimate est = run_ensemble(system, kernel, psi0, grid, config.ensemble_count, seed, mode, eopts);
      return make_dataset(config, est.grid, est.mean, &est.std_error, method, seed, options.full_rho,
                          mode == QsdMode::nonlinear);
    }
  }
  throw std::logic_error("run_scenario: unknown method");
}

void emit_csv(const TimeSeriesDataset& dataset, const std::filesystem::path& path) {
  if (dataset.names.size() != dataset.columns.size() || dataset.columns.empty())
    throw std::invalid_argument("emit_csv: dataset has no columns or mismatched names");
  const std::size_t rows = dataset.rows();
  for (const auto& c : dataset.columns)
    if (c.size() != rows) throw std::invalid_argument("emit_csv: column lengths differ");
  if (rows < 2) throw std::invalid_argument("emit_csv: dataset has an empty time grid");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const std::string& line : dataset.provenance) out << "# " << line << '\n';
  for (std::size_t c = 0; c < dataset.names.size(); ++c) out << (c ? "," : "") << dataset.names[c];
  out << '\n';
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < dataset.columns.size(); ++c) out << (c ? "," : "") << format_double(dataset.columns[c][r]);
    out << '\n';
  }
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

TimeSeriesDataset read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  TimeSeriesDataset ds;
  std::string line;
  bool header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!header && line.rfind('#', 0) == 0) {
      ds.provenance.push_back(line.rfind("# ", 0) == 0 ? line.substr(2) : line.substr(1));
      continue;
    }
    std::vector<std::string> fields;
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, ',');) fields.push_back(cell);
    if (!header) {
      ds.names = fields;
      ds.columns.assign(fields.size(), {});
      header = true;
      continue;
    }
    if (fields.size() != ds.names.size())
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(ds.names.size()) +
                    " fields");
    for (std::size_t c = 0; c < fields.size(); ++c) {
      char* end = nullptr;
      const double v = std::strtod(fields[c].c_str(), &end);
      if (end == fields[c].c_str() || *end != '\0')
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": not a number: '" + fields[c] + "'");
      ds.columns[c].push_back(v);
    }
  }
  if (!header) throw IoError(path.string() + ": missing header row");
  return ds;
}

std::uint64_t derive_run_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index));
}

std::filesystem::path scenario_directory() {
  if (const char* env = std::getenv("VEEQSD_SCENARIO_DIR"); env != nullptr && *env != '\0') return env;
  return VEEQSD_SCENARIO_DIR;
}

std::vector<std::filesystem::path> bundled_scenarios() {
  std::vector<std::filesystem::path> out;
  const auto dir = scenario_directory();
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".cfg") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace veeqsd
