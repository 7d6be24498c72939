#pragma once

// Config-driven scenario runs and plot-ready time series.
//
// Config files are YAML documents (see README for the grammar). Loading is
// strict: unknown keys, wrong types and contradictory parameters are
// rejected with the offending field and its line/column.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "veeqsd/correlations.hpp"
#include "veeqsd/model.hpp"
#include "veeqsd/noise.hpp"

namespace veeqsd {

inline constexpr int kConfigVersion = 1;

class ConfigError : public Error {
 public:
  enum class Kind { parse, validation, contradiction };

  ConfigError(Kind kind, std::string field, const std::string& message, int line = -1, int column = -1);

  Kind kind() const { return kind_; }
  const std::string& field() const { return field_; }
  int line() const { return line_; }  // 1-based, -1 if unknown
  int column() const { return column_; }

 private:
  Kind kind_;
  std::string field_;
  int line_;
  int column_;
};

enum class Method { analytic, master_ode, qsd_linear, qsd_nonlinear };

const char* method_name(Method m);
Method parse_method(const std::string& text);  // throws std::invalid_argument

struct InitialStateSpec {
  enum class Kind { level, phi_plus, phi_minus, custom };
  Kind kind = Kind::level;
  std::size_t level = 0;      // 0-based; config text "level-1" is level 0
  std::vector<cplx> amplitudes;  // custom only, normalized at load
};

struct ScenarioConfig {
  int version = kConfigVersion;
  std::string name;
  std::size_t upper_count = 0;
  std::vector<double> energies;
  std::vector<OUChannel> channels;
  InitialStateSpec initial_state;
  double dt = 0.002;
  double horizon = 50.0;
  std::size_t substeps = 1;
  Method method = Method::analytic;
  std::size_t ensemble_count = 1000;
  std::uint64_t seed = 1;
  ShiftConvention shift_convention = ShiftConvention::conjugated;
  std::string output;
  std::filesystem::path source;  // file the config was read from, if any
  std::string source_text;       // verbatim text, echoed into provenance

  TimeGrid grid() const { return TimeGrid::from_horizon(dt, horizon); }
  SystemSpec system() const { return build_system(upper_count, energies); }
  CorrelationKernel kernel() const { return CorrelationKernel(channels); }
  CVector initial_vector() const;
};

ScenarioConfig parse_config(const std::string& text, const std::filesystem::path& source = {});
// Throws IoError when the file cannot be read.
ScenarioConfig load_config(const std::filesystem::path& path);

// Plot-ready columns with a provenance header.
struct TimeSeriesDataset {
  std::vector<std::string> provenance;
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
  // Throws std::out_of_range for unknown names.
  const std::vector<double>& column(const std::string& name) const;
  bool has_column(const std::string& name) const;
  bool operator==(const TimeSeriesDataset&) const = default;
};

struct RunOptions {
  std::optional<Method> method;
  std::optional<std::uint64_t> seed;
  bool full_rho = false;
  unsigned threads = 0;
};

// Column set: t, rho11..rhoNN (diagonal, physics labels), abs/re/im_rho12
// when M >= 2, p; with full_rho also re_/im_rhoij for every i < j. QSD
// methods add se_<name> for every observable column.
TimeSeriesDataset run_scenario(const ScenarioConfig& config, const RunOptions& options = {});

// Header row, '#'-prefixed provenance above it, %.17g floats. Throws
// std::invalid_argument for datasets with fewer than two rows or ragged
// columns, IoError on write failure.
void emit_csv(const TimeSeriesDataset& dataset, const std::filesystem::path& path);
TimeSeriesDataset read_csv(const std::filesystem::path& path);

// Seed for run `index` of a sweep started with `master`.
std::uint64_t derive_run_seed(std::uint64_t master, std::uint64_t index);

// Bundled figure configs, sorted by name. The directory defaults to the one
// compiled in and can be overridden with VEEQSD_SCENARIO_DIR.
std::filesystem::path scenario_directory();
std::vector<std::filesystem::path> bundled_scenarios();

}  // namespace veeqsd
