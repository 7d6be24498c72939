// veeqsd command-line front end.
//
// Exit codes: 0 success, 2 config or usage error, 3 numerical error (pole,
// tolerance), 4 I/O error, 1 anything else.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "veeqsd/noise.hpp"
#include "veeqsd/scenario.hpp"
#include "veeqsd/simd/kernels.hpp"

namespace fs = std::filesystem;
using namespace veeqsd;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kNumerical = 3, kIo = 4 };

int guarded(const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}

fs::path default_output(const ScenarioConfig& cfg) {
  return cfg.output.empty() ? fs::path(cfg.name + ".csv") : fs::path(cfg.output);
}

void print_summary(const TimeSeriesDataset& ds, const fs::path& out) {
  const std::size_t last = ds.rows() - 1;
  std::printf("wrote %s (%zu rows)", out.string().c_str(), ds.rows());
  for (const char* name : {"t", "rho11", "rho22", "rho33", "abs_rho12", "p"})
    if (ds.has_column(name)) std::printf(" %s=%.6g", name, ds.column(name)[last]);
  std::printf("\n");
}

struct RunArgs {
  std::string config;
  std::string out;
  std::string method;
  std::optional<std::uint64_t> seed;
  bool full_rho = false;
  unsigned threads = 0;
};

void cmd_run(const RunArgs& args) {
  const ScenarioConfig cfg = load_config(args.config);
  RunOptions opts;
  if (!args.method.empty()) opts.method = parse_method(args.method);
  opts.seed = args.seed;
  opts.full_rho = args.full_rho;
  opts.threads = args.threads;
  const TimeSeriesDataset ds = run_scenario(cfg, opts);
  const fs::path out = args.out.empty() ? default_output(cfg) : fs::path(args.out);
  emit_csv(ds, out);
  print_summary(ds, out);
}

void cmd_validate(const std::vector<std::string>& configs) {
  for (const std::string& path : configs) {
    const ScenarioConfig cfg = load_config(path);
    const TimeGrid grid = cfg.grid();
    std::printf("ok %s: name=%s upper_count=%zu method=%s dt=%g T=%g steps=%zu\n", path.c_str(), cfg.name.c_str(),
                cfg.upper_count, method_name(cfg.method), grid.dt, grid.horizon(), grid.steps);
  }
}

void cmd_list() {
  const auto files = bundled_scenarios();
  if (files.empty()) {
    std::printf("no scenarios found in %s\n", scenario_directory().string().c_str());
    return;
  }
  for (const fs::path& p : files) {
    const ScenarioConfig cfg = load_config(p);
    std::printf("%-14s %s\n", cfg.name.c_str(), p.string().c_str());
  }
}

struct AuditArgs {
  std::string config;
  std::string out = "noise.bin";
  std::size_t count = 16;
  std::optional<std::uint64_t> seed;
};

void cmd_noise_audit(const AuditArgs& args) {
  const ScenarioConfig cfg = load_config(args.config);
  const CorrelationKernel kernel = cfg.kernel();
  // Trajectories sample noise on the twice-refined grid.
  const TimeGrid grid = cfg.grid().refined(2);
  const CovarianceFactor factor = build_covariance(kernel, grid);
  const std::uint64_t seed = args.seed.value_or(cfg.seed);
  const NoisePathBatch batch = sample_noise(factor, seed, args.count);
  write_noise_batch(batch, args.out);

  std::printf("wrote %s: channels=%zu points=%zu dt=%g seed=%llu count=%zu jitter=%g simd=%s\n", args.out.c_str(),
              batch.channels, grid.points(), grid.dt, static_cast<unsigned long long>(seed), batch.paths.size(),
              factor.jitter, simd::backend_name(simd::active_backend()));
  // Lag-0 variance pooled over time points, against alpha_mm(0).
  const std::size_t M = batch.channels;
  for (std::size_t m = 0; m < M; ++m) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const NoisePath& p : batch.paths)
      for (std::size_t j = 0; j < grid.points(); ++j, ++n) sum += std::norm(p.zstar[j * M + m]);
    std::printf("channel %zu: mean |z|^2 = %.6g, alpha(0) = %.6g\n", m + 1, sum / static_cast<double>(n),
                kernel.alpha_lag(m, m, 0.0).real());
  }
}

struct SweepArgs {
  std::vector<std::string> configs;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  unsigned jobs = 1;
};

int cmd_sweep(const SweepArgs& args) {
  fs::create_directories(args.out_dir);
  std::atomic<std::size_t> next{0};
  std::vector<int> codes(args.configs.size(), kOk);
  std::mutex io;
  const unsigned jobs = std::max(1u, std::min<unsigned>(args.jobs, static_cast<unsigned>(args.configs.size())));
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < args.configs.size(); i = next.fetch_add(1)) {
      codes[i] = guarded([&] {
        const ScenarioConfig cfg = load_config(args.configs[i]);
        RunOptions opts;
        opts.seed = derive_run_seed(args.seed, i);
        opts.threads = jobs > 1 ? 1 : 0;
        const TimeSeriesDataset ds = run_scenario(cfg, opts);
        const fs::path out = fs::path(args.out_dir) / (cfg.name + ".csv");
        emit_csv(ds, out);
        std::lock_guard lock(io);
        print_summary(ds, out);
      });
    }
  };
  {
    std::vector<std::jthread> pool;
    for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }
  int worst = kOk;
  for (int c : codes) worst = std::max(worst, c);
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-Markovian vee-system dynamics: exact master equation and quantum state diffusion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("veeqsd ") + VEEQSD_VERSION);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run one scenario config and write a CSV time series");
  run_cmd->add_option("config", run.config, "Scenario config file")->required();
  run_cmd->add_option("--out,-o", run.out, "Output CSV (default: config 'output' or <name>.csv)");
  run_cmd->add_option("--method", run.method, "Override method: analytic, master-ode, qsd-linear, qsd-nonlinear");
  run_cmd->add_option("--seed", run.seed, "Override the ensemble seed");
  run_cmd->add_flag("--full-rho", run.full_rho, "Also write every off-diagonal density-matrix element");
  run_cmd->add_option("--threads", run.threads, "Worker threads for QSD ensembles (0: all cores)");

  std::vector<std::string> validate_configs;
  auto* validate_cmd = app.add_subcommand("validate", "Parse and validate config files");
  validate_cmd->add_option("configs", validate_configs, "Config files")->required();

  auto* list_cmd = app.add_subcommand("list-scenarios", "List the bundled figure scenarios");

  AuditArgs audit;
  auto* audit_cmd = app.add_subcommand("noise-audit", "Sample noise paths for a config and dump them");
  audit_cmd->add_option("config", audit.config, "Scenario config file")->required();
  audit_cmd->add_option("--count", audit.count, "Number of paths")->check(CLI::PositiveNumber);
  audit_cmd->add_option("--seed", audit.seed, "Seed (default: config seed)");
  audit_cmd->add_option("--out,-o", audit.out, "Binary output file");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run several configs; per-run seeds derive from --seed");
  sweep_cmd->add_option("configs", sweep.configs, "Config files")->required();
  sweep_cmd->add_option("--out-dir", sweep.out_dir, "Directory for <name>.csv outputs");
  sweep_cmd->add_option("--seed", sweep.seed, "Master seed");
  sweep_cmd->add_option("--jobs,-j", sweep.jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (*run_cmd) return guarded([&] { cmd_run(run); });
  if (*validate_cmd) return guarded([&] { cmd_validate(validate_configs); });
  if (*list_cmd) return guarded(cmd_list);
  if (*audit_cmd) return guarded([&] { cmd_noise_audit(audit); });
  if (*sweep_cmd) {
    int code = kOk;
    const int setup = guarded([&] { code = cmd_sweep(sweep); });
    return setup != kOk ? setup : code;
  }
  return kOther;
}
