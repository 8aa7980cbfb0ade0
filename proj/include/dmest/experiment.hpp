#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dmest/data.hpp"
#include "dmest/protocol.hpp"

namespace dmest {

enum class EstimatorKind {
  SimpleAvg,
  ResampledAvg,
  OneStep,
  Centralized,
  CentralizedPartial,
};

std::string_view estimator_name(EstimatorKind kind);

struct ExperimentConfig {
  GeneratorSpec gen;               // gen.seed is ignored; master_seed drives
  std::vector<int> k_grid;
  int repeats = 50;
  std::vector<EstimatorKind> estimators;
  double failure_rate = 0.0;
  bool per_round_failures = false;
  double resample_ratio = 0.1;
  std::uint64_t master_seed = 0;
  TransportKind transport = TransportKind::InProcess;
  SolveConfig solve;
};

struct ReportCell {
  EstimatorKind estimator{};
  int k = 0;  // 0 for the pooled (k-independent) estimators
  double mse_mean = 0.0;
  double mse_std = 0.0;
  bool degenerate_std = false;  // fewer than two included repeats
  int included = 0;
  int excluded = 0;  // repeats lost to AllMachinesFailed
  double wall_ms = 0.0;
  // Mean of trace(sigma_hat)/N across repeats; one-step cells only.
  double sigma_trace_over_n = 0.0;
  bool has_sigma = false;
};

struct FailureTally {
  long slots = 0;  // machine-round delivery opportunities
  long drops = 0;
  double rate() const { return slots == 0 ? 0.0 : static_cast<double>(drops) / slots; }
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<ReportCell> cells;
  FailureTally failures;  // both protocol rounds combined
};

ExperimentReport run_experiment(const ExperimentConfig& config);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;     // denominator n-1
  bool degenerate = false; // n == 1
};

Summary summarize(const std::vector<double>& values);

// CSV columns: estimator,k,N,d,K,r,s,mse_mean,mse_std,failures_excluded,seed,wall_ms
void write_report_csv(const std::vector<ExperimentReport>& reports, std::ostream& out);
void write_report_csv(const std::vector<ExperimentReport>& reports,
                      const std::string& path);
// JSON mirrors the CSV rows plus a full config echo per run.
void write_report_json(const std::vector<ExperimentReport>& reports,
                       const std::string& path);

// Named experiment presets; table5 expands to one run per sample size.
std::vector<ExperimentConfig> preset_configs(std::string_view name);
// Sanity assertions baked into CI-speed presets; returns human-readable
// violations (empty means pass).
std::vector<std::string> preset_violations(std::string_view name,
                                           const std::vector<ExperimentReport>& reports);

}  // namespace dmest
