#include "dmest/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>

namespace dmest {

std::string_view estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::SimpleAvg: return "simple_avg";
    case EstimatorKind::ResampledAvg: return "resampled_avg";
    case EstimatorKind::OneStep: return "one_step";
    case EstimatorKind::Centralized: return "centralized";
    case EstimatorKind::CentralizedPartial: return "centralized_partial";
  }
  throw DomainError("estimator_name: bad kind");
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw EmptyInput("summarize: no values");
  KahanScalar sum;
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteInput("summarize: non-finite value");
    sum.add(v);
  }
  Summary out;
  const double n = static_cast<double>(values.size());
  out.mean = sum.value() / n;
  if (values.size() == 1) {
    out.stddev = 0.0;
    out.degenerate = true;
    return out;
  }
  KahanScalar ss;
  for (double v : values) {
    const double e = v - out.mean;
    ss.add(e * e);
  }
  out.stddev = std::sqrt(ss.value() / (n - 1.0));
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

struct CellAccumulator {
  std::vector<double> errors;
  std::vector<double> sigma_traces;
  int excluded = 0;
  double wall_ms = 0.0;
};

bool wants(const ExperimentConfig& cfg, EstimatorKind kind) {
  return std::find(cfg.estimators.begin(), cfg.estimators.end(), kind) !=
         cfg.estimators.end();
}

void check_config(const ExperimentConfig& cfg) {
  if (cfg.repeats < 1) throw DomainError("experiment: repeats must be >= 1");
  if (cfg.gen.n < 1) throw DomainError("experiment: n must be >= 1");
  if (cfg.failure_rate < 0.0 || cfg.failure_rate >= 1.0)
    throw DomainError("experiment: failure rate must lie in [0,1)");
  if (cfg.estimators.empty() && !cfg.k_grid.empty())
    throw DomainError("experiment: no estimators selected");
  const bool distributed = wants(cfg, EstimatorKind::SimpleAvg) ||
                           wants(cfg, EstimatorKind::ResampledAvg) ||
                           wants(cfg, EstimatorKind::OneStep);
  if (distributed && cfg.k_grid.empty())
    throw DomainError("experiment: distributed estimators need a k grid");
  for (int k : cfg.k_grid) {
    if (k < 1) throw DomainError("experiment: k must be >= 1");
    if (cfg.gen.n % k != 0)
      throw IndivisibleSplit("experiment: k = " + std::to_string(k) +
                             " does not divide N = " + std::to_string(cfg.gen.n));
  }
  if (wants(cfg, EstimatorKind::ResampledAvg)) {
    if (!(cfg.resample_ratio > 0.0 && cfg.resample_ratio < 1.0))
      throw DomainError("experiment: resample ratio must lie in (0,1)");
    for (int k : cfg.k_grid) {
      const long per_machine = cfg.gen.n / k;
      if (static_cast<long>(std::floor(cfg.resample_ratio *
                                       static_cast<double>(per_machine))) < 1)
        throw DomainError("experiment: resample ratio leaves an empty subsample at k = " +
                          std::to_string(k));
    }
  }
  if (wants(cfg, EstimatorKind::CentralizedPartial)) {
    const long m = static_cast<long>(
        std::floor((1.0 - cfg.failure_rate) * static_cast<double>(cfg.gen.n)));
    if (m < 1) throw DomainError("experiment: partial subsample would be empty");
  }
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config) {
  check_config(config);
  const auto model = make_model(model_kind_name(config.gen.kind), config.gen.d);
  const bool want_simple = wants(config, EstimatorKind::SimpleAvg);
  const bool want_resampled = wants(config, EstimatorKind::ResampledAvg);
  const bool want_one_step = wants(config, EstimatorKind::OneStep);
  const bool want_central = wants(config, EstimatorKind::Centralized);
  const bool want_partial = wants(config, EstimatorKind::CentralizedPartial);
  const bool run_protocol_rounds = want_simple || want_resampled || want_one_step;

  std::map<std::pair<EstimatorKind, int>, CellAccumulator> cells;
  FailureTally failures;

  for (int rep = 0; rep < config.repeats; ++rep) {
    GeneratorSpec spec = config.gen;
    spec.seed = derive_seed(config.master_seed, "gen", static_cast<std::uint64_t>(rep));
    const Generated data = generate(spec);

    if (want_central) {
      const auto start = Clock::now();
      Shard pooled;
      pooled.machine_id = 0;
      pooled.samples = data.samples;
      const SolveResult fit =
          m_estimate(*model, pooled, model->default_init(pooled), config.solve);
      auto& cell = cells[{EstimatorKind::Centralized, 0}];
      cell.errors.push_back((fit.theta_hat - data.theta_true).squaredNorm());
      cell.wall_ms += ms_since(start);
    }

    if (want_partial) {
      const auto start = Clock::now();
      const std::size_t n = data.samples.size();
      const std::size_t m = static_cast<std::size_t>(
          std::floor((1.0 - config.failure_rate) * static_cast<double>(n)));
      Rng rng = substream(config.master_seed, "partial", static_cast<std::uint64_t>(rep));
      const auto picked = sample_without_replacement(n, m, rng);
      Shard part;
      part.machine_id = 0;
      part.samples.reserve(m);
      for (std::size_t idx : picked) part.samples.push_back(data.samples[idx]);
      const SolveResult fit =
          m_estimate(*model, part, model->default_init(part), config.solve);
      auto& cell = cells[{EstimatorKind::CentralizedPartial, 0}];
      cell.errors.push_back((fit.theta_hat - data.theta_true).squaredNorm());
      cell.wall_ms += ms_since(start);
    }

    if (!run_protocol_rounds) continue;

    for (int k : config.k_grid) {
      const auto start = Clock::now();
      const auto shards = shard_split(
          data.samples, k,
          derive_seed(config.master_seed, "shard", static_cast<std::uint64_t>(rep),
                      static_cast<std::uint64_t>(k)));
      ProtocolConfig pc;
      pc.solve = config.solve;
      pc.failure = FailurePolicy{
          config.failure_rate, config.per_round_failures,
          derive_seed(config.master_seed, "failure", static_cast<std::uint64_t>(rep),
                      static_cast<std::uint64_t>(k))};
      if (want_resampled)
        pc.resample = ResamplePolicy{
            config.resample_ratio,
            derive_seed(config.master_seed, "resample", static_cast<std::uint64_t>(rep),
                        static_cast<std::uint64_t>(k))};

      auto record_masks = [&](const std::vector<int>& m1, const std::vector<int>& m2) {
        for (int a : m1) { ++failures.slots; failures.drops += (a == 0); }
        for (int a : m2) { ++failures.slots; failures.drops += (a == 0); }
      };

      std::optional<ProtocolResult> result;
      std::optional<AllMachinesFailed> lost;
      try {
        result = run_protocol(*model, shards, pc, config.transport);
      } catch (const AllMachinesFailed& e) {
        lost = e;
      }
      const double elapsed = ms_since(start);

      const Vector* avg = nullptr;
      const Vector* sub = nullptr;
      const Vector* one = nullptr;
      if (result) {
        record_masks(result->round1_mask, result->round2_mask);
        avg = &result->average_estimate;
        if (result->subsample_average) sub = &*result->subsample_average;
        one = &result->one_step_estimate;
      } else {
        record_masks(lost->round1_mask, lost->round2_mask);
        if (lost->average_estimate) avg = &*lost->average_estimate;
        if (lost->subsample_average) sub = &*lost->subsample_average;
      }

      if (want_simple) {
        auto& cell = cells[{EstimatorKind::SimpleAvg, k}];
        if (avg) cell.errors.push_back((*avg - data.theta_true).squaredNorm());
        else ++cell.excluded;
        cell.wall_ms += elapsed;
      }
      if (want_resampled) {
        auto& cell = cells[{EstimatorKind::ResampledAvg, k}];
        if (avg && sub) {
          const Vector corrected =
              resampled_average(*avg, *sub, config.resample_ratio);
          cell.errors.push_back((corrected - data.theta_true).squaredNorm());
        } else {
          ++cell.excluded;
        }
        cell.wall_ms += elapsed;
      }
      if (want_one_step) {
        auto& cell = cells[{EstimatorKind::OneStep, k}];
        if (one) {
          cell.errors.push_back((*one - data.theta_true).squaredNorm());
          const SandwichCovariance cov =
              sandwich_covariance(*model, data.samples, *one);
          cell.sigma_traces.push_back(cov.sigma.trace() /
                                      static_cast<double>(data.samples.size()));
        } else {
          ++cell.excluded;
        }
        cell.wall_ms += elapsed;
      }
    }
  }

  ExperimentReport report;
  report.config = config;
  report.failures = failures;
  for (EstimatorKind kind : config.estimators) {
    std::vector<int> ks;
    if (kind == EstimatorKind::Centralized || kind == EstimatorKind::CentralizedPartial)
      ks = {0};
    else
      ks = config.k_grid;
    for (int k : ks) {
      const auto it = cells.find({kind, k});
      if (it == cells.end()) continue;
      const CellAccumulator& acc = it->second;
      ReportCell cell;
      cell.estimator = kind;
      cell.k = k;
      cell.included = static_cast<int>(acc.errors.size());
      cell.excluded = acc.excluded;
      cell.wall_ms = acc.wall_ms;
      if (!acc.errors.empty()) {
        const Summary s = summarize(acc.errors);
        cell.mse_mean = s.mean;
        cell.mse_std = s.stddev;
        cell.degenerate_std = s.degenerate;
      } else {
        cell.degenerate_std = true;
      }
      if (!acc.sigma_traces.empty()) {
        cell.sigma_trace_over_n = summarize(acc.sigma_traces).mean;
        cell.has_sigma = true;
      }
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

namespace {

std::string format_double(double v) {
  if (!std::isfinite(v)) throw NonFiniteInput("report: non-finite value");
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void write_report_csv(const std::vector<ExperimentReport>& reports, std::ostream& out) {
  out << "estimator,k,N,d,K,r,s,mse_mean,mse_std,failures_excluded,seed,wall_ms\n";
  for (const ExperimentReport& report : reports) {
    const ExperimentConfig& cfg = report.config;
    const int d = model_dim(cfg.gen.kind, cfg.gen.d);
    for (const ReportCell& cell : report.cells) {
      out << estimator_name(cell.estimator) << ',' << cell.k << ',' << cfg.gen.n << ','
          << d << ',' << cfg.repeats << ',' << format_double(cfg.failure_rate) << ','
          << format_double(cfg.resample_ratio) << ',' << format_double(cell.mse_mean)
          << ',' << format_double(cell.mse_std) << ',' << cell.excluded << ','
          << cfg.master_seed << ',' << format_double(cell.wall_ms) << '\n';
    }
  }
}

void write_report_csv(const std::vector<ExperimentReport>& reports,
                      const std::string& path) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("write_report_csv: cannot open " + path);
  write_report_csv(reports, file);
  if (!file) throw IoError("write_report_csv: write failed for " + path);
}

namespace {

nlohmann::ordered_json config_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["model"] = std::string(model_kind_name(cfg.gen.kind));
  j["n"] = cfg.gen.n;
  j["d"] = model_dim(cfg.gen.kind, cfg.gen.d);
  j["k_grid"] = cfg.k_grid;
  j["repeats"] = cfg.repeats;
  std::vector<std::string> est;
  est.reserve(cfg.estimators.size());
  for (EstimatorKind kind : cfg.estimators) est.emplace_back(estimator_name(kind));
  j["estimators"] = est;
  j["failure_rate"] = cfg.failure_rate;
  j["per_round_failures"] = cfg.per_round_failures;
  j["resample_ratio"] = cfg.resample_ratio;
  j["seed"] = cfg.master_seed;
  j["transport"] = cfg.transport == TransportKind::Tcp ? "tcp" : "inproc";
  j["solve"] = {{"max_iters", cfg.solve.max_iters},
                {"grad_tol", cfg.solve.grad_tol},
                {"step_shrink", cfg.solve.step_shrink},
                {"min_step", cfg.solve.min_step}};
  return j;
}

}  // namespace

void write_report_json(const std::vector<ExperimentReport>& reports,
                       const std::string& path) {
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const ExperimentReport& report : reports) {
    nlohmann::ordered_json run;
    run["config"] = config_json(report.config);
    run["failure_stats"] = {{"slots", report.failures.slots},
                            {"drops", report.failures.drops},
                            {"rate", report.failures.rate()}};
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const ReportCell& cell : report.cells) {
      nlohmann::ordered_json row;
      row["estimator"] = std::string(estimator_name(cell.estimator));
      row["k"] = cell.k;
      row["mse_mean"] = cell.mse_mean;
      row["mse_std"] = cell.mse_std;
      row["degenerate_std"] = cell.degenerate_std;
      row["included"] = cell.included;
      row["failures_excluded"] = cell.excluded;
      row["wall_ms"] = cell.wall_ms;
      if (cell.has_sigma) row["sigma_trace_over_n"] = cell.sigma_trace_over_n;
      rows.push_back(std::move(row));
    }
    run["rows"] = std::move(rows);
    runs.push_back(std::move(run));
  }
  nlohmann::ordered_json doc;
  doc["runs"] = std::move(runs);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("write_report_json: cannot open " + path);
  file << doc.dump(2) << '\n';
  if (!file) throw IoError("write_report_json: write failed for " + path);
}

namespace {

ExperimentConfig base_config(ModelKind kind, int d, long n, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.gen.kind = kind;
  cfg.gen.d = d;
  cfg.gen.n = n;
  cfg.master_seed = seed;
  return cfg;
}

}  // namespace

std::vector<ExperimentConfig> preset_configs(std::string_view name) {
  using E = EstimatorKind;
  if (name == "table1" || name == "table2") {
    ExperimentConfig cfg = base_config(ModelKind::Logistic,
                                       name == "table1" ? 20 : 100, 1L << 17, 20151104);
    cfg.k_grid = {2, 4, 8, 16, 32, 64, 128};
    cfg.estimators = {E::SimpleAvg, E::OneStep, E::Centralized};
    return {cfg};
  }
  if (name == "table3") {
    ExperimentConfig cfg = base_config(ModelKind::Beta, 2, 1L << 13, 20151104);
    cfg.k_grid = {2, 4, 8, 16, 32, 64, 128, 256};
    cfg.estimators = {E::SimpleAvg, E::ResampledAvg, E::OneStep, E::Centralized};
    return {cfg};
  }
  if (name == "table4") {
    ExperimentConfig cfg = base_config(ModelKind::Beta, 2, 409600, 20151104);
    cfg.k_grid = {8, 16, 32, 64, 128, 256, 512};
    cfg.estimators = {E::SimpleAvg, E::OneStep, E::Centralized, E::CentralizedPartial};
    cfg.failure_rate = 0.05;
    return {cfg};
  }
  if (name == "table5") {
    std::vector<ExperimentConfig> configs;
    for (int e = 3; e <= 9; ++e) {
      const long n = 1L << (2 * e);  // 4^e
      ExperimentConfig cfg = base_config(ModelKind::Gaussian, 2, n, 20151104);
      cfg.k_grid = {1 << e};  // sqrt(N)
      cfg.estimators = {E::SimpleAvg, E::OneStep, E::Centralized};
      // floor(0.1 * n/k) = 0 at the smallest size; the subsample estimator
      // only exists from 4^4 up.
      if (e >= 4)
        cfg.estimators = {E::SimpleAvg, E::ResampledAvg, E::OneStep, E::Centralized};
      configs.push_back(std::move(cfg));
    }
    return configs;
  }
  if (name == "desk") {
    // Table-3 shape shrunk 16x with K=20 for CI-speed runs.
    ExperimentConfig cfg = base_config(ModelKind::Beta, 2, 512, 20151104);
    cfg.k_grid = {2, 4, 8, 16, 32};
    cfg.repeats = 20;
    cfg.estimators = {E::SimpleAvg, E::ResampledAvg, E::OneStep, E::Centralized};
    return {cfg};
  }
  throw DomainError("unknown preset: " + std::string(name));
}

namespace {

const ReportCell* find_cell(const ExperimentReport& report, EstimatorKind kind, int k) {
  for (const ReportCell& cell : report.cells)
    if (cell.estimator == kind && cell.k == k) return &cell;
  return nullptr;
}

}  // namespace

std::vector<std::string> preset_violations(std::string_view name,
                                           const std::vector<ExperimentReport>& reports) {
  std::vector<std::string> out;
  for (const ExperimentReport& report : reports)
    for (const ReportCell& cell : report.cells)
      if (cell.included > 0 && !(std::isfinite(cell.mse_mean) && cell.mse_mean >= 0.0))
        out.push_back("non-finite or negative MSE for " +
                      std::string(estimator_name(cell.estimator)) + " at k=" +
                      std::to_string(cell.k));
  if (name == "desk" && !reports.empty()) {
    const ExperimentReport& report = reports.front();
    const int kmax = report.config.k_grid.back();
    const ReportCell* simple = find_cell(report, EstimatorKind::SimpleAvg, kmax);
    const ReportCell* one = find_cell(report, EstimatorKind::OneStep, kmax);
    if (simple && one && one->included > 0 && simple->included > 0 &&
        !(one->mse_mean < simple->mse_mean))
      out.push_back("one_step MSE did not beat simple_avg at the largest k");
  }
  return out;
}

}  // namespace dmest
