// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Run all criteria with no arguments or a single one by number.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "dmest/experiment.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace dmest;

namespace {

struct CheckFailure {
  std::string message;
};

void expect(bool ok, const std::string& message) {
  if (!ok) throw CheckFailure{message};
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

const ReportCell& cell_of(const ExperimentReport& report, EstimatorKind kind, int k) {
  for (const ReportCell& cell : report.cells)
    if (cell.estimator == kind && cell.k == k) return cell;
  throw CheckFailure{"missing report cell"};
}

Sample scalar_sample(double x) {
  Sample s;
  s.x.resize(1);
  s.x(0) = x;
  return s;
}

// --- criterion 1: analytic derivatives vs central finite differences -------

std::string criterion_derivatives() {
  Rng rng(9001);
  int checked = 0;
  const auto logistic = logistic_model(5);
  const auto beta = beta_model();
  const auto gaussian = gaussian_model();

  auto check_pair = [&](const CriterionModel& model, const Sample& s, const Vector& theta) {
    const Eval e = model.eval(s, theta);
    const Vector fd_g = oracles::fd_gradient(
        [&](const Vector& t) { return model.value(s, t); }, theta);
    for (Eigen::Index j = 0; j < theta.size(); ++j)
      expect(std::abs(e.grad(j) - fd_g(j)) <= 1e-5 * std::max(1.0, std::abs(fd_g(j))),
             "gradient mismatch vs finite differences");
    const Matrix fd_h = oracles::fd_hessian(
        [&](const Vector& t) { return model.eval(s, t).grad; }, theta);
    for (Eigen::Index i = 0; i < theta.size(); ++i)
      for (Eigen::Index j = 0; j < theta.size(); ++j)
        expect(std::abs(e.hess(i, j) - fd_h(i, j)) <=
                   1e-4 * std::max(1.0, std::abs(fd_h(i, j))),
               "Hessian mismatch vs differenced gradient");
    ++checked;
  };

  for (int trial = 0; trial < 200; ++trial) {
    Vector x(5), th(5);
    for (int j = 0; j < 5; ++j) {
      x(j) = rng.uniform(-1.0, 1.0);
      th(j) = rng.uniform(-1.0, 1.0);
    }
    Sample s;
    s.x = x;
    s.y = rng.bernoulli(0.5) ? 1.0 : 0.0;
    check_pair(*logistic, s, th);

    Vector tb(2);
    tb << rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0);
    check_pair(*beta, scalar_sample(rng.uniform(0.05, 0.95)), tb);

    Vector tg(2);
    tg << rng.uniform(-2.0, 2.0), rng.uniform(0.5, 9.0);
    check_pair(*gaussian, scalar_sample(rng.uniform(-4.0, 4.0)), tg);
  }
  return std::to_string(checked) + " (sample,theta) pairs across 3 models";
}

// --- criterion 2: distributed one-step equals the pooled Newton step -------

std::string criterion_pooled_newton() {
  GeneratorSpec spec;
  spec.kind = ModelKind::Logistic;
  spec.d = 2;
  spec.n = 512;
  spec.seed = 9002;
  const Generated data = generate(spec);
  const auto model = logistic_model(2);
  const auto shards = shard_split(data.samples, 4, 9102);
  const ProtocolResult res = run_protocol(*model, shards, ProtocolConfig{});

  Vector grad;
  Matrix hess;
  oracles::pooled_grad_hess(*model, data.samples, res.average_estimate, grad, hess);
  const Vector oracle =
      res.average_estimate - oracles::cofactor_inverse(hess) * grad;
  const double diff = (res.one_step_estimate - oracle).cwiseAbs().maxCoeff();
  expect(diff <= 1e-12, "one-step differs from the pooled Newton oracle by " + fmt(diff));
  return "max coordinate gap " + fmt(diff);
}

// --- criterion 3: quadratic criterion gives the pooled mean exactly --------

std::string criterion_quadratic_exactness() {
  GeneratorSpec spec;
  spec.kind = ModelKind::Gaussian;
  spec.n = 768;
  spec.seed = 9003;
  const Generated data = generate(spec);
  const auto model = gaussian_mean_model(2.5);
  KahanScalar acc;
  for (const Sample& s : data.samples) acc.add(s.x(0));
  const double pooled_mean = acc.value() / static_cast<double>(data.samples.size());

  double worst = 0.0;
  for (int k : {1, 3, 16, 64}) {
    const auto shards = shard_split(data.samples, k, 9103);
    for (double start_val : {0.0, -42.0, 17.5}) {
      Vector start(1);
      start << start_val;
      AggregationInput in;
      for (const Shard& shard : shards) {
        const ShardEval e = shard_criterion(*model, shard, start);
        AggregationInput::Entry entry;
        entry.machine_id = shard.machine_id;
        entry.delivered = true;
        entry.grad = e.grad;
        entry.hess = e.hess;
        in.entries.push_back(std::move(entry));
      }
      const Vector updated = one_step_update(start, in);
      worst = std::max(worst, std::abs(updated(0) - pooled_mean));
    }
  }
  expect(worst <= 1e-12, "one-step missed the pooled mean by " + fmt(worst));
  return "worst gap to pooled mean " + fmt(worst) + " over k in {1,3,16,64}";
}

// --- criterion 4: Beta MSE pattern across machines --------------------------

std::string criterion_beta_pattern() {
  ExperimentConfig cfg;
  cfg.gen.kind = ModelKind::Beta;
  cfg.gen.n = 1L << 13;
  cfg.k_grid = {2, 4, 8, 16, 32, 64, 128, 256};
  cfg.repeats = 50;
  cfg.estimators = {EstimatorKind::SimpleAvg, EstimatorKind::ResampledAvg,
                    EstimatorKind::OneStep, EstimatorKind::Centralized};
  cfg.master_seed = 9004;
  const ExperimentReport report = run_experiment(cfg);

  std::vector<std::string> violations;
  const double central = cell_of(report, EstimatorKind::Centralized, 0).mse_mean;
  double worst_ratio = 0.0;
  for (int k : {2, 4, 8, 16, 32, 64}) {
    const double ratio = cell_of(report, EstimatorKind::OneStep, k).mse_mean / central;
    worst_ratio = std::max(worst_ratio, ratio);
    if (!(ratio <= 1.15))
      violations.push_back("one_step/centralized = " + fmt(ratio) + " > 1.15 at k=" +
                           std::to_string(k));
  }
  const double simple256 = cell_of(report, EstimatorKind::SimpleAvg, 256).mse_mean;
  const double one256 = cell_of(report, EstimatorKind::OneStep, 256).mse_mean;
  if (!(simple256 / one256 >= 10.0))
    violations.push_back("simple/one_step at k=256 is only " + fmt(simple256 / one256));
  for (int k : {64, 128, 256}) {
    const double simple = cell_of(report, EstimatorKind::SimpleAvg, k).mse_mean;
    const double re = cell_of(report, EstimatorKind::ResampledAvg, k).mse_mean;
    const double one = cell_of(report, EstimatorKind::OneStep, k).mse_mean;
    if (!(one < re && re < simple))
      violations.push_back("resampled=" + fmt(re) + " not inside (" + fmt(one) + ", " +
                           fmt(simple) + ") at k=" + std::to_string(k));
  }

  // Companion invariant at the same scale: simple-average MSE grows with k
  // past 16, allowing one small inversion.
  int inversions = 0;
  double worst_inversion = 0.0;
  const std::vector<int> tail = {16, 32, 64, 128, 256};
  for (std::size_t i = 1; i < tail.size(); ++i) {
    const double prev = cell_of(report, EstimatorKind::SimpleAvg, tail[i - 1]).mse_mean;
    const double next = cell_of(report, EstimatorKind::SimpleAvg, tail[i]).mse_mean;
    if (next < prev) {
      ++inversions;
      worst_inversion = std::max(worst_inversion, (prev - next) / prev);
    }
  }
  if (!(inversions <= 1 && worst_inversion <= 0.05))
    violations.push_back("simple_avg MSE not monotone in k past 16");

  const std::string summary = "simple/one_step at k=256 = " + fmt(simple256 / one256) +
                              ", one_step/centralized <= " + fmt(worst_ratio);
  if (!violations.empty()) {
    std::string all = summary;
    for (const std::string& v : violations) all += "; " + v;
    throw CheckFailure{all};
  }
  return summary;
}

// --- criterion 5: Gaussian scaling with k = sqrt(N) -------------------------

std::string criterion_gaussian_scaling() {
  std::vector<ExperimentReport> reports;
  for (int e = 3; e <= 7; ++e) {
    ExperimentConfig cfg;
    cfg.gen.kind = ModelKind::Gaussian;
    cfg.gen.n = 1L << (2 * e);
    cfg.k_grid = {1 << e};
    cfg.repeats = 50;
    cfg.estimators = {EstimatorKind::SimpleAvg, EstimatorKind::OneStep,
                      EstimatorKind::Centralized};
    cfg.master_seed = 9005;
    reports.push_back(run_experiment(cfg));
  }
  std::vector<std::string> violations;
  std::string detail;
  for (int e = 5; e <= 7; ++e) {
    const ExperimentReport& report = reports[static_cast<std::size_t>(e - 3)];
    const int k = 1 << e;
    const double one = cell_of(report, EstimatorKind::OneStep, k).mse_mean;
    const double central = cell_of(report, EstimatorKind::Centralized, 0).mse_mean;
    const double rel = std::abs(one / central - 1.0);
    if (!(rel <= 0.10))
      violations.push_back("one_step is " + fmt(100 * rel) +
                           "% from centralized at N=4^" + std::to_string(e));
    if (e == 7) detail = "one_step within " + fmt(100 * rel) + "% of centralized at N=4^7";
  }
  const ExperimentReport& last = reports.back();
  const double ratio = cell_of(last, EstimatorKind::SimpleAvg, 128).mse_mean /
                       cell_of(last, EstimatorKind::OneStep, 128).mse_mean;
  if (!(ratio >= 1.8))
    violations.push_back("simple/one_step at N=4^7 is only " + fmt(ratio) +
                         " (needs >= 1.8)");
  const std::string summary = detail + ", simple/one_step = " + fmt(ratio);
  if (!violations.empty()) {
    std::string all = summary;
    for (const std::string& v : violations) all += "; " + v;
    throw CheckFailure{all};
  }
  return summary;
}

// --- criterion 6: failure-weighted aggregation vs the partial oracle --------

std::string criterion_failure_model() {
  ExperimentConfig cfg;
  cfg.gen.kind = ModelKind::Beta;
  cfg.gen.n = 51200;
  cfg.k_grid = {8, 16, 32, 64, 128};
  cfg.repeats = 50;
  cfg.estimators = {EstimatorKind::OneStep, EstimatorKind::CentralizedPartial};
  cfg.failure_rate = 0.05;
  cfg.master_seed = 9006;
  const ExperimentReport report = run_experiment(cfg);

  const double one = cell_of(report, EstimatorKind::OneStep, 128).mse_mean;
  const double partial = cell_of(report, EstimatorKind::CentralizedPartial, 0).mse_mean;
  const double rel = std::abs(one / partial - 1.0);
  expect(rel <= 0.25, "one_step is " + fmt(100 * rel) +
                          "% from centralized_partial at the largest k");

  const double rate = report.failures.rate();
  expect(std::abs(rate - 0.05) <= 0.01,
         "empirical failure rate " + fmt(rate) + " strays from 0.05");
  return "one_step/centralized_partial = " + fmt(one / partial) +
         ", empirical drop rate = " + fmt(rate);
}

// --- criterion 7: transports agree bit-for-bit ------------------------------

std::string criterion_transport_equivalence() {
  GeneratorSpec spec;
  spec.kind = ModelKind::Beta;
  spec.n = 1024;
  spec.seed = 9007;
  const Generated data = generate(spec);
  const auto model = beta_model();
  const auto shards = shard_split(data.samples, 8, 9107);
  ProtocolConfig cfg;
  cfg.failure = FailurePolicy{0.1, false, 9207};
  const ProtocolResult in_proc = run_protocol(*model, shards, cfg, TransportKind::InProcess);
  const ProtocolResult tcp = run_protocol(*model, shards, cfg, TransportKind::Tcp);
  expect(bit_equal(in_proc.average_estimate, tcp.average_estimate),
         "theta0 differs between transports");
  expect(bit_equal(in_proc.one_step_estimate, tcp.one_step_estimate),
         "theta1 differs between transports");
  expect(in_proc.round1_mask == tcp.round1_mask && in_proc.round2_mask == tcp.round2_mask,
         "delivery masks differ between transports");
  int delivered = 0;
  for (int a : in_proc.round1_mask) delivered += a;
  return "bit-identical estimates and masks (" + std::to_string(delivered) +
         "/8 machines delivered)";
}

// --- criterion 8: wire and CSV round-trips -----------------------------------

std::string criterion_round_trips() {
  Rng rng(9008);
  for (int i = 0; i < 10000; ++i) {
    const Message msg = generators::random_message(rng);
    expect(decode_message(encode_message(msg)) == msg, "message round-trip changed bits");
  }

  GeneratorSpec spec;
  spec.kind = ModelKind::Gaussian;
  spec.n = 500;
  spec.seed = 9108;
  const Generated gaussian = generate(spec);
  spec.kind = ModelKind::Beta;
  spec.seed = 9208;
  const Generated beta = generate(spec);
  const std::string path = "/tmp/dmest_acceptance_roundtrip.csv";
  write_samples_csv(path, gaussian.samples, ModelKind::Gaussian, 1);
  auto back = read_samples_csv(path, ModelKind::Gaussian);
  expect(back.size() == gaussian.samples.size(), "CSV row count changed");
  for (std::size_t i = 0; i < back.size(); ++i)
    expect(back[i].x(0) == gaussian.samples[i].x(0), "CSV round-trip changed bits");
  write_samples_csv(path, beta.samples, ModelKind::Beta, 1);
  back = read_samples_csv(path, ModelKind::Beta);
  for (std::size_t i = 0; i < back.size(); ++i)
    expect(back[i].x(0) == beta.samples[i].x(0), "CSV round-trip changed bits");
  std::remove(path.c_str());
  return "10000 messages and 1000 CSV rows exact";
}

// --- criterion 9: aggregation invariances ------------------------------------

std::string criterion_invariances() {
  Rng rng(9009);

  // Permutation invariance of simple_average, bit-identical.
  std::vector<AggregationInput::Entry> entries;
  for (int m = 0; m < 12; ++m) {
    AggregationInput::Entry e;
    e.machine_id = m;
    e.delivered = rng.bernoulli(0.75);
    Vector theta(3);
    for (int j = 0; j < 3; ++j) theta(j) = rng.uniform(-4.0, 4.0);
    e.theta = theta;
    entries.push_back(std::move(e));
  }
  entries[0].delivered = true;
  AggregationInput ordered;
  ordered.entries = entries;
  const Vector ref = simple_average(ordered);
  for (int trial = 0; trial < 10; ++trial) {
    AggregationInput shuffled;
    shuffled.entries = entries;
    for (std::size_t i = shuffled.entries.size() - 1; i > 0; --i)
      std::swap(shuffled.entries[i], shuffled.entries[rng.uniform_int(i + 1)]);
    expect(bit_equal(simple_average(shuffled), ref),
           "simple_average not permutation invariant");
  }

  // All-ones failure mask reduces to the plain mean bit-exactly.
  {
    AggregationInput all;
    KahanVector acc(3);
    for (int m = 0; m < 6; ++m) {
      AggregationInput::Entry e;
      e.machine_id = m;
      e.delivered = true;
      Vector theta(3);
      for (int j = 0; j < 3; ++j) theta(j) = rng.uniform(-1.0, 1.0);
      acc.add(theta);
      e.theta = theta;
      all.entries.push_back(std::move(e));
    }
    expect(bit_equal(simple_average(all), (acc.value() / 6.0).eval()),
           "all-delivered average differs from the unmasked mean");
  }

  // One-step rescaling invariance and the zero-gradient fixed point.
  GeneratorSpec spec;
  spec.kind = ModelKind::Gaussian;
  spec.n = 256;
  spec.seed = 9109;
  const Generated data = generate(spec);
  const auto model = gaussian_model();
  const auto shards = shard_split(data.samples, 4, 9209);
  Vector start(2);
  start << 0.2, 3.0;
  AggregationInput plain, scaled;
  const double c = 11.75;
  for (const Shard& shard : shards) {
    const ShardEval e = shard_criterion(*model, shard, start);
    AggregationInput::Entry pe;
    pe.machine_id = shard.machine_id;
    pe.delivered = true;
    pe.grad = e.grad;
    pe.hess = e.hess;
    AggregationInput::Entry se = pe;
    se.grad = (c * e.grad).eval();
    se.hess = (c * e.hess).eval();
    plain.entries.push_back(std::move(pe));
    scaled.entries.push_back(std::move(se));
  }
  const Vector a = one_step_update(start, plain);
  const Vector b = one_step_update(start, scaled);
  expect((a - b).cwiseAbs().maxCoeff() <= 1e-10,
         "one_step not invariant to criterion rescaling");

  AggregationInput zero;
  {
    AggregationInput::Entry e;
    e.machine_id = 0;
    e.delivered = true;
    e.grad = Vector::Zero(2);
    Matrix h(2, 2);
    h << -2.0, 0.25, 0.25, -1.0;
    e.hess = h;
    zero.entries.push_back(std::move(e));
  }
  expect(bit_equal(one_step_update(start, zero), start),
         "zero aggregated gradient moved the estimate");

  return "permutation, rescaling, mask-reduction and fixed-point checks hold";
}

// --- criterion 10: sandwich covariance sanity --------------------------------

std::string criterion_sandwich() {
  const double sigma2_true = 2.5;
  const auto model = gaussian_mean_model(sigma2_true);
  Rng rng(9010);
  std::vector<Sample> samples;
  samples.reserve(100000);
  for (int i = 0; i < 100000; ++i)
    samples.push_back(scalar_sample(0.7 + std::sqrt(sigma2_true) * rng.normal()));
  Shard pooled;
  pooled.machine_id = 0;
  pooled.samples = samples;
  const SolveResult fit = m_estimate(*model, pooled, model->default_init(pooled));
  const SandwichCovariance cov = sandwich_covariance(*model, samples, fit.theta_hat);
  const double rel = std::abs(cov.sigma(0, 0) / sigma2_true - 1.0);
  expect(rel <= 0.05, "sigma_hat is " + fmt(100 * rel) + "% from the known variance");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov.sigma);
  expect(eig.eigenvalues().minCoeff() >= -1e-8 * cov.sigma.trace(),
         "sigma_hat is not positive semidefinite");
  return "sigma_hat within " + fmt(100 * rel) + "% of the true variance, PSD";
}

struct Criterion {
  int id;
  const char* title;
  std::function<std::string()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {1, "derivative correctness vs finite differences", criterion_derivatives},
      {2, "distributed one-step equals the pooled Newton step", criterion_pooled_newton},
      {3, "quadratic criterion: one-step hits the pooled mean", criterion_quadratic_exactness},
      {4, "Beta MSE pattern across machines", criterion_beta_pattern},
      {5, "Gaussian scaling with k = sqrt(N)", criterion_gaussian_scaling},
      {6, "failure-weighted aggregation tracks the partial oracle", criterion_failure_model},
      {7, "in-process and TCP transports agree bit-for-bit", criterion_transport_equivalence},
      {8, "wire and CSV round-trips are exact", criterion_round_trips},
      {9, "aggregation invariances", criterion_invariances},
      {10, "sandwich covariance sanity", criterion_sandwich},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  if (argc > 1) {
    only = std::atoi(argv[1]);
    if (only < 1 || only > 10) {
      std::fprintf(stderr, "usage: %s [criterion 1..10]\n", argv[0]);
      return 2;
    }
  }

  bool all_ok = true;
  for (const Criterion& c : criteria()) {
    if (only != 0 && c.id != only) continue;
    const auto start = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    try {
      detail = c.run();
    } catch (const CheckFailure& f) {
      ok = false;
      detail = f.message;
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("unexpected error: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d [%s] %s: %s (%.1fs)\n", c.id, ok ? "PASS" : "FAIL",
                c.title, detail.c_str(), secs);
    std::fflush(stdout);
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 1;
}
