#include <cinttypes>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmest/experiment.hpp"

namespace {

using namespace dmest;

std::string fmt_vector(const Vector& v) {
  std::string out = "(";
  char buf[32];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ", ";
    std::snprintf(buf, sizeof(buf), "%.6g", v(i));
    out += buf;
  }
  out += ")";
  return out;
}

std::string fmt_mask(const std::vector<int>& mask) {
  std::string out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += std::to_string(mask[i]);
  }
  return out;
}

void print_estimate(const char* label, const Vector& est,
                    const Vector* truth) {
  if (truth) {
    const double err = (est - *truth).squaredNorm();
    std::printf("%-12s %s  sqerr=%.6g\n", label, fmt_vector(est).c_str(), err);
  } else {
    std::printf("%-12s %s\n", label, fmt_vector(est).c_str());
  }
}

struct EndpointFlag {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

EndpointFlag parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos)
    throw CLI::ValidationError("endpoint", "expected HOST:PORT, got '" + s + "'");
  EndpointFlag ep;
  ep.host = s.substr(0, colon);
  const std::string port = s.substr(colon + 1);
  int p = 0;
  try {
    p = std::stoi(port);
  } catch (...) {
    throw CLI::ValidationError("endpoint", "bad port '" + port + "'");
  }
  if (p < 0 || p > 65535)
    throw CLI::ValidationError("endpoint", "port out of range: " + port);
  ep.port = static_cast<std::uint16_t>(p);
  return ep;
}

int cmd_generate(const std::string& model, long n, int d, std::uint64_t seed,
                 std::string out) {
  GeneratorSpec spec;
  spec.kind = parse_model_kind(model);
  spec.d = d;
  spec.n = n;
  spec.seed = seed;
  const Generated data = generate(spec);
  if (out.empty()) out = model + "_" + std::to_string(seed) + ".csv";
  write_samples_csv(out, data.samples, spec.kind, spec.d);
  std::printf("wrote %zu %s samples to %s\n", data.samples.size(), model.c_str(),
              out.c_str());
  std::printf("theta_true:  %s\n", fmt_vector(data.theta_true).c_str());
  return 0;
}

int cmd_run(const std::string& model, long n, int d, int k, double r,
            bool per_round, bool resampled, double s, const std::string& transport,
            std::uint64_t seed, const std::string& data_path) {
  const ModelKind kind = parse_model_kind(model);
  std::vector<Sample> samples;
  std::optional<Vector> truth;
  if (!data_path.empty()) {
    samples = read_samples_csv(data_path, kind);
    if (kind == ModelKind::Logistic && !samples.empty())
      d = static_cast<int>(samples.front().x.size());
  } else {
    GeneratorSpec spec;
    spec.kind = kind;
    spec.d = d;
    spec.n = n;
    spec.seed = seed;  // same stream as `generate`, so --data round-trips
    Generated g = generate(spec);
    samples = std::move(g.samples);
    truth = g.theta_true;
  }
  if (samples.empty()) throw DomainError("run: no samples");
  if (samples.size() % static_cast<std::size_t>(k) != 0)
    throw IndivisibleSplit("run: k = " + std::to_string(k) + " does not divide N = " +
                           std::to_string(samples.size()));

  const auto mdl = make_model(model, d);
  const auto shards = shard_split(samples, k, derive_seed(seed, "shard"));
  ProtocolConfig pc;
  pc.failure = FailurePolicy{r, per_round, derive_seed(seed, "failure")};
  if (resampled) pc.resample = ResamplePolicy{s, derive_seed(seed, "resample")};
  const TransportKind tk =
      transport == "tcp" ? TransportKind::Tcp : TransportKind::InProcess;

  const ProtocolResult result = run_protocol(*mdl, shards, pc, tk);

  Shard pooled;
  pooled.machine_id = 0;
  pooled.samples = samples;
  const SolveResult central = m_estimate(*mdl, pooled, mdl->default_init(pooled));

  if (truth) std::printf("theta_true:  %s\n", fmt_vector(*truth).c_str());
  const Vector* t = truth ? &*truth : nullptr;
  print_estimate("theta0:", result.average_estimate, t);
  if (result.subsample_average) {
    const Vector corrected =
        resampled_average(result.average_estimate, *result.subsample_average, s);
    print_estimate("resampled:", corrected, t);
  }
  print_estimate("theta1:", result.one_step_estimate, t);
  print_estimate("centralized:", central.theta_hat, t);
  if (r > 0.0) {
    std::printf("delivered r1: %s\n", fmt_mask(result.round1_mask).c_str());
    std::printf("delivered r2: %s\n", fmt_mask(result.round2_mask).c_str());
  }
  const SandwichCovariance cov =
      sandwich_covariance(*mdl, samples, result.one_step_estimate);
  std::printf("sigma_hat:   ");
  for (Eigen::Index i = 0; i < cov.sigma.rows(); ++i) {
    if (i > 0) std::printf("; ");
    for (Eigen::Index j = 0; j < cov.sigma.cols(); ++j)
      std::printf(j > 0 ? ", %.6g" : "%.6g", cov.sigma(i, j));
  }
  std::printf("\n");
  return 0;
}

int cmd_experiment(const std::string& preset, const std::string& out,
                   const std::string& format, std::optional<std::uint64_t> seed) {
  std::vector<ExperimentConfig> configs = preset_configs(preset);
  if (seed)
    for (auto& cfg : configs) cfg.master_seed = *seed;
  std::vector<ExperimentReport> reports;
  reports.reserve(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::fprintf(stderr, "dmest: preset %s run %zu/%zu (N=%ld, K=%d)\n", preset.c_str(),
                 i + 1, configs.size(), configs[i].gen.n, configs[i].repeats);
    reports.push_back(run_experiment(configs[i]));
  }
  if (format == "json")
    write_report_json(reports, out);
  else
    write_report_csv(reports, out);
  std::printf("wrote %s report to %s\n", format.c_str(), out.c_str());
  const auto violations = preset_violations(preset, reports);
  for (const std::string& v : violations)
    std::fprintf(stderr, "dmest: preset check failed: %s\n", v.c_str());
  return violations.empty() ? 0 : 1;
}

int cmd_coordinator(const std::string& listen, int k, double r, bool per_round,
                    std::uint64_t failure_seed, double resample_s,
                    std::uint64_t resample_seed) {
  const EndpointFlag ep = parse_endpoint(listen);
  TcpCoordinatorLink link(ep.host, ep.port, k);
  std::fprintf(stderr, "dmest: coordinator listening on %s:%u for %d workers\n",
               ep.host.c_str(), static_cast<unsigned>(link.port()), k);
  ProtocolConfig pc;
  pc.failure = FailurePolicy{r, per_round, failure_seed};
  if (resample_s > 0.0) pc.resample = ResamplePolicy{resample_s, resample_seed};
  const ProtocolResult result = run_coordinator(link, k, pc);
  print_estimate("theta0:", result.average_estimate, nullptr);
  if (result.subsample_average) {
    const Vector corrected = resampled_average(result.average_estimate,
                                               *result.subsample_average, resample_s);
    print_estimate("resampled:", corrected, nullptr);
  }
  print_estimate("theta1:", result.one_step_estimate, nullptr);
  std::printf("delivered r1: %s\n", fmt_mask(result.round1_mask).c_str());
  std::printf("delivered r2: %s\n", fmt_mask(result.round2_mask).c_str());
  return 0;
}

int cmd_worker(const std::string& connect, int machine_id, const std::string& data_path,
               const std::string& model, int d) {
  const EndpointFlag ep = parse_endpoint(connect);
  const ModelKind kind = parse_model_kind(model);
  std::vector<Sample> samples = read_samples_csv(data_path, kind);
  if (samples.empty()) throw DomainError("worker: data file has no samples");
  if (kind == ModelKind::Logistic) d = static_cast<int>(samples.front().x.size());
  const auto mdl = make_model(model, d);
  Shard shard;
  shard.machine_id = machine_id;
  shard.samples = std::move(samples);
  Worker worker(*mdl, std::move(shard), machine_id);
  TcpWorkerLink link(ep.host, ep.port);
  std::fprintf(stderr, "dmest: worker %d connected to %s\n", machine_id,
               connect.c_str());
  run_worker(link, worker);
  std::fprintf(stderr, "dmest: worker %d done\n", machine_id);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmest: distributed M-estimation with averaging and one-step updates"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate synthetic samples to CSV");
  std::string gen_model;
  long gen_n = 0;
  int gen_d = 2;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--model", gen_model, "Model: logistic|beta|gaussian")
      ->required()
      ->check(CLI::IsMember({"logistic", "beta", "gaussian"}));
  gen->add_option("--n", gen_n, "Number of samples")->required()->check(CLI::PositiveNumber);
  gen->add_option("--d", gen_d, "Covariate dimension (logistic)")->capture_default_str()
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Master seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output CSV path (default: <model>_<seed>.csv)");

  // run
  auto* run = app.add_subcommand("run", "One protocol run; prints the estimates");
  std::string run_model;
  long run_n = 1024;
  int run_d = 2;
  int run_k = 1;
  double run_r = 0.0;
  bool run_per_round = false;
  bool run_resampled = false;
  double run_s = 0.1;
  std::string run_transport = "inproc";
  std::uint64_t run_seed = 0;
  std::string run_data;
  run->add_option("--model", run_model, "Model: logistic|beta|gaussian")
      ->required()
      ->check(CLI::IsMember({"logistic", "beta", "gaussian"}));
  run->add_option("--n", run_n, "Number of samples to generate")->capture_default_str()
      ->check(CLI::PositiveNumber);
  run->add_option("--d", run_d, "Covariate dimension (logistic)")->capture_default_str()
      ->check(CLI::PositiveNumber);
  run->add_option("--k", run_k, "Number of machines")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--r", run_r, "Per-machine failure rate")->capture_default_str()
      ->check(CLI::Range(0.0, 0.999999));
  run->add_flag("--per-round", run_per_round, "Draw failures independently per round");
  run->add_flag("--resampled", run_resampled, "Also compute the resampled average");
  run->add_option("--s", run_s, "Resampling ratio")->capture_default_str()
      ->check(CLI::Range(1e-9, 0.999999));
  run->add_option("--transport", run_transport, "Transport: inproc|tcp")->capture_default_str()
      ->check(CLI::IsMember({"inproc", "tcp"}));
  run->add_option("--seed", run_seed, "Master seed")->capture_default_str();
  run->add_option("--data", run_data, "Read samples from CSV instead of generating");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run a preset MSE-vs-k experiment");
  std::string exp_preset;
  std::string exp_out = "report.csv";
  std::string exp_format = "csv";
  std::uint64_t exp_seed = 0;
  bool exp_seed_set = false;
  exp->add_option("--preset", exp_preset,
                  "Preset: table1|table2|table3|table4|table5|desk")
      ->required()
      ->check(CLI::IsMember({"table1", "table2", "table3", "table4", "table5", "desk"}));
  exp->add_option("--out", exp_out, "Report path")->capture_default_str();
  exp->add_option("--format", exp_format, "Report format: csv|json")->capture_default_str()
      ->check(CLI::IsMember({"csv", "json"}));
  exp->add_option("--seed", exp_seed, "Override the preset master seed")
      ->each([&exp_seed_set](const std::string&) { exp_seed_set = true; });

  // coordinator
  auto* coord = app.add_subcommand("coordinator", "Run the TCP coordinator");
  std::string coord_listen;
  int coord_k = 0;
  double coord_r = 0.0;
  bool coord_per_round = false;
  std::uint64_t coord_failure_seed = 0;
  double coord_s = 0.0;
  std::uint64_t coord_resample_seed = 0;
  coord->add_option("--listen", coord_listen, "HOST:PORT to bind (port 0 = ephemeral)")
      ->required();
  coord->add_option("--k", coord_k, "Number of workers")->required()
      ->check(CLI::PositiveNumber);
  coord->add_option("--r", coord_r, "Per-machine failure rate")->capture_default_str()
      ->check(CLI::Range(0.0, 0.999999));
  coord->add_flag("--per-round", coord_per_round, "Draw failures independently per round");
  coord->add_option("--failure-seed", coord_failure_seed, "Failure draw seed")->capture_default_str();
  coord->add_option("--resample-s", coord_s, "Resampling ratio (0 disables)")->capture_default_str()
      ->check(CLI::Range(0.0, 0.999999));
  coord->add_option("--resample-seed", coord_resample_seed, "Resampling seed")->capture_default_str();

  // worker
  auto* work = app.add_subcommand("worker", "Run a TCP worker over a CSV shard");
  std::string work_connect;
  int work_machine = 0;
  std::string work_data;
  std::string work_model;
  int work_d = 2;
  work->add_option("--connect", work_connect, "Coordinator HOST:PORT")->required();
  work->add_option("--machine-id", work_machine, "This machine's id (0-based)")
      ->required()
      ->check(CLI::NonNegativeNumber);
  work->add_option("--data", work_data, "CSV shard path")->required();
  work->add_option("--model", work_model, "Model: logistic|beta|gaussian")
      ->required()
      ->check(CLI::IsMember({"logistic", "beta", "gaussian"}));
  work->add_option("--d", work_d, "Covariate dimension (logistic)")->capture_default_str()
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_model, gen_n, gen_d, gen_seed, gen_out);
    if (run->parsed())
      return cmd_run(run_model, run_n, run_d, run_k, run_r, run_per_round,
                     run_resampled, run_s, run_transport, run_seed, run_data);
    if (exp->parsed())
      return cmd_experiment(exp_preset, exp_out, exp_format,
                            exp_seed_set ? std::optional<std::uint64_t>(exp_seed)
                                         : std::nullopt);
    if (coord->parsed())
      return cmd_coordinator(coord_listen, coord_k, coord_r, coord_per_round,
                             coord_failure_seed, coord_s, coord_resample_seed);
    if (work->parsed())
      return cmd_worker(work_connect, work_machine, work_data, work_model, work_d);
  } catch (const DomainError& e) {
    std::fprintf(stderr, "dmest: %s\n", e.what());
    return 2;
  } catch (const IndivisibleSplit& e) {
    std::fprintf(stderr, "dmest: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dmest: %s\n", e.what());
    return 1;
  }
  return 2;
}
