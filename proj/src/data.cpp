#include "dmest/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <system_error>

namespace dmest {

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Logistic: return "logistic";
    case ModelKind::Beta: return "beta";
    case ModelKind::Gaussian: return "gaussian";
  }
  throw DomainError("model_kind_name: bad kind");
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "logistic") return ModelKind::Logistic;
  if (name == "beta") return ModelKind::Beta;
  if (name == "gaussian") return ModelKind::Gaussian;
  throw DomainError("unknown model: " + std::string(name));
}

int model_dim(ModelKind kind, int d) {
  return kind == ModelKind::Logistic ? d : 2;
}

namespace {

void check_spec(const GeneratorSpec& spec) {
  if (spec.n < 1) throw DomainError("generate: n must be >= 1");
  if (spec.kind == ModelKind::Logistic && spec.d < 1)
    throw DomainError("generate: logistic dimension must be >= 1");
}

Vector draw_param(const GeneratorSpec& spec) {
  if (spec.forced_param) {
    if (spec.forced_param->size() != model_dim(spec.kind, spec.d))
      throw DimensionMismatch("generate: forced parameter has wrong dimension");
    return *spec.forced_param;
  }
  Rng rng = substream(spec.seed, "param");
  switch (spec.kind) {
    case ModelKind::Logistic: {
      Vector theta(spec.d);
      for (int j = 0; j < spec.d; ++j) theta(j) = rng.uniform(-1.0, 1.0);
      return theta;
    }
    case ModelKind::Beta: {
      Vector theta(2);
      theta(0) = rng.uniform(1.0, 3.0);
      theta(1) = rng.uniform(1.0, 3.0);
      return theta;
    }
    case ModelKind::Gaussian: {
      Vector theta(2);
      theta(0) = rng.uniform(-2.0, 2.0);
      theta(1) = rng.uniform(0.25, 9.0);
      return theta;
    }
  }
  throw DomainError("generate: bad kind");
}

double draw_beta(double alpha, double beta, Rng& rng) {
  for (int tries = 0; tries < 100; ++tries) {
    const double g1 = rng.gamma(alpha);
    const double g2 = rng.gamma(beta);
    const double sum = g1 + g2;
    if (sum <= 0.0) continue;
    const double x = g1 / sum;
    if (x > 0.0 && x < 1.0) return x;
  }
  throw DomainError("generate: Beta draw stuck at the domain boundary");
}

}  // namespace

Generated generate(const GeneratorSpec& spec) {
  check_spec(spec);
  Generated out;
  out.theta_true = draw_param(spec);
  out.samples.reserve(static_cast<std::size_t>(spec.n));
  Rng rng = substream(spec.seed, "samples");
  switch (spec.kind) {
    case ModelKind::Logistic: {
      const Vector& theta = out.theta_true;
      for (long i = 0; i < spec.n; ++i) {
        Sample s;
        s.x.resize(spec.d);
        for (int j = 0; j < spec.d; ++j) s.x(j) = rng.uniform(-1.0, 1.0);
        const double z = s.x.dot(theta);
        const double p = 1.0 / (1.0 + std::exp(-z));
        s.y = rng.bernoulli(p) ? 1.0 : 0.0;
        out.samples.push_back(std::move(s));
      }
      break;
    }
    case ModelKind::Beta: {
      const double alpha = out.theta_true(0);
      const double beta = out.theta_true(1);
      if (!(alpha > 0.0 && beta > 0.0))
        throw DomainError("generate: Beta parameters must be positive");
      for (long i = 0; i < spec.n; ++i) {
        Sample s;
        s.x.resize(1);
        s.x(0) = draw_beta(alpha, beta, rng);
        out.samples.push_back(std::move(s));
      }
      break;
    }
    case ModelKind::Gaussian: {
      const double mu = out.theta_true(0);
      const double sigma2 = out.theta_true(1);
      if (!(sigma2 > 0.0)) throw DomainError("generate: sigma2 must be positive");
      const double sigma = std::sqrt(sigma2);
      for (long i = 0; i < spec.n; ++i) {
        Sample s;
        s.x.resize(1);
        s.x(0) = mu + sigma * rng.normal();
        out.samples.push_back(std::move(s));
      }
      break;
    }
  }
  return out;
}

std::vector<Shard> shard_split(const std::vector<Sample>& samples, int k,
                               std::uint64_t seed) {
  if (k < 1) throw DomainError("shard_split: k must be >= 1");
  const std::size_t n = samples.size();
  if (n == 0) throw EmptyInput("shard_split: no samples");
  if (n % static_cast<std::size_t>(k) != 0)
    throw IndivisibleSplit("shard_split: k = " + std::to_string(k) +
                           " does not divide n = " + std::to_string(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = substream(seed, "shard_perm");
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(i + 1));
    std::swap(perm[i], perm[j]);
  }
  const std::size_t per_machine = n / static_cast<std::size_t>(k);
  std::vector<Shard> shards(static_cast<std::size_t>(k));
  for (int m = 0; m < k; ++m) {
    Shard& shard = shards[static_cast<std::size_t>(m)];
    shard.machine_id = m;
    shard.samples.reserve(per_machine);
    for (std::size_t i = 0; i < per_machine; ++i)
      shard.samples.push_back(samples[perm[static_cast<std::size_t>(m) * per_machine + i]]);
  }
  return shards;
}

namespace {

void append_csv_double(std::string& out, double v) {
  if (!std::isfinite(v)) throw NonFiniteInput("write_samples_csv: non-finite value");
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

double parse_csv_double(std::string_view tok, std::size_t line_no) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size() || !std::isfinite(v))
    throw MalformedRow("bad numeric field at line " + std::to_string(line_no));
  return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace

void write_samples_csv(const std::string& path, const std::vector<Sample>& samples,
                       ModelKind kind, int d) {
  const int dim = kind == ModelKind::Logistic ? d : 1;
  if (dim < 1) throw DomainError("write_samples_csv: dimension must be >= 1");
  std::string out;
  if (kind == ModelKind::Logistic) {
    for (int j = 1; j <= dim; ++j) {
      if (j > 1) out.push_back(',');
      out += "x" + std::to_string(j);
    }
    out += ",y\n";
  } else {
    out += "x\n";
  }
  for (const Sample& s : samples) {
    if (s.x.size() != dim)
      throw DimensionMismatch("write_samples_csv: sample dimension mismatch");
    for (int j = 0; j < dim; ++j) {
      if (j > 0) out.push_back(',');
      append_csv_double(out, s.x(j));
    }
    if (kind == ModelKind::Logistic) {
      if (!s.y.has_value()) throw DomainError("write_samples_csv: sample has no response");
      out.push_back(',');
      append_csv_double(out, *s.y);
    }
    out.push_back('\n');
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("write_samples_csv: cannot open " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write_samples_csv: write failed for " + path);
}

std::vector<Sample> read_samples_csv(const std::string& path, ModelKind kind) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("read_samples_csv: cannot open " + path);
  std::string line;
  if (!std::getline(file, line))
    throw MalformedRow("read_samples_csv: missing header at line 1");

  std::size_t n_cols = 0;
  if (kind == ModelKind::Logistic) {
    const auto cols = split_csv(line);
    if (cols.size() < 2 || cols.back() != "y")
      throw MalformedRow("read_samples_csv: bad logistic header at line 1");
    for (std::size_t j = 0; j + 1 < cols.size(); ++j)
      if (cols[j] != "x" + std::to_string(j + 1))
        throw MalformedRow("read_samples_csv: bad logistic header at line 1");
    n_cols = cols.size();
  } else {
    if (line != "x") throw MalformedRow("read_samples_csv: bad header at line 1");
    n_cols = 1;
  }

  std::vector<Sample> samples;
  std::size_t line_no = 1;
  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) throw MalformedRow("empty row at line " + std::to_string(line_no));
    const auto cols = split_csv(line);
    if (cols.size() != n_cols)
      throw MalformedRow("wrong field count at line " + std::to_string(line_no));
    Sample s;
    if (kind == ModelKind::Logistic) {
      s.x.resize(static_cast<Eigen::Index>(n_cols - 1));
      for (std::size_t j = 0; j + 1 < cols.size(); ++j)
        s.x(static_cast<Eigen::Index>(j)) = parse_csv_double(cols[j], line_no);
      const double y = parse_csv_double(cols.back(), line_no);
      if (y != 0.0 && y != 1.0)
        throw MalformedRow("logistic response must be 0 or 1 at line " +
                           std::to_string(line_no));
      s.y = y;
    } else {
      s.x.resize(1);
      s.x(0) = parse_csv_double(cols[0], line_no);
      if (kind == ModelKind::Beta && !(s.x(0) > 0.0 && s.x(0) < 1.0))
        throw DomainError("Beta observation outside (0,1) at line " +
                          std::to_string(line_no));
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace dmest
