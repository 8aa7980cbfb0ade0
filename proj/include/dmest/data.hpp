#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmest/model.hpp"
#include "dmest/rng.hpp"

namespace dmest {

enum class ModelKind { Logistic, Beta, Gaussian };

std::string_view model_kind_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
int model_dim(ModelKind kind, int d);

// Synthetic experiment input. The true parameter is drawn once from the
// stated law ("param" substream), then n i.i.d. samples ("samples"
// substream): logistic covariates Unif(-1,1) with Bernoulli response; Beta
// observations via two Gamma draws; Gaussian observations mu + sigma*z.
struct GeneratorSpec {
  ModelKind kind = ModelKind::Gaussian;
  int d = 2;       // logistic covariate dimension; ignored otherwise
  long n = 0;
  std::uint64_t seed = 0;
  // Test hook: skip the parameter draw and use this value instead.
  std::optional<Vector> forced_param;
};

struct Generated {
  Vector theta_true;
  std::vector<Sample> samples;
};

Generated generate(const GeneratorSpec& spec);

// Uniformly random permutation, then contiguous blocks of n/k samples per
// machine. Throws IndivisibleSplit when k does not divide n.
std::vector<Shard> shard_split(const std::vector<Sample>& samples, int k,
                               std::uint64_t seed);

// CSV persistence. Header is x1..xd,y for logistic and x otherwise; floats
// are shortest round-trip decimals, so read(write(s)) == s bit-for-bit.
void write_samples_csv(const std::string& path, const std::vector<Sample>& samples,
                       ModelKind kind, int d);
std::vector<Sample> read_samples_csv(const std::string& path, ModelKind kind);

}  // namespace dmest
