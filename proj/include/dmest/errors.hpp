#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dmest {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error { using Error::Error; };
struct NotDefinite : Error { using Error::Error; };
struct NonFiniteInput : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct EmptyShard : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct IndivisibleSplit : Error { using Error::Error; };
struct Diverged : Error { using Error::Error; };

struct IoError : Error { using Error::Error; };
struct MalformedRow : IoError { using IoError::IoError; };

struct FrameTooLarge : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct MalformedFrame : Error { using Error::Error; };
struct TransportError : Error { using Error::Error; };

// Raised when no machine delivered its contribution for a protocol round.
// Carries whatever the coordinator had already committed so callers can
// degrade instead of discarding the whole run (a round-2 loss still leaves
// the round-1 average usable).
struct AllMachinesFailed : Error {
  explicit AllMachinesFailed(const std::string& what, int round_ = 0)
      : Error(what), round(round_) {}
  int round = 0;
  std::optional<Eigen::VectorXd> average_estimate;
  std::optional<Eigen::VectorXd> subsample_average;
  std::vector<int> round1_mask;
  std::vector<int> round2_mask;
};

}  // namespace dmest
