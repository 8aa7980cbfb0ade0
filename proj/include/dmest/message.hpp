#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "dmest/linalg.hpp"

namespace dmest {

// Round-trip wire protocol. Frames are a 4-byte big-endian length (covering
// the version byte and body), a version byte 0x01, then a canonical key=value
// text body, one field per line, floating point rendered as shortest
// round-trip decimals. decode(encode(m)) == m bit-for-bit.

enum class MessageKind {
  AssignShard,
  RequestLocalEstimate,
  LocalEstimate,
  BroadcastTheta0,
  RequestGradHess,
  GradHess,
  Failure,
  Done,
};

std::string_view kind_name(MessageKind kind);

// Worker -> coordinator registration: which machine holds which shard.
struct AssignShardPayload {
  std::string model;
  int dim = 0;
  long shard_size = 0;
  bool operator==(const AssignShardPayload&) const = default;
};

struct RequestLocalEstimatePayload {
  double failure_rate = 0.0;
  std::uint64_t failure_seed = 0;
  bool per_round_failures = false;
  double resample_ratio = 0.0;  // 0 disables the subsample estimate
  std::uint64_t resample_seed = 0;
  bool operator==(const RequestLocalEstimatePayload&) const = default;
};

struct LocalEstimatePayload {
  Vector theta;
  bool converged = true;
  std::optional<Vector> theta_sub;
  bool operator==(const LocalEstimatePayload& o) const {
    return bit_equal(theta, o.theta) && converged == o.converged &&
           theta_sub.has_value() == o.theta_sub.has_value() &&
           (!theta_sub || bit_equal(*theta_sub, *o.theta_sub));
  }
};

struct BroadcastTheta0Payload {
  Vector theta0;
  bool operator==(const BroadcastTheta0Payload& o) const {
    return bit_equal(theta0, o.theta0);
  }
};

struct RequestGradHessPayload {
  double failure_rate = 0.0;
  std::uint64_t failure_seed = 0;
  bool per_round_failures = false;
  bool operator==(const RequestGradHessPayload&) const = default;
};

struct GradHessPayload {
  Vector grad;
  Matrix hess;
  bool operator==(const GradHessPayload& o) const {
    return bit_equal(grad, o.grad) && bit_equal(hess, o.hess);
  }
};

struct FailurePayload {
  bool operator==(const FailurePayload&) const = default;
};

struct DonePayload {
  bool operator==(const DonePayload&) const = default;
};

using MessagePayload =
    std::variant<AssignShardPayload, RequestLocalEstimatePayload,
                 LocalEstimatePayload, BroadcastTheta0Payload,
                 RequestGradHessPayload, GradHessPayload, FailurePayload,
                 DonePayload>;

struct Message {
  int machine_id = 0;
  int round = 1;  // 1 or 2
  MessagePayload payload;

  MessageKind kind() const { return static_cast<MessageKind>(payload.index()); }
  bool operator==(const Message&) const = default;
};

inline constexpr std::size_t kMaxFrameBytes = 64ull << 20;
inline constexpr unsigned char kWireVersion = 0x01;

// Full frame bytes (length prefix + version + body). Throws NonFiniteInput on
// NaN/inf payloads and FrameTooLarge past 64 MiB.
std::string encode_message(const Message& msg);

// Parses a full frame. Throws VersionMismatch, FrameTooLarge or
// MalformedFrame (strict canonical parse, non-finite floats rejected,
// Hessian payloads must be square and symmetric, round must be 1 or 2).
Message decode_message(std::string_view frame);

}  // namespace dmest
