#include "dmest/message.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <system_error>

namespace dmest {

namespace {

constexpr std::string_view kKindNames[] = {
    "AssignShard",    "RequestLocalEstimate", "LocalEstimate",
    "BroadcastTheta0", "RequestGradHess",     "GradHess",
    "Failure",         "Done",
};

void append_double(std::string& out, double v) {
  if (!std::isfinite(v))
    throw NonFiniteInput("encode_message: non-finite floating-point field");
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

void append_vector(std::string& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out.push_back(',');
    append_double(out, v(i));
  }
}

void append_matrix(std::string& out, const Matrix& a) {
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (i > 0) out.push_back(';');
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (j > 0) out.push_back(',');
      append_double(out, a(i, j));
    }
  }
}

void append_field(std::string& out, std::string_view key, std::string_view value) {
  out.append(key);
  out.push_back('=');
  out.append(value);
  out.push_back('\n');
}

template <typename T>
void append_int_field(std::string& out, std::string_view key, T v) {
  char buf[24];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  append_field(out, key, std::string_view(buf, res.ptr - buf));
}

void append_double_field(std::string& out, std::string_view key, double v) {
  out.append(key);
  out.push_back('=');
  append_double(out, v);
  out.push_back('\n');
}

void append_vector_field(std::string& out, std::string_view key, const Vector& v) {
  out.append(key);
  out.push_back('=');
  append_vector(out, v);
  out.push_back('\n');
}

void append_matrix_field(std::string& out, std::string_view key, const Matrix& a) {
  out.append(key);
  out.push_back('=');
  append_matrix(out, a);
  out.push_back('\n');
}

// --- strict line-oriented parser -------------------------------------------

class BodyParser {
 public:
  explicit BodyParser(std::string_view body) : rest_(body) {}

  bool at_end() const { return rest_.empty(); }

  std::string_view expect(std::string_view key) {
    auto field = peek_line();
    if (!field || field->first != key)
      throw MalformedFrame("decode_message: expected field '" + std::string(key) + "'");
    advance();
    return field->second;
  }

  std::optional<std::string_view> accept(std::string_view key) {
    auto field = peek_line();
    if (!field || field->first != key) return std::nullopt;
    advance();
    return field->second;
  }

  void expect_end() const {
    if (!rest_.empty())
      throw MalformedFrame("decode_message: trailing content after payload");
  }

 private:
  std::optional<std::pair<std::string_view, std::string_view>> peek_line() const {
    if (rest_.empty()) return std::nullopt;
    const std::size_t nl = rest_.find('\n');
    if (nl == std::string_view::npos)
      throw MalformedFrame("decode_message: unterminated line");
    const std::string_view line = rest_.substr(0, nl);
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw MalformedFrame("decode_message: line without '='");
    return std::make_pair(line.substr(0, eq), line.substr(eq + 1));
  }

  void advance() { rest_.remove_prefix(rest_.find('\n') + 1); }

  std::string_view rest_;
};

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw MalformedFrame("decode_message: bad floating-point value");
  if (!std::isfinite(v))
    throw MalformedFrame("decode_message: non-finite floating-point value");
  return v;
}

template <typename T>
T parse_int(std::string_view s) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw MalformedFrame("decode_message: bad integer value");
  return v;
}

bool parse_bool(std::string_view s) {
  if (s == "0") return false;
  if (s == "1") return true;
  throw MalformedFrame("decode_message: bad boolean value");
}

Vector parse_vector(std::string_view s) {
  if (s.empty()) throw MalformedFrame("decode_message: empty vector payload");
  std::vector<double> vals;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = s.find(',', start);
    const std::string_view tok =
        comma == std::string_view::npos ? s.substr(start) : s.substr(start, comma - start);
    vals.push_back(parse_double(tok));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  Vector v(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<Eigen::Index>(i)) = vals[i];
  return v;
}

Matrix parse_matrix(std::string_view s) {
  if (s.empty()) throw MalformedFrame("decode_message: empty matrix payload");
  std::vector<Vector> rows;
  std::size_t start = 0;
  while (true) {
    const std::size_t semi = s.find(';', start);
    const std::string_view row =
        semi == std::string_view::npos ? s.substr(start) : s.substr(start, semi - start);
    rows.push_back(parse_vector(row));
    if (semi == std::string_view::npos) break;
    start = semi + 1;
  }
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  for (const Vector& r : rows)
    if (r.size() != rows.front().size())
      throw MalformedFrame("decode_message: ragged matrix payload");
  Matrix a(n, rows.front().size());
  for (Eigen::Index i = 0; i < n; ++i) a.row(i) = rows[static_cast<std::size_t>(i)];
  return a;
}

MessageKind parse_kind(std::string_view s) {
  for (std::size_t i = 0; i < std::size(kKindNames); ++i)
    if (s == kKindNames[i]) return static_cast<MessageKind>(i);
  throw MalformedFrame("decode_message: unknown message kind");
}

}  // namespace

std::string_view kind_name(MessageKind kind) {
  return kKindNames[static_cast<std::size_t>(kind)];
}

std::string encode_message(const Message& msg) {
  if (msg.machine_id < 0)
    throw DomainError("encode_message: machine_id must be nonnegative");
  if (msg.round != 1 && msg.round != 2)
    throw DomainError("encode_message: round must be 1 or 2");

  std::string body;
  append_field(body, "kind", kind_name(msg.kind()));
  append_int_field(body, "machine", msg.machine_id);
  append_int_field(body, "round", msg.round);

  std::visit(
      [&body](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, AssignShardPayload>) {
          if (p.model.find_first_of("\n=") != std::string::npos)
            throw DomainError("encode_message: model tag contains reserved characters");
          append_field(body, "model", p.model);
          append_int_field(body, "dim", p.dim);
          append_int_field(body, "shard_size", p.shard_size);
        } else if constexpr (std::is_same_v<P, RequestLocalEstimatePayload>) {
          append_double_field(body, "failure_rate", p.failure_rate);
          append_int_field(body, "failure_seed", p.failure_seed);
          append_field(body, "per_round", p.per_round_failures ? "1" : "0");
          append_double_field(body, "resample_ratio", p.resample_ratio);
          append_int_field(body, "resample_seed", p.resample_seed);
        } else if constexpr (std::is_same_v<P, LocalEstimatePayload>) {
          append_vector_field(body, "theta", p.theta);
          append_field(body, "converged", p.converged ? "1" : "0");
          if (p.theta_sub) append_vector_field(body, "theta_sub", *p.theta_sub);
        } else if constexpr (std::is_same_v<P, BroadcastTheta0Payload>) {
          append_vector_field(body, "theta0", p.theta0);
        } else if constexpr (std::is_same_v<P, RequestGradHessPayload>) {
          append_double_field(body, "failure_rate", p.failure_rate);
          append_int_field(body, "failure_seed", p.failure_seed);
          append_field(body, "per_round", p.per_round_failures ? "1" : "0");
        } else if constexpr (std::is_same_v<P, GradHessPayload>) {
          if (p.hess.rows() != p.hess.cols() || p.hess.rows() != p.grad.size())
            throw DimensionMismatch("encode_message: gradient/Hessian shape mismatch");
          if (!is_symmetric(p.hess))
            throw DomainError("encode_message: Hessian payload not symmetric");
          append_vector_field(body, "grad", p.grad);
          append_matrix_field(body, "hess", p.hess);
        }
        // Failure and Done carry no payload fields.
      },
      msg.payload);

  const std::size_t frame_len = 1 + body.size();
  if (frame_len > kMaxFrameBytes)
    throw FrameTooLarge("encode_message: frame exceeds 64 MiB");

  std::string out;
  out.reserve(4 + frame_len);
  out.push_back(static_cast<char>((frame_len >> 24) & 0xFF));
  out.push_back(static_cast<char>((frame_len >> 16) & 0xFF));
  out.push_back(static_cast<char>((frame_len >> 8) & 0xFF));
  out.push_back(static_cast<char>(frame_len & 0xFF));
  out.push_back(static_cast<char>(kWireVersion));
  out.append(body);
  return out;
}

Message decode_message(std::string_view frame) {
  if (frame.size() < 5) throw MalformedFrame("decode_message: truncated frame");
  const auto* u = reinterpret_cast<const unsigned char*>(frame.data());
  const std::size_t frame_len = (static_cast<std::size_t>(u[0]) << 24) |
                                (static_cast<std::size_t>(u[1]) << 16) |
                                (static_cast<std::size_t>(u[2]) << 8) |
                                static_cast<std::size_t>(u[3]);
  if (frame_len > kMaxFrameBytes)
    throw FrameTooLarge("decode_message: frame exceeds 64 MiB");
  if (frame.size() != 4 + frame_len)
    throw MalformedFrame("decode_message: frame length mismatch");
  if (u[4] != kWireVersion)
    throw VersionMismatch("decode_message: unsupported wire version");

  BodyParser parser(frame.substr(5));
  const MessageKind kind = parse_kind(parser.expect("kind"));
  Message msg;
  msg.machine_id = parse_int<int>(parser.expect("machine"));
  if (msg.machine_id < 0) throw MalformedFrame("decode_message: negative machine id");
  msg.round = parse_int<int>(parser.expect("round"));
  if (msg.round != 1 && msg.round != 2)
    throw MalformedFrame("decode_message: round must be 1 or 2");

  switch (kind) {
    case MessageKind::AssignShard: {
      AssignShardPayload p;
      p.model = std::string(parser.expect("model"));
      p.dim = parse_int<int>(parser.expect("dim"));
      p.shard_size = parse_int<long>(parser.expect("shard_size"));
      if (p.dim < 1) throw MalformedFrame("decode_message: dim must be >= 1");
      if (p.shard_size < 1)
        throw MalformedFrame("decode_message: shard_size must be >= 1");
      msg.payload = std::move(p);
      break;
    }
    case MessageKind::RequestLocalEstimate: {
      RequestLocalEstimatePayload p;
      p.failure_rate = parse_double(parser.expect("failure_rate"));
      p.failure_seed = parse_int<std::uint64_t>(parser.expect("failure_seed"));
      p.per_round_failures = parse_bool(parser.expect("per_round"));
      p.resample_ratio = parse_double(parser.expect("resample_ratio"));
      p.resample_seed = parse_int<std::uint64_t>(parser.expect("resample_seed"));
      if (p.failure_rate < 0.0 || p.failure_rate >= 1.0)
        throw MalformedFrame("decode_message: failure_rate outside [0,1)");
      if (p.resample_ratio < 0.0 || p.resample_ratio >= 1.0)
        throw MalformedFrame("decode_message: resample_ratio outside [0,1)");
      msg.payload = std::move(p);
      break;
    }
    case MessageKind::LocalEstimate: {
      LocalEstimatePayload p;
      p.theta = parse_vector(parser.expect("theta"));
      p.converged = parse_bool(parser.expect("converged"));
      if (auto sub = parser.accept("theta_sub")) p.theta_sub = parse_vector(*sub);
      msg.payload = std::move(p);
      break;
    }
    case MessageKind::BroadcastTheta0: {
      BroadcastTheta0Payload p;
      p.theta0 = parse_vector(parser.expect("theta0"));
      msg.payload = std::move(p);
      break;
    }
    case MessageKind::RequestGradHess: {
      RequestGradHessPayload p;
      p.failure_rate = parse_double(parser.expect("failure_rate"));
      p.failure_seed = parse_int<std::uint64_t>(parser.expect("failure_seed"));
      p.per_round_failures = parse_bool(parser.expect("per_round"));
      if (p.failure_rate < 0.0 || p.failure_rate >= 1.0)
        throw MalformedFrame("decode_message: failure_rate outside [0,1)");
      msg.payload = std::move(p);
      break;
    }
    case MessageKind::GradHess: {
      GradHessPayload p;
      p.grad = parse_vector(parser.expect("grad"));
      p.hess = parse_matrix(parser.expect("hess"));
      if (p.hess.rows() != p.hess.cols() || p.hess.rows() != p.grad.size())
        throw MalformedFrame("decode_message: gradient/Hessian shape mismatch");
      if (!is_symmetric(p.hess))
        throw MalformedFrame("decode_message: Hessian payload not symmetric");
      msg.payload = std::move(p);
      break;
    }
    case MessageKind::Failure:
      msg.payload = FailurePayload{};
      break;
    case MessageKind::Done:
      msg.payload = DonePayload{};
      break;
  }
  parser.expect_end();
  return msg;
}

}  // namespace dmest
