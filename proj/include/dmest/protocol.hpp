#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dmest/estimators.hpp"
#include "dmest/solver.hpp"
#include "dmest/transport.hpp"

namespace dmest {

// Per-(machine, round) drop decisions, pre-committed from the seed so every
// transport and replay sees the same failures. The default ties both rounds
// of a machine to one draw; per_round=true is the independent-drop extension.
struct FailurePolicy {
  double rate = 0.0;
  bool per_round = false;
  std::uint64_t seed = 0;

  bool drops(int machine_id, int round) const;
};

struct ResamplePolicy {
  double ratio = 0.0;  // 0 disables the subsample estimate
  std::uint64_t seed = 0;
  bool enabled() const { return ratio > 0.0; }
};

struct ProtocolConfig {
  SolveConfig solve;
  FailurePolicy failure;
  ResamplePolicy resample;
};

struct ProtocolResult {
  Vector average_estimate;                 // round-1 mean of delivered locals
  Vector one_step_estimate;                // round-2 Newton update
  std::optional<Vector> subsample_average; // set when resampling is on
  std::vector<int> round1_mask;            // a_i per machine, ascending id
  std::vector<int> round2_mask;
  std::vector<Message> transcript;         // coordinator-side ordered log
};

// Local machine: holds its shard, answers protocol requests. Stateless
// between rounds except for the shard and the broadcast estimate.
class Worker {
 public:
  Worker(const CriterionModel& model, Shard shard, int machine_id,
         SolveConfig solve = {});

  Message registration() const;
  std::optional<Message> handle(const Message& msg);
  bool done() const { return done_; }
  int machine_id() const { return machine_id_; }

 private:
  const CriterionModel* model_;
  Shard shard_;
  int machine_id_;
  SolveConfig solve_;
  std::optional<Vector> broadcast_theta_;
  bool done_ = false;
};

// Drives both rounds against any transport. Learns k, dimension and model tag
// from the registrations; only summaries ever reach this side.
ProtocolResult run_coordinator(CoordinatorLink& link, int workers,
                               const ProtocolConfig& config);

// Worker main loop: register, answer until Done.
void run_worker(WorkerLink& link, Worker& worker);

enum class TransportKind { InProcess, Tcp };

// Full two-round run with k in-process workers, or the same exchange over
// localhost TCP with one thread per worker.
ProtocolResult run_protocol(const CriterionModel& model,
                            const std::vector<Shard>& shards,
                            const ProtocolConfig& config,
                            TransportKind transport = TransportKind::InProcess);

}  // namespace dmest
