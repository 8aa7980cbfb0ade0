#include "dmest/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>
#include <utility>

#include "dmest/rng.hpp"

namespace dmest {

bool FailurePolicy::drops(int machine_id, int round) const {
  if (rate <= 0.0) return false;
  if (!(rate < 1.0)) throw DomainError("failure policy: rate must lie in [0,1)");
  const std::uint64_t round_index = per_round ? static_cast<std::uint64_t>(round) : 0;
  Rng draw = substream(seed, "failure-draw", static_cast<std::uint64_t>(machine_id),
                       round_index);
  return draw.uniform01() < rate;
}

Worker::Worker(const CriterionModel& model, Shard shard, int machine_id,
               SolveConfig solve)
    : model_(&model), shard_(std::move(shard)), machine_id_(machine_id),
      solve_(solve) {
  if (machine_id < 0) throw DomainError("worker: machine_id must be nonnegative");
  if (shard_.samples.empty()) throw EmptyShard("worker: empty shard");
}

Message Worker::registration() const {
  AssignShardPayload p;
  p.model = std::string(model_->name());
  p.dim = model_->dim();
  p.shard_size = static_cast<long>(shard_.samples.size());
  return Message{machine_id_, 1, std::move(p)};
}

std::optional<Message> Worker::handle(const Message& msg) {
  switch (msg.kind()) {
    case MessageKind::RequestLocalEstimate: {
      const auto& req = std::get<RequestLocalEstimatePayload>(msg.payload);
      const FailurePolicy failure{req.failure_rate, req.per_round_failures,
                                  req.failure_seed};
      if (failure.drops(machine_id_, 1))
        return Message{machine_id_, 1, FailurePayload{}};

      const SolveResult local =
          m_estimate(*model_, shard_, model_->default_init(shard_), solve_);
      LocalEstimatePayload p;
      p.theta = local.theta_hat;
      p.converged = local.converged;
      if (req.resample_ratio > 0.0) {
        const std::size_t n = shard_.samples.size();
        const std::size_t m =
            static_cast<std::size_t>(std::floor(req.resample_ratio * static_cast<double>(n)));
        if (m < 1)
          throw DomainError("worker: resample ratio leaves an empty subsample");
        Rng rng = substream(req.resample_seed, "resample",
                            static_cast<std::uint64_t>(machine_id_));
        const auto picked = sample_without_replacement(n, m, rng);
        Shard sub;
        sub.machine_id = machine_id_;
        sub.samples.reserve(m);
        for (std::size_t idx : picked) sub.samples.push_back(shard_.samples[idx]);
        const SolveResult sub_fit =
            m_estimate(*model_, sub, model_->default_init(sub), solve_);
        p.theta_sub = sub_fit.theta_hat;
      }
      return Message{machine_id_, 1, std::move(p)};
    }
    case MessageKind::BroadcastTheta0: {
      const auto& p = std::get<BroadcastTheta0Payload>(msg.payload);
      if (p.theta0.size() != model_->dim())
        throw TransportError("worker: broadcast estimate has wrong dimension");
      broadcast_theta_ = p.theta0;
      return std::nullopt;
    }
    case MessageKind::RequestGradHess: {
      const auto& req = std::get<RequestGradHessPayload>(msg.payload);
      const FailurePolicy failure{req.failure_rate, req.per_round_failures,
                                  req.failure_seed};
      if (failure.drops(machine_id_, 2))
        return Message{machine_id_, 2, FailurePayload{}};
      if (!broadcast_theta_)
        throw TransportError("worker: gradient requested before broadcast");
      const ShardEval eval = shard_criterion(*model_, shard_, *broadcast_theta_);
      GradHessPayload p;
      p.grad = eval.grad;
      p.hess = eval.hess;
      return Message{machine_id_, 2, std::move(p)};
    }
    case MessageKind::Done:
      done_ = true;
      return std::nullopt;
    default:
      throw TransportError("worker: unexpected message kind " +
                           std::string(kind_name(msg.kind())));
  }
}

void run_worker(WorkerLink& link, Worker& worker) {
  link.send(worker.registration());
  while (!worker.done()) {
    const Message msg = link.recv();
    if (auto reply = worker.handle(msg)) link.send(*reply);
  }
}

namespace {

struct RoundReplies {
  std::vector<std::optional<Message>> by_machine;
  std::vector<int> mask;
};

RoundReplies collect_round(CoordinatorLink& link, int workers, int round,
                           std::vector<Message>& transcript) {
  RoundReplies out;
  out.by_machine.resize(static_cast<std::size_t>(workers));
  out.mask.assign(static_cast<std::size_t>(workers), 0);
  for (int i = 0; i < workers; ++i) {
    Message msg = link.recv();
    const int id = msg.machine_id;
    if (id < 0 || id >= workers)
      throw TransportError("coordinator: reply from unknown machine " +
                           std::to_string(id));
    if (msg.round != round)
      throw TransportError("coordinator: machine " + std::to_string(id) +
                           " replied for the wrong round");
    const MessageKind kind = msg.kind();
    const bool expected =
        (round == 1 && (kind == MessageKind::LocalEstimate ||
                        kind == MessageKind::Failure)) ||
        (round == 2 && (kind == MessageKind::GradHess || kind == MessageKind::Failure));
    if (!expected)
      throw TransportError("coordinator: machine " + std::to_string(id) +
                           " sent unexpected " + std::string(kind_name(kind)));
    if (out.by_machine[static_cast<std::size_t>(id)])
      throw TransportError("coordinator: duplicate reply from machine " +
                           std::to_string(id));
    out.mask[static_cast<std::size_t>(id)] = (kind == MessageKind::Failure) ? 0 : 1;
    out.by_machine[static_cast<std::size_t>(id)] = std::move(msg);
  }
  // Commit replies to the transcript in machine order once the round barrier
  // is reached; arrival interleaving never leaks into downstream state.
  for (const auto& msg : out.by_machine) transcript.push_back(*msg);
  return out;
}

void send_done(CoordinatorLink& link, int workers, std::vector<Message>& transcript) {
  for (int m = 0; m < workers; ++m) {
    const Message done{m, 2, DonePayload{}};
    link.send(m, done);
    transcript.push_back(done);
  }
}

}  // namespace

ProtocolResult run_coordinator(CoordinatorLink& link, int workers,
                               const ProtocolConfig& config) {
  if (workers < 1) throw DomainError("coordinator: need at least one worker");

  ProtocolResult result;
  std::vector<Message>& transcript = result.transcript;

  // Registration: one AssignShard per machine, committed in machine order.
  std::vector<std::optional<Message>> regs(static_cast<std::size_t>(workers));
  for (int i = 0; i < workers; ++i) {
    Message msg = link.recv();
    if (msg.kind() != MessageKind::AssignShard)
      throw TransportError("coordinator: expected registration, got " +
                           std::string(kind_name(msg.kind())));
    const int id = msg.machine_id;
    if (id < 0 || id >= workers)
      throw TransportError("coordinator: registration from unknown machine " +
                           std::to_string(id));
    if (regs[static_cast<std::size_t>(id)])
      throw TransportError("coordinator: duplicate registration from machine " +
                           std::to_string(id));
    regs[static_cast<std::size_t>(id)] = std::move(msg);
  }
  const auto& first = std::get<AssignShardPayload>(regs[0]->payload);
  const int dim = first.dim;
  for (const auto& reg : regs) {
    const auto& p = std::get<AssignShardPayload>(reg->payload);
    if (p.dim != dim || p.model != first.model)
      throw TransportError("coordinator: inconsistent worker registrations");
    transcript.push_back(*reg);
  }

  // Round 1: local estimates.
  for (int m = 0; m < workers; ++m) {
    RequestLocalEstimatePayload p;
    p.failure_rate = config.failure.rate;
    p.failure_seed = config.failure.seed;
    p.per_round_failures = config.failure.per_round;
    p.resample_ratio = config.resample.enabled() ? config.resample.ratio : 0.0;
    p.resample_seed = config.resample.seed;
    const Message req{m, 1, std::move(p)};
    link.send(m, req);
    transcript.push_back(req);
  }
  const RoundReplies round1 = collect_round(link, workers, 1, transcript);
  result.round1_mask = round1.mask;

  AggregationInput locals;
  AggregationInput sublocals;
  for (int m = 0; m < workers; ++m) {
    AggregationInput::Entry e;
    e.machine_id = m;
    e.delivered = round1.mask[static_cast<std::size_t>(m)] == 1;
    AggregationInput::Entry esub = e;
    if (e.delivered) {
      const auto& p =
          std::get<LocalEstimatePayload>(round1.by_machine[static_cast<std::size_t>(m)]->payload);
      if (p.theta.size() != dim)
        throw TransportError("coordinator: machine " + std::to_string(m) +
                             " sent an estimate of wrong dimension");
      e.theta = p.theta;
      if (config.resample.enabled()) {
        if (!p.theta_sub)
          throw TransportError("coordinator: machine " + std::to_string(m) +
                               " omitted the subsample estimate");
        if (p.theta_sub->size() != dim)
          throw TransportError("coordinator: machine " + std::to_string(m) +
                               " sent a subsample estimate of wrong dimension");
        esub.theta = *p.theta_sub;
      }
    }
    locals.entries.push_back(std::move(e));
    if (config.resample.enabled()) sublocals.entries.push_back(std::move(esub));
  }

  const bool any_round1 =
      std::any_of(round1.mask.begin(), round1.mask.end(), [](int a) { return a == 1; });
  if (!any_round1) {
    send_done(link, workers, transcript);
    AllMachinesFailed err("protocol: all machines failed in round 1", 1);
    err.round1_mask = round1.mask;
    throw err;
  }
  result.average_estimate = simple_average(locals);
  if (config.resample.enabled())
    result.subsample_average = simple_average(sublocals);

  // Round 2: broadcast, then gradient/Hessian summaries.
  for (int m = 0; m < workers; ++m) {
    const Message bc{m, 2, BroadcastTheta0Payload{result.average_estimate}};
    link.send(m, bc);
    transcript.push_back(bc);
    RequestGradHessPayload p;
    p.failure_rate = config.failure.rate;
    p.failure_seed = config.failure.seed;
    p.per_round_failures = config.failure.per_round;
    const Message req{m, 2, std::move(p)};
    link.send(m, req);
    transcript.push_back(req);
  }
  const RoundReplies round2 = collect_round(link, workers, 2, transcript);
  result.round2_mask = round2.mask;

  AggregationInput summaries;
  for (int m = 0; m < workers; ++m) {
    AggregationInput::Entry e;
    e.machine_id = m;
    e.delivered = round2.mask[static_cast<std::size_t>(m)] == 1;
    if (e.delivered) {
      const auto& p =
          std::get<GradHessPayload>(round2.by_machine[static_cast<std::size_t>(m)]->payload);
      if (p.grad.size() != dim)
        throw TransportError("coordinator: machine " + std::to_string(m) +
                             " sent a summary of wrong dimension");
      e.grad = p.grad;
      e.hess = p.hess;
    }
    summaries.entries.push_back(std::move(e));
  }

  const bool any_round2 =
      std::any_of(round2.mask.begin(), round2.mask.end(), [](int a) { return a == 1; });
  if (!any_round2) {
    send_done(link, workers, transcript);
    AllMachinesFailed err("protocol: all machines failed in round 2", 2);
    err.average_estimate = result.average_estimate;
    err.subsample_average = result.subsample_average;
    err.round1_mask = result.round1_mask;
    err.round2_mask = round2.mask;
    throw err;
  }
  result.one_step_estimate = one_step_update(result.average_estimate, summaries);

  send_done(link, workers, transcript);
  return result;
}

namespace {

// Synchronous loopback: every message still passes through the wire codec, so
// the coordinator consumes exactly the doubles a TCP peer would produce.
class InProcessLink final : public CoordinatorLink {
 public:
  explicit InProcessLink(std::vector<Worker>& workers) : workers_(&workers) {
    for (const Worker& w : workers)
      inbox_.push_back(roundtrip(w.registration()));
  }

  void send(int machine_id, const Message& msg) override {
    if (machine_id < 0 || static_cast<std::size_t>(machine_id) >= workers_->size())
      throw TransportError("send: unknown machine " + std::to_string(machine_id));
    Worker& w = (*workers_)[static_cast<std::size_t>(machine_id)];
    if (auto reply = w.handle(roundtrip(msg))) inbox_.push_back(roundtrip(*reply));
  }

  Message recv() override {
    if (inbox_.empty()) throw TransportError("recv: no pending messages");
    Message msg = std::move(inbox_.front());
    inbox_.pop_front();
    return msg;
  }

 private:
  static Message roundtrip(const Message& msg) {
    return decode_message(encode_message(msg));
  }

  std::vector<Worker>* workers_;
  std::deque<Message> inbox_;
};

void check_shards(const std::vector<Shard>& shards) {
  if (shards.empty()) throw EmptyInput("run_protocol: no shards");
  for (std::size_t i = 0; i < shards.size(); ++i) {
    if (shards[i].machine_id != static_cast<int>(i))
      throw DomainError("run_protocol: shard machine ids must be 0..k-1 in order");
    if (shards[i].samples.empty()) throw EmptyShard("run_protocol: empty shard");
  }
}

ProtocolResult run_tcp(const CriterionModel& model, const std::vector<Shard>& shards,
                       const ProtocolConfig& config) {
  const int k = static_cast<int>(shards.size());
  TcpCoordinatorLink link("127.0.0.1", 0, k);
  const std::uint16_t port = link.port();

  std::vector<std::exception_ptr> worker_errors(shards.size());
  std::vector<std::thread> threads;
  threads.reserve(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        TcpWorkerLink wlink("127.0.0.1", port);
        Worker w(model, shards[i], static_cast<int>(i), config.solve);
        run_worker(wlink, w);
      } catch (...) {
        worker_errors[i] = std::current_exception();
      }
    });
  }

  ProtocolResult result;
  std::exception_ptr coord_error;
  try {
    result = run_coordinator(link, k, config);
  } catch (...) {
    coord_error = std::current_exception();
    link.close_connections();  // unblock workers still waiting on requests
  }
  for (auto& t : threads) t.join();
  if (coord_error) {
    // A dead worker surfaces at the coordinator as a transport error; the
    // worker's own exception is the root cause, so prefer it.
    try {
      std::rethrow_exception(coord_error);
    } catch (const TransportError&) {
      for (const auto& err : worker_errors)
        if (err) std::rethrow_exception(err);
      throw;
    }
  }
  for (const auto& err : worker_errors)
    if (err) std::rethrow_exception(err);
  return result;
}

}  // namespace

ProtocolResult run_protocol(const CriterionModel& model,
                            const std::vector<Shard>& shards,
                            const ProtocolConfig& config, TransportKind transport) {
  check_shards(shards);
  if (transport == TransportKind::Tcp) return run_tcp(model, shards, config);

  std::vector<Worker> workers;
  workers.reserve(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i)
    workers.emplace_back(model, shards[i], static_cast<int>(i), config.solve);
  InProcessLink link(workers);
  return run_coordinator(link, static_cast<int>(workers.size()), config);
}

}  // namespace dmest
