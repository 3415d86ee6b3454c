#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <sys/types.h>
#include <thread>
#include <unordered_map>
#include <vector>

namespace yatt::rpc {

// Deterministic fault injection, keyed on (seed, request id, attempt)
// so a given attempt always fails the same way across runs.
struct FaultPlan {
  double drop_response_rate = 0;
  double duplicate_send_rate = 0;
  std::uint64_t seed = 0;

  bool should_drop_response(const std::string& request_id, int attempt) const;
  bool should_duplicate_send(const std::string& request_id, int attempt) const;
};

enum class MessageKind {
  kCall,
  kWakeUp,
  kSleep,
  kCleanupAck,
};

std::string message_kind_name(MessageKind kind);
MessageKind message_kind_from_name(const std::string& name);

// One framed request: 4-byte big-endian length, then a JSON object
// {id, kind, method, payload (hex), attempt}.
struct Envelope {
  std::string request_id;
  MessageKind kind = MessageKind::kCall;
  std::string method;
  std::string payload;
  int attempt = 1;

  std::string serialize() const;
  static Envelope deserialize(const std::string& text);
};

struct Response {
  std::string request_id;
  std::string status;      // "ok" or "error"
  std::string error_kind;  // set when status == "error"
  std::string error_message;
  std::string result;

  std::string serialize() const;
  static Response deserialize(const std::string& text);
};

enum class ComponentState {
  kOffloaded,
  kResident,
};

std::string component_state_name(ComponentState state);

struct TransitionRecord {
  std::uint64_t sequence = 0;
  std::string component;
  ComponentState from = ComponentState::kOffloaded;
  ComponentState to = ComponentState::kOffloaded;
  std::string request_id;
};

struct ServerOptions {
  int port = 0;  // 0 picks a free port
  FaultPlan faults;
  // Optional safety valve: entries older than this are evicted even
  // without an ack (0 disables; acks are the normal cleanup path).
  double cache_ttl_s = 0;
};

// Exactly-once request server. Every request id is executed at most
// once: results are cached until the client acknowledges receipt, and
// duplicate deliveries (including ones that race the first execution)
// are served from the cache.
class Server {
 public:
  using Options = ServerOptions;

  using Handler = std::function<std::string(const std::string&)>;

  explicit Server(Options options = Options());
  ~Server();

  void register_handler(const std::string& method, Handler handler);
  void register_component(const std::string& name,
                          ComponentState initial = ComponentState::kOffloaded);

  void start();
  void stop();
  int port() const { return port_; }

  std::uint64_t handler_executions() const;
  std::size_t result_cache_size() const;
  ComponentState component_state(const std::string& name) const;
  std::vector<TransitionRecord> transition_log() const;

 private:
  struct CacheEntry {
    bool done = false;
    std::string response_text;
    double stored_at_s = 0;
  };

  void accept_loop();
  void handle_connection(int fd);
  std::string process(const Envelope& envelope);
  std::string execute(const Envelope& envelope);
  void evict_expired_locked();

  Options options_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::thread accept_thread_;
  std::atomic<bool> running_{false};
  std::vector<std::thread> workers_;

  mutable std::mutex mu_;
  std::condition_variable cache_cv_;
  std::unordered_map<std::string, CacheEntry> cache_;
  std::unordered_map<std::string, Handler> handlers_;
  std::map<std::string, ComponentState> components_;
  std::vector<TransitionRecord> transitions_;
  std::uint64_t executions_ = 0;
  std::uint64_t next_transition_sequence_ = 0;
};

struct ClientOptions {
  double timeout_s = 2.0;
  int max_retries = 16;
  FaultPlan faults;
  std::uint64_t id_seed = 0;
};

// Retrying client. Each logical call keeps one request id across all
// attempts, acknowledges receipt so the server can free its cache
// entry, and gives up with RpcTimeout after max_retries attempts.
class Client {
 public:
  using Options = ClientOptions;

  Client(std::string host, int port, Options options = Options());

  std::string call(const std::string& method, const std::string& payload);
  ComponentState wake_up(const std::string& component);
  ComponentState sleep_component(const std::string& component);

  std::uint64_t attempts_made() const { return attempts_made_.load(); }

 private:
  std::string fresh_request_id();
  Response exchange(MessageKind kind, const std::string& method,
                    const std::string& payload);
  bool try_once(const Envelope& envelope, Response* response);
  void acknowledge(const std::string& request_id);

  std::string host_;
  int port_;
  Options options_;
  std::mutex id_mu_;
  std::uint64_t id_counter_ic_ = 0;
  std::atomic<std::uint64_t> attempts_made_{0};
};

struct ProcessGroupOptions {
  double term_grace_s = 2.0;
  bool exit_on_failure = false;
};

// Child process registry with a fail-fast kill switch: on the first
// unrecoverable error the whole group is torn down (SIGTERM, grace
// period, SIGKILL) so no worker outlives a failed run.
class ProcessGroup {
 public:
  using Options = ProcessGroupOptions;

  explicit ProcessGroup(Options options = Options()) : options_(options) {}
  ~ProcessGroup();

  pid_t spawn(const std::vector<std::string>& argv,
              const std::vector<std::pair<std::string, std::string>>& extra_env);

  void fail_fast(const std::string& reason);
  bool fail_fast_invoked() const { return failed_.load(); }
  std::string failure_reason() const;

  // Blocks until every child exits; returns exit codes (negative values
  // are -signal for signal deaths).
  std::vector<int> wait_all();
  std::size_t size() const;

 private:
  Options options_;
  mutable std::mutex mu_;
  std::vector<pid_t> pids_;
  std::map<pid_t, int> reaped_;
  std::atomic<bool> failed_{false};
  std::string reason_;
};

// Periodically compares a monotonically increasing progress counter
// against the minimum expected advance per window and reports a stall.
class Watchdog {
 public:
  struct Options {
    std::uint64_t min_steps_per_window = 1;
    double window_s = 1.0;
  };

  struct Verdict {
    int tick = 0;
    std::uint64_t steps_delta = 0;
    bool ok = true;
  };

  Watchdog(std::function<std::uint64_t()> progress, Options options,
           std::function<void(const std::string&)> on_stall);
  ~Watchdog();

  void start();
  void stop();
  std::vector<Verdict> verdicts() const;
  bool stalled() const { return stalled_.load(); }

 private:
  void run();

  std::function<std::uint64_t()> progress_;
  Options options_;
  std::function<void(const std::string&)> on_stall_;
  std::thread thread_;
  std::atomic<bool> running_{false};
  std::atomic<bool> stalled_{false};
  mutable std::mutex mu_;
  std::vector<Verdict> verdicts_;
};

}  // namespace yatt::rpc
