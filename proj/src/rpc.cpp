#include "yatt/rpc.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "yatt/common.hpp"
#include "yatt/errors.hpp"

namespace yatt::rpc {

using nlohmann::json;

namespace {

constexpr std::uint32_t kMaxFrameBytes = 64 * 1024 * 1024;

bool read_exact(int fd, void* buffer, std::size_t n) {
  auto* out = static_cast<char*>(buffer);
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, out + got, n - got, 0);
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

bool write_all(int fd, const void* buffer, std::size_t n) {
  const auto* data = static_cast<const char*>(buffer);
  std::size_t sent = 0;
  while (sent < n) {
    const ssize_t r = ::send(fd, data + sent, n - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(r);
  }
  return true;
}

bool read_frame(int fd, std::string* out) {
  std::uint32_t len_be = 0;
  if (!read_exact(fd, &len_be, sizeof(len_be))) return false;
  const std::uint32_t len = ntohl(len_be);
  if (len > kMaxFrameBytes) return false;
  out->resize(len);
  return len == 0 || read_exact(fd, out->data(), len);
}

bool write_frame(int fd, const std::string& body) {
  const std::uint32_t len_be = htonl(static_cast<std::uint32_t>(body.size()));
  if (!write_all(fd, &len_be, sizeof(len_be))) return false;
  return write_all(fd, body.data(), body.size());
}

void set_socket_timeout(int fd, double seconds) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(seconds);
  tv.tv_usec = static_cast<suseconds_t>((seconds - static_cast<double>(tv.tv_sec)) * 1e6);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

int connect_loopback(int port, double timeout_s) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return -1;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  set_socket_timeout(fd, timeout_s);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    return -1;
  }
  return fd;
}

bool fault_hit(std::uint64_t seed, std::uint64_t tag,
               const std::string& request_id, int attempt, double rate) {
  if (rate <= 0) return false;
  const std::uint64_t key = hash_key(
      {seed, tag, fnv1a64(request_id), static_cast<std::uint64_t>(attempt)});
  return uniform_from_key(key) < rate;
}

std::string error_response_text(const std::string& request_id,
                                const std::string& kind,
                                const std::string& message) {
  Response response;
  response.request_id = request_id;
  response.status = "error";
  response.error_kind = kind;
  response.error_message = message;
  return response.serialize();
}

}  // namespace

bool FaultPlan::should_drop_response(const std::string& request_id,
                                     int attempt) const {
  return fault_hit(seed, 0xd20bULL, request_id, attempt, drop_response_rate);
}

bool FaultPlan::should_duplicate_send(const std::string& request_id,
                                      int attempt) const {
  return fault_hit(seed, 0xd17cULL, request_id, attempt, duplicate_send_rate);
}

std::string message_kind_name(MessageKind kind) {
  switch (kind) {
    case MessageKind::kCall:
      return "call";
    case MessageKind::kWakeUp:
      return "wake_up";
    case MessageKind::kSleep:
      return "sleep";
    case MessageKind::kCleanupAck:
      return "cleanup_ack";
  }
  throw ConfigError("unknown message kind value");
}

MessageKind message_kind_from_name(const std::string& name) {
  if (name == "call") return MessageKind::kCall;
  if (name == "wake_up") return MessageKind::kWakeUp;
  if (name == "sleep") return MessageKind::kSleep;
  if (name == "cleanup_ack") return MessageKind::kCleanupAck;
  throw ConfigError("unknown message kind: " + name);
}

std::string component_state_name(ComponentState state) {
  return state == ComponentState::kResident ? "resident" : "offloaded";
}

std::string Envelope::serialize() const {
  json j;
  j["id"] = request_id;
  j["kind"] = message_kind_name(kind);
  j["method"] = method;
  j["payload"] = hex_encode(payload);
  j["attempt"] = attempt;
  return j.dump();
}

Envelope Envelope::deserialize(const std::string& text) {
  const json j = json::parse(text);
  Envelope envelope;
  envelope.request_id = j.at("id").get<std::string>();
  envelope.kind = message_kind_from_name(j.at("kind").get<std::string>());
  envelope.method = j.at("method").get<std::string>();
  envelope.payload = hex_decode(j.at("payload").get<std::string>());
  envelope.attempt = j.at("attempt").get<int>();
  return envelope;
}

std::string Response::serialize() const {
  json j;
  j["id"] = request_id;
  j["status"] = status;
  j["error_kind"] = error_kind;
  j["error_message"] = error_message;
  j["result"] = hex_encode(result);
  return j.dump();
}

Response Response::deserialize(const std::string& text) {
  const json j = json::parse(text);
  Response response;
  response.request_id = j.at("id").get<std::string>();
  response.status = j.at("status").get<std::string>();
  response.error_kind = j.at("error_kind").get<std::string>();
  response.error_message = j.at("error_message").get<std::string>();
  response.result = hex_decode(j.at("result").get<std::string>());
  return response;
}

Server::Server(Options options) : options_(options) {}

Server::~Server() { stop(); }

void Server::register_handler(const std::string& method, Handler handler) {
  std::lock_guard<std::mutex> lock(mu_);
  handlers_[method] = std::move(handler);
}

void Server::register_component(const std::string& name, ComponentState initial) {
  std::lock_guard<std::mutex> lock(mu_);
  components_[name] = initial;
}

void Server::start() {
  if (running_.load()) return;
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError("socket() failed");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(options_.port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(listen_fd_);
    throw IoError("bind() failed: " + std::string(std::strerror(errno)));
  }
  socklen_t addr_len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &addr_len);
  port_ = ntohs(addr.sin_port);
  if (::listen(listen_fd_, 128) != 0) {
    ::close(listen_fd_);
    throw IoError("listen() failed");
  }
  running_.store(true);
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> lock(mu_);
    workers.swap(workers_);
  }
  for (std::thread& worker : workers) {
    if (worker.joinable()) worker.join();
  }
}

void Server::accept_loop() {
  while (running_.load()) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (!running_.load()) break;
      if (errno == EINTR) continue;
      break;
    }
    std::lock_guard<std::mutex> lock(mu_);
    workers_.emplace_back([this, fd] { handle_connection(fd); });
  }
}

void Server::handle_connection(int fd) {
  set_socket_timeout(fd, 30.0);
  std::string body;
  if (!read_frame(fd, &body)) {
    ::close(fd);
    return;
  }
  Envelope envelope;
  try {
    envelope = Envelope::deserialize(body);
  } catch (const std::exception&) {
    // Not even an id to echo; drop the connection and let the client
    // treat it as a lost response.
    ::close(fd);
    return;
  }
  const std::string response = process(envelope);
  if (options_.faults.should_drop_response(envelope.request_id, envelope.attempt)) {
    ::close(fd);
    return;
  }
  write_frame(fd, response);
  ::close(fd);
}

std::string Server::process(const Envelope& envelope) {
  if (envelope.kind == MessageKind::kCleanupAck) {
    std::lock_guard<std::mutex> lock(mu_);
    cache_.erase(envelope.payload);
    Response response;
    response.request_id = envelope.request_id;
    response.status = "ok";
    return response.serialize();
  }

  {
    std::unique_lock<std::mutex> lock(mu_);
    if (options_.cache_ttl_s > 0) evict_expired_locked();
    while (true) {
      auto it = cache_.find(envelope.request_id);
      if (it == cache_.end()) {
        cache_.emplace(envelope.request_id, CacheEntry{});
        break;
      }
      if (it->second.done) {
        // Duplicate delivery: serve the memoized response, no re-execution.
        return it->second.response_text;
      }
      // Another delivery of this id is executing right now; wait for it.
      cache_cv_.wait(lock);
    }
  }

  bool ok = true;
  std::string text;
  try {
    text = execute(envelope);
  } catch (const std::exception& e) {
    ok = false;
    text = error_response_text(envelope.request_id, "handler_error", e.what());
  }

  std::lock_guard<std::mutex> lock(mu_);
  if (ok && Response::deserialize(text).status == "ok") {
    CacheEntry& entry = cache_[envelope.request_id];
    entry.done = true;
    entry.response_text = text;
    entry.stored_at_s =
        std::chrono::duration<double>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count();
  } else {
    // Errors are not memoized; a retry re-executes.
    cache_.erase(envelope.request_id);
  }
  cache_cv_.notify_all();
  return text;
}

std::string Server::execute(const Envelope& envelope) {
  if (envelope.kind == MessageKind::kWakeUp ||
      envelope.kind == MessageKind::kSleep) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = components_.find(envelope.method);
    if (it == components_.end()) {
      return error_response_text(envelope.request_id, "unknown_component",
                                 "component " + envelope.method +
                                     " is not registered");
    }
    const ComponentState from = it->second;
    const ComponentState to = envelope.kind == MessageKind::kWakeUp
                                  ? ComponentState::kResident
                                  : ComponentState::kOffloaded;
    it->second = to;
    transitions_.push_back(TransitionRecord{next_transition_sequence_++,
                                            envelope.method, from, to,
                                            envelope.request_id});
    ++executions_;
    Response response;
    response.request_id = envelope.request_id;
    response.status = "ok";
    response.result = component_state_name(to);
    return response.serialize();
  }

  Handler handler;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = handlers_.find(envelope.method);
    if (it == handlers_.end()) {
      return error_response_text(envelope.request_id, "unknown_method",
                                 "no handler for method " + envelope.method);
    }
    handler = it->second;
    ++executions_;
  }
  Response response;
  response.request_id = envelope.request_id;
  response.status = "ok";
  response.result = handler(envelope.payload);
  return response.serialize();
}

void Server::evict_expired_locked() {
  const double now = std::chrono::duration<double>(
                         std::chrono::steady_clock::now().time_since_epoch())
                         .count();
  for (auto it = cache_.begin(); it != cache_.end();) {
    if (it->second.done && now - it->second.stored_at_s > options_.cache_ttl_s) {
      it = cache_.erase(it);
    } else {
      ++it;
    }
  }
}

std::uint64_t Server::handler_executions() const {
  std::lock_guard<std::mutex> lock(mu_);
  return executions_;
}

std::size_t Server::result_cache_size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cache_.size();
}

ComponentState Server::component_state(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = components_.find(name);
  if (it == components_.end()) {
    throw UnknownComponent("component " + name + " is not registered");
  }
  return it->second;
}

std::vector<TransitionRecord> Server::transition_log() const {
  std::lock_guard<std::mutex> lock(mu_);
  return transitions_;
}

Client::Client(std::string host, int port, Options options)
    : host_(std::move(host)), port_(port), options_(options) {}

std::string Client::fresh_request_id() {
  std::lock_guard<std::mutex> lock(id_mu_);
  const std::uint64_t counter = id_counter_ic_++;
  const std::uint64_t hi = hash_key({options_.id_seed, counter, 0x1dULL});
  const std::uint64_t lo = hash_key({options_.id_seed, counter, 0x2dULL});
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx",
                static_cast<unsigned long long>(hi),
                static_cast<unsigned long long>(lo));
  return buf;
}

bool Client::try_once(const Envelope& envelope, Response* response) {
  attempts_made_.fetch_add(1);
  const int fd = connect_loopback(port_, options_.timeout_s);
  if (fd < 0) return false;
  bool ok = write_frame(fd, envelope.serialize());
  std::string body;
  ok = ok && read_frame(fd, &body);
  ::close(fd);
  if (!ok) return false;
  try {
    *response = Response::deserialize(body);
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

void Client::acknowledge(const std::string& request_id) {
  Envelope ack;
  ack.request_id = fresh_request_id();
  ack.kind = MessageKind::kCleanupAck;
  ack.payload = request_id;
  for (int attempt = 1; attempt <= options_.max_retries; ++attempt) {
    ack.attempt = attempt;
    Response response;
    if (try_once(ack, &response)) return;
  }
  // Unacked entries are eventually reclaimed by the server's TTL.
}

Response Client::exchange(MessageKind kind, const std::string& method,
                          const std::string& payload) {
  Envelope envelope;
  envelope.request_id = fresh_request_id();
  envelope.kind = kind;
  envelope.method = method;
  envelope.payload = payload;

  for (int attempt = 1; attempt <= options_.max_retries; ++attempt) {
    envelope.attempt = attempt;
    if (options_.faults.should_duplicate_send(envelope.request_id, attempt)) {
      // Deliver the same envelope twice; the duplicate's response is
      // discarded. The server must still execute exactly once.
      Response duplicate;
      try_once(envelope, &duplicate);
    }
    Response response;
    if (!try_once(envelope, &response)) continue;
    acknowledge(envelope.request_id);
    if (response.status == "ok") return response;
    if (response.error_kind == "unknown_method") {
      throw UnknownMethod(response.error_message);
    }
    if (response.error_kind == "unknown_component") {
      throw UnknownComponent(response.error_message);
    }
    throw RemoteError(response.error_kind + ": " + response.error_message);
  }
  throw RpcTimeout("request " + envelope.request_id + " (" +
                   message_kind_name(kind) + " " + method + ") got no response after " +
                   std::to_string(options_.max_retries) + " attempts");
}

std::string Client::call(const std::string& method, const std::string& payload) {
  return exchange(MessageKind::kCall, method, payload).result;
}

ComponentState Client::wake_up(const std::string& component) {
  const Response response = exchange(MessageKind::kWakeUp, component, "");
  return response.result == "resident" ? ComponentState::kResident
                                       : ComponentState::kOffloaded;
}

ComponentState Client::sleep_component(const std::string& component) {
  const Response response = exchange(MessageKind::kSleep, component, "");
  return response.result == "resident" ? ComponentState::kResident
                                       : ComponentState::kOffloaded;
}

ProcessGroup::~ProcessGroup() {
  std::vector<pid_t> pids;
  {
    std::lock_guard<std::mutex> lock(mu_);
    pids = pids_;
  }
  for (pid_t pid : pids) {
    if (::waitpid(pid, nullptr, WNOHANG) == 0) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, nullptr, 0);
    }
  }
}

pid_t ProcessGroup::spawn(
    const std::vector<std::string>& argv,
    const std::vector<std::pair<std::string, std::string>>& extra_env) {
  if (argv.empty()) throw ConfigError("spawn needs a program path");
  const pid_t pid = ::fork();
  if (pid < 0) throw IoError("fork() failed");
  if (pid == 0) {
    for (const auto& [key, value] : extra_env) {
      ::setenv(key.c_str(), value.c_str(), 1);
    }
    std::vector<char*> args;
    args.reserve(argv.size() + 1);
    for (const std::string& arg : argv) {
      args.push_back(const_cast<char*>(arg.c_str()));
    }
    args.push_back(nullptr);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  std::lock_guard<std::mutex> lock(mu_);
  pids_.push_back(pid);
  return pid;
}

void ProcessGroup::fail_fast(const std::string& reason) {
  if (failed_.exchange(true)) return;
  std::vector<pid_t> pids;
  {
    std::lock_guard<std::mutex> lock(mu_);
    reason_ = reason;
    pids = pids_;
  }
  std::fprintf(stderr, "[process-group] fail-fast: %s\n", reason.c_str());

  std::vector<pid_t> alive;
  for (pid_t pid : pids) {
    if (::kill(pid, SIGTERM) == 0 || errno != ESRCH) alive.push_back(pid);
  }
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration<double>(options_.term_grace_s);
  while (!alive.empty() && std::chrono::steady_clock::now() < deadline) {
    for (auto it = alive.begin(); it != alive.end();) {
      if (::waitpid(*it, nullptr, WNOHANG) != 0) {
        it = alive.erase(it);
      } else {
        ++it;
      }
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  for (pid_t pid : alive) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, nullptr, 0);
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (pid_t pid : alive) {
      reaped_.emplace(pid, -SIGKILL);
    }
    // Children that exited within the grace period were reaped above
    // with an unknown status; record them as terminated.
    for (pid_t pid : pids) {
      reaped_.emplace(pid, -SIGTERM);
    }
  }
  if (options_.exit_on_failure) {
    std::_Exit(1);
  }
}

std::string ProcessGroup::failure_reason() const {
  std::lock_guard<std::mutex> lock(mu_);
  return reason_;
}

std::vector<int> ProcessGroup::wait_all() {
  std::vector<pid_t> pids;
  {
    std::lock_guard<std::mutex> lock(mu_);
    pids = pids_;
  }
  std::vector<int> codes;
  for (pid_t pid : pids) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = reaped_.find(pid);
      if (it != reaped_.end()) {
        codes.push_back(it->second);
        continue;
      }
    }
    int status = 0;
    if (::waitpid(pid, &status, 0) < 0) {
      codes.push_back(-1);
      continue;
    }
    int code = -1;
    if (WIFEXITED(status)) code = WEXITSTATUS(status);
    if (WIFSIGNALED(status)) code = -WTERMSIG(status);
    codes.push_back(code);
    std::lock_guard<std::mutex> lock(mu_);
    reaped_.emplace(pid, code);
  }
  return codes;
}

std::size_t ProcessGroup::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return pids_.size();
}

Watchdog::Watchdog(std::function<std::uint64_t()> progress, Options options,
                   std::function<void(const std::string&)> on_stall)
    : progress_(std::move(progress)),
      options_(options),
      on_stall_(std::move(on_stall)) {}

Watchdog::~Watchdog() { stop(); }

void Watchdog::start() {
  if (running_.exchange(true)) return;
  thread_ = std::thread([this] { run(); });
}

void Watchdog::stop() {
  if (!running_.exchange(false)) return;
  if (thread_.joinable()) thread_.join();
}

void Watchdog::run() {
  std::uint64_t last = progress_();
  int tick = 0;
  while (running_.load()) {
    double remaining = options_.window_s;
    while (remaining > 0 && running_.load()) {
      const double slice = std::min(remaining, 0.02);
      std::this_thread::sleep_for(std::chrono::duration<double>(slice));
      remaining -= slice;
    }
    if (!running_.load()) return;

    const std::uint64_t current = progress_();
    const std::uint64_t delta = current - last;
    last = current;
    Verdict verdict{tick++, delta, delta >= options_.min_steps_per_window};
    {
      std::lock_guard<std::mutex> lock(mu_);
      verdicts_.push_back(verdict);
    }
    if (!verdict.ok && !stalled_.exchange(true)) {
      on_stall_("stalled: " + std::to_string(delta) +
                " step(s) in the last window, expected at least " +
                std::to_string(options_.min_steps_per_window));
    }
  }
}

std::vector<Watchdog::Verdict> Watchdog::verdicts() const {
  std::lock_guard<std::mutex> lock(mu_);
  return verdicts_;
}

}  // namespace yatt::rpc
