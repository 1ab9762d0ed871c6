#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "palo/command.hpp"
#include "palo/env.hpp"
#include "palo/eval.hpp"
#include "palo/rl.hpp"

// Teleop telemetry: newline-delimited JSON frames over TCP.
//
// server -> client
//   {"type":"hello","protocol":1,"control_hz":50,"limits":{...}}
//   {"type":"state","step":k,"t":s,"seq":n,"command":{...},"clamped":{...},
//    "actual":{...},"pose":{...},"episode":e}
//   {"type":"metrics","step":k,"episode":e,"r_v":..,"r_w":..,"r_h":..,"r_theta":..}
//   {"type":"error","message":"..."}
// client -> server
//   {"type":"command","seq":n,"vx":..,"vy":..,"wz":..,"dh":..,"pitch":..,"roll":..}
// Missing command channels read as zero. "seq" is optional and echoed back in
// every state frame once the command is in force.
namespace palo::serve {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxLineBytes = 64 * 1024;

struct CommandFrame {
  Command6D command;
  std::int64_t seq = -1;
};

// Throws FormatError describing why the line is not a valid command frame.
CommandFrame parse_command(const std::string& line);

// A command after the safety clamp, as acknowledged to clients.
struct Acknowledged {
  Command6D command;
  std::array<bool, kCommandDim> clamped{};
  std::int64_t seq = -1;
};

Acknowledged acknowledge(const CommandFrame& frame, double reference_height);

nlohmann::json command_json(const Command6D& c);
nlohmann::json clamped_json(const std::array<bool, kCommandDim>& flags);
nlohmann::json hello_frame(double control_hz, double reference_height);
nlohmann::json error_frame(const std::string& message);

// Single-slot, latest-wins command mailbox.
class Mailbox {
 public:
  void post(const Acknowledged& a);
  std::optional<Acknowledged> take();

 private:
  std::mutex mutex_;
  std::optional<Acknowledged> slot_;
};

// Outbound frame queue that drops its oldest entries when full.
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}
  void push(std::string frame);
  bool empty() const { return frames_.empty(); }
  std::string& front() { return frames_.front(); }
  void pop() { frames_.pop_front(); }
  std::size_t size() const { return frames_.size(); }
  std::uint64_t dropped() const { return dropped_; }

 private:
  std::size_t capacity_;
  std::deque<std::string> frames_;
  std::uint64_t dropped_ = 0;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::size_t queue_capacity = 256;
  double control_hz = 50.0;
  double reference_height = 0.30;
};

// Socket side of a serve session. One I/O thread accepts clients, parses
// inbound commands into the mailbox and drains per-client queues; the
// simulation only ever calls take_command() and broadcast(), neither of which
// blocks on the network. When the last client leaves, a zero command is
// posted so the robot comes to rest.
class TelemetryServer {
 public:
  explicit TelemetryServer(ServerOptions options);
  ~TelemetryServer();
  TelemetryServer(const TelemetryServer&) = delete;
  TelemetryServer& operator=(const TelemetryServer&) = delete;

  // Binds and starts the I/O thread. Throws PortInUse.
  void start();
  void stop();

  int port() const { return port_; }
  int clients() const { return clients_.load(); }
  std::uint64_t dropped_frames() const;

  std::optional<Acknowledged> take_command() { return mailbox_.take(); }
  void broadcast(const nlohmann::json& frame);

 private:
  struct Client {
    int fd = -1;
    std::string inbox;
    BoundedQueue outbox;
    std::size_t offset = 0;  // bytes of outbox.front() already sent
    bool closing = false;
    explicit Client(int f, std::size_t cap) : fd(f), outbox(cap) {}
  };

  void io_loop();
  void accept_clients();
  void read_client(Client& c);
  void write_client(Client& c);
  void handle_line(Client& c, const std::string& line);
  void wake();

  ServerOptions options_;
  int listen_fd_ = -1;
  int wake_pipe_[2] = {-1, -1};
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<int> clients_{0};
  std::thread thread_;
  mutable std::mutex clients_mutex_;
  std::map<int, std::unique_ptr<Client>> client_map_;
  std::uint64_t dropped_closed_ = 0;
  Mailbox mailbox_;
};

struct SimOptions {
  double tile_size = 40.0;
  double cell_size = 0.05;
  std::uint64_t seed = 1;
  int metrics_every = 50;  // control steps between metrics frames
};

// The simulated robot behind a serve session: nominal dynamics, no noise or
// pushes, deterministic policy, command held until the operator changes it.
// Episodes that end are restarted in place.
class SimSession {
 public:
  SimSession(const rl::ActorCritic<float>& policy, SimOptions options);

  // Applies `cmd` if present, advances one control step and returns the state frame.
  nlohmann::json tick(const std::optional<Acknowledged>& cmd);
  // Averages since the previous call.
  nlohmann::json metrics();

  const Acknowledged& current() const { return current_; }
  long step_count() const { return step_; }
  const env::Env& environment() const { return env_; }

 private:
  void restart();

  SimOptions options_;
  dynamics::RobotModel model_;
  std::shared_ptr<const terrain::TerrainMap> map_;
  env::Env env_;
  eval::PolicyRunner runner_;
  Acknowledged current_;
  long step_ = 0;
  int episode_ = 0;
  double sums_[4] = {0, 0, 0, 0};
  int window_steps_ = 0;
};

// Real-time loop at the control rate until `stop` is set or `max_steps`
// control steps have run (negative: unbounded). With realtime false the loop
// runs as fast as it can.
void run(TelemetryServer& server, SimSession& sim, std::atomic<bool>& stop, long max_steps = -1,
         bool realtime = true, int metrics_every = 50);

}  // namespace palo::serve
