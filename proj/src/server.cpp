#include "palo/server.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include <spdlog/spdlog.h>

#include "palo/errors.hpp"

namespace palo::serve {

using nlohmann::json;

namespace {

constexpr const char* kCommandKeys[kCommandDim] = {"vx", "vy", "wz", "dh", "pitch", "roll"};

void set_nonblocking(int fd) {
  const int flags = fcntl(fd, F_GETFL, 0);
  fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

}  // namespace

CommandFrame parse_command(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error&) {
    throw FormatError("frame is not valid JSON");
  }
  if (!j.is_object()) throw FormatError("frame must be a JSON object");
  const auto type = j.find("type");
  if (type == j.end() || !type->is_string()) throw FormatError("frame has no string 'type'");
  if (*type != "command") throw FormatError("unsupported frame type '" + type->get<std::string>() + "'");

  CommandFrame out;
  Eigen::Matrix<double, kCommandDim, 1> v = Eigen::Matrix<double, kCommandDim, 1>::Zero();
  for (const auto& [key, value] : j.items()) {
    if (key == "type") continue;
    if (key == "seq") {
      if (!value.is_number_integer()) throw FormatError("'seq' must be an integer");
      out.seq = value.get<std::int64_t>();
      continue;
    }
    int idx = -1;
    for (int i = 0; i < kCommandDim; ++i) {
      if (key == kCommandKeys[i]) idx = i;
    }
    if (idx < 0) throw FormatError("unknown command field '" + key + "'");
    if (!value.is_number()) throw FormatError("command field '" + key + "' must be a number");
    const double x = value.get<double>();
    if (!std::isfinite(x)) throw FormatError("command field '" + key + "' must be finite");
    v[idx] = x;
  }
  out.command = Command6D::from_vector(v);
  return out;
}

Acknowledged acknowledge(const CommandFrame& frame, double reference_height) {
  const ClampReport r = clamp_command(frame.command, reference_height);
  return {r.command, r.clamped, frame.seq};
}

json command_json(const Command6D& c) {
  return {{"vx", c.vx}, {"vy", c.vy}, {"wz", c.wz}, {"dh", c.dh}, {"pitch", c.pitch}, {"roll", c.roll}};
}

json clamped_json(const std::array<bool, kCommandDim>& flags) {
  json j = json::object();
  for (int i = 0; i < kCommandDim; ++i) j[kCommandKeys[i]] = flags[static_cast<std::size_t>(i)];
  return j;
}

json hello_frame(double control_hz, double reference_height) {
  return {{"type", "hello"},
          {"protocol", kProtocolVersion},
          {"control_hz", control_hz},
          {"reference_height", reference_height},
          {"limits",
           {{"vx", {-limits::kLinVel, limits::kLinVel}},
            {"vy", {-limits::kLinVel, limits::kLinVel}},
            {"wz", {-limits::kAngVel, limits::kAngVel}},
            {"dh", {limits::kMinHeight - reference_height, limits::kMaxHeight - reference_height}},
            {"pitch", {-limits::kPitch, limits::kPitch}},
            {"roll", {-limits::kRoll, limits::kRoll}}}}};
}

json error_frame(const std::string& message) { return {{"type", "error"}, {"message", message}}; }

void Mailbox::post(const Acknowledged& a) {
  std::lock_guard lock(mutex_);
  slot_ = a;
}

std::optional<Acknowledged> Mailbox::take() {
  std::lock_guard lock(mutex_);
  std::optional<Acknowledged> out;
  out.swap(slot_);
  return out;
}

void BoundedQueue::push(std::string frame) {
  if (capacity_ == 0) {
    ++dropped_;
    return;
  }
  while (frames_.size() >= capacity_) {
    frames_.pop_front();
    ++dropped_;
  }
  frames_.push_back(std::move(frame));
}

TelemetryServer::TelemetryServer(ServerOptions options) : options_(std::move(options)) {}

TelemetryServer::~TelemetryServer() { stop(); }

void TelemetryServer::start() {
  if (running_) return;
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(options_.port));
  if (inet_pton(AF_INET, options_.host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw ConfigError("serve host must be an IPv4 address: " + options_.host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(listen_fd_);
    listen_fd_ = -1;
    if (err == EADDRINUSE || err == EACCES) {
      throw PortInUse("port " + std::to_string(options_.port) + " is unavailable: " + std::strerror(err));
    }
    throw Error(std::string("bind: ") + std::strerror(err));
  }
  if (::listen(listen_fd_, 8) != 0) {
    const int err = errno;
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(std::string("listen: ") + std::strerror(err));
  }
  socklen_t len = sizeof(addr);
  getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  set_nonblocking(listen_fd_);
  if (::pipe(wake_pipe_) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
  set_nonblocking(wake_pipe_[0]);
  set_nonblocking(wake_pipe_[1]);
  running_ = true;
  thread_ = std::thread([this] { io_loop(); });
}

void TelemetryServer::stop() {
  if (!running_.exchange(false)) return;
  wake();
  if (thread_.joinable()) thread_.join();
  std::lock_guard lock(clients_mutex_);
  for (auto& [fd, c] : client_map_) ::close(fd);
  client_map_.clear();
  clients_ = 0;
  ::close(listen_fd_);
  ::close(wake_pipe_[0]);
  ::close(wake_pipe_[1]);
  listen_fd_ = wake_pipe_[0] = wake_pipe_[1] = -1;
}

std::uint64_t TelemetryServer::dropped_frames() const {
  std::lock_guard lock(clients_mutex_);
  std::uint64_t n = dropped_closed_;
  for (const auto& [fd, c] : client_map_) n += c->outbox.dropped();
  return n;
}

void TelemetryServer::wake() {
  const char b = 1;
  [[maybe_unused]] const auto r = ::write(wake_pipe_[1], &b, 1);
}

void TelemetryServer::broadcast(const json& frame) {
  std::string line = frame.dump() + "\n";
  {
    std::lock_guard lock(clients_mutex_);
    if (client_map_.empty()) return;
    for (auto& [fd, c] : client_map_) c->outbox.push(line);
  }
  wake();
}

void TelemetryServer::accept_clients() {
  while (true) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) return;
    set_nonblocking(fd);
    auto client = std::make_unique<Client>(fd, options_.queue_capacity);
    client->outbox.push(hello_frame(options_.control_hz, options_.reference_height).dump() + "\n");
    std::lock_guard lock(clients_mutex_);
    client_map_.emplace(fd, std::move(client));
    clients_ = static_cast<int>(client_map_.size());
    spdlog::info("serve: client connected ({} total)", clients_.load());
  }
}

void TelemetryServer::handle_line(Client& c, const std::string& line) {
  if (line.empty()) return;
  try {
    mailbox_.post(acknowledge(parse_command(line), options_.reference_height));
  } catch (const FormatError& e) {
    std::lock_guard lock(clients_mutex_);
    c.outbox.push(error_frame(e.what()).dump() + "\n");
  }
}

void TelemetryServer::read_client(Client& c) {
  char buf[4096];
  while (true) {
    const ssize_t n = ::recv(c.fd, buf, sizeof(buf), 0);
    if (n == 0) {
      c.closing = true;
      return;
    }
    if (n < 0) {
      if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) c.closing = true;
      return;
    }
    c.inbox.append(buf, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (std::size_t nl; (nl = c.inbox.find('\n', start)) != std::string::npos; start = nl + 1) {
      std::string line = c.inbox.substr(start, nl - start);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      handle_line(c, line);
    }
    c.inbox.erase(0, start);
    if (c.inbox.size() > kMaxLineBytes) {
      c.inbox.clear();
      std::lock_guard lock(clients_mutex_);
      c.outbox.push(error_frame("frame exceeds the line length limit").dump() + "\n");
    }
  }
}

void TelemetryServer::write_client(Client& c) {
  std::lock_guard lock(clients_mutex_);
  while (!c.outbox.empty()) {
    const std::string& f = c.outbox.front();
    const ssize_t n = ::send(c.fd, f.data() + c.offset, f.size() - c.offset, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) c.closing = true;
      return;
    }
    c.offset += static_cast<std::size_t>(n);
    if (c.offset < f.size()) return;
    c.offset = 0;
    c.outbox.pop();
  }
}

void TelemetryServer::io_loop() {
  std::vector<pollfd> fds;
  std::vector<Client*> order;
  while (running_) {
    fds.clear();
    order.clear();
    fds.push_back({listen_fd_, POLLIN, 0});
    fds.push_back({wake_pipe_[0], POLLIN, 0});
    {
      std::lock_guard lock(clients_mutex_);
      for (auto& [fd, c] : client_map_) {
        short ev = POLLIN;
        if (!c->outbox.empty()) ev |= POLLOUT;
        fds.push_back({fd, ev, 0});
        order.push_back(c.get());
      }
    }
    if (::poll(fds.data(), fds.size(), 100) < 0 && errno != EINTR) {
      spdlog::error("serve: poll failed: {}", std::strerror(errno));
      return;
    }
    if (fds[1].revents & POLLIN) {
      char drain[256];
      while (::read(wake_pipe_[0], drain, sizeof(drain)) > 0) {
      }
    }
    if (fds[0].revents & POLLIN) accept_clients();
    for (std::size_t i = 0; i < order.size(); ++i) {
      Client& c = *order[i];
      const short re = fds[i + 2].revents;
      if (re & (POLLIN | POLLHUP | POLLERR)) read_client(c);
      if (!c.closing) write_client(c);
    }
    // Flush anything queued while handling input, then drop closed clients.
    bool removed = false;
    {
      std::lock_guard lock(clients_mutex_);
      for (auto it = client_map_.begin(); it != client_map_.end();) {
        if (it->second->closing) {
          dropped_closed_ += it->second->outbox.dropped();
          ::close(it->first);
          it = client_map_.erase(it);
          removed = true;
        } else {
          ++it;
        }
      }
      clients_ = static_cast<int>(client_map_.size());
    }
    if (removed) {
      spdlog::info("serve: client disconnected ({} left)", clients_.load());
      if (clients_ == 0) mailbox_.post(Acknowledged{});
    }
  }
}

SimSession::SimSession(const rl::ActorCritic<float>& policy, SimOptions options)
    : options_(options),
      model_(dynamics::RobotModel::a1_like()),
      map_(terrain::generate_terrain(terrain::Kind::kRoughFlat, 0, options.seed,
                                     {options.cell_size, options.tile_size})),
      env_(model_,
           [] {
             env::EnvConfig c;
             c.randomize = false;
             c.observation_noise = false;
             c.pushes = false;
             c.max_episode_steps = std::numeric_limits<int>::max();
             c.resample_interval = std::numeric_limits<double>::infinity();
             return c;
           }(),
           Rng(options.seed, 77)),
      runner_(policy) {
  restart();
}

void SimSession::restart() {
  env_.reset(map_, {terrain::Kind::kRoughFlat, 0});
  env_.set_command(current_.command);
  runner_.reset(env_.observation().proprio);
}

json SimSession::tick(const std::optional<Acknowledged>& cmd) {
  if (cmd) {
    current_ = *cmd;
    env_.set_command(current_.command);
  }
  const env::StepResult r = env_.step(runner_.act());
  ++step_;
  sums_[0] += r.info.task.r_v;
  sums_[1] += r.info.task.r_w;
  sums_[2] += r.info.task.r_h;
  sums_[3] += r.info.task.r_theta;
  ++window_steps_;

  const env::Actual6D a = env_.actual();
  const auto& robot = env_.state().robot;
  const env::Euler e = env::quat_to_euler(robot.base_quat);
  json frame = {{"type", "state"},
                {"step", step_},
                {"t", step_ * env_.config().control_dt},
                {"seq", current_.seq},
                {"command", command_json(r.info.command)},
                {"clamped", clamped_json(current_.clamped)},
                {"actual",
                 {{"vx", a.vx}, {"vy", a.vy}, {"wz", a.wz}, {"height", a.height}, {"pitch", a.pitch}, {"roll", a.roll}}},
                {"pose", {{"x", robot.base_pos.x()}, {"y", robot.base_pos.y()}, {"z", robot.base_pos.z()}, {"yaw", e.yaw}}},
                {"episode", episode_}};
  if (r.done) {
    frame["reset"] = r.info.collision ? "collision"
                     : r.info.out_of_bounds ? "out_of_bounds"
                     : r.info.timeout       ? "timeout"
                                            : "fell";
    ++episode_;
    restart();
  } else {
    runner_.observe(r.obs.proprio, env_.state().prev_action);
  }
  return frame;
}

json SimSession::metrics() {
  const double n = std::max(1, window_steps_);
  json m = {{"type", "metrics"},     {"step", step_},          {"episode", episode_},
            {"r_v", sums_[0] / n},   {"r_w", sums_[1] / n},    {"r_h", sums_[2] / n},
            {"r_theta", sums_[3] / n}};
  for (double& s : sums_) s = 0.0;
  window_steps_ = 0;
  return m;
}

void run(TelemetryServer& server, SimSession& sim, std::atomic<bool>& stop, long max_steps, bool realtime,
         int metrics_every) {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(sim.environment().config().control_dt));
  auto next = clock::now();
  for (long k = 0; !stop && (max_steps < 0 || k < max_steps); ++k) {
    server.broadcast(sim.tick(server.take_command()));
    if (metrics_every > 0 && sim.step_count() % metrics_every == 0) server.broadcast(sim.metrics());
    if (realtime) {
      next += period;
      const auto now = clock::now();
      if (next > now) {
        std::this_thread::sleep_until(next);
      } else {
        next = now;  // fell behind; do not try to catch up
      }
    }
  }
}

}  // namespace palo::serve
