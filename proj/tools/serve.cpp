#include "serve.hpp"

#include <chrono>
#include <condition_variable>
#include <csignal>
#include <deque>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include <tending/bridge.hpp>

namespace tending_tools {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using Clock = std::chrono::steady_clock;

namespace {

constexpr auto kBroadcastPeriod = std::chrono::microseconds(33333);  // 30 Hz
constexpr auto kMaxBacklog = std::chrono::seconds(2);

class Hub;

/// One WebSocket client. Writes are serialized on the session strand; a
/// client whose oldest unsent frame is older than the backlog limit is closed.
class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& s, Hub& hub) : ws_(std::move(s)), hub_(hub) {}

  void start(http::request<http::string_body> req);
  void send(std::shared_ptr<const std::string> msg);

 private:
  void read();
  void write_next();
  void drop();

  websocket::stream<beast::tcp_stream> ws_;
  Hub& hub_;
  beast::flat_buffer buf_;
  std::deque<std::pair<Clock::time_point, std::shared_ptr<const std::string>>> queue_;
  bool closed_ = false;
};

/// Owns the bridge state; all commands go through one ordered queue consumed
/// by the simulation thread.
class Hub {
 public:
  explicit Hub(const tending::WorkbenchConfig& cfg)
      : state_(tending::bridge::make_state(cfg, cfg.teaching.object_start)), config_json_(tending::to_json(cfg).dump()) {
    const auto start = Clock::now();
    state_.wall_clock = [start] { return std::chrono::duration<double>(Clock::now() - start).count(); };
    paths_ = {{"traj", state_.traj_path}, {"policy", state_.policy_path}, {"report", state_.report_path}};
  }

  void join(const std::shared_ptr<WsSession>& s) {
    std::lock_guard lk(clients_mu_);
    clients_.insert(s);
  }
  void leave(const std::shared_ptr<WsSession>& s) {
    std::lock_guard lk(clients_mu_);
    clients_.erase(s);
  }

  void submit(std::string text, std::weak_ptr<WsSession> from) {
    std::lock_guard lk(mu_);
    inbox_.push_back({std::move(text), std::move(from)});
    cv_.notify_one();
  }

  void post_job_message(const nlohmann::json& m) { broadcast(m.dump()); }

  void post_job_done(tending::bridge::JobOutcome&& o) {
    std::lock_guard lk(mu_);
    finished_.push_back(std::move(o));
    cv_.notify_one();
  }

  const std::string& config_json() const { return config_json_; }
  const std::map<std::string, std::string>& artifact_paths() const { return paths_; }

  void stop() {
    std::lock_guard lk(mu_);
    running_ = false;
    cv_.notify_one();
  }

  /// Simulation loop: commands, servo ticks, job completion, 30 Hz broadcast.
  void run() {
    auto next = Clock::now();
    while (true) {
      std::deque<std::pair<std::string, std::weak_ptr<WsSession>>> cmds;
      std::deque<tending::bridge::JobOutcome> done;
      {
        std::unique_lock lk(mu_);
        cv_.wait_until(lk, next, [&] { return !running_ || !inbox_.empty() || !finished_.empty(); });
        if (!running_) break;
        cmds.swap(inbox_);
        done.swap(finished_);
      }
      for (auto& [text, from] : cmds) {
        for (const auto& reply : tending::bridge::handle_command(state_, text)) {
          // Progress-type results go to everyone; acks and errors to the sender.
          const std::string type = reply.value("type", "");
          if (type == "ack" || type == "error") {
            if (auto s = from.lock()) s->send(std::make_shared<const std::string>(reply.dump()));
          } else {
            broadcast(reply.dump());
          }
        }
        launch_pending_job();
      }
      for (auto& o : done) {
        if (worker_.joinable()) worker_.join();
        for (const auto& reply : tending::bridge::complete_job(state_, std::move(o))) broadcast(reply.dump());
      }
      if (Clock::now() >= next) {
        tending::bridge::tick(state_, state_.config.teaching.dt);
        broadcast(tending::bridge::broadcast_state(state_).dump());
        next += kBroadcastPeriod;
        if (next < Clock::now()) next = Clock::now() + kBroadcastPeriod;
      }
    }
    state_.cancel->store(true);
    if (worker_.joinable()) worker_.join();
  }

 private:
  void broadcast(std::string text) {
    auto msg = std::make_shared<const std::string>(std::move(text));
    std::lock_guard lk(clients_mu_);
    for (const auto& c : clients_) c->send(msg);
  }

  void launch_pending_job() {
    if (!state_.pending_job) return;
    if (worker_.joinable()) worker_.join();
    auto job = std::move(*state_.pending_job);
    state_.pending_job.reset();
    auto cancel = state_.cancel;
    worker_ = std::thread([this, job = std::move(job), cancel] {
      auto emit = [this](const nlohmann::json& m) { post_job_message(m); };
      post_job_done(tending::bridge::run_job(job, emit, cancel.get()));
    });
  }

  tending::bridge::BridgeState state_;
  std::string config_json_;
  std::map<std::string, std::string> paths_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<std::string, std::weak_ptr<WsSession>>> inbox_;
  std::deque<tending::bridge::JobOutcome> finished_;
  bool running_ = true;
  std::thread worker_;
  std::mutex clients_mu_;
  std::set<std::shared_ptr<WsSession>> clients_;
};

void WsSession::start(http::request<http::string_body> req) {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->hub_.join(self);
    self->read();
  });
}

void WsSession::read() {
  ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->drop();
      return;
    }
    self->hub_.submit(beast::buffers_to_string(self->buf_.data()), self);
    self->buf_.consume(self->buf_.size());
    self->read();
  });
}

void WsSession::send(std::shared_ptr<const std::string> msg) {
  net::post(ws_.get_executor(), [self = shared_from_this(), msg = std::move(msg)] {
    if (self->closed_) return;
    const auto now = Clock::now();
    if (!self->queue_.empty() && now - self->queue_.front().first > kMaxBacklog) {
      self->drop();
      return;
    }
    self->queue_.emplace_back(now, msg);
    if (self->queue_.size() == 1) self->write_next();
  });
}

void WsSession::write_next() {
  ws_.text(true);
  ws_.async_write(net::buffer(*queue_.front().second), [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->drop();
      return;
    }
    self->queue_.pop_front();
    if (!self->queue_.empty()) self->write_next();
  });
}

void WsSession::drop() {
  if (closed_) return;
  closed_ = true;
  queue_.clear();
  hub_.leave(shared_from_this());
  beast::error_code ec;
  beast::get_lowest_layer(ws_).socket().close(ec);
}

/// Plain HTTP requests, upgraded to WebSocket on /ws.
class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& s, Hub& hub) : stream_(std::move(s)), hub_(hub) {}

  void start() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buf_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->handle();
    });
  }

  void handle() {
    if (websocket::is_upgrade(req_) && req_.target() == "/ws") {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), hub_)->start(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>(http::status::ok, req_.version());
    res->set(http::field::content_type, "application/json");
    res->keep_alive(req_.keep_alive());
    const std::string target(req_.target());
    if (req_.method() != http::verb::get) {
      res->result(http::status::method_not_allowed);
      res->body() = R"({"error":"method not allowed"})";
    } else if (target == "/health") {
      res->body() = R"({"ok":true})";
    } else if (target == "/config") {
      res->body() = hub_.config_json();
    } else if (target.rfind("/artifacts/", 0) == 0) {
      const auto it = hub_.artifact_paths().find(target.substr(11));
      std::ifstream in(it == hub_.artifact_paths().end() ? std::string() : it->second, std::ios::binary);
      if (it == hub_.artifact_paths().end() || !in) {
        res->result(http::status::not_found);
        res->body() = R"({"error":"not found"})";
      } else {
        std::ostringstream ss;
        ss << in.rdbuf();
        res->body() = ss.str();
        if (it->first == "traj") res->set(http::field::content_type, "application/x-ndjson");
      }
    } else {
      res->result(http::status::not_found);
      res->body() = R"({"error":"not found"})";
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec || !res->keep_alive()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  Hub& hub_;
  beast::flat_buffer buf_;
  http::request<http::string_body> req_;
};

void accept_loop(tcp::acceptor& acc, Hub& hub) {
  acc.async_accept([&acc, &hub](beast::error_code ec, tcp::socket s) {
    if (!ec) std::make_shared<HttpSession>(std::move(s), hub)->start();
    if (acc.is_open()) accept_loop(acc, hub);
  });
}

}  // namespace

int run_server(const tending::WorkbenchConfig& cfg, unsigned short port) {
  net::io_context ioc;
  Hub hub(cfg);
  tcp::acceptor acc(ioc, {net::ip::make_address("127.0.0.1"), port});
  accept_loop(acc, hub);
  net::signal_set signals(ioc, SIGINT, SIGTERM);
  signals.async_wait([&](beast::error_code, int) {
    acc.close();
    hub.stop();
    ioc.stop();
  });
  std::thread sim([&] { hub.run(); });
  std::cout << "serving on http://127.0.0.1:" << acc.local_endpoint().port() << " (ws: /ws)\n" << std::flush;
  ioc.run();
  hub.stop();
  sim.join();
  return 0;
}

}  // namespace tending_tools
