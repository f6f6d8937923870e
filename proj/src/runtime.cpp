// SPDX-License-Identifier: Apache-2.0
#include "snn/runtime.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstdio>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

#include "snn/error.hpp"

namespace snn {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint32_t kShutdownRequest = 0xFFFFFFFFu;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

Clock::time_point deadline_after(double seconds) {
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds));
}

void add_into(Tensor4& x, const Tensor4& d) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += d[i];
}

void check_single(const Tensor4& input, const ModelSpec& spec) {
  const Shape4 want{1, spec.in_channels, spec.in_height, spec.in_width};
  if (input.shape() != want) {
    throw ShapeError("inference takes one image at a time: got " + input.shape().str() + ", expected " + want.str());
  }
}

}  // namespace

// ---------------------------------------------------------------- partitions

PartitionModel extract_partition(const SepGraph& graph, const PolicySequence& policy, int node) {
  const ModelSpec& spec = graph.spec();
  if (node < 0 || node >= spec.partitions) throw ConfigError("partition: node " + std::to_string(node) + " out of range");
  policy.validate(graph.transmission_count());
  if (policy.nodes != spec.partitions) throw ConfigError("partition: policy node count does not match the graph");
  PartitionModel m;
  m.node = node;
  m.spec = spec;
  m.policy = policy;
  m.stem_conv = graph.stem_conv();
  m.stem_bn = graph.stem_bn();
  for (const Bottleneck& b : graph.blocks()) m.blocks.push_back(b.slice_partition(node, spec.partitions));
  m.schedule = graph.transmission_blocks();
  for (std::size_t t = 0; t < m.schedule.size(); ++t) {
    const int b = m.schedule[t] - 1;
    m.keep.push_back(n_send(graph.geometry()[static_cast<std::size_t>(b)].out_per_partition, policy.sparsity(t)));
  }
  if (node == 0) m.head = graph.head();
  return m;
}

json PhaseTimes::to_json() const { return {{"compute_s", compute_s}, {"wait_s", wait_s}, {"head_s", head_s}}; }

PhaseTimes PhaseTimes::from_json(const json& j) {
  PhaseTimes t;
  t.compute_s = j.at("compute_s").get<double>();
  t.wait_s = j.at("wait_s").get<double>();
  t.head_s = j.at("head_s").get<double>();
  return t;
}

Tensor4 run_partition(const PartitionModel& m, const Tensor4& input, WireDtype dtype, PeerTransport& transport,
                      PhaseTimes* times) {
  check_single(input, m.spec);
  const auto start = Clock::now();
  double waited = 0.0;
  const int me = m.node;

  auto aggregate = [&](Tensor4& x, const CommDecision& dec, std::size_t step) {
    const int src = dec.source_of(me);
    if (src == me) return;
    const auto w0 = Clock::now();
    const auto frame = transport.receive(src, static_cast<std::uint16_t>(step));
    waited += seconds_since(w0);
    const DecodedMsg msg = decode_msg(frame);
    if (msg.header.src != src || msg.header.dst != me || msg.header.step != step) {
      throw StateError("node " + std::to_string(me) + ": unexpected message " + std::to_string(msg.header.src) + "->" +
                       std::to_string(msg.header.dst) + " at step " + std::to_string(msg.header.step) +
                       ", expected one from node " + std::to_string(src) + " at step " + std::to_string(step));
    }
    add_into(x, adapt_chunk(msg.chunk, x.shape(), 1));
  };

  Tensor4 x = relu(m.stem_bn.infer(m.stem_conv.infer(input)));
  std::optional<CommDecision> pending;
  std::size_t point = 0;
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    x = m.blocks[b].infer(x);
    if (point < m.schedule.size() && m.schedule[point] == static_cast<int>(b) + 1) {
      if (pending) aggregate(x, *pending, point - 1);
      const CommDecision dec = m.policy.decision(point);
      pending.reset();
      if (dec.senders() > 0) pending = dec;
      const int dst = dec.dest[static_cast<std::size_t>(me)];
      if (dst != me) {
        transport.send(dst, encode_msg(x, m.keep[point], static_cast<std::uint16_t>(point), static_cast<std::uint8_t>(me),
                                       static_cast<std::uint8_t>(dst), dtype));
      }
      ++point;
    }
  }
  if (pending) aggregate(x, *pending, point - 1);

  Tensor4 logits;
  double head = 0.0;
  if (m.head) {
    const auto h0 = Clock::now();
    logits = m.head->infer(global_avg_pool(x));
    head = seconds_since(h0);
  }
  if (times) {
    times->wait_s = waited;
    times->head_s = head;
    times->compute_s = std::max(0.0, seconds_since(start) - waited - head);
  }
  return logits;
}

Tensor4 single_process_reference(const SepGraph& graph, const PolicySequence& policy, const Tensor4& input,
                                 WireDtype dtype) {
  return graph.infer(input, &policy, WireOptions{dtype == WireDtype::kF16});
}

// ------------------------------------------------------------------ mailbox

namespace {

// Messages addressed to the nodes of one process, keyed by request, source,
// destination and step. Waiters fail fast when the request was aborted or
// the source's link went down.
class Mailbox {
 public:
  void begin(std::uint32_t req) {
    std::lock_guard lock(mu_);
    floor_ = req;
    std::erase_if(box_, [&](const auto& kv) { return std::get<0>(kv.first) < req; });
    std::erase_if(aborted_, [&](const auto& kv) { return kv.first < req; });
  }

  void post(std::uint32_t req, int src, int dst, std::uint16_t step, std::vector<std::uint8_t> frame) {
    {
      std::lock_guard lock(mu_);
      if (req < floor_) return;
      box_[{req, src, dst, step}] = std::move(frame);
    }
    cv_.notify_all();
  }

  void abort(std::uint32_t req, const std::string& why) {
    {
      std::lock_guard lock(mu_);
      if (req < floor_) return;
      aborted_.emplace(req, why);
    }
    cv_.notify_all();
  }

  void set_down(const std::vector<int>& nodes, bool down) {
    {
      std::lock_guard lock(mu_);
      for (int n : nodes) {
        if (down) {
          down_.insert(n);
        } else {
          down_.erase(n);
        }
      }
    }
    cv_.notify_all();
  }

  std::vector<std::uint8_t> wait(std::uint32_t req, int src, int dst, std::uint16_t step, Clock::time_point deadline,
                                 double timeout_s) {
    std::unique_lock lock(mu_);
    const auto key = std::make_tuple(req, src, dst, step);
    for (;;) {
      if (auto it = box_.find(key); it != box_.end()) {
        auto frame = std::move(it->second);
        box_.erase(it);
        return frame;
      }
      const std::string where = "node " + std::to_string(dst) + " waiting for node " + std::to_string(src) +
                                " at step " + std::to_string(step);
      if (auto it = aborted_.find(req); it != aborted_.end()) throw RuntimeFailure(where + ": request aborted (" + it->second + ")");
      if (down_.count(src)) throw RuntimeFailure(where + ": peer disconnected");
      if (cv_.wait_until(lock, deadline) == std::cv_status::timeout && !box_.count(key)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", timeout_s);
        throw RuntimeFailure(where + ": timed out after " + std::string(buf) + " s");
      }
    }
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::tuple<std::uint32_t, int, int, std::uint16_t>, std::vector<std::uint8_t>> box_;
  std::map<std::uint32_t, std::string> aborted_;
  std::set<int> down_;
  std::uint32_t floor_ = 0;
};

class MailboxTransport final : public PeerTransport {
 public:
  MailboxTransport(Mailbox& box, int node, std::uint32_t req, double timeout_s,
                   std::function<void(int, std::vector<std::uint8_t>)> remote)
      : box_(box), node_(node), req_(req), timeout_s_(timeout_s), remote_(std::move(remote)) {}

  void send(int dst, std::vector<std::uint8_t> frame) override {
    const MsgHeader h = decode_header(frame);
    if (exit_at_step >= 0 && h.step >= exit_at_step) ::_exit(3);
    if (remote_) {
      remote_(dst, std::move(frame));
    } else {
      box_.post(req_, node_, dst, h.step, std::move(frame));
    }
  }
  std::vector<std::uint8_t> receive(int src, std::uint16_t step) override {
    last_step = step;
    if (exit_at_step >= 0 && step >= exit_at_step) ::_exit(3);
    return box_.wait(req_, src, node_, step, deadline_after(timeout_s_), timeout_s_);
  }
  std::uint16_t last_step = kControlStep;
  int exit_at_step = -1;

 private:
  Mailbox& box_;
  int node_;
  std::uint32_t req_;
  double timeout_s_;
  std::function<void(int, std::vector<std::uint8_t>)> remote_;
};

}  // namespace

Tensor4 run_partitions_in_memory(const SepGraph& graph, const PolicySequence& policy, const Tensor4& input,
                                 WireDtype dtype) {
  const int g = graph.partitions();
  Mailbox box;
  box.begin(1);
  std::vector<PartitionModel> models;
  for (int n = 0; n < g; ++n) models.push_back(extract_partition(graph, policy, n));
  std::vector<Tensor4> out(static_cast<std::size_t>(g));
  std::vector<std::string> errors(static_cast<std::size_t>(g));
  std::vector<std::thread> threads;
  for (int n = 0; n < g; ++n) {
    threads.emplace_back([&, n] {
      try {
        MailboxTransport t(box, n, 1, 30.0, nullptr);
        out[static_cast<std::size_t>(n)] = run_partition(models[static_cast<std::size_t>(n)], input, dtype, t);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(n)] = e.what();
        box.abort(1, "node " + std::to_string(n) + " failed");
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors)
    if (!e.empty()) throw RuntimeFailure(e);
  return out[0];
}

// ------------------------------------------------------------------ sockets

std::string Endpoint::str() const { return host + ":" + std::to_string(port); }

Endpoint Endpoint::parse(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0) throw ConfigError("endpoint '" + s + "' is not host:port");
  Endpoint e;
  e.host = s.substr(0, colon);
  try {
    std::size_t used = 0;
    e.port = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw ConfigError("endpoint '" + s + "' has a bad port");
  }
  if (e.port < 0 || e.port > 65535) throw ConfigError("endpoint '" + s + "' port out of range");
  return e;
}

namespace {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }

  // True when the peer has hung up; pending unread data counts as alive.
  bool peer_closed() const {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, 0) <= 0) return false;
    if (p.revents & (POLLERR | POLLNVAL)) return true;
    std::uint8_t b = 0;
    const ssize_t n = ::recv(fd_, &b, 1, MSG_PEEK | MSG_DONTWAIT);
    return n == 0 || (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK);
  }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  // Wakes any thread blocked on this socket without releasing the fd.
  void interrupt() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  void send_all(const std::vector<std::uint8_t>& bytes) {
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw RuntimeFailure(std::string("send failed: ") + std::strerror(errno));
      off += static_cast<std::size_t>(n);
    }
  }

  // Blocks until n bytes arrive, the peer closes, or the deadline passes.
  void read_exact(std::uint8_t* dst, std::size_t n, std::optional<Clock::time_point> deadline) {
    std::size_t got = 0;
    while (got < n) {
      if (deadline) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now()).count();
        if (left <= 0) throw RuntimeFailure("timed out reading from peer");
        pollfd p{fd_, POLLIN, 0};
        const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left, 1 << 30)));
        if (r < 0 && errno == EINTR) continue;
        if (r == 0) throw RuntimeFailure("timed out reading from peer");
      }
      const ssize_t k = ::recv(fd_, dst + got, n - got, 0);
      if (k < 0 && errno == EINTR) continue;
      if (k == 0) throw RuntimeFailure("connection closed by peer");
      if (k < 0) throw RuntimeFailure(std::string("receive failed: ") + std::strerror(errno));
      got += static_cast<std::size_t>(k);
    }
  }

  std::vector<std::uint8_t> read_frame(std::optional<Clock::time_point> deadline = std::nullopt) {
    return snn::read_frame([&](std::uint8_t* d, std::size_t n) { read_exact(d, n, deadline); });
  }

 private:
  int fd_ = -1;
};

sockaddr_in resolve(const Endpoint& e) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(e.port));
  if (::inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || !res) throw ConfigError("cannot resolve " + e.host);
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

void tune(int fd) {
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

// Retries until the peer accepts or the deadline passes.
Socket connect_to(const Endpoint& e, Clock::time_point deadline) {
  const sockaddr_in addr = resolve(e);
  for (;;) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw RuntimeFailure("socket() failed");
    if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) {
      tune(s.fd());
      return s;
    }
    if (Clock::now() >= deadline) throw RuntimeFailure("cannot connect to " + e.str() + ": " + std::strerror(errno));
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

Socket listen_on(const Endpoint& e) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw RuntimeFailure("socket() failed");
  const int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const sockaddr_in addr = resolve(e);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    throw RuntimeFailure("cannot bind " + e.str() + ": " + std::strerror(errno));
  }
  if (::listen(s.fd(), 64) != 0) throw RuntimeFailure("cannot listen on " + e.str());
  return s;
}

std::vector<std::uint8_t> concat(std::initializer_list<std::vector<std::uint8_t>> parts) {
  std::vector<std::uint8_t> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// Distinct endpoints in node order, and the nodes each one hosts.
void group_endpoints(const std::vector<Endpoint>& peers, std::vector<Endpoint>& eps, std::vector<std::vector<int>>& hosted) {
  for (std::size_t n = 0; n < peers.size(); ++n) {
    const auto it = std::find(eps.begin(), eps.end(), peers[n]);
    if (it == eps.end()) {
      eps.push_back(peers[n]);
      hosted.push_back({static_cast<int>(n)});
    } else {
      hosted[static_cast<std::size_t>(it - eps.begin())].push_back(static_cast<int>(n));
    }
  }
}

}  // namespace

std::vector<int> free_ports(int n) {
  std::vector<Socket> held;
  std::vector<int> ports;
  for (int i = 0; i < n; ++i) {
    Socket s = listen_on({"127.0.0.1", 0});
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    ports.push_back(ntohs(addr.sin_port));
    held.push_back(std::move(s));
  }
  return ports;
}

// ------------------------------------------------------------------- worker

void WorkerConfig::validate() const {
  if (!graph) throw ConfigError("worker: no graph");
  const int g = graph->partitions();
  if (static_cast<int>(peers.size()) != g) throw ConfigError("worker: address table must list all " + std::to_string(g) + " nodes");
  if (nodes.empty()) throw ConfigError("worker: hosts no node");
  std::set<int> seen;
  for (int n : nodes) {
    if (n < 0 || n >= g) throw ConfigError("worker: node id " + std::to_string(n) + " out of range");
    if (!seen.insert(n).second) throw ConfigError("worker: node id " + std::to_string(n) + " listed twice");
    if (!(peers[static_cast<std::size_t>(n)] == listen())) throw ConfigError("worker: hosted nodes must share one endpoint");
  }
  for (int n = 0; n < g; ++n) {
    if (!seen.count(n) && peers[static_cast<std::size_t>(n)] == listen()) {
      throw ConfigError("worker: node " + std::to_string(n) + " shares this endpoint but is not hosted");
    }
  }
  if (!(timeout_s > 0.0)) throw ConfigError("worker: timeout must be > 0");
  policy.validate(graph->transmission_count());
  if (policy.nodes != g) throw ConfigError("worker: policy node count does not match the graph");
}

namespace {

class Worker {
 public:
  explicit Worker(const WorkerConfig& cfg) : cfg_(cfg), hash_(policy_hash(cfg.policy)) {
    cfg_.validate();
    group_endpoints(cfg_.peers, eps_, hosted_);
    for (std::size_t e = 0; e < eps_.size(); ++e) {
      if (eps_[e] == cfg_.listen()) self_ = static_cast<int>(e);
    }
    for (int n : cfg_.nodes) models_.emplace(n, extract_partition(*cfg_.graph, cfg_.policy, n));
  }

  void run() {
    listener_ = listen_on(cfg_.listen());
    {
      std::lock_guard lock(mu_);
      threads_.emplace_back([this] { accept_loop(); });
      threads_.emplace_back([this] { send_loop(); });
    }
    try {
      connect_peers();
    } catch (...) {
      stop();
      throw;
    }
    {
      std::lock_guard lock(mu_);
      ready_ = true;
    }
    cv_.notify_all();
    serve();
    stop();
  }

 private:
  struct Link {
    Socket sock;
    std::mutex write_mu;
    int endpoint = -1;
  };

  int endpoint_of(int node) const {
    for (std::size_t e = 0; e < hosted_.size(); ++e)
      for (int n : hosted_[e])
        if (n == node) return static_cast<int>(e);
    return -1;
  }

  Handshake my_handshake() const {
    return {hash_, static_cast<std::uint8_t>(cfg_.nodes.front()), static_cast<std::uint8_t>(cfg_.peers.size())};
  }

  void connect_peers() {
    const auto deadline = deadline_after(cfg_.timeout_s);
    for (std::size_t e = 0; e < eps_.size(); ++e) {
      if (static_cast<int>(e) == self_) continue;
      Socket s = connect_to(eps_[e], deadline);
      s.send_all(encode_handshake(my_handshake()));
      const Handshake h = decode_handshake(s.read_frame(deadline));
      if (h.policy_hash != hash_) {
        throw ConfigError("handshake with node " + std::to_string(h.node_id) + " at " + eps_[e].str() +
                          ": policy hash mismatch, refusing to start");
      }
      register_link(static_cast<int>(e), std::move(s));
    }
  }

  void register_link(int endpoint, Socket s) {
    auto link = std::make_shared<Link>();
    link->sock = std::move(s);
    link->endpoint = endpoint;
    {
      std::lock_guard lock(mu_);
      if (stopping_) return;
      links_[endpoint] = link;
      all_links_.push_back(link);
      threads_.emplace_back([this, link] { read_loop(link); });
    }
    box_.set_down(hosted_[static_cast<std::size_t>(endpoint)], false);
    cv_.notify_all();
  }

  void accept_loop() {
    while (!stopping_) {
      pollfd p{listener_.fd(), POLLIN, 0};
      if (::poll(&p, 1, 100) <= 0) continue;
      const int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) continue;
      Socket s(fd);
      tune(fd);
      try {
        const Handshake h = decode_handshake(s.read_frame(deadline_after(cfg_.timeout_s)));
        if (h.node_id == kCoordinatorId) {
          std::unique_lock lock(mu_);
          cv_.wait(lock, [&] { return ready_ || stopping_; });
          if (stopping_) return;
          s.send_all(encode_handshake(my_handshake()));
          if (h.policy_hash != hash_) continue;  // the coordinator sees the mismatch and gives up
          if (coordinator_) coordinator_->interrupt();
          pending_coordinator_ = std::make_shared<Socket>(std::move(s));
          lock.unlock();
          cv_.notify_all();
          continue;
        }
        s.send_all(encode_handshake(my_handshake()));
        const int e = endpoint_of(h.node_id);
        if (h.policy_hash != hash_ || e < 0 || e == self_) {
          std::fprintf(stderr, "worker %d: rejected peer node %d (policy hash or id mismatch)\n", cfg_.nodes.front(),
                       static_cast<int>(h.node_id));
          continue;
        }
        register_link(e, std::move(s));
      } catch (const std::exception& ex) {
        std::fprintf(stderr, "worker %d: dropped connection: %s\n", cfg_.nodes.front(), ex.what());
      }
    }
  }

  void read_loop(std::shared_ptr<Link> link) {
    try {
      for (;;) {
        const std::uint32_t req = decode_request(link->sock.read_frame());
        auto frame = link->sock.read_frame();
        switch (frame_kind(frame)) {
          case FrameKind::kTensor: {
            const MsgHeader h = decode_header(frame);
            box_.post(req, h.src, h.dst, h.step, std::move(frame));
            break;
          }
          case FrameKind::kError:
            box_.abort(req, decode_error(frame).text);
            break;
          default:
            throw FramingError("unexpected frame on a peer link", 0);
        }
      }
    } catch (const std::exception&) {
      std::lock_guard lock(mu_);
      const auto it = links_.find(link->endpoint);
      if (it != links_.end() && it->second == link) {
        links_.erase(it);
        box_.set_down(hosted_[static_cast<std::size_t>(link->endpoint)], true);
      }
    }
  }

  // Outgoing peer traffic, so compute never blocks on a socket.
  struct Outgoing {
    int endpoint;
    std::vector<std::uint8_t> bytes;
    Clock::time_point deadline;
  };

  void enqueue(int endpoint, std::vector<std::uint8_t> bytes) {
    {
      std::lock_guard lock(mu_);
      outbox_.push_back({endpoint, std::move(bytes), deadline_after(cfg_.timeout_s)});
    }
    cv_.notify_all();
  }

  void send_loop() {
    std::unique_lock lock(mu_);
    while (!stopping_) {
      if (outbox_.empty()) {
        cv_.wait(lock);
        continue;
      }
      Outgoing out = std::move(outbox_.front());
      outbox_.pop_front();
      while (!stopping_) {
        const auto it = links_.find(out.endpoint);
        if (it != links_.end()) {
          auto link = it->second;
          lock.unlock();
          bool ok = true;
          try {
            std::lock_guard w(link->write_mu);
            link->sock.send_all(out.bytes);
          } catch (const std::exception&) {
            ok = false;
            link->sock.interrupt();
          }
          lock.lock();
          if (ok) break;
          if (links_.count(out.endpoint) && links_[out.endpoint] == link) links_.erase(out.endpoint);
        }
        if (Clock::now() >= out.deadline) {
          std::fprintf(stderr, "worker %d: dropped a message for %s\n", cfg_.nodes.front(), eps_[out.endpoint].str().c_str());
          break;
        }
        cv_.wait_for(lock, std::chrono::milliseconds(20));
      }
    }
  }

  void serve() {
    for (;;) {
      std::shared_ptr<Socket> coord;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return pending_coordinator_ != nullptr; });
        coord = std::move(pending_coordinator_);
        coordinator_ = coord;
      }
      try {
        for (;;) {
          const std::uint32_t req = decode_request(coord->read_frame());
          if (req == kShutdownRequest) return;
          const DecodedMsg input = decode_msg(coord->read_frame());
          coord->send_all(handle(req, input.chunk));
        }
      } catch (const std::exception& ex) {
        // the coordinator went away; wait for the next one
        std::lock_guard lock(mu_);
        if (coordinator_ == coord) coordinator_.reset();
      }
    }
  }

  std::vector<std::uint8_t> handle(std::uint32_t req, const Tensor4& image) {
    box_.begin(req);
    const std::size_t k = cfg_.nodes.size();
    std::vector<Tensor4> out(k);
    std::vector<PhaseTimes> times(k);
    std::vector<std::string> errors(k);
    std::vector<std::uint16_t> steps(k, kControlStep);
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < k; ++i) {
      threads.emplace_back([&, i] {
        const int node = cfg_.nodes[i];
        MailboxTransport t(box_, node, req, cfg_.timeout_s, [&, node](int dst, std::vector<std::uint8_t> frame) {
          const int e = endpoint_of(dst);
          if (e == self_) {
            const MsgHeader h = decode_header(frame);
            box_.post(req, node, dst, h.step, std::move(frame));
          } else {
            enqueue(e, concat({encode_request(req), frame}));
          }
        });
        try {
          if (cfg_.exit_at_step >= 0) t.exit_at_step = cfg_.exit_at_step;
          out[i] = run_partition(models_.at(node), image, cfg_.dtype, t, &times[i]);
        } catch (const std::exception& ex) {
          errors[i] = "node " + std::to_string(node) + ": " + ex.what();
          steps[i] = t.last_step;
          box_.abort(req, errors[i]);
          const auto note = concat({encode_request(req), encode_error({t.last_step, errors[i]})});
          for (std::size_t e = 0; e < eps_.size(); ++e)
            if (static_cast<int>(e) != self_) enqueue(static_cast<int>(e), note);
        }
      });
    }
    for (auto& t : threads) t.join();

    std::vector<std::uint8_t> reply;
    for (std::size_t i = 0; i < k; ++i) {
      if (!errors[i].empty()) {
        return concat({encode_request(req), encode_error({steps[i], errors[i]})});
      }
    }
    json timing = json::array();
    for (std::size_t i = 0; i < k; ++i) {
      json t = times[i].to_json();
      t["node"] = cfg_.nodes[i];
      timing.push_back(t);
      if (cfg_.nodes[i] == 0) {
        reply = concat({reply, encode_request(req),
                        encode_msg(out[i], out[i].c(), kControlStep, 0, kCoordinatorId, WireDtype::kF32)});
      }
    }
    return concat({reply, encode_request(req), encode_timing(timing.dump())});
  }

  void stop() {
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
      for (auto& l : all_links_) l->sock.interrupt();
      if (coordinator_) coordinator_->interrupt();
      threads.swap(threads_);  // no thread is added once stopping_ is set
    }
    cv_.notify_all();
    for (auto& t : threads) t.join();
  }

  WorkerConfig cfg_;
  std::uint64_t hash_;
  std::vector<Endpoint> eps_;
  std::vector<std::vector<int>> hosted_;
  int self_ = -1;
  std::map<int, PartitionModel> models_;
  Mailbox box_;
  Socket listener_;

  std::mutex mu_;
  std::condition_variable cv_;
  bool ready_ = false;
  std::atomic<bool> stopping_{false};
  std::map<int, std::shared_ptr<Link>> links_;
  std::vector<std::shared_ptr<Link>> all_links_;
  std::deque<Outgoing> outbox_;
  std::shared_ptr<Socket> pending_coordinator_;
  std::shared_ptr<Socket> coordinator_;
  std::vector<std::thread> threads_;
};

}  // namespace

void run_worker(const WorkerConfig& cfg) {
  Worker w(cfg);
  w.run();
}

pid_t spawn_worker(const WorkerConfig& cfg) {
  cfg.validate();
  std::fflush(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) throw RuntimeFailure("fork failed");
  if (pid == 0) {
    int code = 0;
    try {
      run_worker(cfg);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "worker: %s\n", e.what());
      code = 2;
    }
    std::fflush(nullptr);
    ::_exit(code);
  }
  return pid;
}

// -------------------------------------------------------------- coordinator

json InferTiming::to_json() const {
  json n = json::array();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    json t = nodes[i].to_json();
    t["node"] = i;
    n.push_back(t);
  }
  return {{"broadcast_s", broadcast_s}, {"compute_s", compute_s}, {"exposed_wait_s", exposed_wait_s},
          {"head_s", head_s},           {"transfer_s", transfer_s}, {"total_s", total_s},
          {"nodes", n}};
}

struct Coordinator::Link {
  Socket sock;
};

Coordinator::Coordinator(CoordinatorConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.peers.empty()) throw ConfigError("coordinator: empty address table");
  if (!(cfg_.timeout_s > 0.0)) throw ConfigError("coordinator: timeout must be > 0");
  group_endpoints(cfg_.peers, endpoints_, hosted_);
  links_.resize(endpoints_.size());
}

Coordinator::~Coordinator() = default;

void Coordinator::connect_missing(Clock::time_point deadline) {
  for (std::size_t e = 0; e < endpoints_.size(); ++e) {
    if (links_[e] && !links_[e]->sock.peer_closed()) continue;
    Socket s = connect_to(endpoints_[e], deadline);
    s.send_all(encode_handshake({cfg_.policy_hash, kCoordinatorId, static_cast<std::uint8_t>(cfg_.peers.size())}));
    const Handshake h = decode_handshake(s.read_frame(deadline));
    if (h.policy_hash != cfg_.policy_hash) {
      throw ConfigError("coordinator: worker at " + endpoints_[e].str() + " runs a different policy");
    }
    links_[e] = std::make_unique<Link>();
    links_[e]->sock = std::move(s);
  }
}

InferResult Coordinator::infer(const Tensor4& image) {
  if (image.n() != 1) throw ShapeError("infer: images are processed one at a time, got batch " + std::to_string(image.n()));
  const auto start = Clock::now();
  const auto deadline = deadline_after(cfg_.timeout_s);
  try {
    connect_missing(deadline);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw RuntimeFailure(std::string("infer: ") + e.what());
  }
  const std::uint32_t req = next_request_++;
  std::vector<std::string> failures;

  // node 0 starts computing once its own input is out, so only that send
  // counts as broadcast; the other sends overlap its compute
  double broadcast = 0.0;
  for (std::size_t e = 0; e < endpoints_.size(); ++e) {
    try {
      const auto dst = static_cast<std::uint8_t>(hosted_[e].front());
      links_[e]->sock.send_all(concat({encode_request(req), encode_msg(image, image.c(), kControlStep, kCoordinatorId,
                                                                       dst, WireDtype::kF32)}));
    } catch (const std::exception& ex) {
      failures.push_back(endpoints_[e].str() + ": " + ex.what());
      links_[e].reset();
    }
    if (e == 0) broadcast = seconds_since(start);
  }

  InferResult result;
  result.timing.nodes.resize(cfg_.peers.size());
  bool have_logits = false;
  for (std::size_t e = 0; e < endpoints_.size(); ++e) {
    if (!links_[e]) continue;
    try {
      for (bool done = false; !done;) {
        const std::uint32_t r = decode_request(links_[e]->sock.read_frame(deadline));
        const auto frame = links_[e]->sock.read_frame(deadline);
        if (r != req) continue;  // reply to an earlier, failed request
        switch (frame_kind(frame)) {
          case FrameKind::kTensor:
            result.logits = decode_msg(frame).chunk;
            have_logits = true;
            break;
          case FrameKind::kTiming:
            for (const auto& t : json::parse(decode_timing(frame))) {
              result.timing.nodes.at(t.at("node").get<std::size_t>()) = PhaseTimes::from_json(t);
            }
            done = true;
            break;
          case FrameKind::kError: {
            const ErrorFrame err = decode_error(frame);
            failures.push_back(endpoints_[e].str() + " (step " + std::to_string(err.step) + "): " + err.text);
            done = true;
            break;
          }
          default:
            throw FramingError("unexpected reply frame", 0);
        }
      }
    } catch (const std::exception& ex) {
      failures.push_back(endpoints_[e].str() + ": " + ex.what());
      links_[e].reset();
    }
  }
  if (!failures.empty()) {
    std::string msg = "inference failed:";
    for (const auto& f : failures) msg += "\n  " + f;
    throw RuntimeFailure(msg);
  }
  if (!have_logits) throw RuntimeFailure("inference failed: node 0 returned no logits");

  InferTiming& t = result.timing;
  t.total_s = seconds_since(start);
  t.broadcast_s = broadcast;
  t.compute_s = t.nodes[0].compute_s;
  t.exposed_wait_s = t.nodes[0].wait_s;
  t.head_s = t.nodes[0].head_s;
  t.transfer_s = std::max(0.0, t.total_s - t.broadcast_s - t.compute_s - t.exposed_wait_s - t.head_s);
  result.class_id = 0;
  for (int c = 1; c < result.logits.c(); ++c)
    if (result.logits[static_cast<std::size_t>(c)] > result.logits[static_cast<std::size_t>(result.class_id)]) result.class_id = c;
  return result;
}

void Coordinator::shutdown_workers() {
  try {
    connect_missing(deadline_after(std::min(cfg_.timeout_s, 2.0)));
  } catch (const std::exception&) {
    // unreachable workers are already gone
  }
  for (auto& l : links_) {
    if (!l) continue;
    try {
      l->sock.send_all(encode_request(kShutdownRequest));
    } catch (const std::exception&) {
    }
    l.reset();
  }
}

}  // namespace snn
