#include "dcsmc/distributed.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "dcsmc/errors.hpp"

namespace dcsmc {

namespace {

constexpr std::uint32_t kFrameJob = 1;
constexpr std::uint32_t kFrameEnvelope = 2;
constexpr std::uint32_t kFrameResult = 3;
constexpr std::uint32_t kFrameStats = 4;
constexpr std::uint32_t kFrameShutdown = 5;

constexpr char kMagic[8] = {'D', 'C', 'S', 'M', 'C', 'E', 'N', 'V'};
constexpr std::uint8_t kEnvelopeVersion = 1;

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t len) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw TruncatedPayload("envelope ends mid-field");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

bool is_known_tag(std::uint8_t tag) {
  return tag == kModelTagIsing || tag == kModelTagGsm || tag == kModelTagHier;
}

struct Frame {
  std::uint32_t type = 0;
  std::vector<std::uint8_t> payload;
};

struct NodeIndex {
  std::vector<const DecompositionNode*> by_id;
  std::vector<int> parent;  // parent id, -1 at root
  std::vector<int> depth;
};

NodeIndex build_index(const DecompositionNode& root) {
  NodeIndex idx;
  std::vector<std::pair<const DecompositionNode*, int>> stack{{&root, -1}};
  while (!stack.empty()) {
    auto [node, parent] = stack.back();
    stack.pop_back();
    const int id = node->id;
    if (static_cast<int>(idx.by_id.size()) <= id) {
      idx.by_id.resize(id + 1, nullptr);
      idx.parent.resize(id + 1, -1);
      idx.depth.resize(id + 1, 0);
    }
    idx.by_id[id] = node;
    idx.parent[id] = parent;
    idx.depth[id] = parent < 0 ? 0 : idx.depth[parent] + 1;
    for (const auto& c : node->children) stack.emplace_back(&c, id);
  }
  return idx;
}

struct WorkerIo {
  // dest < 0 addresses the coordinator.
  std::function<void(int dest, std::uint32_t type, const std::vector<std::uint8_t>&)> send;
  std::function<Frame()> recv;
};

// Post-order pass over the tree computing every node this worker owns;
// foreign child populations block on the mailbox. Returns states sent.
long long worker_execute(const DecompositionNode& root, Eigen::Index n,
                         const std::vector<int>& owners, int me, const DcConfig& config,
                         std::uint8_t model_tag, std::uint64_t master_seed,
                         const WorkerIo& io) {
  const NodeIndex idx = build_index(root);
  std::map<int, ParticlePopulation> ready;

  auto obtain = [&](int node_id) {
    auto it = ready.find(node_id);
    if (it != ready.end()) {
      ParticlePopulation pop = std::move(it->second);
      ready.erase(it);
      return pop;
    }
    for (;;) {
      Frame f = io.recv();
      if (f.type == kFrameShutdown) throw Error("worker aborted while awaiting a population");
      if (f.type != kFrameEnvelope) continue;
      PopulationEnvelope env = decode_population(f.payload);
      if (env.node_id == node_id) return std::move(env.pop);
      ready.emplace(env.node_id, std::move(env.pop));
    }
  };

  long long sent_states = 0;
  auto route = [&](const DecompositionNode& node, ParticlePopulation pop) {
    const int parent = idx.parent[node.id];
    if (parent < 0) {
      io.send(-1, kFrameResult,
              encode_population(pop, node.id, model_tag, node.seed(master_seed)));
      return;
    }
    if (owners[parent] != me) {
      sent_states += pop.size();
      io.send(owners[parent], kFrameEnvelope,
              encode_population(pop, node.id, model_tag, node.seed(master_seed)));
      return;
    }
    ready.emplace(node.id, std::move(pop));
  };

  struct WalkFrame {
    const DecompositionNode* node;
    std::size_t next_child = 0;
  };
  std::vector<WalkFrame> stack{{&root}};
  while (!stack.empty()) {
    WalkFrame& frame = stack.back();
    if (frame.next_child < frame.node->children.size()) {
      stack.push_back({&frame.node->children[frame.next_child++]});
      continue;
    }
    const DecompositionNode& node = *frame.node;
    stack.pop_back();
    if (owners[node.id] != me) continue;
    const SeedPath seed = node.seed(master_seed);
    if (node.is_leaf()) {
      route(node, run_leaf(node, n, seed));
    } else {
      std::vector<ParticlePopulation> child_pops;
      child_pops.reserve(node.children.size());
      for (const auto& c : node.children) child_pops.push_back(obtain(c.id));
      route(node, finish_internal_node(node, child_pops, seed, config, nullptr));
    }
  }

  nlohmann::json stats{{"worker", me}, {"sent_states", sent_states}};
  const std::string text = stats.dump();
  io.send(-1, kFrameStats, std::vector<std::uint8_t>(text.begin(), text.end()));
  return sent_states;
}

}  // namespace

WorkerAssignment assign_subtrees(const DecompositionNode& root, int worker_count) {
  if (worker_count < 1) throw ConfigError("worker count must be at least 1");
  const NodeIndex idx = build_index(root);
  std::map<int, int> width;
  for (std::size_t id = 0; id < idx.by_id.size(); ++id) width[idx.depth[id]] += 1;

  int cut = -1;
  for (const auto& [depth, count] : width) {
    if (count >= worker_count) {
      cut = depth;
      break;
    }
  }
  if (cut < 0) {
    // Degenerate: more workers than any level is wide; use the widest depth
    // (one vertex per worker for as many as possible, extras idle).
    int best = 0;
    for (const auto& [depth, count] : width) {
      if (count > width[best] || (count == width[best] && depth > best)) best = depth;
    }
    cut = best;
  }

  WorkerAssignment assignment;
  assignment.cut_depth = cut;
  assignment.worker_count = worker_count;
  std::vector<int> cut_set;
  for (std::size_t id = 0; id < idx.by_id.size(); ++id) {
    const bool at_cut = idx.depth[id] == cut;
    const bool shallow_leaf = idx.depth[id] < cut && idx.by_id[id]->is_leaf();
    if (at_cut || shallow_leaf) cut_set.push_back(static_cast<int>(id));
  }
  std::sort(cut_set.begin(), cut_set.end());
  for (std::size_t i = 0; i < cut_set.size(); ++i) {
    assignment.cut_vertex_worker.emplace_back(cut_set[i],
                                              static_cast<int>(i % worker_count));
  }
  return assignment;
}

std::vector<int> owner_table(const DecompositionNode& root, const WorkerAssignment& assignment) {
  const NodeIndex idx = build_index(root);
  std::vector<int> owners(idx.by_id.size(), -1);
  for (auto [id, worker] : assignment.cut_vertex_worker) owners[id] = worker;

  // Below the cut: inherit the cut ancestor (preorder ids make parents smaller).
  for (std::size_t id = 0; id < owners.size(); ++id) {
    if (owners[id] < 0 && idx.depth[id] > assignment.cut_depth) {
      owners[id] = owners[idx.parent[id]];
    }
  }
  // Above the cut: first child's owner, resolved bottom-up.
  std::function<int(int)> resolve = [&](int id) -> int {
    if (owners[id] >= 0) return owners[id];
    owners[id] = resolve(idx.by_id[id]->children.front().id);
    return owners[id];
  };
  for (std::size_t id = 0; id < owners.size(); ++id) resolve(static_cast<int>(id));
  return owners;
}

long edges_above_cut(const DecompositionNode& root, int cut_depth) {
  const NodeIndex idx = build_index(root);
  long edges = 0;
  for (std::size_t id = 0; id < idx.by_id.size(); ++id) {
    if (idx.parent[id] >= 0 && idx.depth[id] <= cut_depth) ++edges;
  }
  return edges;
}

std::vector<std::uint8_t> encode_population(const ParticlePopulation& pop, int node_id,
                                            std::uint8_t model_tag, const SeedPath& lineage) {
  std::vector<std::uint8_t> out;
  const std::uint64_t n = static_cast<std::uint64_t>(pop.size());
  const std::uint64_t dim = static_cast<std::uint64_t>(pop.dim());
  out.reserve(58 + 4 * lineage.path.size() + 8 * (n * dim + n));
  out.insert(out.end(), kMagic, kMagic + 8);
  put(out, kEnvelopeVersion);
  put(out, model_tag);
  put(out, static_cast<std::int32_t>(node_id));
  put(out, n);
  put(out, dim);
  put(out, pop.log_z_hat);
  put(out, lineage.master_seed);
  put(out, static_cast<std::uint32_t>(lineage.path.size()));
  for (std::uint32_t p : lineage.path) put(out, p);
  const auto* states = reinterpret_cast<const std::uint8_t*>(pop.states.data());
  out.insert(out.end(), states, states + sizeof(double) * n * dim);
  const auto* weights = reinterpret_cast<const std::uint8_t*>(pop.log_weights.data());
  out.insert(out.end(), weights, weights + sizeof(double) * n);
  put(out, fnv1a(out.data(), out.size()));
  return out;
}

PopulationEnvelope decode_population(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 58) throw TruncatedPayload("envelope shorter than its header");
  const std::uint64_t stored_sum =
      [&] {
        std::uint64_t v;
        std::memcpy(&v, bytes.data() + bytes.size() - 8, 8);
        return v;
      }();
  if (fnv1a(bytes.data(), bytes.size() - 8) != stored_sum) {
    throw ChecksumMismatch("envelope checksum does not validate");
  }
  std::size_t off = 0;
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw Error("bad envelope magic");
  off = 8;
  const auto version = take<std::uint8_t>(bytes, off);
  if (version != kEnvelopeVersion) throw Error("unsupported envelope version");
  PopulationEnvelope env;
  env.model_tag = take<std::uint8_t>(bytes, off);
  if (!is_known_tag(env.model_tag)) throw UnknownModelTag("unregistered model tag");
  env.node_id = take<std::int32_t>(bytes, off);
  const auto n = take<std::uint64_t>(bytes, off);
  const auto dim = take<std::uint64_t>(bytes, off);
  env.pop.log_z_hat = take<double>(bytes, off);
  const auto master = take<std::uint64_t>(bytes, off);
  const auto path_len = take<std::uint32_t>(bytes, off);
  std::vector<std::uint32_t> path(path_len);
  for (auto& p : path) p = take<std::uint32_t>(bytes, off);
  env.lineage = SeedPath(master, path);
  const std::size_t need = off + sizeof(double) * (n * dim + n) + 8;
  if (bytes.size() != need) throw TruncatedPayload("envelope body length mismatch");
  env.pop.states.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::memcpy(env.pop.states.data(), bytes.data() + off, sizeof(double) * n * dim);
  off += sizeof(double) * n * dim;
  env.pop.log_weights.resize(static_cast<Eigen::Index>(n));
  std::memcpy(env.pop.log_weights.data(), bytes.data() + off, sizeof(double) * n);
  return env;
}

namespace {

struct Channel {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Frame> q;

  void push(Frame f) {
    {
      std::lock_guard<std::mutex> lock(mu);
      q.push_back(std::move(f));
    }
    cv.notify_one();
  }
  Frame pop() {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return !q.empty(); });
    Frame f = std::move(q.front());
    q.pop_front();
    return f;
  }
};

}  // namespace

DistributedResult run_distributed_inprocess(const DecompositionNode& root,
                                            Eigen::Index n_particles,
                                            const WorkerAssignment& assignment,
                                            const SeedPath& root_seed, const DcConfig& config,
                                            std::uint8_t model_tag) {
  if (!root_seed.path.empty()) {
    throw ConfigError("run_distributed expects the root seed (empty path)");
  }
  const int workers = assignment.worker_count;
  const auto owners = owner_table(root, assignment);
  std::vector<Channel> channels(static_cast<std::size_t>(workers) + 1);
  Channel& coordinator = channels.back();

  auto make_io = [&](int me) {
    WorkerIo io;
    io.send = [&, me](int dest, std::uint32_t type, const std::vector<std::uint8_t>& payload) {
      (void)me;
      channels[dest < 0 ? static_cast<std::size_t>(workers) : static_cast<std::size_t>(dest)]
          .push({type, payload});
    };
    io.recv = [&, me] { return channels[static_cast<std::size_t>(me)].pop(); };
    return io;
  };

  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        worker_execute(root, n_particles, owners, w, config, model_tag,
                       root_seed.master_seed, make_io(w));
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
        for (auto& ch : channels) ch.push({kFrameShutdown, {}});
      }
    });
  }

  DistributedResult result;
  bool have_result = false;
  int stats_seen = 0;
  bool failed = false;
  while ((!have_result || stats_seen < workers) && !failed) {
    Frame f = coordinator.pop();
    if (f.type == kFrameResult) {
      PopulationEnvelope env = decode_population(f.payload);
      result.root_pop = std::move(env.pop);
      have_result = true;
    } else if (f.type == kFrameStats) {
      const auto stats = nlohmann::json::parse(f.payload.begin(), f.payload.end());
      result.states_transmitted += stats.at("sent_states").get<long long>();
      ++stats_seen;
    } else if (f.type == kFrameShutdown) {
      failed = true;
    }
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  result.log_z = fold_logz(result.root_pop);
  return result;
}

// ---------------------------------------------------------------------------
// TCP transport
// ---------------------------------------------------------------------------

namespace {

std::pair<std::string, std::uint16_t> split_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ConfigError("address must be host:port, got " + addr);
  return {addr.substr(0, colon),
          static_cast<std::uint16_t>(std::stoi(addr.substr(colon + 1)))};
}

void write_all(int fd, const void* data, std::size_t len) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  while (len > 0) {
    const ssize_t n = ::write(fd, p, len);
    if (n <= 0) throw WorkerUnreachable("socket write failed");
    p += n;
    len -= static_cast<std::size_t>(n);
  }
}

bool read_all(int fd, void* data, std::size_t len) {
  auto* p = static_cast<std::uint8_t*>(data);
  while (len > 0) {
    const ssize_t n = ::read(fd, p, len);
    if (n == 0) return false;
    if (n < 0) throw WorkerUnreachable("socket read failed");
    p += n;
    len -= static_cast<std::size_t>(n);
  }
  return true;
}

void send_frame_to(const std::string& addr, std::uint32_t type,
                   const std::vector<std::uint8_t>& payload) {
  const auto [host, port] = split_address(addr);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw WorkerUnreachable("cannot resolve " + addr);
  }
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    freeaddrinfo(res);
    throw WorkerUnreachable("cannot create socket");
  }
  if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
    freeaddrinfo(res);
    ::close(fd);
    throw WorkerUnreachable("cannot connect to " + addr);
  }
  freeaddrinfo(res);
  const std::uint64_t len = payload.size();
  try {
    write_all(fd, &type, sizeof(type));
    write_all(fd, &len, sizeof(len));
    if (len > 0) write_all(fd, payload.data(), payload.size());
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

// Listener bound to host:port (port 0 ephemeral); accepted frames feed a queue.
class SocketMailbox {
 public:
  explicit SocketMailbox(const std::string& bind_addr) {
    const auto [host, port] = split_address(bind_addr);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw WorkerUnreachable("cannot create listen socket");
    const int yes = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    sa.sin_addr.s_addr = host == "0.0.0.0" ? INADDR_ANY : inet_addr(host.c_str());
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
      ::close(listen_fd_);
      throw WorkerUnreachable("cannot bind " + bind_addr);
    }
    if (::listen(listen_fd_, 64) != 0) {
      ::close(listen_fd_);
      throw WorkerUnreachable("cannot listen on " + bind_addr);
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    address_ = (host == "0.0.0.0" ? std::string("127.0.0.1") : host) + ":" +
               std::to_string(ntohs(bound.sin_port));
    listener_ = std::thread([this] { accept_loop(); });
  }

  ~SocketMailbox() {
    stopping_ = true;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (listener_.joinable()) listener_.join();
  }

  const std::string& address() const { return address_; }
  Frame pop() { return queue_.pop(); }

 private:
  void accept_loop() {
    for (;;) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (stopping_) return;
        continue;
      }
      try {
        for (;;) {
          Frame f;
          if (!read_all(fd, &f.type, sizeof(f.type))) break;
          std::uint64_t len = 0;
          if (!read_all(fd, &len, sizeof(len))) break;
          f.payload.resize(len);
          if (len > 0 && !read_all(fd, f.payload.data(), len)) break;
          queue_.push(std::move(f));
        }
      } catch (...) {
        // A broken peer connection drops silently; the job layer times out.
      }
      ::close(fd);
    }
  }

  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::string address_;
  std::thread listener_;
  Channel queue_;
};

}  // namespace

DistributedResult run_distributed_sockets(const std::vector<std::string>& roster,
                                          const std::string& job_json) {
  if (roster.empty()) throw ConfigError("distributed run needs a non-empty worker roster");
  SocketMailbox mailbox("0.0.0.0:0");
  nlohmann::json base = nlohmann::json::parse(job_json);
  base["roster"] = roster;
  base["coordinator"] = mailbox.address();

  for (std::size_t w = 0; w < roster.size(); ++w) {
    nlohmann::json job = base;
    job["worker_index"] = w;
    const std::string text = job.dump();
    send_frame_to(roster[w], kFrameJob, std::vector<std::uint8_t>(text.begin(), text.end()));
  }

  DistributedResult result;
  bool have_result = false;
  std::size_t stats_seen = 0;
  while (!have_result || stats_seen < roster.size()) {
    Frame f = mailbox.pop();
    if (f.type == kFrameResult) {
      PopulationEnvelope env = decode_population(f.payload);
      result.root_pop = std::move(env.pop);
      have_result = true;
    } else if (f.type == kFrameStats) {
      const auto stats = nlohmann::json::parse(f.payload.begin(), f.payload.end());
      if (stats.contains("error")) {
        throw Error("worker " + std::to_string(stats.at("worker").get<int>()) +
                    " failed: " + stats.at("error").get<std::string>());
      }
      result.states_transmitted += stats.at("sent_states").get<long long>();
      ++stats_seen;
    }
  }
  result.log_z = fold_logz(result.root_pop);
  return result;
}

struct WorkerServer::Impl {
  SocketMailbox mailbox;
  JobFactory factory;
  std::thread server;

  Impl(const std::string& bind, JobFactory f) : mailbox(bind), factory(std::move(f)) {}

  void run() {
    std::deque<Frame> pending;  // envelopes that raced ahead of their job
    for (;;) {
      Frame f = mailbox.pop();
      if (f.type == kFrameShutdown) return;
      if (f.type == kFrameEnvelope) {
        pending.push_back(std::move(f));
        continue;
      }
      if (f.type != kFrameJob) continue;

      const std::string text(f.payload.begin(), f.payload.end());
      const auto job = nlohmann::json::parse(text);
      const auto roster = job.at("roster").get<std::vector<std::string>>();
      const auto coordinator = job.at("coordinator").get<std::string>();
      const int me = job.at("worker_index").get<int>();

      WorkerIo io;
      io.send = [&](int dest, std::uint32_t type, const std::vector<std::uint8_t>& payload) {
        send_frame_to(dest < 0 ? coordinator : roster[static_cast<std::size_t>(dest)], type,
                      payload);
      };
      io.recv = [&]() -> Frame {
        if (!pending.empty()) {
          Frame front = std::move(pending.front());
          pending.pop_front();
          return front;
        }
        return mailbox.pop();
      };
      try {
        JobSpec spec = factory(text);
        const auto assignment = assign_subtrees(spec.tree, static_cast<int>(roster.size()));
        const auto owners = owner_table(spec.tree, assignment);
        worker_execute(spec.tree, spec.n_particles, owners, me, spec.config, spec.model_tag,
                       spec.master_seed, io);
      } catch (const std::exception& e) {
        nlohmann::json err{{"worker", me}, {"error", e.what()}};
        const std::string payload = err.dump();
        try {
          send_frame_to(coordinator, kFrameStats,
                        std::vector<std::uint8_t>(payload.begin(), payload.end()));
        } catch (...) {
        }
      }
    }
  }
};

WorkerServer::WorkerServer(const std::string& bind_addr, JobFactory factory)
    : impl_(std::make_unique<Impl>(bind_addr, std::move(factory))) {
  address_ = impl_->mailbox.address();
  impl_->server = std::thread([this] { impl_->run(); });
}

WorkerServer::~WorkerServer() {
  if (impl_ && impl_->server.joinable()) {
    try {
      shutdown();
    } catch (...) {
    }
    impl_->server.join();
  }
}

void WorkerServer::wait() {
  if (impl_ && impl_->server.joinable()) impl_->server.join();
}

void WorkerServer::shutdown() { shutdown_worker(address_); }

void shutdown_worker(const std::string& address) {
  send_frame_to(address, kFrameShutdown, {});
}

}  // namespace dcsmc
