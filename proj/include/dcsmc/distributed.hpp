#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dcsmc/tree.hpp"

namespace dcsmc {

inline constexpr std::uint8_t kModelTagIsing = 1;
inline constexpr std::uint8_t kModelTagGsm = 2;
inline constexpr std::uint8_t kModelTagHier = 3;

/// Static population-granularity work split. The cut set holds every vertex at
/// the cut depth plus any leaf that bottoms out above it; vertices below the
/// cut inherit their cut ancestor's worker, vertices above it are owned by
/// their first child's worker (so envelopes flow along tree edges only).
struct WorkerAssignment {
  int cut_depth = 0;
  int worker_count = 1;
  std::vector<std::pair<int, int>> cut_vertex_worker;  // (node id, worker), id-ordered
};

/// Cut depth: the shallowest depth whose vertex count reaches worker_count
/// (depth 0 = root); when no depth is that wide, the widest depth. Assignment
/// is round-robin over the cut set ordered by vertex id.
WorkerAssignment assign_subtrees(const DecompositionNode& root, int worker_count);

/// Owner of every node, indexed by preorder id.
std::vector<int> owner_table(const DecompositionNode& root, const WorkerAssignment& assignment);

/// Tree edges (child, parent) with depth(child) <= cut depth: the only edges
/// an envelope can cross.
long edges_above_cut(const DecompositionNode& root, int cut_depth);

struct PopulationEnvelope {
  std::uint8_t model_tag = 0;
  std::int32_t node_id = 0;
  ParticlePopulation pop;
  SeedPath lineage;
};

/// Little-endian fixed-width binary: 8-byte magic, version byte, model tag,
/// node id, N, dim, log_z_hat, seed lineage, states, log-weights, trailing
/// FNV-1a checksum. decode(encode(p)) is bit-identical.
std::vector<std::uint8_t> encode_population(const ParticlePopulation& pop, int node_id,
                                            std::uint8_t model_tag, const SeedPath& lineage);
PopulationEnvelope decode_population(const std::vector<std::uint8_t>& bytes);

struct DistributedResult {
  ParticlePopulation root_pop;
  double log_z = 0.0;
  long long states_transmitted = 0;
};

/// Workers as threads exchanging encoded envelopes over in-memory channels;
/// the estimate is bit-identical to a serial dc_sir with the same seed.
DistributedResult run_distributed_inprocess(const DecompositionNode& root,
                                            Eigen::Index n_particles,
                                            const WorkerAssignment& assignment,
                                            const SeedPath& root_seed, const DcConfig& config,
                                            std::uint8_t model_tag);

/// Everything a worker needs to rebuild its share of the computation.
struct JobSpec {
  DecompositionNode tree;
  DcConfig config;
  Eigen::Index n_particles = 0;
  std::uint64_t master_seed = 0;
  std::uint8_t model_tag = 0;
};

/// Parses the experiment-level job payload into a runnable spec.
using JobFactory = std::function<JobSpec(const std::string& job_json)>;

/// Drives workers listening at `roster` over TCP: sends each the job plus its
/// index, collects the root envelope and per-worker transfer counts.
/// Fail-fast: any unreachable worker throws WorkerUnreachable.
DistributedResult run_distributed_sockets(const std::vector<std::string>& roster,
                                          const std::string& job_json);

/// One population-granularity worker: binds, then serves jobs until shutdown.
class WorkerServer {
 public:
  WorkerServer(const std::string& bind_addr, JobFactory factory);
  ~WorkerServer();
  WorkerServer(const WorkerServer&) = delete;
  WorkerServer& operator=(const WorkerServer&) = delete;

  const std::string& address() const { return address_; }
  void wait();      // blocks until a shutdown frame arrives
  void shutdown();  // sends the shutdown frame locally

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string address_;
};

/// Asks a remote worker to stop serving.
void shutdown_worker(const std::string& address);

}  // namespace dcsmc
