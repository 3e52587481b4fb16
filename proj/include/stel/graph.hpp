#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stel/rng.hpp"

namespace stel {

using NodeId = std::int32_t;
using EdgeId = std::uint64_t;
inline constexpr NodeId kNoNode = -1;
inline constexpr EdgeId kNullEdgeId = 0;  // reserved "no candidate" value

struct HalfEdge {
  NodeId peer = kNoNode;
  EdgeId id = kNullEdgeId;
};

enum class GraphKind { path, cycle, star, complete, gnp, random_tree };

inline const char* to_string(GraphKind k) {
  switch (k) {
    case GraphKind::path: return "path";
    case GraphKind::cycle: return "cycle";
    case GraphKind::star: return "star";
    case GraphKind::complete: return "complete";
    case GraphKind::gnp: return "gnp";
    case GraphKind::random_tree: return "random_tree";
  }
  return "?";
}

inline std::optional<GraphKind> parse_graph_kind(const std::string& s) {
  if (s == "path") return GraphKind::path;
  if (s == "cycle") return GraphKind::cycle;
  if (s == "star") return GraphKind::star;
  if (s == "complete") return GraphKind::complete;
  if (s == "gnp") return GraphKind::gnp;
  if (s == "random_tree") return GraphKind::random_tree;
  return std::nullopt;
}

// Smallest power of two that is >= 4 * n_phys. The bound must cover the
// augmented node count (2 * n_phys) with slack.
inline std::uint64_t bound_for(int n_phys) {
  std::uint64_t want = 4ull * static_cast<std::uint64_t>(n_phys);
  return std::bit_ceil(std::max<std::uint64_t>(want, 4));
}

// The communication graph over physical nodes. Every edge carries a unique
// identifier below bound^2, known identically to both endpoints.
struct Topology {
  int n_phys = 0;
  std::uint64_t bound = 0;  // N: power of two >= 4 * n_phys
  std::vector<std::vector<HalfEdge>> adj;

  int edge_count() const {
    std::size_t half = 0;
    for (const auto& a : adj) half += a.size();
    return static_cast<int>(half / 2);
  }

  bool has_edge(NodeId u, NodeId v) const {
    for (const auto& he : adj[u])
      if (he.peer == v) return true;
    return false;
  }

  bool connected() const {
    if (n_phys == 0) return false;
    std::vector<char> seen(n_phys, 0);
    std::queue<NodeId> q;
    q.push(0);
    seen[0] = 1;
    int cnt = 1;
    while (!q.empty()) {
      NodeId u = q.front();
      q.pop();
      for (const auto& he : adj[u]) {
        if (!seen[he.peer]) {
          seen[he.peer] = 1;
          ++cnt;
          q.push(he.peer);
        }
      }
    }
    return cnt == n_phys;
  }
};

// Physical graph plus one degree-1 shadow node per physical node.
// Augmented node ids: 0..n-1 physical, n..2n-1 shadows (shadow of v is v+n).
// Shadow edge ids live in [N^2/2, N^2), disjoint from physical ids.
struct AugmentedTopology {
  Topology phys;
  std::vector<std::vector<HalfEdge>> adj;  // over all 2*n_phys nodes

  int node_count() const { return 2 * phys.n_phys; }
  bool is_shadow(NodeId v) const { return v >= phys.n_phys; }
  NodeId shadow_of(NodeId v) const { return v + phys.n_phys; }
  NodeId physical_of(NodeId v) const { return is_shadow(v) ? v - phys.n_phys : v; }

  bool is_shadow_edge_id(EdgeId id) const { return id >= phys.bound * phys.bound / 2; }

  EdgeId edge_between(NodeId u, NodeId v) const {
    for (const auto& he : adj[u])
      if (he.peer == v) return he.id;
    return kNullEdgeId;
  }
};

// All protocol constants, derived purely from the bound N.
struct ScheduleParams {
  std::uint64_t bound = 0;          // N
  std::uint32_t c_tr = 8;           // rounds scale factor
  std::uint32_t id_bits = 0;        // candidate-ID bit width, 2*log2(N)
  std::uint32_t search_epochs = 0;  // S = 16 + 1 + id_bits + 1 + 1
  std::int64_t epoch_len = 0;       // 2*c_tr*N
  std::int64_t accept_phase_len = 0;  // (S+2)*epoch_len
  std::int64_t propose_wait = 0;      // 3*c_tr*N
  std::int64_t tmr_expiry = 0;        // 8*c_tr*N
  std::int64_t premature_floor = 0;   // c_tr*N
  std::int64_t restart_quiet = 0;     // S*epoch_len

  static ScheduleParams for_bound(std::uint64_t n_bound) {
    ScheduleParams p;
    p.bound = n_bound;
    p.c_tr = 8;
    p.id_bits = 2 * static_cast<std::uint32_t>(std::countr_zero(n_bound));
    p.search_epochs = 16 + 1 + p.id_bits + 1 + 1;
    const std::int64_t cn = static_cast<std::int64_t>(p.c_tr) * static_cast<std::int64_t>(n_bound);
    p.epoch_len = 2 * cn;
    p.accept_phase_len = static_cast<std::int64_t>(p.search_epochs + 2) * p.epoch_len;
    p.propose_wait = 3 * cn;
    p.tmr_expiry = 8 * cn;
    p.premature_floor = cn;
    p.restart_quiet = static_cast<std::int64_t>(p.search_epochs) * p.epoch_len;
    return p;
  }
};

namespace detail {

inline void add_edge(Topology& t, NodeId u, NodeId v) {
  t.adj[u].push_back({v, kNullEdgeId});
  t.adj[v].push_back({u, kNullEdgeId});
}

// Uniform random spanning backbone: attach node i to a random earlier node.
inline void add_random_backbone(Topology& t, Rng& rng) {
  for (NodeId i = 1; i < t.n_phys; ++i) {
    NodeId j = static_cast<NodeId>(rng.below(static_cast<std::uint64_t>(i)));
    if (!t.has_edge(i, j)) add_edge(t, i, j);
  }
}

}  // namespace detail

// Assign each physical edge a distinct identifier sampled without
// replacement from [1, N^2/2); both endpoint views get the same value.
inline void assign_edge_ids(Topology& t, std::uint64_t seed) {
  Rng rng(mix64(seed, 0x1d5ull));
  const std::uint64_t lo = 1;
  const std::uint64_t hi = t.bound * t.bound / 2;  // exclusive
  std::set<EdgeId> used;
  for (NodeId u = 0; u < t.n_phys; ++u) {
    for (auto& he : t.adj[u]) {
      if (he.peer < u) continue;  // visit each undirected edge once
      EdgeId id;
      do {
        id = lo + rng.below(hi - lo);
      } while (!used.insert(id).second);
      he.id = id;
      for (auto& back : t.adj[he.peer]) {
        if (back.peer == u && back.id == kNullEdgeId) {
          back.id = id;
          break;
        }
      }
    }
  }
}

// Build a connected simple graph of the requested shape. `p` is only used
// by gnp. Edge ids are assigned from `seed` as well.
inline Topology generate(GraphKind kind, int n, std::uint64_t seed, double p = 0.5) {
  if (n < 1) throw std::invalid_argument("generate: n must be >= 1");
  if (kind == GraphKind::gnp && !(p > 0.0 && p <= 1.0))
    throw std::invalid_argument("generate: gnp needs p in (0,1]");
  Topology t;
  t.n_phys = n;
  t.bound = bound_for(n);
  t.adj.resize(n);
  Rng rng(mix64(seed, static_cast<std::uint64_t>(kind)));
  switch (kind) {
    case GraphKind::path:
      for (NodeId i = 0; i + 1 < n; ++i) detail::add_edge(t, i, i + 1);
      break;
    case GraphKind::cycle:
      if (n < 3) throw std::invalid_argument("generate: cycle needs n >= 3");
      for (NodeId i = 0; i + 1 < n; ++i) detail::add_edge(t, i, i + 1);
      detail::add_edge(t, n - 1, 0);
      break;
    case GraphKind::star:
      for (NodeId i = 1; i < n; ++i) detail::add_edge(t, 0, i);
      break;
    case GraphKind::complete:
      for (NodeId i = 0; i < n; ++i)
        for (NodeId j = i + 1; j < n; ++j) detail::add_edge(t, i, j);
      break;
    case GraphKind::random_tree:
      detail::add_random_backbone(t, rng);
      break;
    case GraphKind::gnp: {
      // Random backbone guarantees connectivity; gnp edges on top.
      detail::add_random_backbone(t, rng);
      for (NodeId i = 0; i < n; ++i)
        for (NodeId j = i + 1; j < n; ++j)
          if (!t.has_edge(i, j) && rng.unit() < p) detail::add_edge(t, i, j);
      break;
    }
  }
  assign_edge_ids(t, seed);
  return t;
}

// Read an explicit edge-list file: one "u v edge_id" line per edge,
// 0-based node indices. Blank lines and lines starting with '#' skipped.
inline Topology load_edge_list(std::istream& in) {
  struct E {
    NodeId u, v;
    EdgeId id;
  };
  std::vector<E> edges;
  NodeId max_node = -1;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first) || first[0] == '#') continue;
    E e;
    e.u = static_cast<NodeId>(std::stol(first));
    if (!(ls >> e.v >> e.id)) throw std::runtime_error("edge list: bad line: " + line);
    edges.push_back(e);
    max_node = std::max({max_node, e.u, e.v});
  }
  if (max_node < 0) throw std::runtime_error("edge list: empty");
  Topology t;
  t.n_phys = max_node + 1;
  t.bound = bound_for(t.n_phys);
  t.adj.resize(t.n_phys);
  std::set<EdgeId> used;
  const EdgeId hi = t.bound * t.bound / 2;
  for (const auto& e : edges) {
    if (e.u == e.v) throw std::runtime_error("edge list: self loop");
    if (e.id < 1 || e.id >= hi) throw std::runtime_error("edge list: id out of range");
    if (!used.insert(e.id).second) throw std::runtime_error("edge list: duplicate id");
    if (t.has_edge(e.u, e.v)) throw std::runtime_error("edge list: parallel edge");
    t.adj[e.u].push_back({e.v, e.id});
    t.adj[e.v].push_back({e.u, e.id});
  }
  if (!t.connected()) throw std::runtime_error("edge list: graph not connected");
  return t;
}

inline Topology load_edge_list_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_edge_list(in);
}

// Attach one shadow node per physical node. Shadow edge ids are taken
// deterministically from the reserved upper half of the id space.
inline AugmentedTopology augment_shadows(const Topology& t) {
  AugmentedTopology g;
  g.phys = t;
  g.adj.resize(2 * t.n_phys);
  for (NodeId v = 0; v < t.n_phys; ++v) g.adj[v] = t.adj[v];
  const EdgeId base = t.bound * t.bound / 2;
  for (NodeId v = 0; v < t.n_phys; ++v) {
    NodeId sh = v + t.n_phys;
    EdgeId id = base + static_cast<EdgeId>(v);
    g.adj[v].push_back({sh, id});
    g.adj[sh].push_back({v, id});
  }
  return g;
}

}  // namespace stel
