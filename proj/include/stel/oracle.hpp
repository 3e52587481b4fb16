#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "stel/engine.hpp"
#include "stel/graph.hpp"
#include "stel/node.hpp"
#include "stel/trace.hpp"

namespace stel {

// Immutable copy of the per-node fields the analysis needs. A token that is
// in flight still counts as owned by its sender.
struct Snapshot {
  std::int64_t round = -1;
  struct NS {
    NodeId prnt = kNoNode;
    std::vector<NodeId> chld;
    bool tkn = false;
    bool owns = false;
    int token_id = -1;
    NodeId tkn_d = kNoNode;
    std::int64_t last_dispatch_round = kNever;
    NodeId out_prop = kNoNode;
    std::uint32_t restart_count = 0;

    bool has_child(NodeId v) const {
      return std::find(chld.begin(), chld.end(), v) != chld.end();
    }
  };
  std::vector<NS> nodes;

  static Snapshot capture(const World& w) {
    Snapshot s;
    s.round = w.round;
    s.nodes.resize(w.nodes.size());
    for (std::size_t i = 0; i < w.nodes.size(); ++i) {
      const NodeState& n = w.nodes[i];
      NS& o = s.nodes[i];
      o.prnt = n.prnt;
      o.chld = n.chld;
      o.tkn = n.tkn;
      o.owns = n.tkn;
      o.token_id = n.token_id;
      o.tkn_d = n.tkn_d;
      o.last_dispatch_round = n.last_dispatch_round;
      o.out_prop = n.out_prop;
      o.restart_count = n.restart_count;
    }
    for (const auto& m : w.in_flight()) {
      if (m.token_id >= 0) {
        s.nodes[static_cast<std::size_t>(m.from)].owns = true;
        s.nodes[static_cast<std::size_t>(m.from)].token_id = m.token_id;
      }
    }
    return s;
  }

  // Both endpoints record the edge as the same tree edge.
  bool compatible(NodeId u, NodeId v) const {
    if (u == kNoNode || v == kNoNode) return false;
    const NS& a = nodes[static_cast<std::size_t>(u)];
    const NS& b = nodes[static_cast<std::size_t>(v)];
    return (b.prnt == u && a.has_child(v)) || (a.prnt == v && b.has_child(u));
  }
};

namespace detail {
struct Dsu {
  std::vector<int> p;
  explicit Dsu(std::size_t n) : p(n) { std::iota(p.begin(), p.end(), 0); }
  int find(int x) { return p[x] == x ? x : p[x] = find(p[x]); }
  void unite(int a, int b) { p[find(a)] = find(b); }
};
}  // namespace detail

struct CompatibleGraph {
  std::vector<std::pair<NodeId, NodeId>> edges;
  std::vector<int> comp;                     // component id per node
  std::vector<std::vector<NodeId>> dangling;  // per node: one-sided tree records

  bool is_spanning_tree() const {
    if (edges.size() + 1 != comp.size()) return false;
    for (int c : comp)
      if (c != comp[0]) return false;
    for (const auto& d : dangling)
      if (!d.empty()) return false;
    return true;
  }
};

inline CompatibleGraph compatible_edges(const Snapshot& s) {
  const std::size_t n = s.nodes.size();
  CompatibleGraph cg;
  cg.dangling.resize(n);
  detail::Dsu dsu(n);
  for (NodeId v = 0; v < static_cast<NodeId>(n); ++v) {
    const auto& nv = s.nodes[static_cast<std::size_t>(v)];
    std::vector<NodeId> tn;
    if (nv.prnt != kNoNode) tn.push_back(nv.prnt);
    tn.insert(tn.end(), nv.chld.begin(), nv.chld.end());
    for (NodeId w : tn) {
      if (s.compatible(v, w)) {
        if (v < w) {
          cg.edges.push_back({v, w});
          dsu.unite(v, w);
        }
      } else {
        cg.dangling[static_cast<std::size_t>(v)].push_back(w);
      }
    }
  }
  cg.comp.resize(n);
  for (std::size_t i = 0; i < n; ++i) cg.comp[i] = dsu.find(static_cast<int>(i));
  return cg;
}

struct DeltaGraph {
  // delta[v]: v itself when it owns a token; its compatible tkn_d target;
  // or kNoNode when neither applies (v is then uncovered for sure).
  std::vector<NodeId> delta;
  std::vector<int> comp;      // weakly connected component per node
  std::vector<char> selfish;  // per node: component contains a token owner

  bool covered(NodeId v) const { return selfish[static_cast<std::size_t>(v)] != 0; }
};

inline DeltaGraph delta_graph(const Snapshot& s) {
  const std::size_t n = s.nodes.size();
  DeltaGraph dg;
  dg.delta.assign(n, kNoNode);
  detail::Dsu dsu(n);
  for (NodeId v = 0; v < static_cast<NodeId>(n); ++v) {
    const auto& nv = s.nodes[static_cast<std::size_t>(v)];
    if (nv.owns) {
      dg.delta[static_cast<std::size_t>(v)] = v;
    } else if (nv.tkn_d != kNoNode && s.compatible(v, nv.tkn_d)) {
      dg.delta[static_cast<std::size_t>(v)] = nv.tkn_d;
      dsu.unite(static_cast<int>(v), static_cast<int>(nv.tkn_d));
    }
  }
  dg.comp.resize(n);
  dg.selfish.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) dg.comp[i] = dsu.find(static_cast<int>(i));
  for (std::size_t i = 0; i < n; ++i)
    if (s.nodes[i].owns) dg.selfish[static_cast<std::size_t>(dsu.find(static_cast<int>(i)))] = 1;
  for (std::size_t i = 0; i < n; ++i)
    dg.selfish[i] = dg.selfish[static_cast<std::size_t>(dg.comp[i])];
  return dg;
}

// Strong: the owner's delta component has no dangling edges and coincides
// with a full compatible component.
inline bool is_strong_token(const Snapshot& s, NodeId owner) {
  const DeltaGraph dg = delta_graph(s);
  const CompatibleGraph cg = compatible_edges(s);
  const int dc = dg.comp[static_cast<std::size_t>(owner)];
  const int cc = cg.comp[static_cast<std::size_t>(owner)];
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    const bool in_d = dg.comp[i] == dc;
    if (in_d && !cg.dangling[i].empty()) return false;
    if (in_d != (cg.comp[i] == cc)) return false;
  }
  return true;
}

inline std::vector<std::pair<NodeId, NodeId>> brute_force_crossing_edges(
    const Topology& t, const std::set<NodeId>& subset) {
  std::vector<std::pair<NodeId, NodeId>> out;
  for (NodeId u = 0; u < t.n_phys; ++u)
    for (const auto& he : t.adj[u]) {
      if (u > he.peer) continue;
      if (subset.count(u) != subset.count(he.peer)) out.push_back({u, he.peer});
    }
  return out;
}

// ---------------------------------------------------------------------
// Streaming per-round structural checks (fed by the engine observer).

struct Violation {
  std::string check;
  std::int64_t round;
  std::string detail;
};

class SnapshotOracle {
 public:
  SnapshotOracle(const AugmentedTopology& g, const ScheduleParams& sp, std::int64_t cadence = 1)
      : g_(&g), sp_(&sp), cadence_(std::max<std::int64_t>(cadence, 1)) {
    recovery_bound_ = 26 * static_cast<std::int64_t>(sp.c_tr) *
                          static_cast<std::int64_t>(sp.bound) +
                      1;
  }

  void feed(const World& w) {
    Snapshot cur = Snapshot::capture(w);
    check_dispatches(w, cur);
    if (++ticks_ % cadence_ == 0) check_structure(w, cur);
    prev_ = std::move(cur);
    has_prev_ = true;
    seen_restarts_ = w.trace.restarts.size();
  }

  const std::vector<Violation>& violations() const { return violations_; }
  bool ok() const { return violations_.empty(); }

 private:
  void add(const char* check, std::int64_t round, std::string detail) {
    if (violations_.size() < 64) violations_.push_back({check, round, std::move(detail)});
  }

  bool recent_of(const Snapshot::NS& n, std::int64_t t) const {
    return n.last_dispatch_round == t - 1;
  }

  // Delivery outcomes must match the delta-based success criterion. The
  // very first round is skipped: adversarial in-flight mail does not carry
  // honest sender declarations.
  void check_dispatches(const World& w, const Snapshot&) {
    if (!has_prev_) return;
    const auto& ds = w.trace.dispatches;
    for (std::size_t i = ds.size(); i-- > 0;) {
      const DispatchEvent& d = ds[i];
      if (d.round != w.round) break;
      if (d.round == 0) continue;
      const auto& v = prev_.nodes[static_cast<std::size_t>(d.to)];
      bool predict = !v.owns && v.tkn_d == d.from && prev_.compatible(d.to, d.from) &&
                     !recent_of(v, d.round);
      if (d.cold) predict = predict && v.out_prop != kNoNode;
      if (predict != d.succeeded)
        add("dispatch-success", d.round,
            "token " + std::to_string(d.token_id) + " " + std::to_string(d.from) + "->" +
                std::to_string(d.to) + " predicted " + (predict ? "ok" : "refusal"));
      // acquisition requires membership in the token's covered component
      if (d.succeeded && !d.cold) {
        const DeltaGraph dg = delta_graph(prev_);
        if (!dg.covered(d.to))
          add("acquire-covered", d.round, "node " + std::to_string(d.to) + " was uncovered");
      }
    }
  }

  void check_structure(const World& w, const Snapshot& cur) {
    const DeltaGraph dg = delta_graph(cur);
    const CompatibleGraph cg = compatible_edges(cur);
    // delta edges ride on compatible edges
    for (NodeId v = 0; v < static_cast<NodeId>(cur.nodes.size()); ++v) {
      const NodeId d = dg.delta[static_cast<std::size_t>(v)];
      if (d != kNoNode && d != v &&
          cg.comp[static_cast<std::size_t>(v)] != cg.comp[static_cast<std::size_t>(d)])
        add("delta-in-compatible", cur.round, "node " + std::to_string(v));
    }
    // after recovery: one owner per selfish component
    if (cur.round >= recovery_bound_) {
      std::map<int, int> owners;
      for (std::size_t i = 0; i < cur.nodes.size(); ++i)
        if (cur.nodes[i].owns) ++owners[dg.comp[i]];
      for (const auto& [c, k] : owners)
        if (k > 1) add("one-token-per-component", cur.round, std::to_string(k) + " owners");
    }
    // uncovered persistence across consecutive samples (skipped rounds are
    // state-identical, so consecutive active samples suffice)
    if (has_prev_ && cadence_ == 1) {
      const DeltaGraph pdg = delta_graph(prev_);
      std::set<NodeId> restarted;
      for (std::size_t i = seen_restarts_; i < w.trace.restarts.size(); ++i) {
        restarted.insert(w.trace.restarts[i].node);
        restarted.insert(g_->shadow_of(w.trace.restarts[i].node));
      }
      for (NodeId v = 0; v < static_cast<NodeId>(cur.nodes.size()); ++v) {
        if (restarted.count(v)) continue;
        if (!pdg.covered(v) && dg.covered(v))
          add("uncovered-persistence", cur.round, "node " + std::to_string(v));
      }
    }
  }

  const AugmentedTopology* g_;
  const ScheduleParams* sp_;
  std::int64_t cadence_ = 1;
  std::int64_t ticks_ = 0;
  std::int64_t recovery_bound_ = 0;
  Snapshot prev_;
  bool has_prev_ = false;
  std::size_t seen_restarts_ = 0;
  std::vector<Violation> violations_;
};

// ---------------------------------------------------------------------
// Whole-trace verdicts.

struct TraceReport {
  struct Verdict {
    std::string name;
    bool pass = true;
    std::int64_t first_violation = -1;
    std::string detail;
  };
  std::vector<Verdict> verdicts;

  bool all_pass() const {
    for (const auto& v : verdicts)
      if (!v.pass) return false;
    return true;
  }
  const Verdict* find(const std::string& name) const {
    for (const auto& v : verdicts)
      if (v.name == name) return &v;
    return nullptr;
  }
};

namespace detail {

// Sliding-window check that the subgraph visited by one token within any
// window of `max_span` rounds is a tree: visits form a connected walk, so
// it is a tree iff distinct edges == distinct nodes - 1 at all times.
inline std::int64_t tree_shape_violation(const TokenRecord& tok, std::int64_t max_span) {
  const auto& vs = tok.visits;
  std::map<NodeId, int> ncnt;
  std::map<EdgeId, int> ecnt;
  std::size_t lo = 0;
  for (std::size_t hi = 0; hi < vs.size(); ++hi) {
    if (ncnt.empty() || !ncnt.count(vs[hi].node)) ncnt[vs[hi].node] = 0;
    ++ncnt[vs[hi].node];
    if (vs[hi].via != kNullEdgeId) ++ecnt[vs[hi].via];
    while (vs[hi].round - vs[lo].round > max_span) {
      if (--ncnt[vs[lo].node] == 0) ncnt.erase(vs[lo].node);
      if (vs[lo].via != kNullEdgeId && --ecnt[vs[lo].via] == 0) ecnt.erase(vs[lo].via);
      ++lo;
    }
    if (ecnt.size() + 1 > ncnt.size()) return vs[hi].round;
  }
  return -1;
}

struct Span {
  std::int64_t start, end;
  bool hot;
};

inline std::vector<Span> token_spans(const TokenRecord& tok, std::int64_t last_round) {
  std::vector<Span> out;
  std::int64_t at = tok.born_round;
  bool hot = false;
  for (const auto& [r, h] : tok.temp_changes) {
    if (r > at) out.push_back({at, r, hot});
    at = r;
    hot = h;
  }
  const std::int64_t end = tok.alive() ? last_round : tok.died_round;
  if (end > at) out.push_back({at, end, hot});
  return out;
}

}  // namespace detail

inline TraceReport check_trace(const Trace& trace, const ScheduleParams& sp,
                               const Snapshot& final_state) {
  TraceReport rep;
  const std::int64_t cn =
      static_cast<std::int64_t>(sp.c_tr) * static_cast<std::int64_t>(sp.bound);
  const std::int64_t recovery = 26 * cn + 1;
  auto verdict = [&rep](const char* name) -> TraceReport::Verdict& {
    rep.verdicts.push_back({name, true, -1, ""});
    return rep.verdicts.back();
  };
  auto fail = [](TraceReport::Verdict& v, std::int64_t round, std::string detail) {
    if (v.pass) {
      v.pass = false;
      v.first_violation = round;
      v.detail = std::move(detail);
    }
  };

  {  // (a) every node restarts at most once
    auto& v = verdict("restart-bound");
    std::map<NodeId, int> cnt;
    for (const auto& r : trace.restarts)
      if (++cnt[r.node] > 1) fail(v, r.round, "node " + std::to_string(r.node));
  }
  {  // (b) quiet after the recovery bound
    auto& v = verdict("recovery");
    for (const auto& r : trace.restarts)
      if (r.round >= recovery) fail(v, r.round, "restart of " + std::to_string(r.node));
    for (const auto& t : trace.tokens)
      if (!t.alive() && t.died_round >= recovery && t.death_cause != TokenDeath::dissolved)
        fail(v, t.died_round, std::string("token death: ") + to_string(t.death_cause));
  }
  {  // (c) post-stabilization traffic: <=1 physical message/round, tree edges only
    auto& v = verdict("post-stab-messages");
    if (trace.stabilization_round >= 0) {
      std::set<std::pair<NodeId, NodeId>> tree;
      const CompatibleGraph cg = compatible_edges(final_state);
      for (auto [a, b] : cg.edges) tree.insert({std::min(a, b), std::max(a, b)});
      std::int64_t prev_round = -1;
      for (const auto& m : trace.phys_msgs) {
        if (m.round < trace.stabilization_round) continue;
        if (m.round == prev_round) fail(v, m.round, ">1 physical message in a round");
        prev_round = m.round;
        if (!tree.count({std::min(m.from, m.to), std::max(m.from, m.to)}))
          fail(v, m.round,
               "off-tree edge " + std::to_string(m.from) + "-" + std::to_string(m.to));
      }
    }
  }
  {  // (d) visited subgraph is a tree on every bounded window
    auto& v = verdict("tree-shape");
    const std::int64_t span = static_cast<std::int64_t>(sp.search_epochs) * sp.epoch_len;
    for (const auto& t : trace.tokens) {
      const std::int64_t r = detail::tree_shape_violation(t, span);
      if (r >= 0) fail(v, r, "token " + std::to_string(t.id));
    }
  }
  {  // (e) hot/cold interval bounds, from the recovery bound onward
    auto& v = verdict("span-bounds");
    for (const auto& t : trace.tokens) {
      for (const auto& s : detail::token_spans(t, trace.last_round)) {
        if (s.start < recovery) continue;
        const std::int64_t len = s.end - s.start;
        if (s.hot && len >= cn)
          fail(v, s.start, "hot span " + std::to_string(len));
        if (!s.hot && len >= 6 * cn)
          fail(v, s.start, "cold span " + std::to_string(len));
      }
    }
  }
  {  // (f) natural traversals are short, at any round
    auto& v = verdict("traversal-length");
    for (const auto& t : trace.tokens)
      for (const auto& s : detail::token_spans(t, trace.last_round))
        if (s.hot && s.end - s.start >= cn)
          fail(v, s.start, "length " + std::to_string(s.end - s.start));
  }
  {  // (g) constant-size messages
    auto& v = verdict("message-size");
    if (!trace.all_msgs_32bit) fail(v, -1, "a message exceeded 32 bits");
  }
  {  // (h) one emission per node per round
    auto& v = verdict("single-emission");
    if (!trace.single_emission_per_round) fail(v, -1, "a node sent twice in one round");
  }
  {  // (i) bounded token population
    auto& v = verdict("token-count");
    if (trace.tokens.size() > 2 * final_state.nodes.size())
      fail(v, -1, std::to_string(trace.tokens.size()) + " tokens");
  }
  return rep;
}

}  // namespace stel
