#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stel/engine.hpp"
#include "stel/graph.hpp"
#include "stel/oracle.hpp"

namespace stel {

// ---------------------------------------------------------------------
// Single checked run: simulate with the streaming oracle attached, then
// grade the whole trace.

struct RunResult {
  RunConfig cfg;
  ScheduleParams sp;
  Trace trace;
  TraceReport report;
  std::vector<Violation> snapshot_violations;
};

inline std::int64_t default_cadence(int n_phys) { return n_phys <= 16 ? 1 : 16; }

inline RunResult run_checked(const RunConfig& cfg, std::int64_t cadence = 0) {
  Topology phys = generate(cfg.kind, cfg.n_phys, cfg.seed, cfg.p);
  World w;
  w.init(phys, cfg.seed);
  SnapshotOracle so(w.g, w.sp,
                    cadence > 0 ? cadence : default_cadence(cfg.n_phys));
  w.observer = [&so](const World& ww) { so.feed(ww); };
  apply_adversary(w, cfg.adversary, cfg.hostile_preset);
  w.settle_initial_state();
  const std::int64_t nb = static_cast<std::int64_t>(w.sp.bound);
  const std::int64_t l2 = std::countr_zero(w.sp.bound);
  const std::int64_t cap = 500 * nb * l2 * l2;
  const std::int64_t max_rounds =
      cfg.max_rounds > 0 ? cfg.max_rounds : cap + 8 * w.sp.epoch_len;
  const std::int64_t post =
      cfg.post_stab_rounds >= 0 ? cfg.post_stab_rounds : 4 * w.sp.epoch_len;
  w.run(max_rounds, post);
  RunResult r;
  r.cfg = cfg;
  r.sp = w.sp;
  r.report = check_trace(w.trace, w.sp, Snapshot::capture(w));
  r.snapshot_violations = so.violations();
  r.trace = std::move(w.trace);
  return r;
}

struct RunSummary {
  std::uint64_t seed = 0;
  int n = 0;
  std::uint64_t bound = 0;
  std::int64_t stabilization_round = -1;
  std::int64_t msgs_pre = 0;           // physical messages before stabilization
  std::int64_t msgs_post_max = 0;      // max physical messages per round after
  std::int64_t restarts = 0;
  std::int64_t tokens = 0;
  bool verdicts_ok = false;
  bool snapshots_ok = false;
  std::string first_fail;
};

inline RunSummary summarize(const RunResult& r) {
  RunSummary s;
  s.seed = r.cfg.seed;
  s.n = r.cfg.n_phys;
  s.bound = r.sp.bound;
  s.stabilization_round = r.trace.stabilization_round;
  const std::int64_t stab =
      s.stabilization_round >= 0 ? s.stabilization_round : r.trace.last_round + 1;
  std::int64_t cur_round = -1, cur = 0;
  for (const auto& m : r.trace.phys_msgs) {
    if (m.round < stab) {
      ++s.msgs_pre;
    } else {
      if (m.round != cur_round) {
        cur_round = m.round;
        cur = 0;
      }
      s.msgs_post_max = std::max(s.msgs_post_max, ++cur);
    }
  }
  s.restarts = static_cast<std::int64_t>(r.trace.restarts.size());
  s.tokens = static_cast<std::int64_t>(r.trace.tokens.size());
  s.verdicts_ok = r.report.all_pass();
  s.snapshots_ok = r.snapshot_violations.empty();
  if (!s.verdicts_ok) {
    for (const auto& v : r.report.verdicts)
      if (!v.pass) {
        s.first_fail = v.name + "@" + std::to_string(v.first_violation);
        break;
      }
  } else if (!s.snapshots_ok) {
    const auto& v = r.snapshot_violations.front();
    s.first_fail = v.check + "@" + std::to_string(v.round);
  }
  return s;
}

inline const char* csv_header() {
  return "seed,n,N,stabilization_round,msgs_pre,msgs_post_per_round_max,restarts,"
         "tokens,verdicts_ok,snapshots_ok,first_fail";
}

inline std::string to_csv(const RunSummary& s) {
  std::ostringstream os;
  os << s.seed << ',' << s.n << ',' << s.bound << ',' << s.stabilization_round << ','
     << s.msgs_pre << ',' << s.msgs_post_max << ',' << s.restarts << ',' << s.tokens
     << ',' << (s.verdicts_ok ? 1 : 0) << ',' << (s.snapshots_ok ? 1 : 0) << ','
     << s.first_fail;
  return os.str();
}

// ---------------------------------------------------------------------
// Suite configuration (plain-text key=value, one per line, # comments).

struct SuiteCell {
  GraphKind kind = GraphKind::path;
  int n_phys = 4;
  double p = 0.5;
  Adversary adversary = Adversary::clean;
  int hostile_preset = 0;
  std::uint64_t seed_lo = 1;
  std::uint64_t seed_hi = 1;  // inclusive
  std::int64_t max_rounds = -1;
  std::int64_t cadence = 0;  // 0: default by n
};

inline SuiteCell parse_cell(std::istream& in) {
  SuiteCell c;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "graph.kind") {
      auto k = parse_graph_kind(val);
      if (!k) throw std::runtime_error("unknown graph kind: " + val);
      c.kind = *k;
    } else if (key == "graph.n") {
      c.n_phys = std::stoi(val);
    } else if (key == "graph.p") {
      c.p = std::stod(val);
    } else if (key == "adversary.strategy") {
      auto a = parse_adversary(val);
      if (!a) throw std::runtime_error("unknown adversary: " + val);
      c.adversary = *a;
    } else if (key == "adversary.preset") {
      c.hostile_preset = std::stoi(val);
    } else if (key == "seed.lo") {
      c.seed_lo = std::stoull(val);
    } else if (key == "seed.hi") {
      c.seed_hi = std::stoull(val);
    } else if (key == "max_rounds") {
      c.max_rounds = std::stoll(val);
    } else if (key == "oracle.cadence") {
      c.cadence = std::stoll(val);
    } else {
      throw std::runtime_error("unknown config key: " + key);
    }
  }
  if (c.seed_hi < c.seed_lo) throw std::runtime_error("empty seed range");
  if (c.n_phys < 1) throw std::runtime_error("graph.n must be positive");
  return c;
}

struct SuiteOutcome {
  std::vector<RunSummary> rows;
  std::int64_t hard_failures = 0;  // failed verdicts/snapshots/cap
  std::int64_t stabilized = 0;

  double stab_quantile(double q) const {
    std::vector<std::int64_t> xs;
    for (const auto& r : rows)
      if (r.stabilization_round >= 0) xs.push_back(r.stabilization_round);
    if (xs.empty()) return -1;
    std::sort(xs.begin(), xs.end());
    const std::size_t i =
        std::min(xs.size() - 1, static_cast<std::size_t>(q * static_cast<double>(xs.size())));
    return static_cast<double>(xs[i]);
  }
};

inline SuiteOutcome run_suite_cell(const SuiteCell& c, std::ostream* csv = nullptr) {
  SuiteOutcome out;
  for (std::uint64_t seed = c.seed_lo; seed <= c.seed_hi; ++seed) {
    RunConfig cfg;
    cfg.kind = c.kind;
    cfg.n_phys = c.n_phys;
    cfg.p = c.p;
    cfg.seed = seed;
    cfg.adversary = c.adversary;
    cfg.hostile_preset = c.hostile_preset;
    cfg.max_rounds = c.max_rounds;
    RunResult r = run_checked(cfg, c.cadence);
    RunSummary s = summarize(r);
    out.rows.push_back(s);
    if (csv) *csv << to_csv(s) << '\n';
    if (s.stabilization_round >= 0) ++out.stabilized;
    if (!s.verdicts_ok || !s.snapshots_ok || s.stabilization_round < 0) ++out.hard_failures;
  }
  return out;
}

// ---------------------------------------------------------------------
// Crossing-edge search benchmark: configure one tree directly, restart
// everything else (freshly restarted nodes stay silent for a whole search
// phase, which exactly covers the measured window), run one propose phase
// and inspect the root's pointer before it acts on it.

struct FindAnyResult {
  bool reported = false;   // the phase ended with a non-null pointer chain
  NodeId port = kNoNode;   // inside endpoint of the returned edge
  NodeId peer = kNoNode;   // outside endpoint
  bool op2_ok = false;     // out_prop pointers form a parent-to-port path
};

inline FindAnyResult findany_phase(const Topology& phys, const std::set<NodeId>& tree_set,
                                   std::uint64_t seed) {
  if (tree_set.empty()) throw std::invalid_argument("findany_phase: empty tree");
  World w;
  w.init(phys, seed);
  auto ctx = w.ctx_at(0);
  for (NodeId v = 0; v < phys.n_phys; ++v)
    fresh_restart(w.nodes[static_cast<std::size_t>(v)],
                  w.nodes[static_cast<std::size_t>(w.g.shadow_of(v))], ctx);
  // overwrite the members of the requested tree: BFS tree from the lowest id
  const NodeId root = *tree_set.begin();
  std::vector<NodeId> order{root};
  std::set<NodeId> placed{root};
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (const auto& he : phys.adj[order[i]]) {
      if (tree_set.count(he.peer) && !placed.count(he.peer)) {
        placed.insert(he.peer);
        order.push_back(he.peer);
        w.nodes[static_cast<std::size_t>(he.peer)].prnt = order[i];
        w.nodes[static_cast<std::size_t>(order[i])].chld.push_back(he.peer);
      }
    }
  }
  if (placed.size() != tree_set.size())
    throw std::invalid_argument("findany_phase: tree set not connected");
  for (NodeId v : order) {
    NodeState& n = w.nodes[static_cast<std::size_t>(v)];
    if (v != root) {
      // demote: the fresh restart made everyone a root of a 2-node tree
      if (n.tkn && n.token_id >= 0)
        w.token_died(0, n.token_id, v, TokenDeath::restart_overwrite);
      n.tkn = false;
      n.token_id = -1;
      n.mode = RootMode::none;
      n.init_round = -1;
      n.tkn_d = n.prnt;
    }
  }
  w.settle_initial_state();
  // one full search phase: initiation at round 1, boundaries every epoch
  const std::int64_t phase_end =
      1 + static_cast<std::int64_t>(w.sp.search_epochs) * w.sp.epoch_len;
  w.run(phase_end - 1, 0);
  FindAnyResult res;
  const NodeState& rn = w.nodes[static_cast<std::size_t>(root)];
  if (rn.cross_failed || rn.out_prop == kNoNode) return res;
  // follow the pointer chain (OP2): child hops, ending at the port
  NodeId at = root;
  std::set<NodeId> seen;
  while (true) {
    if (!seen.insert(at).second) return res;  // cycle: malformed chain
    const NodeState& n = w.nodes[static_cast<std::size_t>(at)];
    if (n.out_prop == kNoNode) return res;  // broken chain
    if (n.has_child(n.out_prop)) {
      at = n.out_prop;
      continue;
    }
    res.reported = true;
    res.port = at;
    res.peer = n.out_prop;
    res.op2_ok = true;
    return res;
  }
}

struct FindAnyStats {
  int trials = 0;
  int reported = 0;
  int genuine = 0;  // reported edge is a real crossing edge
  int op2_ok = 0;
};

inline FindAnyStats findany_bench(const Topology& phys, const std::set<NodeId>& tree_set,
                                  int trials, std::uint64_t seed0) {
  FindAnyStats st;
  const auto truth = brute_force_crossing_edges(phys, tree_set);
  std::set<std::pair<NodeId, NodeId>> truth_set;
  for (auto [a, b] : truth) truth_set.insert({std::min(a, b), std::max(a, b)});
  for (int i = 0; i < trials; ++i) {
    FindAnyResult r = findany_phase(phys, tree_set, mix64(seed0, static_cast<std::uint64_t>(i)));
    ++st.trials;
    if (r.reported) {
      ++st.reported;
      if (truth_set.count({std::min(r.port, r.peer), std::max(r.port, r.peer)})) ++st.genuine;
      if (r.op2_ok) ++st.op2_ok;
    }
  }
  return st;
}

}  // namespace stel
