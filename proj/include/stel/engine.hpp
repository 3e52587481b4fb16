#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "stel/graph.hpp"
#include "stel/message.hpp"
#include "stel/node.hpp"
#include "stel/rng.hpp"
#include "stel/trace.hpp"

namespace stel {

enum class Adversary : std::uint8_t { clean, random_state, hostile };

inline std::optional<Adversary> parse_adversary(const std::string& s) {
  if (s == "clean") return Adversary::clean;
  if (s == "random") return Adversary::random_state;
  if (s == "hostile") return Adversary::hostile;
  return std::nullopt;
}

inline constexpr int kHostilePresets = 7;

struct RunConfig {
  GraphKind kind = GraphKind::path;
  int n_phys = 4;
  double p = 0.5;
  std::uint64_t seed = 1;
  Adversary adversary = Adversary::clean;
  int hostile_preset = 0;
  std::int64_t max_rounds = -1;        // -1: derive a generous default
  std::int64_t post_stab_rounds = -1;  // keep running this long after stabilizing
};

class World : public Ledger {
 public:
  AugmentedTopology g;
  ScheduleParams sp;
  std::vector<NodeState> nodes;
  Trace trace;
  std::int64_t round = -1;
  std::uint64_t global_seed = 0;

  // Called after every processed (active) round; skipped rounds have
  // identical state, so sampling active rounds loses nothing.
  std::function<void(const World&)> observer;

  // ----- Ledger -----
  int token_born(std::int64_t r, NodeId at, const char* cause) override {
    TokenRecord t;
    t.id = static_cast<int>(trace.tokens.size());
    t.born_round = r;
    t.born_at = at;
    t.born_cause = cause;
    t.visits.push_back({r, at, kNullEdgeId});
    trace.tokens.push_back(std::move(t));
    return trace.tokens.back().id;
  }
  void token_moved(std::int64_t, int, NodeId, NodeId) override {}
  void token_died(std::int64_t r, int tok, NodeId at, TokenDeath cause) override {
    if (tok < 0) return;
    auto& t = trace.tokens[static_cast<std::size_t>(tok)];
    t.died_round = r;
    t.died_at = at;
    t.death_cause = cause;
  }
  void token_heated(std::int64_t r, int tok, NodeId at) override { set_temp(r, tok, at, true); }
  void token_cooled(std::int64_t r, int tok, NodeId at) override { set_temp(r, tok, at, false); }
  void node_visited(std::int64_t r, int tok, NodeId node, EdgeId via) override {
    if (tok < 0) return;
    trace.tokens[static_cast<std::size_t>(tok)].visits.push_back({r, node, via});
  }

  NodeCtx ctx_at(std::int64_t r) {
    return NodeCtx{r, &g, &sp, &outbox_, this, global_seed};
  }

  // ----- setup -----
  void init(const Topology& phys, std::uint64_t seed) {
    g = augment_shadows(phys);
    sp = ScheduleParams::for_bound(phys.bound);
    global_seed = seed;
    round = -1;
    nodes.assign(static_cast<std::size_t>(g.node_count()), NodeState{});
    for (NodeId v = 0; v < g.node_count(); ++v) {
      nodes[static_cast<std::size_t>(v)].id = v;
      nodes[static_cast<std::size_t>(v)].is_shadow = g.is_shadow(v);
    }
  }

  // After the adversary has filled states: one-shot local sanity pass.
  // Violating pairs restart; everyone else runs from whatever they have.
  void settle_initial_state() {
    auto ctx = ctx_at(0);
    for (NodeId v = 0; v < g.phys.n_phys; ++v) {
      NodeState& pv = nodes[static_cast<std::size_t>(v)];
      NodeState& sv = nodes[static_cast<std::size_t>(g.shadow_of(v))];
      if (!check_local_consistency(pv, g, sp, 0) || !check_local_consistency(sv, g, sp, 0)) {
        if (pv.tkn && pv.token_id >= 0)
          token_died(0, pv.token_id, v, TokenDeath::restart_overwrite);
        if (sv.tkn && sv.token_id >= 0)
          token_died(0, sv.token_id, sv.id, TokenDeath::restart_overwrite);
        fresh_restart(pv, sv, ctx);
        trace.restarts.push_back({0, v});
      }
    }
    for (const auto& n : nodes) wakes_.push({std::max<std::int64_t>(n.next_wake(sp), 0), n.id});
    if (!outbox_.empty()) wakes_.push({0, 0});  // adversarial in-flight mail
  }

  void seed_in_flight(const SendItem& s) { outbox_.push_back(s); }

  // ----- main loop -----
  // Returns false when there is nothing left to simulate (never happens in
  // practice: timers always schedule wakes).
  bool advance() {
    std::int64_t t = next_active();
    if (t < 0) return false;
    process_round(t);
    return true;
  }

  std::int64_t next_active() {
    std::int64_t nr = -1;
    if (!outbox_.empty()) nr = round + 1;
    while (!wakes_.empty() && wakes_.top().first <= round) wakes_.pop();
    if (!wakes_.empty() && (nr < 0 || wakes_.top().first < nr)) nr = wakes_.top().first;
    return nr;
  }

  void run(std::int64_t max_rounds, std::int64_t post_stab_rounds) {
    while (true) {
      std::int64_t t = next_active();
      if (t < 0 || t > max_rounds) break;
      process_round(t);
      if (trace.stabilization_round >= 0 &&
          round >= trace.stabilization_round + post_stab_rounds)
        break;
    }
    trace.last_round = round;
    // a window that is long enough but still open also counts
    if (trace.stabilization_round < 0 && stab_window_start_ >= 0 &&
        round - stab_window_start_ >= sp.epoch_len)
      trace.stabilization_round = stab_window_start_;
  }

  std::int64_t messages_in_flight() const { return static_cast<std::int64_t>(outbox_.size()); }
  const std::vector<SendItem>& in_flight() const { return outbox_; }

  // Single alive token, and parent/child pointers that form one spanning
  // tree over all nodes (including shadows).
  bool globally_coherent() const {
    if (trace.alive_tokens() != 1) return false;
    NodeId root = kNoNode;
    for (const auto& n : nodes) {
      if (n.prnt == kNoNode) {
        if (root != kNoNode) return false;
        root = n.id;
      } else {
        if (!nodes[static_cast<std::size_t>(n.prnt)].has_child(n.id)) return false;
      }
      for (NodeId c : n.chld)
        if (nodes[static_cast<std::size_t>(c)].prnt != n.id) return false;
    }
    if (root == kNoNode) return false;
    // count reachable; mutual-consistency above makes this a cycle check
    std::vector<NodeId> stack{root};
    std::size_t cnt = 0;
    std::vector<char> seen(nodes.size(), 0);
    while (!stack.empty()) {
      NodeId u = stack.back();
      stack.pop_back();
      if (seen[static_cast<std::size_t>(u)]) return false;
      seen[static_cast<std::size_t>(u)] = 1;
      ++cnt;
      for (NodeId c : nodes[static_cast<std::size_t>(u)].chld) stack.push_back(c);
    }
    return cnt == nodes.size();
  }

 private:
  void set_temp(std::int64_t r, int tok, NodeId, bool hot) {
    if (tok < 0) return;
    auto& ch = trace.tokens[static_cast<std::size_t>(tok)].temp_changes;
    if (!ch.empty() && ch.back().second == hot) return;
    ch.push_back({r, hot});
  }

  static int msg_priority(MsgKind k) {
    // mergers first: a proposal landing on the retraction round must be
    // registered before the retraction is processed
    switch (k) {
      case MsgKind::propose: return 0;
      case MsgKind::accept: return 1;
      default: return 2;
    }
  }

  void process_round(std::int64_t t) {
    round = t;
    std::vector<SendItem> inbox = std::move(outbox_);
    outbox_.clear();
    std::vector<NodeId> touched;
    for (const auto& s : inbox) touched.push_back(s.to);
    while (!wakes_.empty() && wakes_.top().first <= t) {
      touched.push_back(wakes_.top().second);
      wakes_.pop();
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    std::stable_sort(inbox.begin(), inbox.end(), [](const SendItem& a, const SendItem& b) {
      if (a.to != b.to) return a.to < b.to;
      return msg_priority(a.msg.kind) < msg_priority(b.msg.kind);
    });
    auto ctx = ctx_at(t);
    std::size_t mi = 0;
    for (NodeId v : touched) {
      NodeState& n = nodes[static_cast<std::size_t>(v)];
      n.apply_flip(ctx);
      while (mi < inbox.size() && inbox[mi].to == v) {
        const SendItem& s = inbox[mi];
        n.on_message(ctx, s.from, s.msg, s.token_id);
        if (s.token_id >= 0) {
          const auto& tr = trace.tokens[static_cast<std::size_t>(s.token_id)];
          const bool refused = !tr.alive() && tr.died_round == t &&
                               tr.death_cause == TokenDeath::ignored_dispatch;
          trace.dispatches.push_back(
              {t, s.from, v, s.token_id, s.msg.kind == MsgKind::root_trns, !refused});
        }
        ++mi;
      }
      n.check_expiry(ctx);
      n.scheduler(ctx);
      n.emissions(ctx);
    }
    // apply queued restarts pairwise at end of round
    std::vector<NodeId> to_restart;
    for (NodeId v : touched) {
      if (nodes[static_cast<std::size_t>(v)].wants_restart)
        to_restart.push_back(g.physical_of(v));
    }
    std::sort(to_restart.begin(), to_restart.end());
    to_restart.erase(std::unique(to_restart.begin(), to_restart.end()), to_restart.end());
    for (NodeId v : to_restart) {
      NodeState& pv = nodes[static_cast<std::size_t>(v)];
      NodeState& sv = nodes[static_cast<std::size_t>(g.shadow_of(v))];
      // undo anything the pair queued this round; outgoing tokens die
      std::erase_if(outbox_, [&](const SendItem& s) {
        if (s.from != pv.id && s.from != sv.id) return false;
        if (s.token_id >= 0) token_died(t, s.token_id, s.from, TokenDeath::restart_overwrite);
        return true;
      });
      if (pv.tkn && pv.token_id >= 0)
        token_died(t, pv.token_id, v, TokenDeath::restart_overwrite);
      if (sv.tkn && sv.token_id >= 0)
        token_died(t, sv.token_id, sv.id, TokenDeath::restart_overwrite);
      fresh_restart(pv, sv, ctx);
      trace.restarts.push_back({t, v});
      touched.push_back(v);
      touched.push_back(sv.id);
    }
    if (!outbox_.empty()) {
      trace.msgs_per_round.push_back({t, static_cast<std::int64_t>(outbox_.size())});
      NodeId prev_from = kNoNode;
      for (const auto& s : outbox_) {
        if ((s.msg.encode() >> 13) != 0) trace.all_msgs_32bit = false;
        if (s.from == prev_from) trace.single_emission_per_round = false;
        prev_from = s.from;
        if (!g.is_shadow(s.from) && !g.is_shadow(s.to))
          trace.phys_msgs.push_back({t, s.from, s.to});
      }
    }
    for (NodeId v : touched) {
      const auto w = std::max(nodes[static_cast<std::size_t>(v)].next_wake(sp), t + 1);
      wakes_.push({w, v});
    }
    // stabilization window
    if (globally_coherent()) {
      if (stab_window_start_ < 0) stab_window_start_ = t;
      if (trace.stabilization_round < 0 && t - stab_window_start_ >= sp.epoch_len)
        trace.stabilization_round = stab_window_start_;
    } else if (trace.stabilization_round < 0) {
      stab_window_start_ = -1;
    }
    if (observer) observer(*this);
  }

  using WakeEntry = std::pair<std::int64_t, NodeId>;
  std::priority_queue<WakeEntry, std::vector<WakeEntry>, std::greater<>> wakes_;
  std::vector<SendItem> outbox_;
  std::int64_t stab_window_start_ = -1;
};

// ---------------------------------------------------------------------
// Initial-state strategies.

namespace adversary {

inline void clean(World& w) {
  auto ctx = w.ctx_at(0);
  for (NodeId v = 0; v < w.g.phys.n_phys; ++v)
    fresh_restart(w.nodes[static_cast<std::size_t>(v)],
                  w.nodes[static_cast<std::size_t>(w.g.shadow_of(v))], ctx);
}

// A well-formed line tree over physical nodes 0..n-1 (each with its shadow
// as first child), rooted at 0, used as scaffolding for hostile presets.
inline void line_tree(World& w) {
  const int n = w.g.phys.n_phys;
  for (NodeId v = 0; v < n; ++v) {
    NodeState& pv = w.nodes[static_cast<std::size_t>(v)];
    NodeState& sv = w.nodes[static_cast<std::size_t>(w.g.shadow_of(v))];
    pv = NodeState{};
    pv.id = v;
    pv.rng = Rng(mix64(w.global_seed, static_cast<std::uint64_t>(v), 0));
    pv.prnt = v > 0 && w.g.phys.has_edge(v, v - 1) ? v - 1 : kNoNode;
    pv.chld = {w.g.shadow_of(v)};
    if (v + 1 < n && w.g.phys.has_edge(v, v + 1)) pv.chld.push_back(v + 1);
    pv.tkn_d = pv.prnt != kNoNode ? pv.prnt : kNoNode;
    pv.tmr_set(0, w.sp.premature_floor);
    sv = NodeState{};
    sv.id = w.g.shadow_of(v);
    sv.is_shadow = true;
    sv.rng = Rng(mix64(w.global_seed, static_cast<std::uint64_t>(sv.id), 0));
    sv.prnt = v;
    sv.tkn_d = v;
    sv.tmr_set(0, w.sp.premature_floor);
  }
  // the line only works when consecutive nodes are adjacent (path/cycle/
  // complete/gnp-with-backbone); elsewhere the sanity pass will restart
  // the broken pairs, which is fine for a hostile strategy
  NodeState& root = w.nodes[0];
  root.tkn = true;
  root.token_id = w.token_born(0, 0, "initial");
  root.mode = RootMode::epochs;
  root.phase = Phase::accept;
  root.epoch_idx = 0;
  root.init_round = 1;
}

// preset 0: a parent cycle among the first k physical nodes, no token
inline void preset_prnt_cycle(World& w) {
  line_tree(w);
  NodeState& root = w.nodes[0];
  w.token_died(0, root.token_id, 0, TokenDeath::restart_overwrite);
  root.tkn = false;
  root.token_id = -1;
  root.mode = RootMode::none;
  root.init_round = -1;
  const int n = w.g.phys.n_phys;
  if (n >= 2 && w.g.phys.has_edge(n - 1, 0)) {
    // close the line into a parent cycle, if the edge exists
    root.prnt = n - 1;
    w.nodes[static_cast<std::size_t>(n - 1)].chld.push_back(0);
    root.tkn_d = n - 1;
  }
}

// preset 1: two tokens inside one component
inline void preset_two_tokens(World& w) {
  line_tree(w);
  const int n = w.g.phys.n_phys;
  NodeId m = n / 2;
  NodeState& nm = w.nodes[static_cast<std::size_t>(m)];
  if (m != 0 && !nm.tkn) {
    nm.tkn = true;
    nm.token_id = w.token_born(0, m, "initial");
    nm.cur_ek = EpochKind::accepting;
    nm.bcast_payload = encode_cross(CrossRole::none);
    nm.stage = Stage::dispatch;
    nm.stage_round = 1;
    nm.stage_peer = nm.chld.front();
    nm.stage_dir = TokenDir::discovery;
  }
}

// preset 2: every timer is already at the expiry bound
inline void preset_expired_timers(World& w) {
  line_tree(w);
  for (auto& n : w.nodes) n.tmr_set(0, w.sp.tmr_expiry);
}

// preset 3: a stale out_prop chain with no token anywhere
inline void preset_stale_out_prop(World& w) {
  line_tree(w);
  NodeState& root = w.nodes[0];
  w.token_died(0, root.token_id, 0, TokenDeath::restart_overwrite);
  root.tkn = false;
  root.token_id = -1;
  const int n = w.g.phys.n_phys;
  for (NodeId v = 0; v + 1 < n; ++v)
    if (w.nodes[static_cast<std::size_t>(v)].has_child(v + 1))
      w.nodes[static_cast<std::size_t>(v)].out_prop = v + 1;
}

// preset 4: token-direction pointers that contradict the token's position
inline void preset_tkn_d_mismatch(World& w) {
  line_tree(w);
  for (NodeId v = 1; v < w.g.phys.n_phys; ++v) {
    NodeState& nv = w.nodes[static_cast<std::size_t>(v)];
    nv.tkn_d = w.g.shadow_of(v);  // expects the token from the wrong side
  }
}

// preset 5: everyone pretends to be accepting, with phantom proposals
inline void preset_fake_accpt(World& w) {
  line_tree(w);
  for (NodeId v = 0; v < w.g.phys.n_phys; ++v) {
    NodeState& nv = w.nodes[static_cast<std::size_t>(v)];
    nv.accpt = true;
    for (const auto& he : w.g.phys.adj[v])
      if (!nv.is_tree_nbr(he.peer)) nv.in_prop.insert(he.peer);
  }
  NodeState& root = w.nodes[0];
  root.phase = Phase::accept;
}

// preset 6: two adjacent counter-moving tokens, both doomed to refusal
inline void preset_token_collision(World& w) {
  line_tree(w);
  NodeState& root = w.nodes[0];
  const int n = w.g.phys.n_phys;
  if (n < 2 || !w.g.phys.has_edge(0, 1)) return;
  root.mode = RootMode::none;
  root.init_round = -1;
  NodeState& n1 = w.nodes[1];
  // 0 -> 1 and 1 -> 0, both dispatched "last round"
  Message down;
  down.kind = MsgKind::pass_tkn;
  down.rel = Rel::you_are_my_child;
  down.dir = TokenDir::discovery;
  down.epoch = EpochKind::accepting;
  down.payload = encode_cross(CrossRole::none);
  Message up = down;
  up.rel = Rel::you_are_my_parent;
  up.dir = TokenDir::retraction;
  root.tkn = false;
  int tok0 = root.token_id;
  root.token_id = -1;
  root.tkn_d = 1;
  root.last_dispatch_round = -1;
  int tok1 = w.token_born(0, 1, "initial");
  n1.tkn_d = 0;
  n1.last_dispatch_round = -1;
  n1.cur_ek = EpochKind::accepting;
  w.seed_in_flight({0, 1, down, tok0});
  w.seed_in_flight({1, 0, up, tok1});
}

inline void hostile(World& w, int preset) {
  switch (preset % kHostilePresets) {
    case 0: preset_prnt_cycle(w); break;
    case 1: preset_two_tokens(w); break;
    case 2: preset_expired_timers(w); break;
    case 3: preset_stale_out_prop(w); break;
    case 4: preset_tkn_d_mismatch(w); break;
    case 5: preset_fake_accpt(w); break;
    case 6: preset_token_collision(w); break;
  }
}

// Uniformly scrambled per-node state; scheduler counters are drawn inside
// their legal ranges, everything else may come out inconsistent (those
// pairs restart in the sanity pass).
inline void random_state(World& w) {
  Rng rng(mix64(w.global_seed, 0xadULL));
  const int n = w.g.phys.n_phys;
  for (NodeId v = 0; v < n; ++v) {
    NodeState& pv = w.nodes[static_cast<std::size_t>(v)];
    NodeState& sv = w.nodes[static_cast<std::size_t>(w.g.shadow_of(v))];
    pv = NodeState{};
    pv.id = v;
    pv.rng = Rng(mix64(w.global_seed, static_cast<std::uint64_t>(v), 0));
    const auto& nbrs = w.g.phys.adj[v];
    auto rand_nbr = [&]() -> NodeId {
      if (nbrs.empty()) return kNoNode;
      return nbrs[rng.below(nbrs.size())].peer;
    };
    pv.prnt = rng.unit() < 0.5 ? rand_nbr() : kNoNode;
    if (rng.unit() < 0.9) pv.chld.push_back(w.g.shadow_of(v));
    for (const auto& he : nbrs)
      if (he.peer != pv.prnt && rng.unit() < 0.3) pv.chld.push_back(he.peer);
    pv.tkn = rng.unit() < 0.2;
    pv.tkn_d = rng.unit() < 0.8
                   ? (pv.chld.empty() ? pv.prnt : pv.chld[rng.below(pv.chld.size())])
                   : rand_nbr();
    if (pv.tkn) pv.token_id = w.token_born(0, v, "initial");
    pv.tmr_set(0, static_cast<std::int64_t>(rng.below(
                      static_cast<std::uint64_t>(w.sp.tmr_expiry + w.sp.tmr_expiry / 5))));
    pv.last_dispatch_round = rng.unit() < 0.2 ? -1 : kNever;
    pv.accpt = rng.coin();
    for (const auto& he : nbrs)
      if (!pv.is_tree_nbr(he.peer) && rng.unit() < 0.2) pv.in_prop.insert(he.peer);
    if (rng.unit() < 0.3) pv.out_prop = rand_nbr();
    if (pv.prnt == kNoNode) {
      pv.phase = rng.coin() ? Phase::propose : Phase::accept;
      pv.phase_seed = rng.next();
      if (rng.unit() < 0.8) {
        pv.mode = RootMode::epochs;
        pv.epoch_idx = static_cast<std::uint32_t>(rng.below(pv.phase_epochs(w.sp)));
        pv.epoch_start = -static_cast<std::int64_t>(rng.below(
            static_cast<std::uint64_t>(w.sp.epoch_len)));
      } else {
        pv.mode = RootMode::proposing;
        pv.countdown_end = static_cast<std::int64_t>(
            rng.below(static_cast<std::uint64_t>(w.sp.propose_wait)));
        if (pv.out_prop == kNoNode) pv.out_prop = rand_nbr();
      }
    }
    sv = NodeState{};
    sv.id = w.g.shadow_of(v);
    sv.is_shadow = true;
    sv.rng = Rng(mix64(w.global_seed, static_cast<std::uint64_t>(sv.id), 0));
    sv.prnt = rng.unit() < 0.95 ? v : kNoNode;
    sv.tkn_d = v;
    sv.tkn = rng.unit() < 0.05;
    if (sv.tkn) sv.token_id = w.token_born(0, sv.id, "initial");
    sv.tmr_set(0, static_cast<std::int64_t>(
                      rng.below(static_cast<std::uint64_t>(w.sp.tmr_expiry))));
    // random in-flight mail arriving at round 0
    if (rng.unit() < 0.15 && !nbrs.empty()) {
      NodeId from = rand_nbr();
      Message m;
      m.kind = static_cast<MsgKind>(rng.below(4));
      m.rel = static_cast<Rel>(rng.below(2));
      m.dir = static_cast<TokenDir>(rng.below(2));
      m.epoch = static_cast<EpochKind>(rng.below(2));
      m.payload = static_cast<std::uint8_t>(rng.below(256));
      int tok = -1;
      if (m.kind == MsgKind::pass_tkn || m.kind == MsgKind::root_trns)
        tok = w.token_born(0, from, "initial");
      w.seed_in_flight({from, v, m, tok});
    }
  }
}

}  // namespace adversary

inline void apply_adversary(World& w, Adversary a, int preset) {
  switch (a) {
    case Adversary::clean: adversary::clean(w); break;
    case Adversary::random_state: adversary::random_state(w); break;
    case Adversary::hostile: adversary::hostile(w, preset); break;
  }
}

// Convenience wrapper: build, scramble, run, return the trace.
inline Trace run(const RunConfig& cfg,
                 const std::function<void(const World&)>& observer = {}) {
  Topology phys = generate(cfg.kind, cfg.n_phys, cfg.seed, cfg.p);
  World w;
  w.init(phys, cfg.seed);
  w.observer = observer;
  apply_adversary(w, cfg.adversary, cfg.hostile_preset);
  w.settle_initial_state();
  const std::int64_t nb = static_cast<std::int64_t>(w.sp.bound);
  const std::int64_t l2 = std::countr_zero(w.sp.bound);
  std::int64_t max_rounds =
      cfg.max_rounds > 0 ? cfg.max_rounds : 500 * nb * l2 * l2 + 8 * w.sp.epoch_len;
  std::int64_t post = cfg.post_stab_rounds >= 0 ? cfg.post_stab_rounds : 4 * w.sp.epoch_len;
  w.run(max_rounds, post);
  return std::move(w.trace);
}

}  // namespace stel
