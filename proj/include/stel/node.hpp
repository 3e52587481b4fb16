#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <limits>
#include <set>
#include <vector>

#include "stel/cross.hpp"
#include "stel/graph.hpp"
#include "stel/message.hpp"
#include "stel/rng.hpp"
#include "stel/trace.hpp"

namespace stel {

enum class RootMode : std::uint8_t { none = 0, epochs = 1, proposing = 2 };
enum class Phase : std::uint8_t { propose = 0, accept = 1 };

// Multi-round staged action; `stage_round` is when it fires.
enum class Stage : std::uint8_t {
  none = 0,
  dispatch,        // forward the held token to stage_peer
  send_accept,     // acceptor step 1: notify the chosen proposer
  merge_dispatch,  // acceptor step 2: adopt proposer as child, pass token
  send_root_trns,  // hand the cold token (and root role) to stage_peer
  send_propose,    // offer a merger across the crossing edge to stage_peer
};

struct NodeCtx {
  std::int64_t round = 0;
  const AugmentedTopology* g = nullptr;
  const ScheduleParams* sp = nullptr;
  std::vector<SendItem>* outbox = nullptr;
  Ledger* ledger = nullptr;
  std::uint64_t global_seed = 0;
};

inline constexpr std::int64_t kNever = std::numeric_limits<std::int64_t>::min() / 4;

struct NodeState {
  NodeId id = kNoNode;
  bool is_shadow = false;

  // --- protocol variables ---
  NodeId prnt = kNoNode;
  std::vector<NodeId> chld;  // visit order matters
  bool tkn = false;
  NodeId tkn_d = kNoNode;  // neighbor the token was last dispatched to
  std::int64_t last_dispatch_round = kNever;  // recent(t) == (this == t-1)
  // lazy timer: value at round t is tmr_mark_val + (t - tmr_mark_round)
  std::int64_t tmr_mark_round = 0;
  std::int64_t tmr_mark_val = 0;
  bool accpt = false;
  NodeId out_prop = kNoNode;
  std::set<NodeId> in_prop;

  // --- held-token bookkeeping ---
  int token_id = -1;
  std::int64_t acquired_round = kNever;
  EpochKind cur_ek = EpochKind::search;
  std::uint8_t bcast_payload = 0;  // discovery payload relayed downwards
  std::uint8_t echo_acc = 0;       // aggregated retraction payload

  // --- staged actions ---
  Stage stage = Stage::none;
  std::int64_t stage_round = 0;
  NodeId stage_peer = kNoNode;
  TokenDir stage_dir = TokenDir::discovery;
  NodeId flip_to = kNoNode;  // pending parent/child swap after a root handoff
  std::int64_t flip_round = 0;

  // --- crossing-edge search scratch ---
  std::uint64_t seed_acc = 0;
  std::uint64_t prefix_acc = 0;
  std::uint32_t prefix_len = 0;
  bool have_candidate = false;
  bool is_port = false;
  NodeId port_nbr = kNoNode;
  std::uint8_t safety_child_one = 0;  // children echoing class exactly 1
  std::uint8_t safety_child_pos = 0;  // children echoing class >= 1
  NodeId safety_one_child = kNoNode;

  // --- root scheduler ---
  RootMode mode = RootMode::none;
  Phase phase = Phase::propose;
  std::uint32_t epoch_idx = 0;
  std::int64_t epoch_start = -1;  // round the current epoch was initiated
  std::int64_t init_round = -1;   // pending first initiation (after restart)
  std::int64_t countdown_end = -1;
  std::uint64_t phase_seed = 0;
  std::uint8_t pending_bit = 0;  // search bit decided from the last echo
  bool cross_failed = false;

  // --- misc ---
  Rng rng;
  std::uint32_t restart_count = 0;
  bool wants_restart = false;

  // ------------------------------------------------------------------
  std::int64_t tmr_at(std::int64_t t) const { return tmr_mark_val + (t - tmr_mark_round); }
  void tmr_set(std::int64_t t, std::int64_t v) {
    tmr_mark_round = t;
    tmr_mark_val = v;
  }
  bool recent(std::int64_t t) const { return last_dispatch_round == t - 1; }
  bool has_child(NodeId v) const {
    return std::find(chld.begin(), chld.end(), v) != chld.end();
  }
  bool is_tree_nbr(NodeId v) const { return v == prnt || has_child(v); }

  std::uint32_t phase_epochs(const ScheduleParams& sp) const {
    return phase == Phase::propose ? sp.search_epochs : sp.search_epochs + 2;
  }

  // Earliest future round at which this node needs processing.
  std::int64_t next_wake(const ScheduleParams& sp) const {
    std::int64_t w = tmr_mark_round + (sp.tmr_expiry - tmr_mark_val);
    if (stage != Stage::none) w = std::min(w, stage_round);
    if (flip_to != kNoNode) w = std::min(w, flip_round);
    if (mode == RootMode::epochs) {
      if (init_round >= 0)
        w = std::min(w, init_round);
      else if (epoch_start >= 0)
        w = std::min(w, epoch_start + sp.epoch_len);
    } else if (mode == RootMode::proposing) {
      w = std::min(w, countdown_end + 1);
    }
    return w;
  }

  // ------------------------------------------------------------------
  // Round steps, invoked by the engine in this order for each touched node:
  // apply_flip, on_message (per message, mergers before tokens),
  // check_expiry, scheduler, emissions.

  void apply_flip(const NodeCtx& ctx) {
    if (flip_to == kNoNode || ctx.round < flip_round) return;
    prnt = flip_to;
    chld.erase(std::remove(chld.begin(), chld.end(), flip_to), chld.end());
    flip_to = kNoNode;
    mode = RootMode::none;
  }

  void on_message(const NodeCtx& ctx, NodeId from, const Message& m, int tok) {
    if (wants_restart) {
      if (tok >= 0) ctx.ledger->token_died(ctx.round, tok, id, TokenDeath::ignored_dispatch);
      return;
    }
    switch (m.kind) {
      case MsgKind::propose: handle_propose(ctx, from); break;
      case MsgKind::accept: handle_accept(ctx, from); break;
      case MsgKind::pass_tkn: handle_pass_tkn(ctx, from, m, tok); break;
      case MsgKind::root_trns: handle_root_trns(ctx, from, m, tok); break;
    }
  }

  void check_expiry(const NodeCtx& ctx) {
    if (wants_restart) return;
    if (tmr_mark_round == ctx.round) return;  // a reset this round wins the tie
    if (tmr_at(ctx.round) >= ctx.sp->tmr_expiry) wants_restart = true;
  }

  void scheduler(const NodeCtx& ctx) {
    if (wants_restart || stage != Stage::none) return;
    if (mode == RootMode::epochs) {
      if (init_round >= 0) {
        if (ctx.round >= init_round) {
          init_round = -1;
          initiate(ctx);
        }
      } else if (epoch_start >= 0 && ctx.round >= epoch_start + ctx.sp->epoch_len) {
        on_boundary(ctx);
      }
    } else if (mode == RootMode::proposing) {
      if (ctx.round > countdown_end) {
        // nobody accepted; give the coin another try
        mode = RootMode::epochs;
        out_prop = kNoNode;
        start_new_phase(ctx);
      }
    }
  }

  void emissions(const NodeCtx& ctx) {
    if (wants_restart || stage == Stage::none || ctx.round < stage_round) return;
    const Stage s = stage;
    stage = Stage::none;
    switch (s) {
      case Stage::dispatch:
        dispatch_token(ctx, stage_peer, stage_dir);
        break;
      case Stage::send_accept: {
        Message m;
        m.kind = MsgKind::accept;
        ctx.outbox->push_back({id, stage_peer, m, -1});
        stage = Stage::merge_dispatch;
        stage_round = ctx.round + 1;
        break;
      }
      case Stage::merge_dispatch:
        chld.push_back(stage_peer);
        in_prop.erase(stage_peer);
        dispatch_token(ctx, stage_peer, TokenDir::discovery);
        break;
      case Stage::send_root_trns: {
        Message m;
        m.kind = MsgKind::root_trns;
        m.rel = Rel::you_are_my_child;
        ctx.outbox->push_back({id, stage_peer, m, token_id});
        tkn = false;
        tkn_d = stage_peer;
        token_id = -1;
        out_prop = kNoNode;
        last_dispatch_round = ctx.round;
        flip_to = stage_peer;
        flip_round = ctx.round + 1;
        mode = RootMode::none;
        break;
      }
      case Stage::send_propose: {
        Message m;
        m.kind = MsgKind::propose;
        ctx.outbox->push_back({id, stage_peer, m, -1});
        break;
      }
      case Stage::none: break;
    }
  }

  // ------------------------------------------------------------------
 private:
  void stage_action(Stage s, std::int64_t round, NodeId peer,
                    TokenDir dir = TokenDir::discovery) {
    stage = s;
    stage_round = round;
    stage_peer = peer;
    stage_dir = dir;
  }

  std::uint8_t echo_payload() const {
    if (cur_ek == EpochKind::accepting) return 0;
    switch (cross_role(bcast_payload)) {
      case CrossRole::probe:
      case CrossRole::search_open:
      case CrossRole::search_bit: return echo_acc & 1u;
      case CrossRole::verify:
      case CrossRole::safety: return echo_acc & 3u;
      default: return 0;
    }
  }

  void dispatch_token(const NodeCtx& ctx, NodeId to, TokenDir dir) {
    Message m;
    m.kind = MsgKind::pass_tkn;
    m.rel = (to == prnt) ? Rel::you_are_my_parent : Rel::you_are_my_child;
    m.dir = dir;
    m.epoch = cur_ek;
    m.payload = (dir == TokenDir::discovery) ? bcast_payload : echo_payload();
    ctx.outbox->push_back({id, to, m, token_id});
    tkn = false;
    tkn_d = to;
    token_id = -1;
    last_dispatch_round = ctx.round;
  }

  void handle_propose(const NodeCtx& ctx, NodeId from) {
    (void)ctx;
    if (!accpt || is_tree_nbr(from)) return;
    in_prop.insert(from);
  }

  void handle_accept(const NodeCtx& ctx, NodeId from) {
    if (mode != RootMode::proposing || ctx.round > countdown_end || out_prop != from || !tkn)
      return;
    ctx.ledger->token_died(ctx.round, token_id, id, TokenDeath::dissolved);
    tkn = false;
    token_id = -1;
    prnt = from;
    tkn_d = from;
    out_prop = kNoNode;
    in_prop.erase(from);
    mode = RootMode::none;
    stage = Stage::none;
    countdown_end = -1;
    // the first visit from the new parent is expected promptly
    tmr_set(ctx.round, ctx.sp->premature_floor);
  }

  void handle_pass_tkn(const NodeCtx& ctx, NodeId from, const Message& m, int tok) {
    const bool rel_ok =
        (m.rel == Rel::you_are_my_child) ? (prnt == from) : has_child(from);
    if (tkn || recent(ctx.round) || tkn_d != from || !rel_ok) {
      ctx.ledger->token_died(ctx.round, tok, id, TokenDeath::ignored_dispatch);
      return;
    }
    ctx.ledger->token_moved(ctx.round, tok, from, id);
    ctx.ledger->node_visited(ctx.round, tok, id, ctx.g->edge_between(from, id));
    tkn = true;
    token_id = tok;
    acquired_round = ctx.round;
    if (m.dir == TokenDir::discovery)
      process_discovery(ctx, m);
    else
      process_retraction(ctx, from, m);
  }

  void handle_root_trns(const NodeCtx& ctx, NodeId from, const Message& m, int tok) {
    (void)m;
    if (tkn || recent(ctx.round) || tkn_d != from || prnt != from || out_prop == kNoNode) {
      ctx.ledger->token_died(ctx.round, tok, id, TokenDeath::ignored_dispatch);
      return;
    }
    ctx.ledger->token_moved(ctx.round, tok, from, id);
    ctx.ledger->node_visited(ctx.round, tok, id, ctx.g->edge_between(from, id));
    tkn = true;
    token_id = tok;
    acquired_round = ctx.round;
    prnt = kNoNode;
    chld.push_back(from);
    NodeId w = out_prop;
    if (has_child(w)) {
      stage_action(Stage::send_root_trns, ctx.round + 1, w);
    } else {
      // end of the handoff path: this node owns the crossing edge
      mode = RootMode::proposing;
      countdown_end = ctx.round + ctx.sp->propose_wait;
      stage_action(Stage::send_propose, ctx.round + 1, w);
    }
  }

  void process_discovery(const NodeCtx& ctx, const Message& m) {
    if (tmr_at(ctx.round) < ctx.sp->premature_floor) {
      wants_restart = true;  // a second traversal reached us too soon
      return;
    }
    tmr_set(ctx.round, 0);
    out_prop = kNoNode;
    cur_ek = m.epoch;
    bcast_payload = m.payload;
    if (m.epoch == EpochKind::search) {
      accpt = false;
      in_prop.clear();
      process_cross_discovery(ctx, m.payload);
    } else {
      echo_acc = 0;
    }
    if (!chld.empty())
      stage_action(Stage::dispatch, ctx.round + 1, chld.front(), TokenDir::discovery);
    else
      retraction_ready(ctx);
  }

  void process_retraction(const NodeCtx& ctx, NodeId from, const Message& m) {
    if (cur_ek == EpochKind::search) {
      switch (cross_role(bcast_payload)) {
        case CrossRole::probe:
        case CrossRole::search_open:
        case CrossRole::search_bit:
          echo_acc = merge_parity(echo_acc, m.payload & 1u);
          break;
        case CrossRole::verify:
          echo_acc = merge_class(echo_acc, m.payload & 3u);
          break;
        case CrossRole::safety: {
          const std::uint8_t cls = m.payload & 3u;
          echo_acc = merge_class(echo_acc, cls);
          if (cls == 1) {
            ++safety_child_one;
            safety_one_child = from;
          }
          if (cls >= 1) ++safety_child_pos;
          break;
        }
        default: break;
      }
    }
    const auto it = std::find(chld.begin(), chld.end(), from);
    assert(it != chld.end());
    const std::size_t idx = static_cast<std::size_t>(it - chld.begin());
    if (idx + 1 < chld.size())
      stage_action(Stage::dispatch, ctx.round + 1, chld[idx + 1], TokenDir::discovery);
    else
      retraction_ready(ctx);
  }

  // The token is about to leave upwards (or rest, at the root). This is
  // where proposals are harvested and the crossing-edge pointer is fixed.
  void retraction_ready(const NodeCtx& ctx) {
    if (cur_ek == EpochKind::accepting && accpt && !in_prop.empty()) {
      NodeId best = kNoNode;
      EdgeId best_id = 0;
      for (NodeId x : in_prop) {
        EdgeId e = ctx.g->edge_between(id, x);
        if (e != kNullEdgeId && (best == kNoNode || e < best_id)) {
          best = x;
          best_id = e;
        }
      }
      if (best != kNoNode) {
        stage_action(Stage::send_accept, ctx.round + 1, best);
        return;
      }
      in_prop.clear();  // only unreachable entries; drop them
    }
    if (cur_ek == EpochKind::search && cross_role(bcast_payload) == CrossRole::safety)
      fix_out_prop();
    if (cur_ek == EpochKind::accepting) accpt = true;
    if (prnt != kNoNode)
      stage_action(Stage::dispatch, ctx.round + 1, prnt, TokenDir::retraction);
    else
      root_token_home(ctx);
  }

  // Point towards the unique crossing edge iff exactly one was reported
  // below or at this node.
  void fix_out_prop() {
    const bool own = is_port && port_nbr != kNoNode && !is_tree_nbr(port_nbr);
    if (own && safety_child_pos == 0)
      out_prop = port_nbr;
    else if (!own && safety_child_pos == 1 && safety_child_one == 1)
      out_prop = safety_one_child;
    else
      out_prop = kNoNode;
  }

  void root_token_home(const NodeCtx& ctx) {
    ctx.ledger->token_cooled(ctx.round, token_id, id);
    if (mode != RootMode::epochs) return;  // token parked; scheduler is idle
    if (phase == Phase::propose) {
      const EpochPlan plan{ctx.sp->id_bits};
      switch (plan.role_of(epoch_idx)) {
        case CrossRole::probe:
          if (echo_acc == 0) cross_failed = true;
          break;
        case CrossRole::search_open:
        case CrossRole::search_bit:
          pending_bit = decide_next_bit(echo_acc & 1u);
          break;
        case CrossRole::verify:
          if ((echo_acc & 3u) != 1) cross_failed = true;
          break;
        case CrossRole::safety:
          if ((echo_acc & 3u) != 1) cross_failed = true;
          break;
        default: break;
      }
    }
  }

  void on_boundary(const NodeCtx& ctx) {
    if (!tkn) {
      wants_restart = true;  // the traversal never came home
      return;
    }
    ++epoch_idx;
    if (epoch_idx < phase_epochs(*ctx.sp)) {
      initiate(ctx);
      return;
    }
    // phase complete
    if (phase == Phase::propose) {
      if (cross_failed) out_prop = kNoNode;
      if (out_prop == kNoNode) {
        start_new_phase(ctx);
      } else if (has_child(out_prop)) {
        // the crossing edge hangs below: walk the root down to it
        mode = RootMode::none;
        stage_action(Stage::send_root_trns, ctx.round + 1, out_prop);
      } else {
        mode = RootMode::proposing;
        countdown_end = ctx.round + ctx.sp->propose_wait - 1;
        Message m;
        m.kind = MsgKind::propose;
        ctx.outbox->push_back({id, out_prop, m, -1});
      }
    } else {
      start_new_phase(ctx);
    }
  }

  void start_new_phase(const NodeCtx& ctx) {
    phase = rng.coin() ? Phase::propose : Phase::accept;
    begin_phase(ctx);
  }

 public:
  // Also used right after a restart (with a forced propose phase).
  void begin_phase(const NodeCtx& ctx) {
    epoch_idx = 0;
    cross_failed = false;
    out_prop = kNoNode;
    pending_bit = 0;
    if (phase == Phase::propose) phase_seed = rng.next();
    epoch_start = ctx.round;
    initiate(ctx);
  }

 private:
  void initiate(const NodeCtx& ctx) {
    if (!tkn || chld.empty() || tmr_at(ctx.round) < ctx.sp->premature_floor) {
      wants_restart = true;
      return;
    }
    epoch_start = ctx.round;
    tmr_set(ctx.round, 0);
    Message m;
    m.kind = MsgKind::pass_tkn;
    m.rel = Rel::you_are_my_child;
    m.dir = TokenDir::discovery;
    if (phase == Phase::propose) {
      m.epoch = EpochKind::search;
      const EpochPlan plan{ctx.sp->id_bits};
      const CrossRole role = plan.role_of(epoch_idx);
      std::uint8_t data = 0;
      if (role == CrossRole::seed_first || role == CrossRole::seed)
        data = static_cast<std::uint8_t>((phase_seed >> (60 - 4 * epoch_idx)) & 0xfu);
      else if (role == CrossRole::search_bit || role == CrossRole::verify)
        data = pending_bit;
      m.payload = encode_cross(role, data);
    } else {
      m.epoch = EpochKind::accepting;
      m.payload = encode_cross(CrossRole::none);
    }
    cur_ek = m.epoch;
    bcast_payload = m.payload;
    if (m.epoch == EpochKind::search) {
      accpt = false;     // same wipe every other node performs on a search
      in_prop.clear();   // discovery; keeps harvested proposals fresh
      process_cross_discovery(ctx, m.payload);
    } else {
      echo_acc = 0;
    }
    ctx.ledger->token_heated(ctx.round, token_id, id);
    ctx.ledger->node_visited(ctx.round, token_id, id, kNullEdgeId);
    dispatch_token(ctx, chld.front(), TokenDir::discovery);
  }

  // Update the per-phase scratch and compute this node's echo contribution.
  void process_cross_discovery(const NodeCtx& ctx, std::uint8_t payload) {
    const std::uint32_t bid = ctx.sp->id_bits;
    const CrossRole role = cross_role(payload);
    const std::uint8_t data = cross_data(payload);
    echo_acc = 0;
    switch (role) {
      case CrossRole::seed_first:
        seed_acc = data;
        prefix_acc = 0;
        prefix_len = 0;
        have_candidate = false;
        is_port = false;
        port_nbr = kNoNode;
        break;
      case CrossRole::seed:
        seed_acc = (seed_acc << 4) | data;
        break;
      case CrossRole::probe:
        echo_acc = local_range_parity(*ctx.g, id, seed_acc, 0, 0, bid);
        break;
      case CrossRole::search_open:
        prefix_acc = 0;
        prefix_len = 0;
        echo_acc = local_range_parity(*ctx.g, id, seed_acc, prefix_acc << 1, prefix_len + 1, bid);
        break;
      case CrossRole::search_bit:
        prefix_acc = (prefix_acc << 1) | (data & 1u);
        ++prefix_len;
        if (prefix_len + 1 <= bid)
          echo_acc = local_range_parity(*ctx.g, id, seed_acc, prefix_acc << 1, prefix_len + 1, bid);
        break;
      case CrossRole::verify: {
        prefix_acc = (prefix_acc << 1) | (data & 1u);
        ++prefix_len;
        have_candidate = (prefix_len == bid);
        is_port = false;
        port_nbr = kNoNode;
        if (have_candidate) {
          for (const auto& he : ctx.g->adj[id]) {
            if (ctx.g->is_shadow_edge_id(he.id)) continue;
            if (he.id == prefix_acc && !is_tree_nbr(he.peer)) {
              is_port = true;
              port_nbr = he.peer;
              break;
            }
          }
        }
        echo_acc = is_port ? 1 : 0;
        break;
      }
      case CrossRole::safety: {
        safety_child_one = 0;
        safety_child_pos = 0;
        safety_one_child = kNoNode;
        const bool own =
            have_candidate && is_port && port_nbr != kNoNode && !is_tree_nbr(port_nbr);
        echo_acc = own ? 1 : 0;
        break;
      }
      case CrossRole::none: break;
    }
  }
};

// Reset a physical/shadow pair to a fresh 2-node tree rooted at the
// physical node, which starts a forced propose phase one round later.
inline void fresh_restart(NodeState& v, NodeState& sh, const NodeCtx& ctx) {
  assert(!v.is_shadow && sh.is_shadow);
  const NodeId vid = v.id, sid = sh.id;
  const std::uint32_t vr = v.restart_count + 1, sr = sh.restart_count + 1;
  v = NodeState{};
  v.id = vid;
  v.restart_count = vr;
  v.rng = Rng(mix64(ctx.global_seed, static_cast<std::uint64_t>(vid), vr));
  v.chld = {sid};
  v.tkn = true;
  v.token_id = ctx.ledger->token_born(ctx.round, vid, "restart");
  v.tmr_set(ctx.round, ctx.sp->premature_floor);
  v.mode = RootMode::epochs;
  v.phase = Phase::propose;
  v.phase_seed = v.rng.next();
  v.init_round = ctx.round + 1;
  sh = NodeState{};
  sh.id = sid;
  sh.is_shadow = true;
  sh.restart_count = sr;
  sh.rng = Rng(mix64(ctx.global_seed, static_cast<std::uint64_t>(sid), sr));
  sh.prnt = vid;
  sh.tkn_d = vid;
  sh.tmr_set(ctx.round, ctx.sp->premature_floor);
}

// Locally checkable sanity of an arbitrary (possibly adversarial) state.
// Used once, at round 0; any violation restarts the pair.
inline bool check_local_consistency(const NodeState& n, const AugmentedTopology& g,
                                    const ScheduleParams& sp, std::int64_t round) {
  auto is_nbr = [&](NodeId x) { return g.edge_between(n.id, x) != kNullEdgeId; };
  if (n.prnt != kNoNode && !is_nbr(n.prnt)) return false;
  std::set<NodeId> seen;
  for (NodeId c : n.chld) {
    if (!is_nbr(c) || c == n.prnt || !seen.insert(c).second) return false;
  }
  if (n.is_shadow) {
    const NodeId phys = g.physical_of(n.id);
    if (n.prnt != phys || !n.chld.empty()) return false;
    if (n.tkn_d != phys) return false;
  } else {
    if (!n.has_child(g.shadow_of(n.id))) return false;
    if (n.tkn_d != kNoNode && !n.is_tree_nbr(n.tkn_d)) return false;
  }
  if (n.out_prop != kNoNode && !is_nbr(n.out_prop)) return false;
  for (NodeId x : n.in_prop)
    if (!is_nbr(x) || n.is_tree_nbr(x)) return false;
  if (n.tmr_at(round) < 0 || n.tmr_at(round) > sp.tmr_expiry) return false;
  if (n.tkn && n.recent(round)) return false;
  if (n.prnt != kNoNode && n.mode != RootMode::none) return false;
  return true;
}

}  // namespace stel
