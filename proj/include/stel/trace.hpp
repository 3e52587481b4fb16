#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stel/graph.hpp"
#include "stel/message.hpp"

namespace stel {

enum class TokenDeath : std::uint8_t { ignored_dispatch, restart_overwrite, dissolved };

inline const char* to_string(TokenDeath d) {
  switch (d) {
    case TokenDeath::ignored_dispatch: return "ignored_dispatch";
    case TokenDeath::restart_overwrite: return "restart_overwrite";
    case TokenDeath::dissolved: return "dissolved";
  }
  return "?";
}

// A message in transit. `token_id` is simulation metadata (the wire word is
// just msg.encode()); >= 0 when the message carries a token.
struct SendItem {
  NodeId from = kNoNode;
  NodeId to = kNoNode;
  Message msg;
  int token_id = -1;
};

// Event sink the node logic reports token lifecycle events to.
struct Ledger {
  virtual ~Ledger() = default;
  virtual int token_born(std::int64_t round, NodeId at, const char* cause) = 0;
  virtual void token_moved(std::int64_t round, int token, NodeId from, NodeId to) = 0;
  virtual void token_died(std::int64_t round, int token, NodeId at, TokenDeath cause) = 0;
  virtual void token_heated(std::int64_t round, int token, NodeId at) = 0;
  virtual void token_cooled(std::int64_t round, int token, NodeId at) = 0;
  virtual void node_visited(std::int64_t round, int token, NodeId node, EdgeId via) = 0;
};

struct TokenRecord {
  int id = -1;
  std::int64_t born_round = -1;
  NodeId born_at = kNoNode;
  std::string born_cause;
  std::int64_t died_round = -1;  // -1: still alive at end of run
  NodeId died_at = kNoNode;
  TokenDeath death_cause = TokenDeath::ignored_dispatch;

  struct Visit {
    std::int64_t round;
    NodeId node;
    EdgeId via;  // kNullEdgeId for birth / root initiation
  };
  std::vector<Visit> visits;
  // (round, hot). Tokens are born cold; initiation heats, homecoming cools.
  std::vector<std::pair<std::int64_t, bool>> temp_changes;

  bool alive() const { return died_round < 0; }
  bool hot_at(std::int64_t round) const {
    bool hot = false;
    for (const auto& [r, h] : temp_changes) {
      if (r > round) break;
      hot = h;
    }
    return hot;
  }
};

struct RestartEvent {
  std::int64_t round;
  NodeId node;  // physical node of the restarted pair
};

// One token delivery attempt, recorded at the delivery round.
struct DispatchEvent {
  std::int64_t round;  // delivery round (sent one round earlier)
  NodeId from = kNoNode;
  NodeId to = kNoNode;
  int token_id = -1;
  bool cold = false;  // root handoff rather than a traversal hop
  bool succeeded = false;
};

// A send between two physical nodes (shadow traffic excluded).
struct PhysMsg {
  std::int64_t round;
  NodeId from;
  NodeId to;
};

struct Trace {
  std::vector<TokenRecord> tokens;
  std::vector<RestartEvent> restarts;
  std::vector<DispatchEvent> dispatches;
  std::vector<PhysMsg> phys_msgs;
  // Sparse per-round send counts; rounds with no sends are omitted.
  std::vector<std::pair<std::int64_t, std::int64_t>> msgs_per_round;
  std::int64_t last_round = -1;
  std::int64_t stabilization_round = -1;  // -1: never stabilized
  bool all_msgs_32bit = true;
  bool single_emission_per_round = true;

  int alive_tokens() const {
    int n = 0;
    for (const auto& t : tokens) n += t.alive();
    return n;
  }

  std::int64_t total_msgs() const {
    std::int64_t s = 0;
    for (const auto& [r, c] : msgs_per_round) s += c;
    return s;
  }

  std::int64_t msgs_in(std::int64_t from, std::int64_t to) const {  // inclusive range
    std::int64_t s = 0;
    for (const auto& [r, c] : msgs_per_round)
      if (r >= from && r <= to) s += c;
    return s;
  }

  // Order-sensitive digest of every recorded event; equal digests mean
  // byte-identical replays.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t x) {
      h ^= x;
      h *= 0x100000001b3ULL;
    };
    for (const auto& t : tokens) {
      mix(static_cast<std::uint64_t>(t.born_round));
      mix(static_cast<std::uint64_t>(t.born_at));
      mix(static_cast<std::uint64_t>(t.died_round));
      for (const auto& v : t.visits) {
        mix(static_cast<std::uint64_t>(v.round));
        mix(static_cast<std::uint64_t>(v.node));
        mix(v.via);
      }
    }
    for (const auto& r : restarts) {
      mix(static_cast<std::uint64_t>(r.round));
      mix(static_cast<std::uint64_t>(r.node));
    }
    for (const auto& m : phys_msgs) {
      mix(static_cast<std::uint64_t>(m.round));
      mix(static_cast<std::uint64_t>(m.from));
      mix(static_cast<std::uint64_t>(m.to));
    }
    mix(static_cast<std::uint64_t>(stabilization_round));
    mix(static_cast<std::uint64_t>(last_round));
    return h;
  }
};

}  // namespace stel
