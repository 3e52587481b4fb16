#pragma once

#include <cstdint>

#include "stel/graph.hpp"
#include "stel/rng.hpp"

namespace stel {

// Role of one traversal epoch inside a search phase. The root announces the
// role on every discovery so stale state at other nodes is overwritten.
enum class CrossRole : std::uint8_t {
  none = 0,        // accepting-phase traversal, no search content
  seed_first = 1,  // first seed nibble; resets all per-phase scratch
  seed = 2,        // subsequent seed nibble
  probe = 3,       // whole-range parity probe over the sampled id space
  search_open = 4, // first binary-search step, no decided bit yet
  search_bit = 5,  // later binary-search step, carries previous bit
  verify = 6,      // carries final bit, nodes classify candidate locally
  safety = 7,      // re-broadcasts the candidate check, fixes out_prop
};

// Discovery payload: role in the low 3 bits, up to 4 data bits above
// (a seed nibble, or one decided search bit, or the final bit).
inline std::uint8_t encode_cross(CrossRole role, std::uint8_t data = 0) {
  return static_cast<std::uint8_t>((static_cast<std::uint8_t>(role) & 0x7u) |
                                   ((data & 0xfu) << 3));
}

inline CrossRole cross_role(std::uint8_t payload) {
  return static_cast<CrossRole>(payload & 0x7u);
}

inline std::uint8_t cross_data(std::uint8_t payload) { return (payload >> 3) & 0xfu; }

// Retraction payloads: parity epochs echo one bit, classification epochs
// echo a count saturated at 2.
inline std::uint8_t merge_parity(std::uint8_t a, std::uint8_t b) {
  return static_cast<std::uint8_t>((a ^ b) & 1u);
}

inline std::uint8_t merge_class(std::uint8_t a, std::uint8_t b) {
  std::uint8_t s = static_cast<std::uint8_t>((a & 3u) + (b & 3u));
  return s > 2 ? 2 : s;
}

// Each physical edge is in the sampled set with probability 1/2, decided
// by the phase seed alone, so both endpoints agree without communication.
inline bool sample_edge(std::uint64_t phase_seed, EdgeId id) {
  std::uint64_t a = phase_seed;
  return (mix64(a, id) & 1u) != 0;
}

// True when the top `len` bits of `id` (viewed as an id_bits-wide word)
// equal `prefix`. Physical edge ids always fit in id_bits bits.
inline bool id_has_prefix(EdgeId id, std::uint64_t prefix, std::uint32_t len,
                          std::uint32_t id_bits) {
  if (len == 0) return true;
  return (id >> (id_bits - len)) == prefix;
}

// One node's parity contribution for a subspace: every incident physical
// edge is counted, so edges internal to the traversed tree cancel and only
// edges leaving the tree survive mod 2.
inline std::uint8_t local_range_parity(const AugmentedTopology& g, NodeId v,
                                       std::uint64_t phase_seed, std::uint64_t prefix,
                                       std::uint32_t len, std::uint32_t id_bits) {
  std::uint8_t par = 0;
  for (const auto& he : g.adj[v]) {
    if (g.is_shadow_edge_id(he.id)) continue;
    if (sample_edge(phase_seed, he.id) && id_has_prefix(he.id, prefix, len, id_bits))
      par ^= 1;
  }
  return par;
}

// Binary-search step at the root: subspace `prefix` has odd parity; its
// lower half had parity `lower_parity`. Keep whichever half stays odd.
inline std::uint8_t decide_next_bit(std::uint8_t lower_parity) {
  return lower_parity ? 0 : 1;
}

// Number of traversal epochs in front of the phase, per role:
// 16 seed nibbles, 1 probe, id_bits search steps, verify, safety.
struct EpochPlan {
  std::uint32_t id_bits = 0;

  std::uint32_t probe_epoch() const { return 16; }
  std::uint32_t first_search_epoch() const { return 17; }
  std::uint32_t verify_epoch() const { return 17 + id_bits; }
  std::uint32_t safety_epoch() const { return 18 + id_bits; }
  std::uint32_t total() const { return 19 + id_bits; }  // == search_epochs S

  CrossRole role_of(std::uint32_t epoch) const {
    if (epoch == 0) return CrossRole::seed_first;
    if (epoch < 16) return CrossRole::seed;
    if (epoch == probe_epoch()) return CrossRole::probe;
    if (epoch == first_search_epoch()) return CrossRole::search_open;
    if (epoch < verify_epoch()) return CrossRole::search_bit;
    if (epoch == verify_epoch()) return CrossRole::verify;
    return CrossRole::safety;
  }
};

}  // namespace stel
