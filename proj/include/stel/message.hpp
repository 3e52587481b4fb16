#pragma once

#include <cstdint>

namespace stel {

enum class MsgKind : std::uint8_t { pass_tkn = 0, propose = 1, accept = 2, root_trns = 3 };

// Sender's declared relation to the receiver; the receiver checks this
// against its own view before accepting a token.
enum class Rel : std::uint8_t { you_are_my_parent = 0, you_are_my_child = 1 };

enum class TokenDir : std::uint8_t { discovery = 0, retraction = 1 };

enum class EpochKind : std::uint8_t { search = 0, accepting = 1 };

// Constant-size message: everything fits in 32 bits regardless of graph
// size. Layout (LSB first): kind:2, rel:1, dir:1, epoch:1, payload:8.
struct Message {
  MsgKind kind = MsgKind::pass_tkn;
  Rel rel = Rel::you_are_my_parent;
  TokenDir dir = TokenDir::discovery;
  EpochKind epoch = EpochKind::search;
  std::uint8_t payload = 0;

  std::uint32_t encode() const {
    std::uint32_t w = 0;
    w |= static_cast<std::uint32_t>(kind) & 0x3u;
    w |= (static_cast<std::uint32_t>(rel) & 0x1u) << 2;
    w |= (static_cast<std::uint32_t>(dir) & 0x1u) << 3;
    w |= (static_cast<std::uint32_t>(epoch) & 0x1u) << 4;
    w |= (static_cast<std::uint32_t>(payload) & 0xffu) << 5;
    return w;
  }

  static Message decode(std::uint32_t w) {
    Message m;
    m.kind = static_cast<MsgKind>(w & 0x3u);
    m.rel = static_cast<Rel>((w >> 2) & 0x1u);
    m.dir = static_cast<TokenDir>((w >> 3) & 0x1u);
    m.epoch = static_cast<EpochKind>((w >> 4) & 0x1u);
    m.payload = static_cast<std::uint8_t>((w >> 5) & 0xffu);
    return m;
  }

  bool operator==(const Message&) const = default;
};

inline const char* to_string(MsgKind k) {
  switch (k) {
    case MsgKind::pass_tkn: return "pass_tkn";
    case MsgKind::propose: return "propose";
    case MsgKind::accept: return "accept";
    case MsgKind::root_trns: return "root_trns";
  }
  return "?";
}

}  // namespace stel
