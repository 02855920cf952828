#pragma once

/**
 * Token vocabulary for the desk-scale toy language.
 *
 * Rendering convention follows byte-pair vocabularies: each token carries its
 * own spacing. Word tokens render with a leading space (" alpha"), digits and
 * structural punctuation render bare, and decoding is plain concatenation.
 * Reserved control ids (pad/bos/eos) render as empty strings.
 *
 * encode() is greedy longest-match and is only required to round-trip text
 * produced by the suite generator; policy output travels the other direction
 * (ids -> text) and never needs re-encoding.
 */

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rlvr/common.hpp"

namespace rlvr {

enum ReservedToken : int {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kThinkOpen = 3,
  kThinkClose = 4,
  kAnswerOpen = 5,
  kAnswerClose = 6,
};

constexpr int kNumReserved = 7;

class Vocabulary {
 public:
  Vocabulary() = default;

  /// Reserved ids plus the given content token renders, in order.
  explicit Vocabulary(std::vector<std::string> content_tokens) {
    renders_ = {"", "", "", "<think>", "</think>", "<answer>", "</answer>"};
    for (auto& t : content_tokens) {
      renders_.push_back(std::move(t));
    }
    if (renders_.size() > 256) {
      throw ConfigError("vocabulary exceeds 256 tokens");
    }
    for (std::size_t i = 0; i + 1 < renders_.size(); ++i) {
      for (std::size_t j = i + 1; j < renders_.size(); ++j) {
        if (!renders_[i].empty() && renders_[i] == renders_[j]) {
          throw ConfigError("duplicate token render: " + renders_[i]);
        }
      }
    }
  }

  /// The ~96-token toy language used by the synthetic task suite.
  static Vocabulary desk_default();

  /// Reserved ids plus n generic content tokens "t0".."t{n-1}" (test fixtures).
  static Vocabulary minimal(int n) {
    std::vector<std::string> toks;
    toks.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      toks.push_back("t" + std::to_string(i));
    }
    return Vocabulary(std::move(toks));
  }

  int size() const { return static_cast<int>(renders_.size()); }

  bool is_reserved(int id) const { return id >= 0 && id < kNumReserved; }

  const std::string& render(int id) const {
    if (id < 0 || id >= size()) {
      throw InputError("token id out of range: " + std::to_string(id));
    }
    return renders_[static_cast<std::size_t>(id)];
  }

  std::optional<int> find(std::string_view text) const {
    for (int i = kNumReserved; i < size(); ++i) {
      if (renders_[static_cast<std::size_t>(i)] == text) {
        return i;
      }
    }
    // Structural markers are addressable by their literal text too.
    for (int i = kThinkOpen; i <= kAnswerClose; ++i) {
      if (renders_[static_cast<std::size_t>(i)] == text) {
        return i;
      }
    }
    return std::nullopt;
  }

  int id(std::string_view text) const {
    if (auto found = find(text)) {
      return *found;
    }
    throw InputError("unknown token text: " + std::string(text));
  }

  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
      out += render(id);
    }
    return out;
  }

  /// Greedy longest-match tokenization. Throws DataError if any position
  /// cannot be matched.
  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    std::size_t pos = 0;
    while (pos < text.size()) {
      int best_id = -1;
      std::size_t best_len = 0;
      for (int i = kThinkOpen; i < size(); ++i) {
        const std::string& r = renders_[static_cast<std::size_t>(i)];
        if (r.size() > best_len && text.compare(pos, r.size(), r) == 0) {
          best_id = i;
          best_len = r.size();
        }
      }
      if (best_id < 0) {
        throw DataError("untokenizable text at byte " + std::to_string(pos) + ": '" +
                        std::string(text.substr(pos, 12)) + "'");
      }
      ids.push_back(best_id);
      pos += best_len;
    }
    return ids;
  }

 private:
  std::vector<std::string> renders_;
};

inline Vocabulary Vocabulary::desk_default() {
  std::vector<std::string> t;
  // Structural scaffold for the answer object.
  t.insert(t.end(), {"{", "}", "\"", ":", "\"answer\""});
  // Bare digits and sign (answer values).
  for (char c = '0'; c <= '9'; ++c) {
    t.push_back(std::string(1, c));
  }
  t.push_back("-");
  // Spaced digits and sign (prose positions).
  for (char c = '0'; c <= '9'; ++c) {
    t.push_back(std::string(" ") + c);
  }
  t.push_back(" -");
  // Fact names.
  t.insert(t.end(), {" alpha", " beta", " gamma", " delta", " omega", " sigma"});
  // Arithmetic operation words and their trace words.
  t.insert(t.end(), {" add", " sub", " mul", " mix", " sum", " diff", " prod"});
  // Lookup-convert family.
  t.insert(t.end(), {" convert", " code", " factor", " val"});
  t.insert(t.end(), {" K1", " K2", " K3", " K4", " K5", " K6"});
  // Rule-score family.
  t.insert(t.end(), {" assess", " over", " score", " low", " mid", " high"});
  t.insert(t.end(), {" R1", " R2", " R3"});
  // Match-3way family.
  t.insert(t.end(), {" match", " req", " ban", " has", " eligible", " excluded", " irrelevant"});
  // Event-binary family.
  t.insert(t.end(), {" events", " predict"});
  for (int i = 1; i <= 9; ++i) {
    t.push_back(" ev" + std::to_string(i));
  }
  t.insert(t.end(), {" m1a", " m1b", " m2a", " m2b", " m3a", " m3b"});
  // Trace and filler words.
  t.insert(t.end(), {" yes", " no", " so", " is", " note", " day", " item"});
  return Vocabulary(std::move(t));
}

}  // namespace rlvr
