#pragma once

/**
 * Structured-output parsing and rule-based rewards.
 *
 * Expected output shape, produced by the task suite and required of the
 * policy:
 *
 *   <think> ...reasoning... </think><answer>{ "answer": "<text>" }</answer>
 *
 * Exactly one think block, exactly one answer block after it, a minimal
 * JSON object with the single key "answer" and a string value, and nothing
 * but whitespace after the closing answer tag. Violations never raise; they
 * are encoded in the parse result and force reward 0.
 */

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>

#include "rlvr/common.hpp"

namespace rlvr::verify {

enum class Violation {
  none,
  missing_think,
  multiple_think,
  missing_answer,
  malformed_answer_object,
  trailing_content,
};

inline const char* violation_name(Violation v) {
  switch (v) {
    case Violation::none: return "none";
    case Violation::missing_think: return "missing-think";
    case Violation::multiple_think: return "multiple-think";
    case Violation::missing_answer: return "missing-answer";
    case Violation::malformed_answer_object: return "malformed-answer-object";
    case Violation::trailing_content: return "trailing-content";
  }
  return "unknown";
}

struct ParsedOutput {
  bool format_valid = false;
  Violation violation = Violation::none;
  std::string reasoning;          // text inside the think block
  std::size_t reasoning_begin = 0;  // byte offsets into the input
  std::size_t reasoning_end = 0;
  std::string answer;             // value of the "answer" key
};

enum class AnswerKindTag {
  exact_text,
  integer,
  decimal_with_tolerance,
  date,
  categorical_label,
};

struct AnswerKind {
  AnswerKindTag tag = AnswerKindTag::exact_text;
  double tolerance = 0.0;  // meaningful only for decimal_with_tolerance

  static AnswerKind exact_text() { return {AnswerKindTag::exact_text, 0.0}; }
  static AnswerKind integer() { return {AnswerKindTag::integer, 0.0}; }
  static AnswerKind decimal(double tol) { return {AnswerKindTag::decimal_with_tolerance, tol}; }
  static AnswerKind date() { return {AnswerKindTag::date, 0.0}; }
  static AnswerKind categorical() { return {AnswerKindTag::categorical_label, 0.0}; }
};

namespace detail {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string_view::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

/// Parses the minimal answer-object grammar; returns the string value or
/// nullopt if the content deviates from it in any way.
inline std::optional<std::string> parse_answer_object(std::string_view content) {
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < content.size() && is_space(content[i])) {
      ++i;
    }
  };
  auto expect = [&](char c) {
    if (i < content.size() && content[i] == c) {
      ++i;
      return true;
    }
    return false;
  };
  skip_ws();
  if (!expect('{')) {
    return std::nullopt;
  }
  skip_ws();
  if (content.compare(i, 8, "\"answer\"") != 0) {
    return std::nullopt;
  }
  i += 8;
  skip_ws();
  if (!expect(':')) {
    return std::nullopt;
  }
  skip_ws();
  if (!expect('"')) {
    return std::nullopt;
  }
  std::string value;
  while (i < content.size() && content[i] != '"') {
    char c = content[i];
    if (c == '\\') {
      ++i;
      if (i >= content.size()) {
        return std::nullopt;
      }
      switch (content[i]) {
        case '"': value += '"'; break;
        case '\\': value += '\\'; break;
        case '/': value += '/'; break;
        case 'n': value += '\n'; break;
        case 't': value += '\t'; break;
        case 'r': value += '\r'; break;
        default: return std::nullopt;
      }
      ++i;
    } else {
      value += c;
      ++i;
    }
  }
  if (!expect('"')) {
    return std::nullopt;
  }
  skip_ws();
  if (!expect('}')) {
    return std::nullopt;
  }
  skip_ws();
  if (i != content.size()) {
    return std::nullopt;
  }
  return value;
}

}  // namespace detail

inline ParsedOutput extract_answer(std::string_view text) {
  constexpr std::string_view kThinkOpen = "<think>";
  constexpr std::string_view kThinkClose = "</think>";
  constexpr std::string_view kAnswerOpen = "<answer>";
  constexpr std::string_view kAnswerClose = "</answer>";

  ParsedOutput out;
  auto fail = [&](Violation v) {
    out.format_valid = false;
    out.violation = v;
    return out;
  };

  if (detail::count_occurrences(text, kThinkOpen) > 1 ||
      detail::count_occurrences(text, kThinkClose) > 1) {
    return fail(Violation::multiple_think);
  }
  const std::size_t think_open = text.find(kThinkOpen);
  if (think_open == std::string_view::npos) {
    return fail(Violation::missing_think);
  }
  const std::size_t think_close = text.find(kThinkClose, think_open + kThinkOpen.size());
  if (think_close == std::string_view::npos) {
    return fail(Violation::missing_think);
  }

  const std::size_t answer_open = text.find(kAnswerOpen, think_close + kThinkClose.size());
  if (answer_open == std::string_view::npos) {
    return fail(Violation::missing_answer);
  }
  const std::size_t answer_close = text.find(kAnswerClose, answer_open + kAnswerOpen.size());
  if (answer_close == std::string_view::npos) {
    return fail(Violation::missing_answer);
  }
  for (std::size_t i = answer_close + kAnswerClose.size(); i < text.size(); ++i) {
    if (!detail::is_space(text[i])) {
      return fail(Violation::trailing_content);
    }
  }

  const std::string_view object = text.substr(answer_open + kAnswerOpen.size(),
                                              answer_close - answer_open - kAnswerOpen.size());
  auto value = detail::parse_answer_object(object);
  if (!value) {
    return fail(Violation::malformed_answer_object);
  }

  out.format_valid = true;
  out.violation = Violation::none;
  out.reasoning_begin = think_open + kThinkOpen.size();
  out.reasoning_end = think_close;
  out.reasoning = std::string(text.substr(out.reasoning_begin, think_close - out.reasoning_begin));
  out.answer = std::move(*value);
  return out;
}

// ---------------------------------------------------------------------------
// Answer normalization and comparison. All case/whitespace handling funnels
// through normalize_text so the policy is changeable in one place.
// ---------------------------------------------------------------------------

inline std::string normalize_text(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && detail::is_space(s[b])) {
    ++b;
  }
  while (e > b && detail::is_space(s[e - 1])) {
    --e;
  }
  std::string out;
  out.reserve(e - b);
  for (std::size_t i = b; i < e; ++i) {
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
  }
  return out;
}

/// Sign-normalized digit string, or nullopt when not an integer literal.
inline std::optional<std::string> canonical_integer(std::string_view s) {
  const std::string t = normalize_text(s);
  std::size_t i = 0;
  bool negative = false;
  if (i < t.size() && (t[i] == '+' || t[i] == '-')) {
    negative = t[i] == '-';
    ++i;
  }
  if (i >= t.size()) {
    return std::nullopt;
  }
  std::string digits;
  for (; i < t.size(); ++i) {
    if (t[i] < '0' || t[i] > '9') {
      return std::nullopt;
    }
    digits += t[i];
  }
  std::size_t nz = digits.find_first_not_of('0');
  digits = nz == std::string::npos ? "0" : digits.substr(nz);
  if (digits == "0") {
    negative = false;
  }
  return negative ? "-" + digits : digits;
}

inline std::optional<double> parse_decimal(std::string_view s) {
  const std::string t = normalize_text(s);
  if (t.empty()) {
    return std::nullopt;
  }
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

/// Canonical YYYY-MM-DD with zero padding, or nullopt when not a valid date.
inline std::optional<std::string> canonical_date(std::string_view s) {
  const std::string t = normalize_text(s);
  int parts[3] = {0, 0, 0};
  int part = 0;
  int digits = 0;
  for (char c : t) {
    if (c >= '0' && c <= '9') {
      parts[part] = parts[part] * 10 + (c - '0');
      if (++digits > 4) {
        return std::nullopt;
      }
    } else if (c == '-' && part < 2 && digits > 0) {
      ++part;
      digits = 0;
    } else {
      return std::nullopt;
    }
  }
  if (part != 2 || digits == 0) {
    return std::nullopt;
  }
  const int y = parts[0];
  const int m = parts[1];
  const int d = parts[2];
  if (m < 1 || m > 12 || d < 1) {
    return std::nullopt;
  }
  static constexpr int kDays[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
  const int max_day = (m == 2 && leap) ? 29 : kDays[m - 1];
  if (d > max_day) {
    return std::nullopt;
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
  return std::string(buf);
}

/// Grouping key for a predicted answer under a kind: the canonical form when
/// the text parses, otherwise the normalized raw text. Used by diagnostics to
/// build label distributions.
inline std::string canonical_label(std::string_view answer, const AnswerKind& kind) {
  switch (kind.tag) {
    case AnswerKindTag::integer:
      if (auto c = canonical_integer(answer)) {
        return *c;
      }
      break;
    case AnswerKindTag::date:
      if (auto c = canonical_date(answer)) {
        return *c;
      }
      break;
    default:
      break;
  }
  return normalize_text(answer);
}

/// Rule-based scalar reward in {0, 1}. Total over all inputs; any format
/// violation forces 0. Throws ConfigError only when the gold answer itself is
/// unusable for the declared kind.
inline double reward(const ParsedOutput& parsed, std::string_view gold, const AnswerKind& kind) {
  switch (kind.tag) {
    case AnswerKindTag::exact_text:
    case AnswerKindTag::categorical_label: {
      if (!parsed.format_valid) {
        return 0.0;
      }
      return normalize_text(parsed.answer) == normalize_text(gold) ? 1.0 : 0.0;
    }
    case AnswerKindTag::integer: {
      auto g = canonical_integer(gold);
      if (!g) {
        throw ConfigError("gold answer is not an integer: '" + std::string(gold) + "'");
      }
      if (!parsed.format_valid) {
        return 0.0;
      }
      auto p = canonical_integer(parsed.answer);
      return p && *p == *g ? 1.0 : 0.0;
    }
    case AnswerKindTag::decimal_with_tolerance: {
      auto g = parse_decimal(gold);
      if (!g) {
        throw ConfigError("gold answer is not a decimal: '" + std::string(gold) + "'");
      }
      if (!parsed.format_valid) {
        return 0.0;
      }
      auto p = parse_decimal(parsed.answer);
      return p && std::abs(*p - *g) <= kind.tolerance ? 1.0 : 0.0;
    }
    case AnswerKindTag::date: {
      auto g = canonical_date(gold);
      if (!g) {
        throw ConfigError("gold answer is not a date: '" + std::string(gold) + "'");
      }
      if (!parsed.format_valid) {
        return 0.0;
      }
      auto p = canonical_date(parsed.answer);
      return p && *p == *g ? 1.0 : 0.0;
    }
  }
  return 0.0;
}

inline double reward_text(std::string_view raw_output, std::string_view gold,
                          const AnswerKind& kind) {
  return reward(extract_answer(raw_output), gold, kind);
}

}  // namespace rlvr::verify
