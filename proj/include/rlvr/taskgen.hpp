#pragma once

/**
 * Synthetic verifiable-task suite with controllable knowledge coverage.
 *
 * Five families, each a desk-scale analog of one clinical task type:
 *   arith-extract   named integer facts, instruction asks for a combination
 *   lookup-convert  answer = fact * secret per-code factor
 *   rule-score      thresholded point system over facts -> low/mid/high
 *   match-3way      requirement/exclusion matching -> eligible/excluded/irrelevant
 *   event-binary    serialized event stream -> 0/1 via a planted motif pair
 *
 * Knowledge coverage is the experimental knob: every knowledge id is tagged
 * in-pretraining, sft-only, or held-out. Worked solutions appear in the
 * pretraining corpus only for in-pretraining ids; the generator guarantees
 * (and scan_firewall verifies) that no held-out or sft-only rule payload is
 * ever rendered into that corpus.
 *
 * All generation is pure given (seed, family, split, index), so suites are
 * byte-identical across runs.
 */

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rlvr/common.hpp"
#include "rlvr/rng.hpp"
#include "rlvr/verify.hpp"
#include "rlvr/vocab.hpp"

namespace rlvr::taskgen {

// ---------------------------------------------------------------------------
// Core enums and records
// ---------------------------------------------------------------------------

enum class Split { train_rlvr, train_sft, validation, test };
enum class Coverage { in_pretraining, sft_only, held_out };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train_rlvr: return "train-rlvr";
    case Split::train_sft: return "train-sft";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_name(std::string_view name) {
  if (name == "train-rlvr") return Split::train_rlvr;
  if (name == "train-sft") return Split::train_sft;
  if (name == "validation") return Split::validation;
  if (name == "test") return Split::test;
  throw DataError("unknown split: " + std::string(name));
}

inline const char* coverage_name(Coverage c) {
  switch (c) {
    case Coverage::in_pretraining: return "in-pretraining";
    case Coverage::sft_only: return "sft-only";
    case Coverage::held_out: return "held-out";
  }
  return "?";
}

inline Coverage coverage_from_name(std::string_view name) {
  if (name == "in-pretraining") return Coverage::in_pretraining;
  if (name == "sft-only") return Coverage::sft_only;
  if (name == "held-out") return Coverage::held_out;
  throw DataError("unknown coverage tag: " + std::string(name));
}

struct TaskInstance {
  std::string id;
  std::string category;     // family name
  std::string instruction;  // rendered text (tokenizable)
  std::string context;
  std::string gold;
  verify::AnswerKind kind;
  std::string knowledge_id;
  bool seen = false;
  Split split = Split::train_rlvr;
};

/// Category cell used by diagnostics and reports: family plus the seen flag.
inline std::string cell_key(const TaskInstance& inst) {
  return inst.category + (inst.seen ? "@seen" : "@unseen");
}

inline std::string prompt_text(const TaskInstance& inst) {
  return inst.instruction + inst.context;
}

// ---------------------------------------------------------------------------
// Knowledge table
// ---------------------------------------------------------------------------

constexpr const char* kFamilyArith = "arith-extract";
constexpr const char* kFamilyLookup = "lookup-convert";
constexpr const char* kFamilyRule = "rule-score";
constexpr const char* kFamilyMatch = "match-3way";
constexpr const char* kFamilyEvent = "event-binary";

struct KnowledgeEntry {
  std::string id;
  std::string family;
  Coverage coverage = Coverage::held_out;

  // arith-extract: which combination an op word denotes
  std::string op_word;
  std::string trace_word;

  // lookup-convert: secret multiplier per code
  std::string code;
  int factor = 0;

  // rule-score: threshold and label cut points on the count of facts >= threshold
  std::string rule_word;
  int threshold = 0;
  int cut_low = 0;
  int cut_high = 0;

  // event-binary: motif pair whose joint presence flips the label
  std::string motif_a;
  std::string motif_b;

  /// Token texts whose presence in a rendered corpus would teach this rule.
  std::vector<std::string> signature_substrings() const {
    if (family == kFamilyArith) {
      return {op_word, trace_word};
    }
    if (family == kFamilyLookup) {
      return {code};
    }
    if (family == kFamilyRule) {
      return {rule_word};
    }
    if (family == kFamilyEvent) {
      return {motif_a, motif_b};
    }
    return {};  // match-3way has fixed public semantics
  }
};

class KnowledgeTable {
 public:
  void add(KnowledgeEntry entry) {
    if (by_id_.count(entry.id)) {
      throw ConfigError("duplicate knowledge id: " + entry.id);
    }
    order_.push_back(entry.id);
    by_id_.emplace(entry.id, std::move(entry));
  }

  const KnowledgeEntry& at(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) {
      throw DataError("unknown knowledge_id: " + id);
    }
    return it->second;
  }

  bool contains(const std::string& id) const { return by_id_.count(id) > 0; }

  std::vector<const KnowledgeEntry*> family_ids(std::string_view family) const {
    std::vector<const KnowledgeEntry*> out;
    for (const auto& id : order_) {
      const auto& e = by_id_.at(id);
      if (e.family == family) {
        out.push_back(&e);
      }
    }
    return out;
  }

  const std::vector<std::string>& ids() const { return order_; }

  /// Ids whose worked solutions may appear in the pretraining corpus.
  std::set<std::string> pretraining_manifest() const {
    std::set<std::string> out;
    for (const auto& [id, e] : by_id_) {
      if (e.coverage == Coverage::in_pretraining) {
        out.insert(id);
      }
    }
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, KnowledgeEntry> by_id_;
};

// ---------------------------------------------------------------------------
// EHR event streams
// ---------------------------------------------------------------------------

struct EhrEventStream {
  struct Group {
    std::string timestamp;  // "YYYY-MM-DD HH:MM:SS"
    std::vector<std::string> events;
  };
  std::vector<Group> groups;
  std::string prediction_timestamp;
  int label = 0;
  int window_days = 365;
};

namespace detail {

inline bool valid_timestamp(std::string_view ts) {
  if (ts.size() != 19) {
    return false;
  }
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const char c = ts[i];
    switch (i) {
      case 4:
      case 7:
        if (c != '-') return false;
        break;
      case 10:
        if (c != ' ') return false;
        break;
      case 13:
      case 16:
        if (c != ':') return false;
        break;
      default:
        if (c < '0' || c > '9') return false;
    }
  }
  return true;
}

}  // namespace detail

inline void validate_stream(const EhrEventStream& stream) {
  const std::string* prev = nullptr;
  for (const auto& g : stream.groups) {
    if (!detail::valid_timestamp(g.timestamp)) {
      throw InputError("bad timestamp: '" + g.timestamp + "'");
    }
    if (prev && g.timestamp < *prev) {
      throw InputError("timestamps out of order at " + g.timestamp);
    }
    for (const auto& e : g.events) {
      if (e.empty() || e.find('\n') != std::string::npos || e[0] == ' ') {
        throw InputError("bad event name: '" + e + "'");
      }
    }
    prev = &g.timestamp;
  }
  if (!stream.groups.empty() && !stream.prediction_timestamp.empty()) {
    if (!detail::valid_timestamp(stream.prediction_timestamp)) {
      throw InputError("bad prediction timestamp");
    }
    if (stream.prediction_timestamp < stream.groups.back().timestamp) {
      throw InputError("prediction timestamp precedes the last event");
    }
  }
}

/// Bit-exact textual serialization: timestamp line, then each event name on
/// its own line indented by exactly three spaces.
inline std::string serialize_ehr(const EhrEventStream& stream) {
  validate_stream(stream);
  std::string out;
  for (const auto& g : stream.groups) {
    out += g.timestamp;
    out += '\n';
    for (const auto& e : g.events) {
      out += "   ";
      out += e;
      out += '\n';
    }
  }
  return out;
}

/// Strict inverse of serialize_ehr over the group structure.
inline EhrEventStream parse_ehr(std::string_view text) {
  EhrEventStream stream;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) {
      throw DataError("EHR text does not end with a newline");
    }
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.rfind("   ", 0) == 0) {
      if (stream.groups.empty()) {
        throw DataError("EHR event line before any timestamp");
      }
      stream.groups.back().events.emplace_back(line.substr(3));
    } else {
      if (!detail::valid_timestamp(line)) {
        throw DataError("bad EHR timestamp line: '" + std::string(line) + "'");
      }
      stream.groups.push_back({std::string(line), {}});
    }
  }
  validate_stream(stream);
  return stream;
}

// ---------------------------------------------------------------------------
// Suite specification
// ---------------------------------------------------------------------------

struct FamilyCounts {
  int train_rlvr = 0;
  int train_sft = 0;
  int validation = 0;
  int test = 0;
};

struct SuiteSpec {
  std::map<std::string, FamilyCounts> families;
  std::map<std::string, Coverage> coverage;  // knowledge id -> tag
  int pretrain_docs_per_knowledge = 80;      // worked episodes per in-pretraining id
  int pretrain_atom_docs = 160;              // bare arithmetic lines for in-pretraining ops
  int pretrain_filler_docs = 150;
  double event_short_trace_fraction = 0.5;   // pretraining think-style mix for events
};

/// Coverage mix used by the experiment pipeline: arithmetic mostly known,
/// lookup factors injectable only via SFT, one unseen id in arith/rule/event.
inline SuiteSpec default_suite_spec() {
  SuiteSpec spec;
  spec.families[kFamilyArith] = {240, 40, 24, 120};
  spec.families[kFamilyLookup] = {160, 20, 16, 80};
  spec.families[kFamilyRule] = {180, 30, 18, 90};
  spec.families[kFamilyMatch] = {150, 24, 15, 75};
  spec.families[kFamilyEvent] = {180, 30, 18, 90};
  spec.coverage = {
      {"arith.add", Coverage::in_pretraining},
      {"arith.sub", Coverage::in_pretraining},
      {"arith.mul", Coverage::in_pretraining},
      {"arith.mix", Coverage::held_out},
      {"lookup.K1", Coverage::sft_only},
      {"lookup.K2", Coverage::sft_only},
      {"lookup.K3", Coverage::sft_only},
      {"lookup.K4", Coverage::sft_only},
      {"rule.R1", Coverage::in_pretraining},
      {"rule.R2", Coverage::in_pretraining},
      {"rule.R3", Coverage::sft_only},
      {"match.M1", Coverage::in_pretraining},
      {"event.E1", Coverage::in_pretraining},
      {"event.E2", Coverage::in_pretraining},
      {"event.E3", Coverage::held_out},
  };
  return spec;
}

struct SftRecord {
  std::string id;
  std::string instruction;
  std::string context;
  std::string target;  // rendered output text including markers
  std::string knowledge_id;
};

struct Suite {
  std::vector<TaskInstance> instances;
  KnowledgeTable table;
  std::vector<std::string> pretrain_corpus;      // one document per line
  std::vector<SftRecord> sft_records;            // one per train-sft instance
  std::map<std::string, EhrEventStream> event_streams;  // by instance id
};

// ---------------------------------------------------------------------------
// Generation internals
// ---------------------------------------------------------------------------

namespace detail {

constexpr const char* kFactNames[] = {" alpha", " beta", " gamma", " delta", " omega", " sigma"};
constexpr int kNumFactNames = 6;
constexpr const char* kCommonEvents[] = {" ev1", " ev2", " ev3", " ev4", " ev5",
                                         " ev6", " ev7", " ev8", " ev9"};
constexpr int kNumCommonEvents = 9;

/// " 42" style rendering: first digit spaced, the rest bare.
inline std::string spaced_int(int v) {
  const std::string s = std::to_string(v);
  if (v < 0) {
    return " -" + s.substr(1);
  }
  return " " + s;
}

inline int arith_apply(const KnowledgeEntry& e, int a, int b) {
  if (e.id == "arith.add") return a + b;
  if (e.id == "arith.sub") return a - b;
  if (e.id == "arith.mul") return a * b;
  if (e.id == "arith.mix") return 2 * a + b;
  throw DataError("unknown arith id: " + e.id);
}

inline std::string score_label(const KnowledgeEntry& e, int score) {
  if (score <= e.cut_low) return "low";
  if (score <= e.cut_high) return "mid";
  return "high";
}

/// One generated episode: the public instance plus its reasoning trace and,
/// for event tasks, the backing stream.
struct Episode {
  TaskInstance inst;
  std::string trace;  // think-span text
  std::optional<EhrEventStream> stream;
};

inline void pick_distinct(rng::Stream& s, int lo, int hi, std::span<int> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    bool fresh = false;
    while (!fresh) {
      out[i] = s.uniform_int(lo, hi);
      fresh = true;
      for (std::size_t j = 0; j < i; ++j) {
        if (out[j] == out[i]) {
          fresh = false;
          break;
        }
      }
    }
  }
}

inline Episode make_arith(const KnowledgeEntry& e, rng::Stream& s) {
  int names[3];
  pick_distinct(s, 0, kNumFactNames - 1, names);
  int vals[3];
  for (int& v : vals) {
    v = s.uniform_int(0, 9);
  }
  int ops[2];
  pick_distinct(s, 0, 2, ops);
  const int a = vals[ops[0]];
  const int b = vals[ops[1]];
  Episode ep;
  ep.inst.category = kFamilyArith;
  ep.inst.knowledge_id = e.id;
  ep.inst.kind = verify::AnswerKind::integer();
  ep.inst.instruction = e.op_word + std::string(kFactNames[names[ops[0]]]) +
                        std::string(kFactNames[names[ops[1]]]);
  for (int i = 0; i < 3; ++i) {
    ep.inst.context += std::string(kFactNames[names[i]]) + spaced_int(vals[i]);
  }
  const int result = arith_apply(e, a, b);
  ep.inst.gold = std::to_string(result);
  ep.trace = std::string(kFactNames[names[ops[0]]]) + spaced_int(a) +
             std::string(kFactNames[names[ops[1]]]) + spaced_int(b) + e.trace_word +
             spaced_int(result);
  return ep;
}

inline Episode make_lookup(const KnowledgeEntry& e, rng::Stream& s, std::span<const int> val_pool) {
  const int v = val_pool[static_cast<std::size_t>(
      s.uniform_int(0, static_cast<int>(val_pool.size()) - 1))];
  Episode ep;
  ep.inst.category = kFamilyLookup;
  ep.inst.knowledge_id = e.id;
  ep.inst.kind = verify::AnswerKind::integer();
  ep.inst.instruction = " convert";
  ep.inst.context = " code" + e.code + " val" + spaced_int(v);
  const int result = v * e.factor;
  ep.inst.gold = std::to_string(result);
  ep.trace = " code" + e.code + " factor" + spaced_int(e.factor) + " mul" + spaced_int(e.factor) +
             spaced_int(v) + " prod" + spaced_int(result);
  return ep;
}

inline Episode make_rule(const KnowledgeEntry& e, rng::Stream& s, int target_label) {
  // target_label: 0 low, 1 mid, 2 high; pick a score that maps to it.
  std::vector<int> scores;
  for (int score = 0; score <= 3; ++score) {
    const std::string lbl = score_label(e, score);
    const int idx = lbl == "low" ? 0 : lbl == "mid" ? 1 : 2;
    if (idx == target_label) {
      scores.push_back(score);
    }
  }
  if (scores.empty()) {
    throw ConfigError("rule " + e.id + " cannot produce the requested label");
  }
  const int score = scores[static_cast<std::size_t>(
      s.uniform_int(0, static_cast<int>(scores.size()) - 1))];
  int names[3];
  pick_distinct(s, 0, kNumFactNames - 1, names);
  // `score` facts at or above the threshold, the rest below.
  std::vector<int> vals(3);
  std::vector<int> slots = {0, 1, 2};
  s.shuffle(slots);
  for (int i = 0; i < 3; ++i) {
    const bool high = i < score;
    vals[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])] =
        high ? s.uniform_int(e.threshold, 9) : s.uniform_int(0, e.threshold - 1);
  }
  Episode ep;
  ep.inst.category = kFamilyRule;
  ep.inst.knowledge_id = e.id;
  ep.inst.kind = verify::AnswerKind::categorical();
  ep.inst.instruction = " assess" + e.rule_word;
  for (int i = 0; i < 3; ++i) {
    ep.inst.context += std::string(kFactNames[names[i]]) + spaced_int(vals[static_cast<std::size_t>(i)]);
  }
  ep.inst.gold = score_label(e, score);
  ep.trace = " over" + spaced_int(e.threshold);
  for (int i = 0; i < 3; ++i) {
    ep.trace += vals[static_cast<std::size_t>(i)] >= e.threshold ? " yes" : " no";
  }
  ep.trace += " score" + spaced_int(score) + " " + ep.inst.gold;
  return ep;
}

inline Episode make_match(const KnowledgeEntry& e, rng::Stream& s, int target_label) {
  // 0 eligible, 1 excluded, 2 irrelevant
  int picks[3];
  pick_distinct(s, 0, kNumFactNames - 1, picks);
  const std::string req = kFactNames[picks[0]];
  const std::string ban = kFactNames[picks[1]];
  const std::string other = kFactNames[picks[2]];
  std::vector<std::string> has;
  std::string gold;
  bool req_in = false;
  bool ban_in = false;
  if (target_label == 0) {
    has = {req, other};
    gold = "eligible";
    req_in = true;
  } else if (target_label == 1) {
    has = {req, ban};
    gold = "excluded";
    req_in = true;
    ban_in = true;
  } else {
    // Requirement absent: irrelevant regardless of the banned feature.
    if (s.uniform() < 0.5) {
      has = {ban, other};
      ban_in = true;
    } else {
      int extra = s.uniform_int(0, kNumFactNames - 1);
      while (extra == picks[0] || extra == picks[1] || extra == picks[2]) {
        extra = s.uniform_int(0, kNumFactNames - 1);
      }
      has = {other, kFactNames[extra]};
    }
    gold = "irrelevant";
  }
  s.shuffle(has);
  Episode ep;
  ep.inst.category = kFamilyMatch;
  ep.inst.knowledge_id = e.id;
  ep.inst.kind = verify::AnswerKind::categorical();
  ep.inst.instruction = " match";
  ep.inst.context = " req" + req + " ban" + ban + " has" + has[0] + has[1];
  ep.inst.gold = gold;
  ep.trace = " req" + req + (req_in ? " yes" : " no") + " ban" + ban +
             (ban_in ? " yes" : " no") + " so " + gold;
  return ep;
}

// Civil-date helpers for event timestamps (days since 2024-01-01).
inline std::string format_timestamp(int day_serial, int hour, int minute, int second) {
  // days_from_civil(2024-01-01) via the standard civil calendar algorithm.
  long days = day_serial + 738885;  // days since 0000-03-01 era for 2024-01-01
  const long era = (days >= 0 ? days : days - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(days - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long y = static_cast<long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%04ld-%02u-%02u %02d:%02d:%02d", y + (m <= 2), m, d, hour,
                minute, second);
  return buf;
}

inline Episode make_event(const KnowledgeEntry& e, rng::Stream& s, int target_label) {
  // Fillers never include motif tokens.
  const int n_groups = s.uniform_int(2, 3);
  std::vector<std::vector<std::string>> groups(static_cast<std::size_t>(n_groups));
  int total = 0;
  for (auto& g : groups) {
    const int n = s.uniform_int(1, 2);
    for (int i = 0; i < n && total < 5; ++i) {
      g.push_back(std::string(kCommonEvents[s.uniform_int(0, kNumCommonEvents - 1)]).substr(1));
      ++total;
    }
    if (g.empty()) {
      g.push_back(std::string(kCommonEvents[s.uniform_int(0, kNumCommonEvents - 1)]).substr(1));
    }
  }
  const std::string motif_a = e.motif_a.substr(1);
  const std::string motif_b = e.motif_b.substr(1);
  bool place_a = false;
  bool place_b = false;
  if (target_label == 1) {
    place_a = place_b = true;
  } else {
    switch (s.uniform_int(0, 2)) {
      case 0: break;                 // neither motif
      case 1: place_a = true; break; // only a
      default: place_b = true; break;
    }
  }
  auto insert_at = [&](const std::string& name) {
    auto& g = groups[static_cast<std::size_t>(s.uniform_int(0, n_groups - 1))];
    g.insert(g.begin() + s.uniform_int(0, static_cast<int>(g.size())), name);
  };
  if (place_a) {
    insert_at(motif_a);
  }
  if (place_b) {
    insert_at(motif_b);
  }

  EhrEventStream stream;
  int day = s.uniform_int(0, 200);
  for (auto& g : groups) {
    stream.groups.push_back(
        {format_timestamp(day, s.uniform_int(6, 20), s.uniform_int(0, 59), 0), std::move(g)});
    day += s.uniform_int(1, 20);
  }
  stream.prediction_timestamp = format_timestamp(day, 23, 59, 0);
  stream.label = target_label;

  Episode ep;
  ep.inst.category = kFamilyEvent;
  ep.inst.knowledge_id = e.id;
  ep.inst.kind = verify::AnswerKind::categorical();
  ep.inst.instruction = " predict";
  ep.inst.context = " events";
  for (const auto& g : stream.groups) {
    for (const auto& ev : g.events) {
      ep.inst.context += " " + ev;
    }
  }
  ep.inst.gold = std::to_string(target_label);
  ep.trace = e.motif_a + (place_a ? " yes" : " no") + e.motif_b + (place_b ? " yes" : " no") +
             " so" + spaced_int(target_label);
  ep.stream = std::move(stream);
  return ep;
}

inline std::string answer_value_text(const TaskInstance& inst) {
  // Integer golds render as bare digits; label golds need the leading space
  // of their word token.
  if (inst.kind.tag == verify::AnswerKindTag::integer ||
      (!inst.gold.empty() && (inst.gold[0] == '-' || (inst.gold[0] >= '0' && inst.gold[0] <= '9')))) {
    return inst.gold;
  }
  return " " + inst.gold;
}

inline std::string render_response(const TaskInstance& inst, const std::string& trace) {
  return "<think>" + trace + "</think><answer>{\"answer\":\"" + answer_value_text(inst) +
         "\"}</answer>";
}

inline std::string render_document(const Episode& ep) {
  return prompt_text(ep.inst) + render_response(ep.inst, ep.trace);
}

}  // namespace detail

/// Rendered SFT/pretraining target for an instance with its trace.
inline std::string render_target(const TaskInstance& inst, const std::string& trace) {
  return detail::render_response(inst, trace);
}

// ---------------------------------------------------------------------------
// Suite generation
// ---------------------------------------------------------------------------

inline KnowledgeTable build_knowledge_table(const SuiteSpec& spec, std::uint64_t seed) {
  KnowledgeTable table;
  rng::Stream s(rng::mix(seed, rng::tag::kSuite, 0xF1));
  // Factors drawn once per table; payloads are part of the suite identity.
  std::vector<int> factors = {2, 3, 4, 5, 6, 7, 8, 9};
  s.shuffle(factors);
  std::size_t next_factor = 0;
  const std::pair<int, int> rule_cuts[] = {{0, 1}, {0, 2}, {1, 2}};
  int rule_index = 0;

  for (const auto& [id, coverage] : spec.coverage) {
    KnowledgeEntry e;
    e.id = id;
    e.coverage = coverage;
    if (id.rfind("arith.", 0) == 0) {
      e.family = kFamilyArith;
      const std::string op = id.substr(6);
      e.op_word = " " + op;
      e.trace_word = op == "add"   ? " sum"
                     : op == "sub" ? " diff"
                     : op == "mul" ? " prod"
                                   : " mix";
    } else if (id.rfind("lookup.", 0) == 0) {
      e.family = kFamilyLookup;
      e.code = " " + id.substr(7);
      e.factor = factors[next_factor++ % factors.size()];
    } else if (id.rfind("rule.", 0) == 0) {
      e.family = kFamilyRule;
      e.rule_word = " " + id.substr(5);
      e.threshold = s.uniform_int(3, 6);
      const auto [lo, hi] = rule_cuts[rule_index++ % 3];
      e.cut_low = lo;
      e.cut_high = hi;
    } else if (id.rfind("match.", 0) == 0) {
      e.family = kFamilyMatch;
    } else if (id.rfind("event.", 0) == 0) {
      e.family = kFamilyEvent;
      const std::string n = id.substr(6);  // E1 -> m1a/m1b
      const std::string digit = n.substr(1);
      e.motif_a = " m" + digit + "a";
      e.motif_b = " m" + digit + "b";
    } else {
      throw ConfigError("unrecognized knowledge id: " + id);
    }
    table.add(std::move(e));
  }
  return table;
}

inline Suite generate_suite(const SuiteSpec& spec, std::uint64_t seed) {
  // Preconditions on the coverage mix.
  bool any_pre = false;
  bool any_held = false;
  for (const auto& [id, c] : spec.coverage) {
    any_pre = any_pre || c == Coverage::in_pretraining;
    any_held = any_held || c == Coverage::held_out;
  }
  if (!any_pre || !any_held) {
    throw ConfigError("coverage mix needs at least one in-pretraining and one held-out id");
  }

  Suite suite;
  suite.table = build_knowledge_table(spec, seed);

  // Per-code value pools for lookup: test values are disjoint from training
  // values so memorized (code, value) pairs cannot transfer.
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> lookup_pools;
  for (const auto* e : suite.table.family_ids(kFamilyLookup)) {
    std::vector<int> vals = {2, 3, 4, 5, 6, 7, 8, 9};
    rng::Stream s(rng::mix(seed, rng::tag::kSuite, 0xB0, std::hash<std::string>{}(e->id)));
    s.shuffle(vals);
    lookup_pools[e->id] = {std::vector<int>(vals.begin(), vals.begin() + 5),
                           std::vector<int>(vals.begin() + 5, vals.end())};
  }

  const Split splits[] = {Split::train_rlvr, Split::train_sft, Split::validation, Split::test};
  for (const auto& [family, counts] : spec.families) {
    const auto ids = suite.table.family_ids(family);
    if (ids.empty() && (counts.train_rlvr || counts.train_sft || counts.validation || counts.test)) {
      throw ConfigError("family " + family + " has instances requested but no knowledge ids");
    }
    std::vector<const KnowledgeEntry*> sft_ids;
    for (const auto* e : ids) {
      if (e->coverage != Coverage::held_out) {
        sft_ids.push_back(e);
      }
    }
    for (Split split : splits) {
      const int count = split == Split::train_rlvr    ? counts.train_rlvr
                        : split == Split::train_sft   ? counts.train_sft
                        : split == Split::validation  ? counts.validation
                                                      : counts.test;
      if (count > 0 && split == Split::train_sft && sft_ids.empty()) {
        throw ConfigError("family " + family + " requests SFT demos but every id is held out");
      }
      for (int i = 0; i < count; ++i) {
        rng::Stream s(rng::mix(seed, rng::tag::kSuite, std::hash<std::string>{}(family),
                               static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(i)));
        const auto& pool = split == Split::train_sft ? sft_ids : ids;
        const KnowledgeEntry& e =
            *pool[static_cast<std::size_t>(s.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        detail::Episode ep;
        if (family == kFamilyArith) {
          ep = detail::make_arith(e, s);
        } else if (family == kFamilyLookup) {
          const auto& pools = lookup_pools.at(e.id);
          ep = detail::make_lookup(e, s, split == Split::test ? pools.second : pools.first);
        } else if (family == kFamilyRule) {
          ep = detail::make_rule(e, s, i % 3);
        } else if (family == kFamilyMatch) {
          ep = detail::make_match(e, s, i % 3);
        } else if (family == kFamilyEvent) {
          ep = detail::make_event(e, s, i % 2);
        } else {
          throw ConfigError("unknown family: " + family);
        }
        char idbuf[64];
        std::snprintf(idbuf, sizeof(idbuf), "%s-%s-%04d", family.c_str(), split_name(split), i);
        ep.inst.id = idbuf;
        ep.inst.split = split;
        ep.inst.seen = e.coverage == Coverage::in_pretraining;
        if (split == Split::train_sft) {
          suite.sft_records.push_back({ep.inst.id, ep.inst.instruction, ep.inst.context,
                                       render_target(ep.inst, ep.trace), ep.inst.knowledge_id});
        }
        if (ep.stream) {
          suite.event_streams.emplace(ep.inst.id, std::move(*ep.stream));
        }
        suite.instances.push_back(std::move(ep.inst));
      }
    }
  }

  // Pretraining corpus: worked episodes for in-pretraining ids only, plus
  // arithmetic atom lines, payload statements, and filler.
  std::vector<std::string> corpus;
  for (const auto& id : suite.table.ids()) {
    const auto& e = suite.table.at(id);
    if (e.coverage != Coverage::in_pretraining) {
      continue;
    }
    for (int i = 0; i < spec.pretrain_docs_per_knowledge; ++i) {
      rng::Stream s(rng::mix(seed, rng::tag::kSuite, 0xD0, std::hash<std::string>{}(id),
                             static_cast<std::uint64_t>(i)));
      detail::Episode ep;
      if (e.family == kFamilyArith) {
        ep = detail::make_arith(e, s);
      } else if (e.family == kFamilyLookup) {
        const auto& pools = lookup_pools.at(e.id);
        ep = detail::make_lookup(e, s, pools.first);
      } else if (e.family == kFamilyRule) {
        ep = detail::make_rule(e, s, i % 3);
      } else if (e.family == kFamilyMatch) {
        ep = detail::make_match(e, s, i % 3);
      } else {
        ep = detail::make_event(e, s, i % 2);
        if (s.uniform() < spec.event_short_trace_fraction) {
          ep.trace = " so" + detail::spaced_int(ep.inst.gold == "1" ? 1 : 0);
        }
      }
      corpus.push_back(detail::render_document(ep));
    }
    // Payload statement lines (a toy textbook).
    rng::Stream s(rng::mix(seed, rng::tag::kSuite, 0xD1, std::hash<std::string>{}(id)));
    if (e.family == kFamilyLookup) {
      for (int i = 0; i < 15; ++i) {
        corpus.push_back(" code" + e.code + " factor" + detail::spaced_int(e.factor));
      }
    } else if (e.family == kFamilyRule) {
      for (int i = 0; i < 15; ++i) {
        corpus.push_back(" assess" + e.rule_word + " over" + detail::spaced_int(e.threshold));
      }
    }
  }
  // Arithmetic atoms for in-pretraining ops ("mul 4 5 prod 20" style).
  {
    std::vector<const KnowledgeEntry*> pre_ops;
    for (const auto* e : suite.table.family_ids(kFamilyArith)) {
      if (e->coverage == Coverage::in_pretraining) {
        pre_ops.push_back(e);
      }
    }
    rng::Stream s(rng::mix(seed, rng::tag::kSuite, 0xA7));
    for (int i = 0; i < spec.pretrain_atom_docs && !pre_ops.empty(); ++i) {
      const auto& e = *pre_ops[static_cast<std::size_t>(i) % pre_ops.size()];
      const int a = s.uniform_int(0, 9);
      const int b = s.uniform_int(0, 9);
      corpus.push_back(e.op_word + detail::spaced_int(a) + detail::spaced_int(b) + e.trace_word +
                       detail::spaced_int(detail::arith_apply(e, a, b)));
    }
  }
  // Filler prose.
  {
    rng::Stream s(rng::mix(seed, rng::tag::kSuite, 0xFE));
    for (int i = 0; i < spec.pretrain_filler_docs; ++i) {
      std::string doc = " note day" + detail::spaced_int(s.uniform_int(1, 9));
      const int items = s.uniform_int(1, 3);
      for (int j = 0; j < items; ++j) {
        doc += " item";
        doc += detail::kFactNames[s.uniform_int(0, detail::kNumFactNames - 1)];
        doc += detail::spaced_int(s.uniform_int(0, 9));
      }
      corpus.push_back(doc);
    }
  }
  rng::Stream shuffle_stream(rng::mix(seed, rng::tag::kSuite, 0x5F));
  shuffle_stream.shuffle(corpus);
  suite.pretrain_corpus = std::move(corpus);
  return suite;
}

// ---------------------------------------------------------------------------
// Firewall, seen annotation, balancing
// ---------------------------------------------------------------------------

/// Substring scan for held-out / sft-only payload signatures over a rendered
/// corpus. Returns one message per violation; empty means the firewall holds.
inline std::vector<std::string> scan_firewall(std::span<const std::string> corpus,
                                              const KnowledgeTable& table) {
  std::vector<std::string> violations;
  for (const auto& id : table.ids()) {
    const auto& e = table.at(id);
    if (e.coverage == Coverage::in_pretraining) {
      continue;
    }
    for (const auto& sig : e.signature_substrings()) {
      for (std::size_t line = 0; line < corpus.size(); ++line) {
        if (corpus[line].find(sig) != std::string::npos) {
          violations.push_back("knowledge " + id + " signature '" + sig + "' leaked at corpus line " +
                               std::to_string(line));
          break;
        }
      }
    }
  }
  return violations;
}

/// seen := knowledge id is in the pretraining manifest.
inline void annotate_seen(std::span<TaskInstance> instances,
                          const std::set<std::string>& manifest,
                          const KnowledgeTable& table) {
  for (auto& inst : instances) {
    if (!table.contains(inst.knowledge_id)) {
      throw DataError("instance " + inst.id + " references unknown knowledge_id " +
                      inst.knowledge_id);
    }
    inst.seen = manifest.count(inst.knowledge_id) > 0;
  }
}

struct SplitRatios {
  double train_rlvr = 0.7;
  double train_sft = 0.1;
  double test = 0.2;
  int validation_per_category = 14;
};

/// Downsamples majority classes to the minority count within each category
/// (categorical kinds only), draws an equal-size validation set per category,
/// then splits the remainder by ratio. Deterministic per seed.
inline std::map<std::string, Split> balance_and_split(std::span<const TaskInstance> instances,
                                                      const SplitRatios& ratios,
                                                      std::uint64_t seed) {
  std::map<std::string, std::vector<const TaskInstance*>> by_category;
  for (const auto& inst : instances) {
    by_category[inst.category].push_back(&inst);
  }
  std::map<std::string, Split> assignment;
  for (auto& [category, members] : by_category) {
    rng::Stream s(rng::mix(seed, rng::tag::kSuite, 0xBA, std::hash<std::string>{}(category)));
    std::vector<const TaskInstance*> retained;
    const bool categorical =
        !members.empty() && members.front()->kind.tag == verify::AnswerKindTag::categorical_label;
    if (categorical) {
      std::map<std::string, std::vector<const TaskInstance*>> by_class;
      for (const auto* m : members) {
        by_class[m->gold].push_back(m);
      }
      std::size_t minority = members.size();
      for (const auto& [label, xs] : by_class) {
        minority = std::min(minority, xs.size());
      }
      for (auto& [label, xs] : by_class) {
        std::vector<const TaskInstance*> copy(xs);
        s.shuffle(copy);
        copy.resize(minority);
        retained.insert(retained.end(), copy.begin(), copy.end());
      }
      std::sort(retained.begin(), retained.end(),
                [](const TaskInstance* a, const TaskInstance* b) { return a->id < b->id; });
    } else {
      retained.assign(members.begin(), members.end());
    }
    s.shuffle(retained);
    if (static_cast<int>(retained.size()) < ratios.validation_per_category) {
      throw ConfigError("category " + category + " has " + std::to_string(retained.size()) +
                        " balanced instances, fewer than the validation quota");
    }
    std::size_t idx = 0;
    for (; idx < static_cast<std::size_t>(ratios.validation_per_category); ++idx) {
      assignment[retained[idx]->id] = Split::validation;
    }
    const std::size_t remaining = retained.size() - idx;
    const double total = ratios.train_rlvr + ratios.train_sft + ratios.test;
    const std::size_t n_rlvr =
        static_cast<std::size_t>(static_cast<double>(remaining) * ratios.train_rlvr / total);
    const std::size_t n_sft =
        static_cast<std::size_t>(static_cast<double>(remaining) * ratios.train_sft / total);
    for (std::size_t j = 0; j < remaining; ++j, ++idx) {
      assignment[retained[idx]->id] =
          j < n_rlvr ? Split::train_rlvr : j < n_rlvr + n_sft ? Split::train_sft : Split::test;
    }
  }
  return assignment;
}

// ---------------------------------------------------------------------------
// External ingestion and artifact IO
// ---------------------------------------------------------------------------

enum class ExternalSchema { medcalc_like, matching_like, ehr_like };

struct RowError {
  int line = 0;
  std::string message;
};

struct IngestReport {
  std::vector<TaskInstance> instances;
  std::vector<RowError> errors;
};

constexpr const char* kMatchingSeparator = "\n###\n";

inline IngestReport ingest_external(const std::filesystem::path& path, ExternalSchema schema,
                                    int error_budget = 10) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open external file: " + path.string());
  }
  IngestReport report;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      const auto row = nlohmann::json::parse(line);
      auto need = [&](const char* field) -> std::string {
        if (!row.contains(field)) {
          throw DataError(std::string("missing required field '") + field + "'");
        }
        const auto& v = row.at(field);
        return v.is_string() ? v.get<std::string>() : v.dump();
      };
      TaskInstance inst;
      inst.id = row.value("id", "row-" + std::to_string(line_no));
      switch (schema) {
        case ExternalSchema::medcalc_like:
          inst.category = row.value("category", "medcalc");
          inst.instruction = need("question");
          inst.context = need("note");
          inst.gold = need("ground_truth");
          inst.kind = verify::AnswerKind::exact_text();
          break;
        case ExternalSchema::matching_like:
          inst.category = "matching";
          inst.instruction = "match patient to trial";
          inst.context = need("patient") + kMatchingSeparator + need("trial");
          inst.gold = need("label");
          inst.kind = verify::AnswerKind::categorical();
          break;
        case ExternalSchema::ehr_like:
          inst.category = "ehr";
          inst.instruction = "predict the outcome";
          inst.context = need("events");
          inst.gold = need("label");
          inst.kind = verify::AnswerKind::categorical();
          parse_ehr(inst.context);  // must be a valid serialized stream
          break;
      }
      inst.knowledge_id = row.value("knowledge_id", std::string());
      inst.split = split_from_name(row.value("split", "test"));
      report.instances.push_back(std::move(inst));
    } catch (const std::exception& e) {
      report.errors.push_back({line_no, e.what()});
      if (static_cast<int>(report.errors.size()) > error_budget) {
        throw DataError("error budget exhausted at line " + std::to_string(line_no) + ": " +
                        e.what());
      }
    }
  }
  return report;
}

inline void export_external(std::span<const TaskInstance> instances, ExternalSchema schema,
                            const std::filesystem::path& path) {
  std::string out;
  for (const auto& inst : instances) {
    nlohmann::json row;
    row["id"] = inst.id;
    row["split"] = split_name(inst.split);
    if (!inst.knowledge_id.empty()) {
      row["knowledge_id"] = inst.knowledge_id;
    }
    switch (schema) {
      case ExternalSchema::medcalc_like:
        row["category"] = inst.category;
        row["question"] = inst.instruction;
        row["note"] = inst.context;
        row["ground_truth"] = inst.gold;
        break;
      case ExternalSchema::matching_like: {
        const std::size_t sep = inst.context.find(kMatchingSeparator);
        if (sep == std::string::npos) {
          throw InputError("instance " + inst.id + " has no patient/trial separator");
        }
        row["patient"] = inst.context.substr(0, sep);
        row["trial"] = inst.context.substr(sep + std::string(kMatchingSeparator).size());
        row["label"] = inst.gold;
        break;
      }
      case ExternalSchema::ehr_like:
        row["events"] = inst.context;
        row["label"] = inst.gold;
        break;
    }
    out += row.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

// Task JSONL, SFT JSONL, corpus and manifest round-trips.

inline nlohmann::json kind_to_json(const verify::AnswerKind& kind) {
  switch (kind.tag) {
    case verify::AnswerKindTag::exact_text: return "exact-text";
    case verify::AnswerKindTag::integer: return "integer";
    case verify::AnswerKindTag::decimal_with_tolerance:
      return nlohmann::json{{"decimal", kind.tolerance}};
    case verify::AnswerKindTag::date: return "date";
    case verify::AnswerKindTag::categorical_label: return "categorical-label";
  }
  return "exact-text";
}

inline verify::AnswerKind kind_from_json(const nlohmann::json& j) {
  if (j.is_object()) {
    return verify::AnswerKind::decimal(j.at("decimal").get<double>());
  }
  const std::string s = j.get<std::string>();
  if (s == "exact-text") return verify::AnswerKind::exact_text();
  if (s == "integer") return verify::AnswerKind::integer();
  if (s == "date") return verify::AnswerKind::date();
  if (s == "categorical-label") return verify::AnswerKind::categorical();
  throw DataError("unknown answer kind: " + s);
}

inline void write_tasks_jsonl(std::span<const TaskInstance> instances,
                              const std::filesystem::path& path) {
  std::string out;
  for (const auto& inst : instances) {
    nlohmann::json row{{"id", inst.id},
                       {"category", inst.category},
                       {"instruction", inst.instruction},
                       {"context", inst.context},
                       {"gold", inst.gold},
                       {"answer_kind", kind_to_json(inst.kind)},
                       {"knowledge_id", inst.knowledge_id},
                       {"seen", inst.seen},
                       {"split", split_name(inst.split)}};
    out += row.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

inline std::vector<TaskInstance> read_tasks_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open tasks file: " + path.string());
  }
  std::vector<TaskInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      const auto row = nlohmann::json::parse(line);
      TaskInstance inst;
      inst.id = row.at("id").get<std::string>();
      inst.category = row.at("category").get<std::string>();
      inst.instruction = row.at("instruction").get<std::string>();
      inst.context = row.at("context").get<std::string>();
      inst.gold = row.at("gold").get<std::string>();
      inst.kind = kind_from_json(row.at("answer_kind"));
      inst.knowledge_id = row.at("knowledge_id").get<std::string>();
      inst.seen = row.at("seen").get<bool>();
      inst.split = split_from_name(row.at("split").get<std::string>());
      out.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bad task row at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void write_sft_jsonl(std::span<const SftRecord> records,
                            const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json row{{"id", r.id},
                       {"instruction", r.instruction},
                       {"context", r.context},
                       {"target", r.target},
                       {"knowledge_id", r.knowledge_id}};
    out += row.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

inline std::vector<SftRecord> read_sft_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open SFT file: " + path.string());
  }
  std::vector<SftRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto row = nlohmann::json::parse(line);
    out.push_back({row.at("id").get<std::string>(), row.at("instruction").get<std::string>(),
                   row.at("context").get<std::string>(), row.at("target").get<std::string>(),
                   row.at("knowledge_id").get<std::string>()});
  }
  return out;
}

inline nlohmann::json manifest_to_json(const KnowledgeTable& table, std::uint64_t seed) {
  nlohmann::json coverage = nlohmann::json::object();
  nlohmann::json payloads = nlohmann::json::object();
  for (const auto& id : table.ids()) {
    const auto& e = table.at(id);
    coverage[id] = coverage_name(e.coverage);
    nlohmann::json p{{"family", e.family}};
    if (e.family == kFamilyArith) {
      p["op_word"] = e.op_word;
      p["trace_word"] = e.trace_word;
    } else if (e.family == kFamilyLookup) {
      p["code"] = e.code;
      p["factor"] = e.factor;
    } else if (e.family == kFamilyRule) {
      p["rule_word"] = e.rule_word;
      p["threshold"] = e.threshold;
      p["cut_low"] = e.cut_low;
      p["cut_high"] = e.cut_high;
    } else if (e.family == kFamilyEvent) {
      p["motif_a"] = e.motif_a;
      p["motif_b"] = e.motif_b;
    }
    payloads[id] = p;
  }
  return nlohmann::json{{"seed", seed}, {"coverage", coverage}, {"payloads", payloads}};
}

inline KnowledgeTable manifest_from_json(const nlohmann::json& j) {
  KnowledgeTable table;
  const auto& coverage = j.at("coverage");
  const auto& payloads = j.at("payloads");
  for (auto it = coverage.begin(); it != coverage.end(); ++it) {
    KnowledgeEntry e;
    e.id = it.key();
    e.coverage = coverage_from_name(it.value().get<std::string>());
    const auto& p = payloads.at(e.id);
    e.family = p.at("family").get<std::string>();
    if (e.family == kFamilyArith) {
      e.op_word = p.at("op_word").get<std::string>();
      e.trace_word = p.at("trace_word").get<std::string>();
    } else if (e.family == kFamilyLookup) {
      e.code = p.at("code").get<std::string>();
      e.factor = p.at("factor").get<int>();
    } else if (e.family == kFamilyRule) {
      e.rule_word = p.at("rule_word").get<std::string>();
      e.threshold = p.at("threshold").get<int>();
      e.cut_low = p.at("cut_low").get<int>();
      e.cut_high = p.at("cut_high").get<int>();
    } else if (e.family == kFamilyEvent) {
      e.motif_a = p.at("motif_a").get<std::string>();
      e.motif_b = p.at("motif_b").get<std::string>();
    }
    table.add(std::move(e));
  }
  return table;
}

}  // namespace rlvr::taskgen
