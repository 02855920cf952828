#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rlvr/taskgen.hpp"

using namespace rlvr;
using namespace rlvr::taskgen;

namespace {

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    out.push_back(w);
  }
  return out;
}

// Independent rule interpreter: recomputes every gold from the rendered
// instruction/context text plus the knowledge table, sharing no code with the
// generator's episode builders.
std::string reinterpret_gold(const TaskInstance& inst, const KnowledgeTable& table) {
  const auto& e = table.at(inst.knowledge_id);
  const auto iw = words(inst.instruction);
  const auto cw = words(inst.context);
  if (inst.category == kFamilyArith) {
    std::map<std::string, int> facts;
    for (std::size_t i = 0; i + 1 < cw.size(); i += 2) {
      facts[cw[i]] = std::stoi(cw[i + 1]);
    }
    const int a = facts.at(iw[1]);
    const int b = facts.at(iw[2]);
    const std::string op = iw[0];
    int r = 0;
    if (op == "add") {
      r = a + b;
    } else if (op == "sub") {
      r = a - b;
    } else if (op == "mul") {
      r = a * b;
    } else if (op == "mix") {
      r = 2 * a + b;
    } else {
      FAIL("unknown op " + op);
    }
    return std::to_string(r);
  }
  if (inst.category == kFamilyLookup) {
    REQUIRE(cw[0] == "code");
    REQUIRE(cw[2] == "val");
    REQUIRE(("  " + cw[1]).substr(1) == e.code);  // same code word
    return std::to_string(std::stoi(cw[3]) * e.factor);
  }
  if (inst.category == kFamilyRule) {
    int score = 0;
    for (std::size_t i = 0; i + 1 < cw.size(); i += 2) {
      if (std::stoi(cw[i + 1]) >= e.threshold) {
        ++score;
      }
    }
    if (score <= e.cut_low) return "low";
    if (score <= e.cut_high) return "mid";
    return "high";
  }
  if (inst.category == kFamilyMatch) {
    REQUIRE(cw[0] == "req");
    REQUIRE(cw[2] == "ban");
    REQUIRE(cw[4] == "has");
    const std::string req = cw[1];
    const std::string ban = cw[3];
    const bool req_in = cw[5] == req || cw[6] == req;
    const bool ban_in = cw[5] == ban || cw[6] == ban;
    if (!req_in) return "irrelevant";
    return ban_in ? "excluded" : "eligible";
  }
  if (inst.category == kFamilyEvent) {
    const std::string a = e.motif_a.substr(1);
    const std::string b = e.motif_b.substr(1);
    bool has_a = false;
    bool has_b = false;
    for (std::size_t i = 1; i < cw.size(); ++i) {
      has_a = has_a || cw[i] == a;
      has_b = has_b || cw[i] == b;
    }
    return has_a && has_b ? "1" : "0";
  }
  FAIL("unknown category " + inst.category);
  return "";
}

SuiteSpec small_spec() {
  SuiteSpec spec = default_suite_spec();
  for (auto& [family, counts] : spec.families) {
    counts = {20, 6, 6, 10};
  }
  spec.pretrain_docs_per_knowledge = 10;
  spec.pretrain_atom_docs = 20;
  spec.pretrain_filler_docs = 15;
  return spec;
}

}  // namespace

TEST_CASE("suite generation is byte-identical for a fixed seed") {
  const auto spec = small_spec();
  const auto a = generate_suite(spec, 7);
  const auto b = generate_suite(spec, 7);
  const auto tmp = std::filesystem::temp_directory_path();
  write_tasks_jsonl(a.instances, tmp / "suite_a.jsonl");
  write_tasks_jsonl(b.instances, tmp / "suite_b.jsonl");
  CHECK(read_text_file(tmp / "suite_a.jsonl") == read_text_file(tmp / "suite_b.jsonl"));
  CHECK(a.pretrain_corpus == b.pretrain_corpus);
  std::filesystem::remove(tmp / "suite_a.jsonl");
  std::filesystem::remove(tmp / "suite_b.jsonl");

  const auto c = generate_suite(spec, 8);
  CHECK(a.pretrain_corpus != c.pretrain_corpus);
}

TEST_CASE("planted lookup rule forces the gold answer") {
  KnowledgeEntry e;
  e.id = "lookup.K3";
  e.family = kFamilyLookup;
  e.code = " K3";
  e.factor = 4;
  rng::Stream s(1);
  const std::vector<int> pool = {5};
  const auto ep = taskgen::detail::make_lookup(e, s, pool);
  CHECK(ep.inst.gold == "20");
  CHECK(ep.inst.context == " code K3 val 5");
}

TEST_CASE("every generated gold agrees with an independent rule interpreter", "[oracle]") {
  const auto suite = generate_suite(small_spec(), 42);
  REQUIRE_FALSE(suite.instances.empty());
  for (const auto& inst : suite.instances) {
    CHECK(reinterpret_gold(inst, suite.table) == inst.gold);
  }
}

TEST_CASE("every generated instance verifies against its own gold") {
  const auto suite = generate_suite(small_spec(), 43);
  for (const auto& inst : suite.instances) {
    const std::string response = "<think> t</think><answer>{\"answer\":\"" +
                                 taskgen::detail::answer_value_text(inst) + "\"}</answer>";
    CHECK(verify::reward_text(response, inst.gold, inst.kind) == 1.0);
  }
}

TEST_CASE("SFT targets are format-valid and verify with reward 1") {
  const auto suite = generate_suite(small_spec(), 44);
  std::map<std::string, const TaskInstance*> by_id;
  for (const auto& inst : suite.instances) {
    by_id[inst.id] = &inst;
  }
  REQUIRE_FALSE(suite.sft_records.empty());
  for (const auto& rec : suite.sft_records) {
    const auto parsed = verify::extract_answer(rec.target);
    REQUIRE(parsed.format_valid);
    const auto* inst = by_id.at(rec.id);
    CHECK(verify::reward(parsed, inst->gold, inst->kind) == 1.0);
  }
}

TEST_CASE("prompts and corpus lines tokenize under the desk vocabulary") {
  const auto suite = generate_suite(small_spec(), 45);
  const auto vocab = Vocabulary::desk_default();
  std::size_t max_prompt = 0;
  for (const auto& inst : suite.instances) {
    const auto ids = vocab.encode(prompt_text(inst));
    CHECK(vocab.decode(ids) == prompt_text(inst));
    max_prompt = std::max(max_prompt, ids.size() + 1);  // +1 for <bos>
  }
  CHECK(max_prompt <= 14);
  for (const auto& line : suite.pretrain_corpus) {
    const auto ids = vocab.encode(line);
    CHECK(vocab.decode(ids) == line);
  }
  for (const auto& rec : suite.sft_records) {
    CHECK_NOTHROW(vocab.encode(rec.target));
  }
}

TEST_CASE("knowledge firewall: no held-out payload appears in the pretraining corpus") {
  const auto suite = generate_suite(small_spec(), 46);
  const auto violations = scan_firewall(suite.pretrain_corpus, suite.table);
  for (const auto& v : violations) {
    FAIL_CHECK(v);
  }
  CHECK(violations.empty());

  // A planted leak is detected.
  auto corpus = suite.pretrain_corpus;
  corpus.push_back(" mix alpha beta");  // arith.mix is held out by default
  CHECK_FALSE(scan_firewall(corpus, suite.table).empty());
}

TEST_CASE("split hygiene: ids disjoint, seen flags constant per knowledge id") {
  const auto suite = generate_suite(small_spec(), 47);
  std::set<std::string> ids;
  std::map<std::string, bool> seen_by_knowledge;
  for (const auto& inst : suite.instances) {
    CHECK(ids.insert(inst.id).second);
    auto [it, fresh] = seen_by_knowledge.emplace(inst.knowledge_id, inst.seen);
    if (!fresh) {
      CHECK(it->second == inst.seen);
    }
  }
}

TEST_CASE("lookup test values are disjoint from training values per code") {
  const auto suite = generate_suite(small_spec(), 48);
  std::map<std::string, std::set<std::string>> train_vals;
  std::map<std::string, std::set<std::string>> test_vals;
  for (const auto& inst : suite.instances) {
    if (inst.category != kFamilyLookup) {
      continue;
    }
    const auto cw = words(inst.context);
    auto& dst = inst.split == Split::test ? test_vals : train_vals;
    dst[inst.knowledge_id].insert(cw[3]);
  }
  for (const auto& [id, tests] : test_vals) {
    for (const auto& v : tests) {
      CHECK(train_vals[id].count(v) == 0);
    }
  }
}

TEST_CASE("seen annotation follows the pretraining manifest") {
  auto suite = generate_suite(small_spec(), 49);
  const auto manifest = suite.table.pretraining_manifest();
  // Scramble the flags, then re-annotate.
  for (auto& inst : suite.instances) {
    inst.seen = !inst.seen;
  }
  annotate_seen(suite.instances, manifest, suite.table);
  for (const auto& inst : suite.instances) {
    CHECK(inst.seen == (manifest.count(inst.knowledge_id) > 0));
  }
  std::vector<TaskInstance> bad = {suite.instances.front()};
  bad[0].knowledge_id = "no-such-id";
  CHECK_THROWS_AS(annotate_seen(bad, manifest, suite.table), DataError);
}

TEST_CASE("EHR serialization matches the reference fixture byte for byte") {
  EhrEventStream stream;
  stream.groups.push_back({"2020-03-15 19:55:00",
                           {"Chest pain", "Metoprolol", "Electrocardiogram ordered"}});
  stream.groups.push_back({"2020-03-16 08:20:00",
                           {"Echocardiogram performed", "Beta blocker therapy continued"}});
  stream.prediction_timestamp = "2020-03-17 23:59:00";
  const std::string expected =
      "2020-03-15 19:55:00\n"
      "   Chest pain\n"
      "   Metoprolol\n"
      "   Electrocardiogram ordered\n"
      "2020-03-16 08:20:00\n"
      "   Echocardiogram performed\n"
      "   Beta blocker therapy continued\n";
  CHECK(serialize_ehr(stream) == expected);
}

TEST_CASE("EHR serialization edge cases") {
  SECTION("empty stream gives empty text") {
    CHECK(serialize_ehr(EhrEventStream{}).empty());
    CHECK(parse_ehr("").groups.empty());
  }
  SECTION("out-of-order timestamps are rejected") {
    EhrEventStream s;
    s.groups.push_back({"2020-03-16 08:20:00", {"a"}});
    s.groups.push_back({"2020-03-15 19:55:00", {"b"}});
    CHECK_THROWS_AS(serialize_ehr(s), InputError);
  }
  SECTION("prediction timestamp must not precede the last event") {
    EhrEventStream s;
    s.groups.push_back({"2020-03-16 08:20:00", {"a"}});
    s.prediction_timestamp = "2020-03-15 00:00:00";
    CHECK_THROWS_AS(validate_stream(s), InputError);
  }
}

TEST_CASE("EHR round-trip: parse(serialize(s)) == s on random streams", "[property]") {
  rng::Stream stream(8080);
  for (int trial = 0; trial < 300; ++trial) {
    EhrEventStream s;
    int day = stream.uniform_int(0, 300);
    const int groups = stream.uniform_int(0, 4);
    for (int g = 0; g < groups; ++g) {
      EhrEventStream::Group group;
      group.timestamp = taskgen::detail::format_timestamp(day, stream.uniform_int(0, 23),
                                                          stream.uniform_int(0, 59),
                                                          stream.uniform_int(0, 59));
      const int events = stream.uniform_int(1, 4);
      for (int e = 0; e < events; ++e) {
        group.events.push_back("event " + std::to_string(stream.uniform_int(0, 99)));
      }
      s.groups.push_back(std::move(group));
      day += stream.uniform_int(1, 10);
    }
    const auto text = serialize_ehr(s);
    const auto back = parse_ehr(text);
    REQUIRE(back.groups.size() == s.groups.size());
    for (std::size_t g = 0; g < s.groups.size(); ++g) {
      CHECK(back.groups[g].timestamp == s.groups[g].timestamp);
      CHECK(back.groups[g].events == s.groups[g].events);
    }
    // And serialization is bijective on valid streams.
    CHECK(serialize_ehr(back) == text);
  }
}

TEST_CASE("event instances carry streams consistent with their contexts") {
  const auto suite = generate_suite(small_spec(), 50);
  int checked = 0;
  for (const auto& inst : suite.instances) {
    if (inst.category != kFamilyEvent) {
      continue;
    }
    const auto& stream = suite.event_streams.at(inst.id);
    validate_stream(stream);
    std::string flattened = " events";
    for (const auto& g : stream.groups) {
      for (const auto& e : g.events) {
        flattened += " " + e;
      }
    }
    CHECK(flattened == inst.context);
    CHECK(std::to_string(stream.label) == inst.gold);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("balance_and_split downsamples and draws a balanced validation set") {
  std::vector<TaskInstance> instances;
  auto add = [&](const std::string& category, const std::string& gold, int count) {
    for (int i = 0; i < count; ++i) {
      TaskInstance inst;
      inst.id = category + "-" + gold + "-" + std::to_string(i);
      inst.category = category;
      inst.gold = gold;
      inst.kind = verify::AnswerKind::categorical();
      instances.push_back(inst);
    }
  };

  SECTION("majority class downsampled to the minority count") {
    add("c1", "A", 100);
    add("c1", "B", 20);
    SplitRatios ratios;
    ratios.validation_per_category = 4;
    const auto assignment = balance_and_split(instances, ratios, 7);
    // 20 + 20 retained; per-class retention equal.
    std::map<std::string, int> kept;
    for (const auto& inst : instances) {
      if (assignment.count(inst.id)) {
        kept[inst.gold] += 1;
      }
    }
    CHECK(kept["A"] == 20);
    CHECK(kept["B"] == 20);
  }

  SECTION("per-category quota 14 over 7 categories yields 98 validation instances") {
    for (int c = 0; c < 7; ++c) {
      add("cat" + std::to_string(c), "A", 30);
      add("cat" + std::to_string(c), "B", 30);
    }
    SplitRatios ratios;  // validation_per_category = 14
    const auto assignment = balance_and_split(instances, ratios, 7);
    int validation = 0;
    for (const auto& [id, split] : assignment) {
      validation += split == Split::validation ? 1 : 0;
    }
    CHECK(validation == 98);
  }

  SECTION("splits are disjoint and exhaustive over retained ids") {
    add("c1", "A", 40);
    add("c1", "B", 40);
    SplitRatios ratios;
    ratios.validation_per_category = 6;
    const auto assignment = balance_and_split(instances, ratios, 11);
    CHECK(assignment.size() == 80);  // everything retained (balanced already)
    // Deterministic per seed.
    const auto again = balance_and_split(instances, ratios, 11);
    CHECK(assignment == again);
    const auto other = balance_and_split(instances, ratios, 12);
    CHECK(assignment != other);
  }

  SECTION("validation quota beyond the balanced pool is a config error") {
    add("tiny", "A", 5);
    add("tiny", "B", 5);
    SplitRatios ratios;
    ratios.validation_per_category = 50;
    CHECK_THROWS_AS(balance_and_split(instances, ratios, 7), ConfigError);
  }
}

TEST_CASE("external ingestion maps rows and reports malformed lines") {
  const auto tmp = std::filesystem::temp_directory_path() / "rlvr_ingest_test.jsonl";
  write_text_file(tmp,
                  R"({"note": "patient note", "question": "what is x", "ground_truth": "7"})"
                  "\n"
                  R"({"question": "missing note", "ground_truth": "1"})"
                  "\n"
                  R"({"note": "n2", "question": "q2", "ground_truth": "8"})"
                  "\n");
  const auto report = ingest_external(tmp, ExternalSchema::medcalc_like);
  REQUIRE(report.instances.size() == 2);
  CHECK(report.instances[0].instruction == "what is x");
  CHECK(report.instances[0].context == "patient note");
  CHECK(report.instances[0].gold == "7");
  REQUIRE(report.errors.size() == 1);
  CHECK(report.errors[0].line == 2);
  std::filesystem::remove(tmp);
}

TEST_CASE("ingestion aborts after the error budget") {
  const auto tmp = std::filesystem::temp_directory_path() / "rlvr_ingest_budget.jsonl";
  std::string text;
  for (int i = 0; i < 12; ++i) {
    text += "{\"bad\": true}\n";
  }
  write_text_file(tmp, text);
  CHECK_THROWS_AS(ingest_external(tmp, ExternalSchema::medcalc_like, 5), DataError);
  std::filesystem::remove(tmp);
}

TEST_CASE("export then ingest round-trips 1000 rows with identity", "[property]") {
  rng::Stream stream(616);
  std::vector<TaskInstance> instances;
  for (int i = 0; i < 1000; ++i) {
    TaskInstance inst;
    inst.id = "ext-" + std::to_string(i);
    inst.category = "medcalc";
    inst.instruction = "question " + std::to_string(stream.uniform_int(0, 999));
    inst.context = "note text " + std::to_string(stream.uniform_int(0, 999));
    inst.gold = std::to_string(stream.uniform_int(-50, 50));
    inst.kind = verify::AnswerKind::exact_text();
    inst.split = Split::test;
    instances.push_back(inst);
  }
  const auto tmp = std::filesystem::temp_directory_path() / "rlvr_roundtrip.jsonl";
  export_external(instances, ExternalSchema::medcalc_like, tmp);
  const auto report = ingest_external(tmp, ExternalSchema::medcalc_like);
  CHECK(report.errors.empty());
  REQUIRE(report.instances.size() == instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    CHECK(report.instances[i].id == instances[i].id);
    CHECK(report.instances[i].instruction == instances[i].instruction);
    CHECK(report.instances[i].context == instances[i].context);
    CHECK(report.instances[i].gold == instances[i].gold);
  }
  std::filesystem::remove(tmp);
}

TEST_CASE("task and SFT JSONL artifacts round-trip") {
  const auto suite = generate_suite(small_spec(), 51);
  const auto tmp = std::filesystem::temp_directory_path();
  write_tasks_jsonl(suite.instances, tmp / "rt_tasks.jsonl");
  const auto back = read_tasks_jsonl(tmp / "rt_tasks.jsonl");
  REQUIRE(back.size() == suite.instances.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == suite.instances[i].id);
    CHECK(back[i].gold == suite.instances[i].gold);
    CHECK(back[i].split == suite.instances[i].split);
    CHECK(back[i].seen == suite.instances[i].seen);
  }
  write_sft_jsonl(suite.sft_records, tmp / "rt_sft.jsonl");
  const auto sft = read_sft_jsonl(tmp / "rt_sft.jsonl");
  REQUIRE(sft.size() == suite.sft_records.size());
  CHECK(sft.front().target == suite.sft_records.front().target);

  const auto manifest = manifest_to_json(suite.table, 51);
  const auto table = manifest_from_json(manifest);
  for (const auto& id : suite.table.ids()) {
    CHECK(table.at(id).coverage == suite.table.at(id).coverage);
    CHECK(table.at(id).factor == suite.table.at(id).factor);
    CHECK(table.at(id).threshold == suite.table.at(id).threshold);
  }
  std::filesystem::remove(tmp / "rt_tasks.jsonl");
  std::filesystem::remove(tmp / "rt_sft.jsonl");
}

TEST_CASE("coverage mix validation") {
  auto spec = small_spec();
  spec.coverage.clear();
  spec.coverage["arith.add"] = Coverage::in_pretraining;
  CHECK_THROWS_AS(generate_suite(spec, 7), ConfigError);  // no held-out id

  auto spec2 = small_spec();
  spec2.coverage.erase("match.M1");
  CHECK_THROWS_AS(generate_suite(spec2, 7), ConfigError);  // family with no rule
}
