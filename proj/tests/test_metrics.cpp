#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rlvr/metrics.hpp"
#include "rlvr/rng.hpp"

using namespace rlvr;
using namespace rlvr::metrics;

namespace {

// Definition-level oracle, written independently: builds per-class tallies
// from an explicit (gold, pred) pair list instead of matrix marginals.
struct OracleScores {
  double bacc;
  double macro_f1;
  double kappa;
};

OracleScores oracle_scores(const std::vector<std::pair<int, int>>& pairs, int classes,
                           int invalid_class) {
  const double n = static_cast<double>(pairs.size());
  std::vector<double> tp(static_cast<std::size_t>(classes), 0.0);
  std::vector<double> gold(static_cast<std::size_t>(classes), 0.0);
  std::vector<double> pred(static_cast<std::size_t>(classes), 0.0);
  double pred_invalid = 0.0;
  double agree = 0.0;
  for (auto [g, p] : pairs) {
    gold[static_cast<std::size_t>(g)] += 1.0;
    if (p == invalid_class) {
      pred_invalid += 1.0;
      continue;
    }
    pred[static_cast<std::size_t>(p)] += 1.0;
    if (g == p) {
      tp[static_cast<std::size_t>(g)] += 1.0;
      agree += 1.0;
    }
  }
  OracleScores out{0.0, 0.0, 0.0};
  int recall_n = 0;
  int f1_n = 0;
  for (int c = 0; c < classes; ++c) {
    if (gold[static_cast<std::size_t>(c)] > 0) {
      out.bacc += tp[static_cast<std::size_t>(c)] / gold[static_cast<std::size_t>(c)];
      ++recall_n;
    }
    if (gold[static_cast<std::size_t>(c)] > 0 || pred[static_cast<std::size_t>(c)] > 0) {
      const double denom = gold[static_cast<std::size_t>(c)] + pred[static_cast<std::size_t>(c)];
      out.macro_f1 += denom > 0 ? 2.0 * tp[static_cast<std::size_t>(c)] / denom : 0.0;
      ++f1_n;
    }
  }
  out.bacc = recall_n > 0 ? out.bacc / recall_n : 0.0;
  out.macro_f1 = f1_n > 0 ? out.macro_f1 / f1_n : 0.0;
  const double po = agree / n;
  double pe = 0.0;
  for (int c = 0; c < classes; ++c) {
    pe += (gold[static_cast<std::size_t>(c)] / n) * (pred[static_cast<std::size_t>(c)] / n);
  }
  // Invalid predictions: gold marginal for the invalid pseudo-class is zero,
  // so it contributes nothing to pe.
  out.kappa = pe >= 1.0 ? 0.0 : (po - pe) / (1.0 - pe);
  return out;
}

}  // namespace

TEST_CASE("perfect diagonal matrix scores 1 everywhere") {
  ConfusionMatrix cm(3);
  cm.add(0, 0, 5);
  cm.add(1, 1, 7);
  cm.add(2, 2, 2);
  const auto s = classification_suite(cm);
  CHECK(s.bacc == Catch::Approx(1.0));
  CHECK(s.macro_f1 == Catch::Approx(1.0));
  CHECK(s.kappa == Catch::Approx(1.0));
  CHECK_FALSE(s.kappa_degenerate);
}

TEST_CASE("hand-computed binary case [[50,10],[5,35]]") {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 50);
  cm.add(0, 1, 10);
  cm.add(1, 0, 5);
  cm.add(1, 1, 35);
  const auto s = classification_suite(cm);
  CHECK(s.bacc == Catch::Approx(0.854167).margin(1e-6));
  CHECK(s.kappa == Catch::Approx(0.6939).margin(1e-4));
  REQUIRE(s.per_class_f1.size() == 2);
  CHECK(s.per_class_f1[0] == Catch::Approx(0.8696).margin(1e-4));
  CHECK(s.per_class_f1[1] == Catch::Approx(0.8235).margin(1e-4));
}

TEST_CASE("always predicting one class on balanced binary gold") {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 50);
  cm.add(1, 0, 50);
  const auto s = classification_suite(cm);
  CHECK(s.bacc == Catch::Approx(0.5));
  CHECK(s.kappa == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("single-cell matrix pins kappa to zero with the degeneracy flag") {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 10);
  const auto s = classification_suite(cm);
  CHECK(s.kappa == 0.0);
  CHECK(s.kappa_degenerate);
}

TEST_CASE("kappa is 1 exactly for diagonal matrices with >= 2 nonzero classes") {
  ConfusionMatrix diag(3);
  diag.add(0, 0, 4);
  diag.add(2, 2, 6);
  CHECK(classification_suite(diag).kappa == Catch::Approx(1.0));

  ConfusionMatrix off(3);
  off.add(0, 0, 4);
  off.add(2, 1, 1);
  off.add(2, 2, 5);
  CHECK(classification_suite(off).kappa < 1.0);
}

TEST_CASE("duplicating every example leaves BACC and macro F1 unchanged") {
  ConfusionMatrix cm(3);
  cm.add(0, 0, 5);
  cm.add(0, 1, 2);
  cm.add(1, 1, 4);
  cm.add(2, 0, 1);
  cm.add(2, 2, 3);
  cm.add_invalid(1, 2);
  ConfusionMatrix cm3(3);
  for (int g = 0; g < 3; ++g) {
    for (int p = 0; p < 3; ++p) {
      cm3.add(g, p, 3 * cm.at(g, p));
    }
    cm3.add_invalid(g, 3 * cm.invalid_count(g));
  }
  const auto a = classification_suite(cm);
  const auto b = classification_suite(cm3);
  CHECK(a.bacc == Catch::Approx(b.bacc).epsilon(1e-12));
  CHECK(a.macro_f1 == Catch::Approx(b.macro_f1).epsilon(1e-12));
  CHECK(a.kappa == Catch::Approx(b.kappa).epsilon(1e-12));
}

TEST_CASE("500 random matrices match the definition-level oracle", "[oracle]") {
  rng::Stream stream(777);
  for (int trial = 0; trial < 500; ++trial) {
    const int classes = stream.uniform_int(2, 6);
    const int n = stream.uniform_int(classes, 80);
    std::vector<std::pair<int, int>> pairs;
    ConfusionMatrix cm(classes);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      const int g = stream.uniform_int(0, classes - 1);
      // ~8% invalid predictions.
      if (stream.uniform() < 0.08) {
        cm.add_invalid(g);
        pairs.emplace_back(g, classes);  // oracle marks invalid as class == classes
      } else {
        const int p = stream.uniform_int(0, classes - 1);
        cm.add(g, p);
        pairs.emplace_back(g, p);
        any = true;
      }
    }
    if (!any) {
      continue;
    }
    const auto got = classification_suite(cm);
    const auto want = oracle_scores(pairs, classes, classes);
    CHECK(std::abs(got.bacc - want.bacc) < 1e-9);
    CHECK(std::abs(got.macro_f1 - want.macro_f1) < 1e-9);
    if (!got.kappa_degenerate) {
      CHECK(std::abs(got.kappa - want.kappa) < 1e-9);
    }
  }
}

TEST_CASE("exact match accuracy equals a direct count") {
  using namespace rlvr::verify;
  std::vector<ParsedOutput> preds;
  std::vector<std::string> golds;
  for (int i = 0; i < 10; ++i) {
    const std::string value = i < 7 ? "4" : "5";
    preds.push_back(extract_answer("<think>t</think><answer>{\"answer\":\"" + value +
                                   "\"}</answer>"));
    golds.push_back("4");
  }
  CHECK(exact_match_accuracy(preds, golds, AnswerKind::exact_text()) == Catch::Approx(0.7));
  golds.pop_back();
  CHECK_THROWS_AS(exact_match_accuracy(preds, golds, AnswerKind::exact_text()), InputError);
}

TEST_CASE("reasoning length statistics") {
  using namespace rlvr::verify;
  auto make = [](const std::string& think) {
    return extract_answer("<think>" + think + "</think><answer>{\"answer\":\"1\"}</answer>");
  };
  SECTION("uniform ten-word spans give mean ten") {
    std::vector<ParsedOutput> outs(4, make("a b c d e f g h i j"));
    const auto s = reasoning_length_stats(outs);
    CHECK(s.mean == Catch::Approx(10.0));
    CHECK(s.median == Catch::Approx(10.0));
    CHECK(s.valid_count == 4);
  }
  SECTION("empty think span counts as zero") {
    std::vector<ParsedOutput> outs = {make("")};
    const auto s = reasoning_length_stats(outs);
    CHECK(s.mean == 0.0);
  }
  SECTION("invalid outputs excluded from the mean but counted") {
    std::vector<ParsedOutput> outs = {make("one two"), extract_answer("garbage")};
    const auto s = reasoning_length_stats(outs);
    CHECK(s.mean == Catch::Approx(2.0));
    CHECK(s.valid_count == 1);
    CHECK(s.invalid_count == 1);
  }
  SECTION("random corpus matches a word-count oracle") {
    rng::Stream stream(17);
    std::vector<ParsedOutput> outs;
    double total = 0.0;
    for (int i = 0; i < 50; ++i) {
      const int words = stream.uniform_int(0, 20);
      std::string think;
      for (int w = 0; w < words; ++w) {
        think += w == 0 ? "w" : " w";
      }
      outs.push_back(make(think));
      total += words;
    }
    const auto s = reasoning_length_stats(outs);
    CHECK(s.mean == Catch::Approx(total / 50.0).epsilon(1e-12));
  }
}

TEST_CASE("metrics are invariant to example order") {
  rng::Stream stream(5150);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < 60; ++i) {
    pairs.emplace_back(stream.uniform_int(0, 2), stream.uniform_int(0, 2));
  }
  ConfusionMatrix a(3);
  for (auto [g, p] : pairs) {
    a.add(g, p);
  }
  stream.shuffle(pairs);
  ConfusionMatrix b(3);
  for (auto [g, p] : pairs) {
    b.add(g, p);
  }
  const auto sa = classification_suite(a);
  const auto sb = classification_suite(b);
  CHECK(sa.bacc == sb.bacc);
  CHECK(sa.macro_f1 == sb.macro_f1);
  CHECK(sa.kappa == sb.kappa);
}
