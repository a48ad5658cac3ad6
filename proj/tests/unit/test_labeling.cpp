#include "fixtures.hpp"
#include "oracles.hpp"

#include "pseudolab/labeling.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace pseudolab;

namespace {

using Answers = std::vector<std::optional<AnswerSymbol>>;

std::vector<AnswerSymbol> letters(std::size_t n) {
  std::vector<AnswerSymbol> s;
  for (std::size_t i = 0; i < n; ++i) s.emplace_back(static_cast<char>('A' + i));
  return s;
}

Answers answers(const std::string& s) {
  Answers a;
  for (char c : s) {
    if (c == '-') {
      a.emplace_back(std::nullopt);
    } else {
      a.emplace_back(AnswerSymbol(c));
    }
  }
  return a;
}

// Two-letter bandit: one token per response, P(B) = p on every question.
PolicyParams bandit(double p) {
  PolicyParams params;
  params.vocab = {"A", "B"};
  params.dim = 1;
  params.response_length = 1;
  params.W = {0.0, std::log(p / (1.0 - p))};
  params.B.assign(4, 0.0);
  return params;
}

Dataset two_option_questions(std::size_t n) {
  std::vector<Question> qs;
  for (std::size_t i = 0; i < n; ++i) qs.push_back(fixtures::question("v" + std::to_string(i), 2, 'B'));
  return Dataset(std::move(qs));
}

}  // namespace

TEST_CASE("majority_vote examples") {
  const auto abcd = letters(4);
  SUBCASE("clear winner") {
    const auto t = majority_vote(answers("BBBBBBBB"), abcd);
    CHECK(t.winner == AnswerSymbol('B'));
    CHECK(t.margin == 8);
    CHECK(t.counts.at(AnswerSymbol('A')) == 0);
  }
  SUBCASE("unanimous C") {
    const auto t = majority_vote(answers("CCCCCCCC"), abcd);
    CHECK(t.winner == AnswerSymbol('C'));
    CHECK(t.margin == 8);
    CHECK(t.winner_count() == 8);
  }
  SUBCASE("even split goes to the first letter") {
    const auto t = majority_vote(answers("BABABABA"), abcd);
    CHECK(t.winner == AnswerSymbol('A'));
    CHECK(t.margin == 0);
  }
  SUBCASE("unparseable answers never win") {
    const auto t = majority_vote(answers("-----DD-"), abcd);
    CHECK(t.winner == AnswerSymbol('D'));
    CHECK(t.none_count == 6);
    CHECK(t.margin == 2);
  }
  SUBCASE("symbols outside the options count as none") {
    const auto t = majority_vote(answers("EEEB"), letters(2));
    CHECK(t.winner == AnswerSymbol('B'));
    CHECK(t.none_count == 3);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(majority_vote(answers("A"), abcd), std::invalid_argument);
    CHECK_THROWS_AS(majority_vote(answers("----"), abcd), std::invalid_argument);
    CHECK_THROWS_AS(majority_vote(answers("AB"), std::vector<AnswerSymbol>{}), std::invalid_argument);
  }
}

TEST_CASE("majority_vote agrees with an exhaustive count oracle") {
  for (std::size_t n_opt = 2; n_opt <= 4; ++n_opt) {
    const auto opts = letters(n_opt);
    for (std::size_t G = 2; G <= 6; ++G) {
      const std::size_t base = n_opt + 1;
      std::size_t combos = 1;
      for (std::size_t i = 0; i < G; ++i) combos *= base;
      for (std::size_t code = 0; code < combos; ++code) {
        Answers a;
        std::vector<std::size_t> counts(n_opt, 0);
        std::size_t none = 0;
        for (std::size_t i = 0, c = code; i < G; ++i, c /= base) {
          const std::size_t digit = c % base;
          if (digit == n_opt) {
            a.emplace_back(std::nullopt);
            ++none;
          } else {
            a.emplace_back(opts[digit]);
            ++counts[digit];
          }
        }
        if (none == G) {
          CHECK_THROWS_AS(majority_vote(a, opts), std::invalid_argument);
          continue;
        }
        const auto best_it = std::max_element(counts.begin(), counts.end());  // first maximum
        auto sorted = counts;
        std::sort(sorted.rbegin(), sorted.rend());
        const auto t = majority_vote(a, opts);
        REQUIRE(t.winner == opts[static_cast<std::size_t>(best_it - counts.begin())]);
        REQUIRE(t.margin == sorted[0] - sorted[1]);
        REQUIRE(t.none_count == none);
        REQUIRE(t.total() == G);

        Answers rotated(a.rbegin(), a.rend());
        std::rotate(rotated.begin(), rotated.begin() + static_cast<std::ptrdiff_t>(code % G), rotated.end());
        const auto r = majority_vote(rotated, opts);
        REQUIRE(r.winner == t.winner);
        REQUIRE(r.counts == t.counts);
      }
    }
  }
}

TEST_CASE("offline labels follow the Condorcet law for a bandit policy") {
  // Three voters without ties: the majority is right with P(at least 2 of 3).
  const double p = 0.7;
  const std::size_t n = 1500;
  const auto result = label_offline(two_option_questions(n), bandit(p), 3, 99);
  std::size_t correct = 0;
  for (const auto& q : result.dataset) correct += *q.label == AnswerSymbol('B');
  const double expected = oracles::binomial_tail(3, 2, p);
  CHECK(expected == doctest::Approx(0.784).epsilon(1e-12));
  const double sd = std::sqrt(expected * (1.0 - expected) / n);
  CHECK(std::abs(static_cast<double>(correct) / n - expected) <= 4.0 * sd);
  CHECK(result.report.dropped == 0);
  CHECK(result.report.labeled == n);
}

TEST_CASE("label_offline with a near-deterministic policy") {
  const auto result = label_offline(two_option_questions(50), bandit(1.0 - 1e-12), 8, 1);
  CHECK(result.report.dropped == 0);
  CHECK(result.report.agreement_histogram[8] == 50);
  CHECK(result.report.mean_margin == 8.0);
  for (const auto& q : result.dataset) CHECK(q.label == AnswerSymbol('B'));
  CHECK(result.dataset.kind() == DatasetKind::synthetic);
  CHECK(result.report.output_digest == result.dataset.content_digest());
}

TEST_CASE("label_offline is reproducible and drops unanswerable questions") {
  const auto base = bandit(0.6);
  const auto d = two_option_questions(40);
  const auto a = label_offline(d, base, 8, 5), b = label_offline(d, base, 8, 5), c = label_offline(d, base, 8, 6);
  CHECK(a.report.output_digest == b.report.output_digest);
  CHECK(a.dataset == b.dataset);
  CHECK(a.report.output_digest != c.report.output_digest);

  // A policy that always emits a non-option token leaves nothing to label.
  PolicyParams filler;
  filler.vocab = {"A", "B", "<r1>"};
  filler.dim = 1;
  filler.response_length = 1;
  filler.W = {-50.0, -50.0, 50.0};
  filler.B.assign(9, 0.0);
  const auto none = label_offline(d, filler, 4, 1);
  CHECK(none.report.dropped == 40);
  CHECK(none.report.labeled == 0);
  CHECK(none.dataset.size() == 0);
  CHECK_THROWS_AS(label_offline(d, base, 1, 1), std::invalid_argument);
}

TEST_CASE("label_online") {
  const auto opts = letters(3);
  RolloutGroup g;
  g.extracted = answers("CCA-B");
  CHECK(label_online(g, opts) == AnswerSymbol('C'));
  g.extracted = answers("----");
  CHECK_FALSE(label_online(g, opts).has_value());
  g.extracted = answers("DDDE");
  CHECK_FALSE(label_online(g, opts).has_value());
}

TEST_CASE("report JSON lists every field") {
  const auto result = label_offline(two_option_questions(5), bandit(0.5), 4, 3);
  const auto j = result.report.to_json();
  for (const char* key : {"total", "labeled", "dropped", "mean_margin", "agreement_histogram", "output_digest"}) {
    CHECK(j.find(key) != std::string::npos);
  }
}
