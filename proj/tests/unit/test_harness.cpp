#include "fixtures.hpp"

#include "pseudolab/harness.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace pseudolab;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

MetricsRecord rec(double agreement, double acc = kNaN) {
  MetricsRecord m;
  m.agreement_fraction = agreement;
  m.accuracy_holdout = acc;
  return m;
}

// Looks backwards from each step for its most recent evaluation.
bool collapse_oracle(const std::vector<MetricsRecord>& ms, double start, double thr) {
  for (std::size_t i = 0; i < ms.size(); ++i) {
    if (ms[i].agreement_fraction < thr) continue;
    for (std::size_t j = i + 1; j-- > 0;) {
      if (!std::isnan(ms[j].accuracy_holdout)) {
        if (ms[j].accuracy_holdout < start) return true;
        break;
      }
    }
  }
  return false;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentSpec tiny(Scenario s, const std::filesystem::path& out) {
  ExperimentSpec spec = default_spec(s);
  spec.seeds = {1, 2};
  spec.n_syn = 40;
  spec.n_real = 40;
  spec.n_holdout = 30;
  spec.steps = 6;
  spec.eval_every = 2;
  spec.train.batch_questions = 4;
  spec.alphas = {0.0, 0.5};
  spec.out_dir = out;
  return spec;
}

}  // namespace

TEST_CASE("collapse flag examples") {
  // Agreement saturates while accuracy falls below the start.
  CHECK(collapse_flag(std::vector<MetricsRecord>{rec(0.5, 0.6), rec(0.995), rec(1.0, 0.4)}, 0.6));
  // Saturated agreement with rising accuracy is healthy.
  CHECK_FALSE(collapse_flag(std::vector<MetricsRecord>{rec(0.5, 0.6), rec(1.0, 0.7), rec(1.0)}, 0.6));
  // Falling accuracy without saturation is not collapse.
  CHECK_FALSE(collapse_flag(std::vector<MetricsRecord>{rec(0.5, 0.6), rec(0.98, 0.3)}, 0.6));
  // Both clauses must hold at the same step.
  CHECK_FALSE(collapse_flag(std::vector<MetricsRecord>{rec(1.0, 0.7), rec(0.2, 0.3), rec(0.5, 0.8), rec(1.0)}, 0.6));
  CHECK(collapse_flag(std::vector<MetricsRecord>{rec(0.2, 0.3), rec(0.999)}, 0.6));
  CHECK_FALSE(collapse_flag(std::vector<MetricsRecord>{rec(1.0), rec(1.0)}, 0.6));
  CHECK_FALSE(collapse_flag(std::vector<MetricsRecord>{}, 0.6));
  CHECK(collapse_flag(std::vector<MetricsRecord>{rec(0.9, 0.5)}, 0.6, 0.9));
}

TEST_CASE("collapse flag agrees with a backward-scan oracle") {
  Rng rng(31);
  for (int t = 0; t < 3000; ++t) {
    std::vector<MetricsRecord> ms;
    const std::size_t n = rng.uniform_index(12);
    for (std::size_t i = 0; i < n; ++i) {
      ms.push_back(rec(rng.uniform() < 0.3 ? 1.0 : rng.uniform(), rng.uniform() < 0.4 ? rng.uniform() : kNaN));
    }
    const double start = rng.uniform(), thr = rng.uniform() < 0.5 ? 0.99 : rng.uniform();
    CHECK(collapse_flag(ms, start, thr) == collapse_oracle(ms, start, thr));
  }
}

TEST_CASE("final accuracy is the last evaluated value") {
  CHECK(final_accuracy(std::vector<MetricsRecord>{rec(0, 0.2), rec(0, 0.4), rec(0)}) == 0.4);
  CHECK(std::isnan(final_accuracy(std::vector<MetricsRecord>{rec(0), rec(0)})));
}

TEST_CASE("toy world labels and base policy") {
  WorldConfig wc;
  wc.extrinsic_dims = 3;
  wc.rare_dims = 2;
  const ToyWorld world(wc, 5);
  const auto d = world.make_questions("q", 400, TruthKind::full, 1);
  CHECK(d.size() == 400);
  CHECK(d.fully_labeled());
  CHECK(world.label_accuracy(d, TruthKind::full) == 1.0);
  CHECK(world.make_questions("q", 400, TruthKind::full, 1) == d);
  CHECK_FALSE(world.make_questions("q", 400, TruthKind::full, 2) == d);

  std::size_t rare = 0;
  for (const auto& q : d) {
    CHECK_NOTHROW(q.validate());
    CHECK(q.id.rfind("q-", 0) == 0);
    CHECK(q.provenance == Provenance::real_seed);
    rare += q.rarity == Rarity::rare;
    CHECK(world.truth(q, TruthKind::intrinsic) <= AnswerSymbol(static_cast<char>('A' + q.options.size() - 1)));
  }
  CHECK(std::abs(static_cast<double>(rare) / 400.0 - wc.rare_fraction) < 0.06);

  // Extrinsic columns change some answers.
  const auto intrinsic = world.with_truth(d, TruthKind::intrinsic);
  CHECK(world.label_accuracy(intrinsic, TruthKind::intrinsic) == 1.0);
  CHECK(world.label_accuracy(intrinsic, TruthKind::full) < 1.0);

  const auto base = world.base_policy();
  CHECK_NOTHROW(base.validate());
  CHECK(base.dim == wc.dim());
  CHECK(base.rare_block == wc.rare_dims);
  CHECK(base.response_length == wc.response_length);
}

TEST_CASE("scaffold sends most of the mass to an answer letter") {
  const ToyWorld world(WorldConfig{}, 3);
  const auto base = world.base_policy();
  for (const auto& q : world.make_questions("s", 20, TruthKind::full, 1)) {
    double mass = 0.0;
    for (const auto& o : q.options) mass += answer_probability(base, q, o.symbol);
    CHECK(mass > 0.95);
  }
}

TEST_CASE("dynamics base accuracy starts strictly between 0.3 and 0.7") {
  const auto spec = default_spec(Scenario::labeling_dynamics);
  for (std::uint64_t seed : spec.seeds) {
    const ToyWorld world(spec.world, seed);
    const auto holdout = world.make_questions("holdout", spec.n_holdout, TruthKind::full, 2);
    const double acc = expected_accuracy(world.base_policy(), holdout).overall;
    CAPTURE(seed);
    CHECK(acc > 0.3);
    CHECK(acc < 0.7);
  }
}

TEST_CASE("corpus and entities") {
  const ToyWorld world(WorldConfig{}, 1);
  const auto corpus = world.make_corpus(50, 32);
  CHECK(corpus.size() == 50);
  CHECK(corpus.dim() == 32);
  const auto ents = world.make_entities(5, 32);
  REQUIRE(ents.size() == 5);
  CHECK(ents[2].name == "rare disorder 2");
  CHECK(ents[2].embedding == hash_embed("rare disorder 2", 32));
}

TEST_CASE("workbench pipeline") {
  auto spec = tiny(Scenario::alpha_sweep, fixtures::temp_dir("harness_wb"));
  spec.n_syn = 200;
  const auto wb = build_workbench(spec, 3, 0.5, TruthKind::intrinsic, TruthKind::full);
  CHECK(wb.real.size() == spec.n_real);
  CHECK(wb.holdout.size() == spec.n_holdout);
  CHECK(wb.synthetic.size() == 200);
  CHECK(wb.synthetic.kind() == DatasetKind::synthetic);
  CHECK_FALSE(wb.synthetic.fully_labeled());
  CHECK(wb.synthetic_true.fully_labeled());
  CHECK(wb.label_report.output_digest == wb.synthetic_voted.content_digest());
  CHECK(wb.synthetic_voted.size() + wb.label_report.dropped == 200);
  CHECK(std::abs(wb.injected_fraction - 0.5) < 0.15);
  const auto again = build_workbench(spec, 3, 0.5, TruthKind::intrinsic, TruthKind::full);
  CHECK(again.synthetic_voted.content_digest() == wb.synthetic_voted.content_digest());
}

TEST_CASE("scenario names") {
  for (auto s : {Scenario::labeling_dynamics, Scenario::stage_ablation, Scenario::alpha_sweep, Scenario::long_run}) {
    CHECK(parse_scenario(to_string(s)) == s);
  }
  CHECK_THROWS_AS(parse_scenario("bogus"), std::invalid_argument);
}

TEST_CASE("experiment spec parsing") {
  const auto s = spec_from_json(
      R"({"scenario":"stage_ablation","seeds":[9],"steps":12,"world":{"letter_bias":0.5},"train":{"G":4}})");
  CHECK(s.scenario == Scenario::stage_ablation);
  CHECK(s.seeds == std::vector<std::uint64_t>{9});
  CHECK(s.steps == 12);
  CHECK(s.world.letter_bias == 0.5);
  CHECK(s.world.extrinsic_dims == default_spec(Scenario::stage_ablation).world.extrinsic_dims);
  CHECK(s.train.G == 4);
  CHECK(s.train.learning_rate == default_spec(Scenario::stage_ablation).train.learning_rate);

  CHECK_THROWS_AS(spec_from_json(R"({"steps":3})"), FormatError);
  CHECK_THROWS_AS(spec_from_json(R"({"scenario":"nope"})"), FormatError);
  CHECK_THROWS_AS(spec_from_json(R"({"scenario":"long_run","seeds":[]})"), FormatError);
  CHECK_THROWS_AS(spec_from_json("{"), FormatError);
  CHECK_THROWS(load_spec("/nonexistent/spec.json"));
}

TEST_CASE("svg charts are deterministic and carry their data") {
  const std::vector<ChartSeries> series = {{"a", {0, 1, 2}, {0.1, 0.5, 0.4}}, {"b", {0, 2}, {0.2, kNaN}}};
  const auto svg = svg_line_chart("Title <x>", "step", "value", series);
  CHECK(svg == svg_line_chart("Title <x>", "step", "value", series));
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("Title &lt;x&gt;") != std::string::npos);
  CHECK(svg.find("Title <x>") == std::string::npos);
  CHECK(svg.find("0.500000") != std::string::npos);
}

TEST_CASE("reports are byte-identical across reruns and worker counts") {
  for (auto scenario : {Scenario::labeling_dynamics, Scenario::stage_ablation, Scenario::alpha_sweep, Scenario::long_run}) {
    CAPTURE(to_string(scenario));
    // Different worker counts must not change a single byte.
    auto a = tiny(scenario, fixtures::temp_dir("harness_report_a"));
    auto b = tiny(scenario, fixtures::temp_dir("harness_report_b"));
    a.workers = 1;
    b.workers = 4;
    const auto fa = run_experiment(a);
    const auto fb = run_experiment(b);
    REQUIRE(fa.size() == fb.size());
    CHECK_FALSE(fa.empty());
    for (std::size_t i = 0; i < fa.size(); ++i) {
      CHECK(std::filesystem::relative(fa[i], a.out_dir) == std::filesystem::relative(fb[i], b.out_dir));
      CHECK(slurp(fa[i]) == slurp(fb[i]));
      CHECK_FALSE(slurp(fa[i]).empty());
    }
  }
}
