#include "pseudolab/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace pseudolab {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::string_view kFindings[] = {
    "fever",    "fatigue",   "rash",       "jaundice",   "ataxia",     "seizures", "dyspnea",  "hematuria",
    "myalgia",  "arthralgia", "weight loss", "night sweats", "hypotonia", "tremor",   "edema",    "pallor",
    "syncope",  "cough",     "headache",   "vomiting",   "hepatomegaly", "splenomegaly", "ptosis", "neuropathy"};

constexpr std::string_view kChoices[] = {
    "Start empirical antibiotics", "Order a genetic panel",   "Obtain an MRI of the brain", "Begin corticosteroids",
    "Perform a lumbar puncture",   "Check serum ferritin",    "Refer for biopsy",           "Measure enzyme activity",
    "Repeat the blood smear",      "Start enzyme replacement", "Screen family members",      "Observe and reassess"};

std::string pick(Rng& rng, std::span<const std::string_view> words) {
  return std::string(words[rng.uniform_index(words.size())]);
}

std::string fmt(double v, const char* f = "%.6f") {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void write_file(const std::filesystem::path& path, const std::string& content, std::vector<std::filesystem::path>& out) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
  out.push_back(path);
}

}  // namespace

// ---------------------------------------------------------------------------
// ToyWorld

ToyWorld::ToyWorld(WorldConfig config, std::uint64_t seed) : config_(config), seed_(seed) {
  if (config_.letters < 2 || config_.letters > 8) throw std::invalid_argument("world: letters must be in [2, 8]");
  if (config_.intrinsic_dims < 1) throw std::invalid_argument("world: need at least one intrinsic feature");
  if (config_.response_length < 1) throw std::invalid_argument("world: response length must be positive");
  const std::size_t d = config_.dim();
  teacher_.assign(config_.letters * d, 0.0);
  Rng rng(stream_seed(seed, 0x7eac4e7ULL));
  const std::size_t ext_begin = 1 + config_.intrinsic_dims;
  const std::size_t rare_begin = ext_begin + config_.extrinsic_dims;
  for (std::size_t l = 0; l < config_.letters; ++l) {
    for (std::size_t j = 1; j < d; ++j) {
      double scale = 1.0;
      if (j >= rare_begin) {
        scale = config_.rare_strength;
      } else if (j >= ext_begin) {
        scale = config_.extrinsic_strength;
      }
      teacher_[l * d + j] = scale * rng.normal();
    }
  }
}

AnswerSymbol ToyWorld::truth(const Question& q, TruthKind kind) const {
  const std::size_t d = config_.dim();
  const auto phi = question_features(q, d, config_.rare_dims);
  const std::size_t ext_begin = 1 + config_.intrinsic_dims;
  const std::size_t ext_end = ext_begin + config_.extrinsic_dims;
  double best = -INFINITY;
  AnswerSymbol winner = q.options.front().symbol;
  for (const auto& o : q.options) {
    const auto l = static_cast<std::size_t>(o.symbol.value() - 'A');
    if (l >= config_.letters) continue;
    double s = 0.0;
    for (std::size_t j = 1; j < d; ++j) {
      if (kind == TruthKind::intrinsic && j >= ext_begin && j < ext_end) continue;
      s += teacher_[l * d + j] * phi[j];
    }
    if (s > best) {
      best = s;
      winner = o.symbol;
    }
  }
  return winner;
}

Dataset ToyWorld::with_truth(const Dataset& d, TruthKind kind) const {
  std::vector<Question> out(d.begin(), d.end());
  for (auto& q : out) q.label = truth(q, kind);
  return Dataset(std::move(out), d.kind());
}

double ToyWorld::label_accuracy(const Dataset& d, TruthKind kind) const {
  std::size_t hit = 0, n = 0;
  for (const auto& q : d) {
    if (!q.label) continue;
    ++n;
    hit += *q.label == truth(q, kind) ? 1 : 0;
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

PolicyParams ToyWorld::base_policy() const {
  const std::size_t T = config_.response_length;
  PolicyParams p;
  for (std::size_t l = 0; l < config_.letters; ++l) p.vocab.push_back(std::string(1, static_cast<char>('A' + l)));
  for (std::size_t i = 1; i < T; ++i) p.vocab.push_back("<r" + std::to_string(i) + ">");
  p.dim = config_.dim();
  p.rare_block = config_.rare_dims;
  p.response_length = T;
  p.temperature = 1.0;
  const std::size_t V = p.vocab.size();
  p.W.assign(V * p.dim, 0.0);
  p.B.assign(V * V, 0.0);

  const std::size_t d = p.dim;
  const std::size_t ext_begin = 1 + config_.intrinsic_dims;
  const std::size_t rare_begin = ext_begin + config_.extrinsic_dims;
  for (std::size_t l = 0; l < config_.letters; ++l) {
    for (std::size_t j = 1; j < ext_begin; ++j) p.w(l, j) = config_.base_confidence * teacher_[l * d + j];
    for (std::size_t j = rare_begin; j < d; ++j) p.w(l, j) = config_.rare_knowledge * teacher_[l * d + j];
  }
  p.w(0, 0) = config_.letter_bias;

  // Filler chain <r1> -> <r2> -> ... -> answer letter. <r1> carries a bias
  // logit s at every position, so the chain transitions need 2s to dominate it.
  const double s = config_.scaffold_strength;
  if (T > 1) {
    const std::size_t first_filler = config_.letters;
    p.w(first_filler, 0) = s;
    for (std::size_t i = first_filler; i + 1 < V; ++i) p.b(i, i + 1) = 2 * s;
    for (std::size_t l = 0; l < config_.letters; ++l) p.b(V - 1, l) = 2 * s;
  }
  p.validate();
  return p;
}

Dataset ToyWorld::make_questions(const std::string& prefix, std::size_t n, TruthKind kind, std::uint64_t stream) const {
  std::vector<Question> out;
  out.reserve(n);
  Rng rng(stream_seed(seed_, 0x9000 + stream));
  for (std::size_t i = 0; i < n; ++i) {
    Question q;
    q.id = prefix + "-" + std::to_string(i);
    q.rarity = rng.uniform() < config_.rare_fraction ? Rarity::rare : Rarity::general;
    q.provenance = Provenance::real_seed;
    const std::size_t age = 18 + rng.uniform_index(60);
    q.text = "A " + std::to_string(age) + "-year-old patient presents with " + pick(rng, kFindings) + ", " +
             pick(rng, kFindings) + " and " + pick(rng, kFindings) + ". What is the most appropriate next step?";
    std::vector<std::size_t> choice(std::size(kChoices));
    std::iota(choice.begin(), choice.end(), 0);
    rng.shuffle(choice.begin(), choice.end());
    for (std::size_t l = 0; l < config_.letters; ++l) {
      q.options.push_back({AnswerSymbol(static_cast<char>('A' + l)), std::string(kChoices[choice[l % choice.size()]])});
    }
    q.label = truth(q, kind);
    out.push_back(std::move(q));
  }
  return Dataset(std::move(out), DatasetKind::real);
}

Corpus ToyWorld::make_corpus(std::size_t n_docs, std::size_t dim) const {
  std::vector<CorpusDoc> docs;
  Rng rng(stream_seed(seed_, 0xc0));
  const std::size_t n_entities = 40;
  for (std::size_t i = 0; i < n_docs; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "doc-%05zu", i);
    const std::string entity = "rare disorder " + std::to_string(rng.uniform_index(n_entities));
    std::string text = entity + " is associated with " + pick(rng, kFindings) + " and " + pick(rng, kFindings) +
                       "; management includes " + pick(rng, kChoices) + ".";
    CorpusDoc d{id, text, hash_embed(text, dim)};
    docs.push_back(std::move(d));
  }
  return Corpus(std::move(docs));
}

std::vector<RareEntity> ToyWorld::make_entities(std::size_t n, std::size_t dim) const {
  std::vector<RareEntity> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = "rare disorder " + std::to_string(i);
    out.push_back({name, hash_embed(name, dim)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Specs

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::labeling_dynamics: return "labeling_dynamics";
    case Scenario::stage_ablation: return "stage_ablation";
    case Scenario::alpha_sweep: return "alpha_sweep";
    case Scenario::long_run: return "long_run";
  }
  return "labeling_dynamics";
}

Scenario parse_scenario(std::string_view s) {
  if (s == "labeling_dynamics") return Scenario::labeling_dynamics;
  if (s == "stage_ablation") return Scenario::stage_ablation;
  if (s == "alpha_sweep") return Scenario::alpha_sweep;
  if (s == "long_run") return Scenario::long_run;
  throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw std::invalid_argument("experiment: need at least one seed");
  if (n_syn < 2 || n_real < 2 || n_holdout < 1 || steps < 1) throw std::invalid_argument("experiment: sizes must be positive");
  if (scenario == Scenario::alpha_sweep && alphas.empty()) throw std::invalid_argument("experiment: alpha sweep needs alphas");
  train.validate();
}

ExperimentSpec default_spec(Scenario scenario) {
  ExperimentSpec s;
  s.scenario = scenario;
  s.name = std::string(to_string(scenario));
  s.train.G = 8;
  s.train.kl_beta = 1e-3;
  s.train.clip_eps = 0.2;
  s.train.batch_questions = 32;
  s.train.learning_rate = 2.0;
  s.world.base_confidence = 0.5;
  switch (scenario) {
    case Scenario::labeling_dynamics:
      s.alpha = 0.0;
      s.steps = 500;
      break;
    case Scenario::long_run:
      s.alpha = 0.0;
      s.steps = 1000;
      s.eval_every = 10;
      break;
    case Scenario::stage_ablation:
      s.world.extrinsic_dims = 4;
      s.steps = 300;
      break;
    case Scenario::alpha_sweep:
      s.world.rare_dims = 4;
      s.world.rare_knowledge = 0.3;
      s.world.rare_strength = 1.5;
      s.steps = 200;
      break;
  }
  return s;
}

namespace {

void world_from(const ojson& j, WorldConfig& w) {
  w.letters = j.value("letters", w.letters);
  w.intrinsic_dims = j.value("intrinsic_dims", w.intrinsic_dims);
  w.extrinsic_dims = j.value("extrinsic_dims", w.extrinsic_dims);
  w.rare_dims = j.value("rare_dims", w.rare_dims);
  w.response_length = j.value("response_length", w.response_length);
  w.base_confidence = j.value("base_confidence", w.base_confidence);
  w.rare_knowledge = j.value("rare_knowledge", w.rare_knowledge);
  w.extrinsic_strength = j.value("extrinsic_strength", w.extrinsic_strength);
  w.rare_strength = j.value("rare_strength", w.rare_strength);
  w.letter_bias = j.value("letter_bias", w.letter_bias);
  w.scaffold_strength = j.value("scaffold_strength", w.scaffold_strength);
  w.rare_fraction = j.value("rare_fraction", w.rare_fraction);
}

}  // namespace

ExperimentSpec spec_from_json(std::string_view text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed experiment spec: ") + e.what());
  }
  try {
    ExperimentSpec s = default_spec(parse_scenario(j.at("scenario").get<std::string>()));
    s.name = j.value("name", s.name);
    if (j.contains("seeds")) s.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    s.n_syn = j.value("n_syn", s.n_syn);
    s.n_real = j.value("n_real", s.n_real);
    s.n_holdout = j.value("n_holdout", s.n_holdout);
    s.steps = j.value("steps", s.steps);
    s.eval_every = j.value("eval_every", s.eval_every);
    s.workers = j.value("workers", s.workers);
    s.alpha = j.value("alpha", s.alpha);
    if (j.contains("alphas")) s.alphas = j["alphas"].get<std::vector<double>>();
    if (j.contains("out")) s.out_dir = j["out"].get<std::string>();
    if (j.contains("world")) world_from(j["world"], s.world);
    if (j.contains("train")) {
      // Fields left out keep the scenario defaults.
      ojson t = {{"G", s.train.G},
                 {"clip_eps", s.train.clip_eps},
                 {"kl_beta", s.train.kl_beta},
                 {"learning_rate", s.train.learning_rate},
                 {"batch_questions", s.train.batch_questions},
                 {"steps", s.train.steps},
                 {"updates_per_batch", s.train.updates_per_batch},
                 {"rng_seed", s.train.rng_seed}};
      t.update(j["train"]);
      s.train = train_config_from_json(t.dump());
    }
    s.validate();
    return s;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid experiment spec: ") + e.what());
  }
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open experiment spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return spec_from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Pipeline

Workbench build_workbench(const ExperimentSpec& spec, std::uint64_t seed, double alpha, TruthKind synthetic_truth,
                          TruthKind real_truth) {
  ToyWorld world(spec.world, seed);
  PolicyParams base = world.base_policy();
  Dataset real = world.make_questions("real", spec.n_real, real_truth, 1);
  Dataset holdout = world.make_questions("holdout", spec.n_holdout, real_truth, 2);

  constexpr std::size_t kEmbedDim = 64;
  const Corpus corpus = world.make_corpus(400, kEmbedDim);
  const auto entities = world.make_entities(40, kEmbedDim);
  std::vector<std::string> names;
  for (const auto& e : entities) names.push_back(e.name);

  SynthesisConfig sc;
  sc.alpha = alpha;
  sc.k = 4;
  sc.n_target = spec.n_syn;
  sc.rng_seed = stream_seed(seed, 0x5);
  LocalTemplateGenerator gen(names);
  Dataset synthetic = synthesize(sc, real, corpus, entities, gen);

  std::size_t injected = 0;
  for (const auto& q : synthetic) injected += q.provenance == Provenance::synthetic_injected ? 1 : 0;

  LabelResult voted = label_offline(synthetic, base, spec.train.G, stream_seed(seed, 0x7));
  Dataset synthetic_true = world.with_truth(synthetic, synthetic_truth);

  Workbench wb{std::move(world),     std::move(base),    std::move(real),
               std::move(synthetic), std::move(voted.dataset), std::move(synthetic_true),
               std::move(holdout),   std::move(voted.report), 0.0};
  wb.injected_fraction = static_cast<double>(injected) / static_cast<double>(spec.n_syn);
  return wb;
}

bool collapse_flag(std::span<const MetricsRecord> metrics, double start_accuracy, double agreement_threshold) {
  double acc = std::numeric_limits<double>::quiet_NaN();
  for (const auto& m : metrics) {
    if (!std::isnan(m.accuracy_holdout)) acc = m.accuracy_holdout;
    if (m.agreement_fraction >= agreement_threshold && !std::isnan(acc) && acc < start_accuracy) return true;
  }
  return false;
}

double final_accuracy(std::span<const MetricsRecord> metrics) {
  for (auto it = metrics.rbegin(); it != metrics.rend(); ++it) {
    if (!std::isnan(it->accuracy_holdout)) return it->accuracy_holdout;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

namespace {

StagePlan single_stage(const std::string& key, LabelMode mode, const std::string& digest, const TrainConfig& cfg,
                       std::size_t eval_every) {
  StagePlan plan;
  plan.mode = PlanMode::custom;
  plan.stages.push_back({std::string(to_string(mode)), {{key, mode, mode == LabelMode::offline_pseudo ? digest : ""}}, cfg});
  plan.holdout = "holdout";
  plan.eval_every = eval_every;
  return plan;
}

TrainConfig seeded(TrainConfig cfg, std::uint64_t seed, std::size_t steps) {
  cfg.rng_seed = seed;
  cfg.steps = steps;
  return cfg;
}

// Runs fn(0), ..., fn(n - 1) on a small thread pool. Results land in index
// order, so the output never depends on scheduling.
template <class T, class Fn>
std::vector<T> parallel_map(std::size_t n, std::size_t max_workers, Fn fn) {
  std::vector<T> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  if (max_workers == 0) max_workers = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(n, max_workers);
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

double min_accuracy(std::span<const MetricsRecord> metrics, double start) {
  double m = start;
  for (const auto& r : metrics) {
    if (!std::isnan(r.accuracy_holdout)) m = std::min(m, r.accuracy_holdout);
  }
  return m;
}

}  // namespace

DynamicsResult run_labeling_dynamics(const ExperimentSpec& spec) {
  spec.validate();
  DynamicsResult result;
  result.seeds = parallel_map<DynamicsSeedResult>(spec.seeds.size(), spec.workers, [&](std::size_t idx) {
    const std::uint64_t seed = spec.seeds[idx];
    const Workbench wb = build_workbench(spec, seed, spec.alpha, TruthKind::intrinsic, TruthKind::intrinsic);
    DatasetMap data{{"syn", wb.synthetic},
                    {"syn_voted", wb.synthetic_voted},
                    {"syn_true", wb.synthetic_true},
                    {"holdout", wb.holdout}};
    const TrainConfig cfg = seeded(spec.train, stream_seed(seed, 0x11), spec.steps);

    DynamicsSeedResult sr;
    sr.seed = seed;
    const auto online = run_stage_plan(single_stage("syn", LabelMode::online_vote, "", cfg, spec.eval_every), data, wb.base);
    const auto offline = run_stage_plan(
        single_stage("syn_voted", LabelMode::offline_pseudo, wb.synthetic_voted.content_digest(), cfg, spec.eval_every),
        data, wb.base);
    const auto truth = run_stage_plan(single_stage("syn_true", LabelMode::ground_truth, "", cfg, spec.eval_every), data, wb.base);
    sr.start_accuracy = online.initial.overall;
    sr.curves = {{"online_vote", online.metrics}, {"offline_pseudo", offline.metrics}, {"ground_truth", truth.metrics}};

    for (const auto& m : online.metrics) {
      sr.online_peak_reward = std::max(sr.online_peak_reward, m.mean_reward);
      sr.online_peak_agreement = std::max(sr.online_peak_agreement, m.agreement_fraction);
      if (m.mean_reward >= 0.98 && m.agreement_fraction >= 0.99) sr.online_hacked = true;
    }
    sr.online_final = final_accuracy(online.metrics);
    sr.offline_final = final_accuracy(offline.metrics);
    sr.offline_min = min_accuracy(offline.metrics, sr.start_accuracy);
    sr.ground_truth_final = final_accuracy(truth.metrics);
    sr.online_hacked = sr.online_hacked && sr.online_final <= sr.ground_truth_final - 0.10;
    sr.offline_tracks = std::abs(sr.offline_final - sr.ground_truth_final) <= 0.05 &&
                        sr.offline_min >= sr.start_accuracy - 0.03;
    sr.pass = sr.online_hacked && sr.offline_tracks;
    return sr;
  });
  for (const auto& sr : result.seeds) result.passing += sr.pass ? 1 : 0;
  const std::size_t n = result.seeds.size();
  const std::size_t needed = n >= 4 ? (3 * n + 3) / 4 : n;
  result.verdict = result.passing >= needed;
  return result;
}

AblationResult run_stage_ablation(const ExperimentSpec& spec) {
  spec.validate();
  AblationResult result;
  result.rows = {{"two_stage", {}, 0, 0}, {"reverse", {}, 0, 0}, {"one_stage_mixed", {}, 0, 0}};
  const auto finals = parallel_map<std::array<double, 3>>(spec.seeds.size(), spec.workers, [&](std::size_t idx) {
    const std::uint64_t seed = spec.seeds[idx];
    const Workbench wb = build_workbench(spec, seed, spec.alpha, TruthKind::intrinsic, TruthKind::full);
    DatasetMap data{{"syn_voted", wb.synthetic_voted}, {"real", wb.real}, {"holdout", wb.holdout}};
    const std::string digest = wb.synthetic_voted.content_digest();
    const TrainConfig cfg = seeded(spec.train, stream_seed(seed, 0x22), spec.steps);
    const TrainConfig mixed_cfg = seeded(spec.train, stream_seed(seed, 0x22), 2 * spec.steps);

    StagePlan plans[3] = {make_two_stage("syn_voted", digest, "real", cfg, cfg),
                          make_reverse("syn_voted", digest, "real", cfg, cfg),
                          make_one_stage_mixed("syn_voted", digest, "real", mixed_cfg)};
    std::array<double, 3> f{};
    for (std::size_t m = 0; m < 3; ++m) {
      plans[m].holdout = "holdout";
      plans[m].eval_every = spec.eval_every;
      f[m] = final_accuracy(run_stage_plan(plans[m], data, wb.base).metrics);
    }
    return f;
  });
  for (const auto& f : finals) {
    for (std::size_t m = 0; m < 3; ++m) result.rows[m].finals.push_back(f[m]);
  }
  for (auto& row : result.rows) {
    row.mean = mean_of(row.finals);
    row.std = std_of(row.finals);
  }
  result.verdict = result.rows[0].mean >= result.rows[1].mean && result.rows[0].mean >= result.rows[2].mean;
  return result;
}

AlphaSweepResult run_alpha_sweep(const ExperimentSpec& spec) {
  spec.validate();
  struct Cell {
    double rare = 0.0, general = 0.0, injected = 0.0;
  };
  const std::size_t n_seeds = spec.seeds.size();
  const auto cells = parallel_map<Cell>(spec.alphas.size() * n_seeds, spec.workers, [&](std::size_t idx) {
    const double alpha = spec.alphas[idx / n_seeds];
    const std::uint64_t seed = spec.seeds[idx % n_seeds];
    const Workbench wb = build_workbench(spec, seed, alpha, TruthKind::intrinsic, TruthKind::full);
    DatasetMap data{{"syn_voted", wb.synthetic_voted}, {"real", wb.real}, {"holdout", wb.holdout}};
    const TrainConfig cfg = seeded(spec.train, stream_seed(seed, 0x33), spec.steps);
    StagePlan plan = make_two_stage("syn_voted", wb.synthetic_voted.content_digest(), "real", cfg, cfg);
    plan.holdout = "holdout";
    plan.eval_every = spec.steps;
    const auto run = run_stage_plan(plan, data, wb.base);
    const auto acc = expected_accuracy(run.params, wb.holdout);
    return Cell{acc.rare, acc.general, wb.injected_fraction};
  });
  AlphaSweepResult result;
  for (std::size_t a = 0; a < spec.alphas.size(); ++a) {
    std::vector<double> rare, general, injected;
    for (std::size_t k = 0; k < n_seeds; ++k) {
      const Cell& c = cells[a * n_seeds + k];
      rare.push_back(c.rare);
      general.push_back(c.general);
      injected.push_back(c.injected);
    }
    AlphaRow row;
    row.alpha = spec.alphas[a];
    row.injected_fraction = mean_of(injected);
    row.rare_mean = mean_of(rare);
    row.rare_std = std_of(rare);
    row.general_mean = mean_of(general);
    row.general_std = std_of(general);
    result.rows.push_back(row);
  }
  return result;
}

std::vector<LongRunResult> run_long_run(const ExperimentSpec& spec) {
  spec.validate();
  return parallel_map<LongRunResult>(spec.seeds.size(), spec.workers, [&](std::size_t idx) {
    const std::uint64_t seed = spec.seeds[idx];
    const Workbench wb = build_workbench(spec, seed, spec.alpha, TruthKind::intrinsic, TruthKind::intrinsic);
    DatasetMap data{{"syn_voted", wb.synthetic_voted}, {"holdout", wb.holdout}};
    const TrainConfig cfg = seeded(spec.train, stream_seed(seed, 0x44), spec.steps);
    const auto run = run_stage_plan(
        single_stage("syn_voted", LabelMode::offline_pseudo, wb.synthetic_voted.content_digest(), cfg, spec.eval_every),
        data, wb.base);
    LongRunResult r;
    r.seed = seed;
    r.metrics = run.metrics;
    r.start_accuracy = run.initial.overall;
    r.end_accuracy = final_accuracy(run.metrics);
    r.collapse = collapse_flag(run.metrics, r.start_accuracy);
    r.pass = !r.collapse && r.end_accuracy >= r.start_accuracy;
    return r;
  });
}

// ---------------------------------------------------------------------------
// Reporting

namespace {

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const ChartSeries> series) {
  constexpr double W = 720, H = 420, L = 70, R = 170, Tp = 40, Bt = 50;
  static constexpr const char* kColors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - Bt - (y - y0) / (y1 - y0) * (H - Tp - Bt); };

  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<!-- data\nseries,x,y\n";
  for (const auto& se : series) {
    for (std::size_t i = 0; i < se.x.size(); ++i) s += se.name + ',' + fmt(se.x[i], "%.6g") + ',' + fmt(se.y[i]) + '\n';
  }
  s += "-->\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W, "%.0f") + "\" height=\"" + fmt(H, "%.0f") +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(W / 2, "%.1f") + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + xml_escape(title) + "</text>\n";
  s += "<line x1=\"" + fmt(L, "%.1f") + "\" y1=\"" + fmt(H - Bt, "%.1f") + "\" x2=\"" + fmt(W - R, "%.1f") + "\" y2=\"" +
       fmt(H - Bt, "%.1f") + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(L, "%.1f") + "\" y1=\"" + fmt(Tp, "%.1f") + "\" x2=\"" + fmt(L, "%.1f") + "\" y2=\"" +
       fmt(H - Bt, "%.1f") + "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
    s += "<text x=\"" + fmt(px(xv), "%.1f") + "\" y=\"" + fmt(H - Bt + 16, "%.1f") + "\" text-anchor=\"middle\">" +
         fmt(xv, "%.4g") + "</text>\n";
    s += "<text x=\"" + fmt(L - 6, "%.1f") + "\" y=\"" + fmt(py(yv) + 4, "%.1f") + "\" text-anchor=\"end\">" +
         fmt(yv, "%.3f") + "</text>\n";
  }
  s += "<text x=\"" + fmt((L + W - R) / 2, "%.1f") + "\" y=\"" + fmt(H - 12, "%.1f") + "\" text-anchor=\"middle\">" +
       xml_escape(x_label) + "</text>\n";
  s += "<text x=\"16\" y=\"" + fmt((Tp + H - Bt) / 2, "%.1f") + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fmt((Tp + H - Bt) / 2, "%.1f") + ")\">" + xml_escape(y_label) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& se = series[k];
    const char* color = kColors[k % std::size(kColors)];
    std::string pts;
    for (std::size_t i = 0; i < se.x.size(); ++i) {
      if (std::isnan(se.y[i])) continue;
      if (!pts.empty()) pts += ' ';
      pts += fmt(px(se.x[i]), "%.2f") + ',' + fmt(py(se.y[i]), "%.2f");
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = Tp + 18.0 * static_cast<double>(k);
    s += "<line x1=\"" + fmt(W - R + 12, "%.1f") + "\" y1=\"" + fmt(ly, "%.1f") + "\" x2=\"" + fmt(W - R + 32, "%.1f") +
         "\" y2=\"" + fmt(ly, "%.1f") + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fmt(W - R + 38, "%.1f") + "\" y=\"" + fmt(ly + 4, "%.1f") + "\">" + xml_escape(se.name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

namespace {

ChartSeries series_of(const std::string& name, std::span<const MetricsRecord> metrics, double MetricsRecord::*field) {
  ChartSeries s{name, {}, {}};
  for (const auto& m : metrics) {
    if (std::isnan(m.*field)) continue;
    s.x.push_back(static_cast<double>(m.step));
    s.y.push_back(m.*field);
  }
  return s;
}

std::filesystem::path run_root(const ExperimentSpec& spec) { return spec.out_dir / spec.name; }

}  // namespace

std::vector<std::filesystem::path> emit_report(const ExperimentSpec& spec, const DynamicsResult& r) {
  std::vector<std::filesystem::path> files;
  std::string summary =
      "seed,start_accuracy,online_peak_reward,online_peak_agreement,online_final,offline_final,offline_min,"
      "ground_truth_final,online_hacked,offline_tracks,pass\n";
  for (const auto& sr : r.seeds) {
    const auto dir = run_root(spec) / std::to_string(sr.seed);
    std::vector<ChartSeries> reward, acc, agree;
    for (const auto& c : sr.curves) {
      write_file(dir / ("metrics_" + c.label + ".csv"), metrics_csv(c.metrics), files);
      reward.push_back(series_of(c.label, c.metrics, &MetricsRecord::mean_reward));
      acc.push_back(series_of(c.label, c.metrics, &MetricsRecord::accuracy_holdout));
      agree.push_back(series_of(c.label, c.metrics, &MetricsRecord::agreement_fraction));
    }
    write_file(dir / "reward.svg", svg_line_chart("Training reward", "step", "mean reward", reward), files);
    write_file(dir / "holdout_accuracy.svg", svg_line_chart("Holdout accuracy", "step", "accuracy", acc), files);
    write_file(dir / "agreement.svg", svg_line_chart("Rollout agreement", "step", "agreement fraction", agree), files);
    summary += std::to_string(sr.seed) + ',' + fmt(sr.start_accuracy) + ',' + fmt(sr.online_peak_reward) + ',' +
               fmt(sr.online_peak_agreement) + ',' + fmt(sr.online_final) + ',' + fmt(sr.offline_final) + ',' +
               fmt(sr.offline_min) + ',' + fmt(sr.ground_truth_final) + ',' + (sr.online_hacked ? "1" : "0") + ',' +
               (sr.offline_tracks ? "1" : "0") + ',' + (sr.pass ? "1" : "0") + '\n';
  }
  summary += "# verdict," + std::string(r.verdict ? "pass" : "fail") + ",passing_seeds," + std::to_string(r.passing) + '\n';
  write_file(run_root(spec) / "summary.csv", summary, files);
  return files;
}

std::vector<std::filesystem::path> emit_report(const ExperimentSpec& spec, const AblationResult& r) {
  std::vector<std::filesystem::path> files;
  std::string table = "mode,mean,std";
  for (std::size_t i = 0; i < spec.seeds.size(); ++i) table += ",seed_" + std::to_string(spec.seeds[i]);
  table += '\n';
  std::vector<ChartSeries> series;
  for (const auto& row : r.rows) {
    table += row.mode + ',' + fmt(row.mean) + ',' + fmt(row.std);
    ChartSeries s{row.mode, {}, {}};
    for (std::size_t i = 0; i < row.finals.size(); ++i) {
      table += ',' + fmt(row.finals[i]);
      s.x.push_back(static_cast<double>(i));
      s.y.push_back(row.finals[i]);
    }
    table += '\n';
    series.push_back(std::move(s));
  }
  table += "# verdict," + std::string(r.verdict ? "pass" : "fail") + '\n';
  write_file(run_root(spec) / "stage_ablation.csv", table, files);
  write_file(run_root(spec) / "stage_ablation.svg",
             svg_line_chart("Final holdout accuracy by stage strategy", "seed index", "accuracy", series), files);
  return files;
}

std::vector<std::filesystem::path> emit_report(const ExperimentSpec& spec, const AlphaSweepResult& r) {
  std::vector<std::filesystem::path> files;
  std::string table = "alpha,injected_fraction,rare_mean,rare_std,general_mean,general_std\n";
  ChartSeries rare{"rare", {}, {}}, general{"general", {}, {}};
  for (const auto& row : r.rows) {
    table += fmt(row.alpha) + ',' + fmt(row.injected_fraction) + ',' + fmt(row.rare_mean) + ',' + fmt(row.rare_std) +
             ',' + fmt(row.general_mean) + ',' + fmt(row.general_std) + '\n';
    rare.x.push_back(row.alpha);
    rare.y.push_back(row.rare_mean);
    general.x.push_back(row.alpha);
    general.y.push_back(row.general_mean);
  }
  write_file(run_root(spec) / "alpha_sweep.csv", table, files);
  const ChartSeries both[] = {rare, general};
  write_file(run_root(spec) / "alpha_sweep.svg",
             svg_line_chart("Holdout accuracy vs injection threshold", "alpha", "accuracy", both), files);
  return files;
}

std::vector<std::filesystem::path> emit_report(const ExperimentSpec& spec, std::span<const LongRunResult> r) {
  std::vector<std::filesystem::path> files;
  std::string summary = "seed,start_accuracy,end_accuracy,collapse,pass\n";
  for (const auto& lr : r) {
    const auto dir = run_root(spec) / std::to_string(lr.seed);
    write_file(dir / "metrics_offline_pseudo.csv", metrics_csv(lr.metrics), files);
    const ChartSeries series[] = {series_of("reward", lr.metrics, &MetricsRecord::mean_reward),
                                  series_of("holdout accuracy", lr.metrics, &MetricsRecord::accuracy_holdout)};
    write_file(dir / "long_run.svg", svg_line_chart("Offline pseudo-label training", "step", "value", series), files);
    summary += std::to_string(lr.seed) + ',' + fmt(lr.start_accuracy) + ',' + fmt(lr.end_accuracy) + ',' +
               (lr.collapse ? "1" : "0") + ',' + (lr.pass ? "1" : "0") + '\n';
  }
  write_file(run_root(spec) / "summary.csv", summary, files);
  return files;
}

std::vector<std::filesystem::path> run_experiment(const ExperimentSpec& spec) {
  switch (spec.scenario) {
    case Scenario::labeling_dynamics: return emit_report(spec, run_labeling_dynamics(spec));
    case Scenario::stage_ablation: return emit_report(spec, run_stage_ablation(spec));
    case Scenario::alpha_sweep: return emit_report(spec, run_alpha_sweep(spec));
    case Scenario::long_run: {
      const auto r = run_long_run(spec);
      return emit_report(spec, std::span<const LongRunResult>(r));
    }
  }
  return {};
}

}  // namespace pseudolab
