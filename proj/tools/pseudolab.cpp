#include "pseudolab/dataset.hpp"
#include "pseudolab/grpo.hpp"
#include "pseudolab/harness.hpp"
#include "pseudolab/labeling.hpp"
#include "pseudolab/policy.hpp"
#include "pseudolab/retrieval.hpp"
#include "pseudolab/synthesis.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

namespace fs = std::filesystem;
using namespace pseudolab;

namespace {

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct IngestArgs {
  std::size_t dim = 256;
  fs::path in, out;
};

int ingest(const IngestArgs& a) {
  const Corpus corpus = load_corpus(a.in, a.dim);
  ensure_parent(a.out);
  save_corpus(corpus, a.out);
  std::fprintf(stderr, "ingested %zu documents (dim %zu) -> %s\n", corpus.size(), a.dim, a.out.c_str());
  return 0;
}

struct SynthArgs {
  double alpha = 0.25;
  std::size_t n = 4300;
  std::size_t k = 4;
  std::uint64_t seed = 0;
  fs::path seeds, corpus, entities, out;
  std::string generator = "local";
  std::string url = "http://127.0.0.1:8080";
  std::string endpoint = "/generate";
  std::string token_env = "PSEUDOLAB_GENERATOR_TOKEN";
  std::size_t attempts = 4;
};

int synth(const SynthArgs& a) {
  const Dataset seeds = load_dataset(a.seeds);
  const Corpus corpus = load_corpus(a.corpus);
  const auto entities = load_entities(a.entities, corpus.empty() ? std::nullopt : std::optional(corpus.dim()));

  SynthesisConfig cfg;
  cfg.alpha = a.alpha;
  cfg.n_target = a.n;
  cfg.k = a.k;
  cfg.rng_seed = a.seed;

  std::unique_ptr<QuestionGenerator> gen;
  if (a.generator == "local") {
    std::vector<std::string> names;
    for (const auto& e : entities) names.push_back(e.name);
    gen = std::make_unique<LocalTemplateGenerator>(std::move(names));
  } else {
    cfg.generator = GeneratorKind::external_client;
    ExternalGeneratorConfig ec;
    ec.base_url = a.url;
    ec.path = a.endpoint;
    ec.max_attempts = a.attempts;
    if (const char* tok = std::getenv(a.token_env.c_str())) ec.auth_token = tok;
    gen = std::make_unique<ExternalGenerator>(ec);
  }
  const Dataset out = synthesize(cfg, seeds, corpus, entities, *gen);
  ensure_parent(a.out);
  save_dataset(out, a.out);
  std::size_t injected = 0;
  for (const auto& q : out) injected += q.provenance == Provenance::synthetic_injected ? 1 : 0;
  std::fprintf(stderr, "synthesized %zu questions (%zu knowledge-injected) digest %s\n", out.size(), injected,
               out.content_digest().c_str());
  return 0;
}

struct InitArgs {
  PolicyInitOptions opts;
  fs::path out;
};

int policy_init(const InitArgs& a) {
  const PolicyParams p = init_policy(a.opts);
  ensure_parent(a.out);
  save_policy(p, a.out);
  std::printf("%s\n", policy_digest(p).c_str());
  return 0;
}

struct LabelArgs {
  fs::path policy, in, out, report;
  std::size_t G = 8;
  std::uint64_t seed = 0;
};

int label(const LabelArgs& a) {
  const PolicyParams base = load_policy(a.policy);
  const Dataset syn = load_dataset(a.in);
  const LabelResult r = label_offline(syn, base, a.G, a.seed);
  ensure_parent(a.out);
  save_dataset(r.dataset, a.out);
  write_text(a.report, r.report.to_json() + "\n");
  std::fprintf(stderr, "labeled %zu of %zu (dropped %zu) digest %s\n", r.report.labeled, r.report.total,
               r.report.dropped, r.report.output_digest.c_str());
  return 0;
}

struct TrainArgs {
  fs::path plan, policy, out, metrics;
  std::string ref_reset;
};

int train(const TrainArgs& a) {
  PlanFile pf = load_plan(a.plan);
  if (!a.ref_reset.empty()) pf.plan.ref_reset = parse_ref_reset(a.ref_reset);
  DatasetMap data;
  for (const auto& [key, path] : pf.dataset_paths) data.emplace(key, load_dataset(path));
  const PolicyParams base = load_policy(a.policy);
  const RunResult run = run_stage_plan(pf.plan, data, base, [](const MetricsRecord& m) {
    if (m.step % 50 == 0) {
      std::fprintf(stderr, "step %zu stage %zu reward %.3f agreement %.3f\n", m.step, m.stage, m.mean_reward,
                   m.agreement_fraction);
    }
  });
  ensure_parent(a.out);
  save_policy(run.params, a.out);
  write_text(a.metrics, metrics_csv(run.metrics));
  for (const auto& e : run.stage_evals) {
    std::fprintf(stderr, "after %s: holdout %.4f (rare %.4f, general %.4f)\n", e.name.c_str(), e.expected.overall,
                 e.expected.rare, e.expected.general);
  }
  std::printf("%s\n", policy_digest(run.params).c_str());
  return 0;
}

struct WorldArgs {
  std::uint64_t seed = 1;
  std::size_t n_real = 500, n_holdout = 300, n_docs = 400, n_entities = 40, dim = 64;
  std::string scenario = "stage_ablation";
  fs::path out = "world";
};

// Writes a self-contained toy task: labeled seeds, holdout, corpus documents,
// rare entities and the matching base policy.
int world(const WorldArgs& a) {
  const ExperimentSpec spec = default_spec(parse_scenario(a.scenario));
  const ToyWorld w(spec.world, a.seed);
  fs::create_directories(a.out);
  const TruthKind truth = spec.world.extrinsic_dims > 0 ? TruthKind::full : TruthKind::intrinsic;
  save_dataset(w.make_questions("real", a.n_real, truth, 1), a.out / "seeds.jsonl");
  save_dataset(w.make_questions("holdout", a.n_holdout, truth, 2), a.out / "holdout.jsonl");
  const Corpus corpus = w.make_corpus(a.n_docs, a.dim);
  std::string docs;
  for (const auto& d : corpus.docs()) {
    nlohmann::ordered_json j;
    j["doc_id"] = d.doc_id;
    j["text"] = d.text;
    docs += j.dump() + "\n";
  }
  write_text(a.out / "docs.jsonl", docs);
  const auto entities = w.make_entities(a.n_entities, a.dim);
  save_entities(entities, a.out / "rare.jsonl");
  save_policy(w.base_policy(), a.out / "base.ckpt");
  std::fprintf(stderr, "wrote toy task to %s\n", a.out.c_str());
  return 0;
}

int experiment(const fs::path& spec_path, const std::optional<fs::path>& out) {
  ExperimentSpec spec = load_spec(spec_path);
  if (out) spec.out_dir = *out;
  for (const auto& f : run_experiment(spec)) std::printf("%s\n", f.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-labeled RL training toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  IngestArgs ia;
  auto* c_ingest = app.add_subcommand("ingest-corpus", "Embed a document JSONL into a retrieval corpus");
  c_ingest->add_option("--dim", ia.dim, "Embedding dimension")->check(CLI::Range(8, 1 << 16));
  c_ingest->add_option("--in", ia.in, "Documents JSONL ({doc_id, text})")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--out", ia.out, "Corpus JSONL")->required();
  c_ingest->callback([&] { rc = ingest(ia); });

  SynthArgs sa;
  auto* c_syn = app.add_subcommand("synthesize", "Generate synthetic questions from seed pairs");
  c_syn->add_option("--alpha", sa.alpha, "Knowledge-injection probability")->check(CLI::Range(0.0, 1.0));
  c_syn->add_option("--n", sa.n, "Number of questions");
  c_syn->add_option("--k", sa.k, "Retrieved documents per injected question");
  c_syn->add_option("--seed", sa.seed, "RNG seed");
  c_syn->add_option("--seeds", sa.seeds, "Seed questions JSONL")->required()->check(CLI::ExistingFile);
  c_syn->add_option("--corpus", sa.corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  c_syn->add_option("--entities", sa.entities, "Rare entities JSONL")->required()->check(CLI::ExistingFile);
  c_syn->add_option("--out", sa.out, "Output JSONL")->required();
  c_syn->add_option("--generator", sa.generator, "local or external")->check(CLI::IsMember({"local", "external"}));
  c_syn->add_option("--url", sa.url, "External generator base URL");
  c_syn->add_option("--endpoint", sa.endpoint, "External generator path");
  c_syn->add_option("--token-env", sa.token_env, "Environment variable holding the bearer token");
  c_syn->add_option("--attempts", sa.attempts, "Attempts per request");
  c_syn->callback([&] { rc = synth(sa); });

  InitArgs pa;
  auto* c_policy = app.add_subcommand("policy", "Policy checkpoints");
  c_policy->require_subcommand(1);
  auto* c_init = c_policy->add_subcommand("init", "Write a randomly initialized policy");
  c_init->add_option("--vocab-size", pa.opts.vocab_size, "Vocabulary size")->required();
  c_init->add_option("--letters", pa.opts.letters, "Answer letters at the start of the vocabulary");
  c_init->add_option("--dim", pa.opts.dim, "Question feature dimension")->required();
  c_init->add_option("--rare-block", pa.opts.rare_block, "Trailing features active only on rare questions");
  c_init->add_option("--T", pa.opts.response_length, "Response length in tokens")->required();
  c_init->add_option("--temperature", pa.opts.temperature, "Sampling temperature");
  c_init->add_option("--init-scale", pa.opts.init_scale, "Weight std");
  c_init->add_option("--seed", pa.opts.seed, "RNG seed")->required();
  c_init->add_option("--out", pa.out, "Checkpoint path")->required();
  c_init->callback([&] { rc = policy_init(pa); });

  LabelArgs la;
  auto* c_label = app.add_subcommand("label", "Offline majority-vote labeling with a frozen policy");
  c_label->add_option("--policy", la.policy, "Base checkpoint")->required()->check(CLI::ExistingFile);
  c_label->add_option("--in", la.in, "Unlabeled JSONL")->required()->check(CLI::ExistingFile);
  c_label->add_option("--G", la.G, "Rollouts per question")->check(CLI::Range(2, 1 << 12));
  c_label->add_option("--seed", la.seed, "RNG seed");
  c_label->add_option("--out", la.out, "Labeled JSONL")->required();
  c_label->add_option("--report", la.report, "Report JSON")->required();
  c_label->callback([&] { rc = label(la); });

  TrainArgs ta;
  auto* c_train = app.add_subcommand("train", "Run a staged training plan");
  c_train->add_option("--plan", ta.plan, "Plan JSON")->required()->check(CLI::ExistingFile);
  c_train->add_option("--policy", ta.policy, "Starting checkpoint")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", ta.out, "Final checkpoint")->required();
  c_train->add_option("--metrics", ta.metrics, "Per-step metrics CSV")->required();
  c_train->add_option("--ref-reset", ta.ref_reset, "Override the plan's reference policy refresh")
      ->check(CLI::IsMember({"per-stage", "global"}));
  c_train->callback([&] { rc = train(ta); });

  WorldArgs wa;
  auto* c_world = app.add_subcommand("world", "Write a toy task (seeds, holdout, documents, entities, base policy)");
  c_world->add_option("--seed", wa.seed, "World seed");
  c_world->add_option("--scenario", wa.scenario, "Scenario whose world settings to use");
  c_world->add_option("--n-real", wa.n_real, "Seed questions");
  c_world->add_option("--n-holdout", wa.n_holdout, "Holdout questions");
  c_world->add_option("--n-docs", wa.n_docs, "Corpus documents");
  c_world->add_option("--dim", wa.dim, "Entity embedding dimension (match ingest-corpus --dim)");
  c_world->add_option("--out", wa.out, "Output directory");
  c_world->callback([&] { rc = world(wa); });

  fs::path spec_path;
  std::optional<fs::path> exp_out;
  auto* c_exp = app.add_subcommand("experiment", "Experiment harness");
  c_exp->require_subcommand(1);
  auto* c_run = c_exp->add_subcommand("run", "Run the scenario described by an experiment spec");
  c_run->add_option("--spec", spec_path, "Experiment spec JSON")->required()->check(CLI::ExistingFile);
  c_run->add_option("--out", exp_out, "Override the output directory");
  c_run->callback([&] { rc = experiment(spec_path, exp_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
