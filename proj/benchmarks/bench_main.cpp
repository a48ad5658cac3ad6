#include "pseudolab/grpo.hpp"
#include "pseudolab/labeling.hpp"
#include "pseudolab/retrieval.hpp"

#include <benchmark/benchmark.h>

using namespace pseudolab;

namespace {

std::vector<CorpusDoc> random_corpus(std::size_t n, std::size_t dim) {
  Rng rng(1);
  std::vector<CorpusDoc> docs(n);
  for (std::size_t i = 0; i < n; ++i) {
    docs[i].doc_id = "doc-" + std::to_string(i);
    for (std::size_t j = 0; j < dim; ++j) docs[i].embedding.push_back(rng.normal());
  }
  return docs;
}

Question four_option_question() {
  Question q;
  q.id = "bench";
  q.text = "benchmark question";
  for (char c = 'A'; c <= 'D'; ++c) q.options.push_back({AnswerSymbol(c), std::string(1, c)});
  return q;
}

void BM_TopK(benchmark::State& state) {
  const auto docs = random_corpus(static_cast<std::size_t>(state.range(0)), 64);
  const RareEntity e{"e", docs.front().embedding};
  for (auto _ : state) benchmark::DoNotOptimize(retrieve_top_k(e, docs, 8));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TopK)->Arg(100)->Arg(2000)->Arg(20000);

void BM_SurrogateGradient(benchmark::State& state) {
  PolicyInitOptions o;
  o.dim = static_cast<std::size_t>(state.range(0));
  o.init_scale = 0.5;
  const auto p = init_policy(o);
  const auto q = four_option_question();
  Rng rng(2);
  const auto g = sample_group(p, q, 8, rng);
  const std::vector<double> adv = {1.5, -0.5, -0.5, 1.5, -0.5, -0.5, -0.5, -0.5};
  for (auto _ : state) {
    benchmark::DoNotOptimize(clipped_surrogate_loss(p, p, q, g.responses, g.logprobs_old, adv, 0.2, 1e-3));
  }
}
BENCHMARK(BM_SurrogateGradient)->Arg(16)->Arg(128);

void BM_MajorityVote(benchmark::State& state) {
  const auto q = four_option_question();
  const auto options = q.option_symbols();
  Rng rng(3);
  std::vector<std::optional<AnswerSymbol>> answers;
  for (int i = 0; i < state.range(0); ++i) answers.emplace_back(AnswerSymbol(static_cast<char>('A' + rng.uniform_index(4))));
  for (auto _ : state) benchmark::DoNotOptimize(majority_vote(answers, options));
}
BENCHMARK(BM_MajorityVote)->Arg(8)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
  PolicyInitOptions o;
  o.init_scale = 0.3;
  TrainState ts(init_policy(o));
  std::vector<Question> qs;
  for (int i = 0; i < 32; ++i) {
    auto q = four_option_question();
    q.id = "b" + std::to_string(i);
    q.label = AnswerSymbol('A');
    qs.push_back(q);
  }
  std::vector<BatchItem> batch;
  for (const auto& q : qs) batch.push_back({&q, LabelMode::ground_truth});
  TrainConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(ts, batch, cfg));
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
