#include "pseudolab/grpo.hpp"

#include "pseudolab/labeling.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace pseudolab {

using ojson = nlohmann::ordered_json;

std::string_view to_string(LabelMode m) {
  switch (m) {
    case LabelMode::ground_truth: return "ground_truth";
    case LabelMode::offline_pseudo: return "offline_pseudo";
    case LabelMode::online_vote: return "online_vote";
  }
  return "ground_truth";
}

std::string_view to_string(PlanMode m) {
  switch (m) {
    case PlanMode::two_stage: return "two_stage";
    case PlanMode::reverse: return "reverse";
    case PlanMode::one_stage_mixed: return "one_stage_mixed";
    case PlanMode::custom: return "custom";
  }
  return "custom";
}

LabelMode parse_label_mode(std::string_view s) {
  if (s == "ground_truth") return LabelMode::ground_truth;
  if (s == "offline_pseudo") return LabelMode::offline_pseudo;
  if (s == "online_vote") return LabelMode::online_vote;
  throw std::invalid_argument("unknown label mode '" + std::string(s) + "'");
}

PlanMode parse_plan_mode(std::string_view s) {
  if (s == "two_stage") return PlanMode::two_stage;
  if (s == "reverse") return PlanMode::reverse;
  if (s == "one_stage_mixed") return PlanMode::one_stage_mixed;
  if (s == "custom") return PlanMode::custom;
  throw std::invalid_argument("unknown plan mode '" + std::string(s) + "'");
}

RefReset parse_ref_reset(std::string_view s) {
  if (s == "per-stage" || s == "per_stage") return RefReset::per_stage;
  if (s == "global") return RefReset::global;
  throw std::invalid_argument("unknown ref reset policy '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (G < 2) throw std::invalid_argument("train config: G must be at least 2");
  if (!(clip_eps > 0.0)) throw std::invalid_argument("train config: clip_eps must be positive");
  if (!(kl_beta >= 0.0)) throw std::invalid_argument("train config: kl_beta must be non-negative");
  if (!std::isfinite(learning_rate)) throw std::invalid_argument("train config: learning_rate must be finite");
  if (batch_questions < 1) throw std::invalid_argument("train config: batch_questions must be positive");
  if (updates_per_batch < 1) throw std::invalid_argument("train config: updates_per_batch must be positive");
}

AdvantageVector group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages: need at least two rewards");
  AdvantageVector a;
  const double n = static_cast<double>(rewards.size());
  a.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - a.mean) * (r - a.mean);
  a.std = std::sqrt(var / n);
  a.values.assign(rewards.size(), 0.0);
  if (a.std > 0.0) {
    for (std::size_t i = 0; i < rewards.size(); ++i) a.values[i] = (rewards[i] - a.mean) / a.std;
  }
  return a;
}

double clipped_term(double ratio, double advantage, double clip_eps) {
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

SurrogateResult clipped_surrogate_loss(const PolicyParams& params, const PolicyParams& ref, const Question& question,
                                       std::span<const TokenSeq> responses,
                                       std::span<const std::vector<double>> old_logprobs,
                                       std::span<const double> advantages, double clip_eps, double kl_beta) {
  const std::size_t G = responses.size();
  if (G == 0 || old_logprobs.size() != G || advantages.size() != G) {
    throw std::invalid_argument("clipped_surrogate_loss: responses, old log-probs and advantages differ in length");
  }
  if (params.vocab != ref.vocab || params.dim != ref.dim) {
    throw std::invalid_argument("clipped_surrogate_loss: policy and reference have different shapes");
  }
  const QuestionScorer cur(params, question);
  const QuestionScorer base(ref, question);
  const auto phi = cur.features();
  const std::size_t V = params.vocab_size();
  const double inv_t = 1.0 / params.temperature;

  SurrogateResult out;
  out.gradient = PolicyGradient::zeros_like(params);
  std::vector<double> lp, lq, p, dz(V);
  std::size_t tokens = 0, clipped_tokens = 0;
  double kl_sum = 0.0;

  for (std::size_t i = 0; i < G; ++i) {
    const TokenSeq& y = responses[i];
    if (y.empty()) continue;
    if (old_logprobs[i].size() != y.size()) {
      throw std::invalid_argument("clipped_surrogate_loss: old log-prob row length differs from response length");
    }
    const double weight = 1.0 / (static_cast<double>(G) * static_cast<double>(y.size()));
    const double A = advantages[i];
    std::optional<TokenId> prev;
    for (std::size_t t = 0; t < y.size(); ++t) {
      const TokenId tok = y[t];
      cur.log_probs(prev, lp);
      base.log_probs(prev, lq);
      p.resize(V);
      double kl = 0.0;
      for (std::size_t k = 0; k < V; ++k) {
        p[k] = std::exp(lp[k]);
        kl += p[k] * (lp[k] - lq[k]);
      }
      const double ratio = std::exp(lp[tok] - old_logprobs[i][t]);
      const double term = clipped_term(ratio, A, clip_eps);
      out.loss -= weight * (term - kl_beta * kl);

      const bool clipped = (A > 0.0 && ratio > 1.0 + clip_eps) || (A < 0.0 && ratio < 1.0 - clip_eps);
      clipped_tokens += clipped ? 1 : 0;
      ++tokens;
      kl_sum += kl;

      // d loss / d logits (pre-temperature).
      const double ratio_coeff = clipped ? 0.0 : -weight * A * ratio;
      for (std::size_t k = 0; k < V; ++k) {
        const double dlogp = (k == tok ? 1.0 : 0.0) - p[k];
        const double dkl = p[k] * (lp[k] - lq[k] - kl);
        dz[k] = inv_t * (ratio_coeff * dlogp + weight * kl_beta * dkl);
      }
      for (std::size_t k = 0; k < V; ++k) {
        if (dz[k] == 0.0) continue;
        double* gw = &out.gradient.W[k * params.dim];
        for (std::size_t j = 0; j < params.dim; ++j) gw[j] += dz[k] * phi[j];
        if (prev) out.gradient.B[*prev * V + k] += dz[k];
      }
      prev = tok;
    }
  }
  out.clip_fraction = tokens ? static_cast<double>(clipped_tokens) / static_cast<double>(tokens) : 0.0;
  out.mean_kl = tokens ? kl_sum / static_cast<double>(tokens) : 0.0;
  if (!std::isfinite(out.loss)) throw NumericError("clipped_surrogate_loss: non-finite loss for question " + question.id);
  return out;
}

std::vector<double> group_rewards(const Question& q, const RolloutGroup& group, LabelMode mode) {
  std::vector<double> rewards(group.size(), 0.0);
  if (mode == LabelMode::online_vote) {
    const auto symbols = q.option_symbols();
    const auto winner = label_online(group, symbols);
    if (!winner) return rewards;
    for (std::size_t i = 0; i < group.size(); ++i) rewards[i] = verification_reward(winner, group.extracted[i]);
    return rewards;
  }
  if (!q.label) {
    throw std::invalid_argument("question " + q.id + " has no label but label mode is " + std::string(to_string(mode)));
  }
  for (std::size_t i = 0; i < group.size(); ++i) rewards[i] = verification_reward(q.label, group.extracted[i]);
  return rewards;
}

MetricsRecord train_step(TrainState& state, std::span<const BatchItem> batch, const TrainConfig& config) {
  config.validate();
  MetricsRecord rec;
  rec.step = state.step;
  if (batch.empty()) {
    ++state.step;
    return rec;
  }
  const std::uint64_t step_seed = stream_seed(config.rng_seed, state.step);

  struct Rollout {
    const Question* q;
    RolloutGroup group;
    AdvantageVector adv;
  };
  std::vector<Rollout> rollouts;
  rollouts.reserve(batch.size());
  double reward_sum = 0.0, abs_adv_sum = 0.0;
  std::size_t reward_n = 0, agree = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Question& q = *batch[i].question;
    Rng rng(stream_seed(step_seed, i));
    RolloutGroup group = sample_group(state.params, q, config.G, rng);
    const auto rewards = group_rewards(q, group, batch[i].mode);
    AdvantageVector adv = group_advantages(rewards);
    for (std::size_t g = 0; g < rewards.size(); ++g) {
      reward_sum += rewards[g];
      abs_adv_sum += std::abs(adv.values[g]);
    }
    reward_n += rewards.size();
    const auto& ex = group.extracted;
    if (ex.front() && std::all_of(ex.begin(), ex.end(), [&](const auto& a) { return a == ex.front(); })) ++agree;
    rollouts.push_back({&q, std::move(group), std::move(adv)});
  }
  rec.mean_reward = reward_sum / static_cast<double>(reward_n);
  rec.mean_abs_advantage = abs_adv_sum / static_cast<double>(reward_n);
  rec.agreement_fraction = static_cast<double>(agree) / static_cast<double>(batch.size());

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (std::size_t u = 0; u < config.updates_per_batch; ++u) {
    PolicyGradient grad = PolicyGradient::zeros_like(state.params);
    double clip = 0.0, kl = 0.0;
    for (const auto& r : rollouts) {
      const auto res = clipped_surrogate_loss(state.params, state.reference, *r.q, r.group.responses,
                                              r.group.logprobs_old, r.adv.values, config.clip_eps, config.kl_beta);
      grad.add_scaled(res.gradient, inv_batch);
      clip += res.clip_fraction * inv_batch;
      kl += res.mean_kl * inv_batch;
    }
    if (!std::isfinite(grad.max_abs())) {
      throw NumericError("train_step: non-finite gradient at step " + std::to_string(state.step) + " (update " +
                         std::to_string(u) + ")");
    }
    if (u == 0) {
      rec.clip_fraction = clip;
      rec.mean_kl = kl;
    }
    for (std::size_t i = 0; i < grad.W.size(); ++i) state.params.W[i] -= config.learning_rate * grad.W[i];
    for (std::size_t i = 0; i < grad.B.size(); ++i) state.params.B[i] -= config.learning_rate * grad.B[i];
  }
  ++state.step;
  return rec;
}

double answer_probability(const PolicyParams& params, const Question& q, AnswerSymbol label) {
  const auto tok = params.token_id(label.str());
  if (!tok) return 0.0;
  const QuestionScorer scorer(params, q);
  const std::size_t V = params.vocab_size();
  std::vector<double> marg = scorer.probs(std::nullopt);
  std::vector<double> next(V);
  for (std::size_t t = 1; t < params.response_length; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t prev = 0; prev < V; ++prev) {
      if (marg[prev] == 0.0) continue;
      const auto p = scorer.probs(static_cast<TokenId>(prev));
      for (std::size_t k = 0; k < V; ++k) next[k] += marg[prev] * p[k];
    }
    marg.swap(next);
  }
  return marg[*tok];
}

std::optional<AnswerSymbol> greedy_answer(const PolicyParams& params, const Question& q) {
  const QuestionScorer scorer(params, q);
  TokenSeq seq;
  std::optional<TokenId> prev;
  std::vector<double> lp;
  for (std::size_t t = 0; t < params.response_length; ++t) {
    scorer.log_probs(prev, lp);
    const auto tok = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    seq.push_back(tok);
    prev = tok;
  }
  return response_answer(params, q, seq);
}

namespace {

struct SplitSum {
  double all = 0.0, rare = 0.0, general = 0.0;
  std::size_t n_all = 0, n_rare = 0, n_general = 0;

  void add(const Question& q, double v) {
    all += v;
    ++n_all;
    if (q.rarity == Rarity::rare) {
      rare += v;
      ++n_rare;
    } else {
      general += v;
      ++n_general;
    }
  }

  SplitAccuracy mean() const {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    return {n_all ? all / static_cast<double>(n_all) : nan, n_rare ? rare / static_cast<double>(n_rare) : nan,
            n_general ? general / static_cast<double>(n_general) : nan};
  }
};

void require_labels(const Dataset& eval) {
  if (!eval.fully_labeled()) throw std::invalid_argument("evaluate: evaluation questions need ground-truth labels");
}

}  // namespace

SplitAccuracy expected_accuracy(const PolicyParams& params, const Dataset& eval) {
  require_labels(eval);
  SplitSum s;
  for (const auto& q : eval) s.add(q, answer_probability(params, q, *q.label));
  return s.mean();
}

EvalReport evaluate(const PolicyParams& params, const Dataset& eval, std::size_t n_samples_per_q, std::size_t runs,
                    std::uint64_t seed) {
  require_labels(eval);
  EvalReport r;
  SplitSum greedy;
  for (const auto& q : eval) greedy.add(q, greedy_answer(params, q) == q.label ? 1.0 : 0.0);
  r.greedy = greedy.mean();
  r.expected = expected_accuracy(params, eval);
  r.runs = runs;
  if (runs == 0 || n_samples_per_q == 0) return r;

  std::vector<SplitAccuracy> per_run;
  for (std::size_t run = 0; run < runs; ++run) {
    SplitSum s;
    for (std::size_t i = 0; i < eval.size(); ++i) {
      const Question& q = eval[i];
      Rng rng(stream_seed(stream_seed(seed, run), i));
      const std::size_t G = std::max<std::size_t>(2, n_samples_per_q);
      const auto group = sample_group(params, q, G, rng);
      double hits = 0.0;
      for (std::size_t g = 0; g < n_samples_per_q; ++g) hits += group.extracted[g] == q.label ? 1.0 : 0.0;
      s.add(q, hits / static_cast<double>(n_samples_per_q));
    }
    per_run.push_back(s.mean());
  }
  const auto stats = [&](double SplitAccuracy::*field, double& mean, double& sd) {
    mean = 0.0;
    for (const auto& a : per_run) mean += a.*field;
    mean /= static_cast<double>(per_run.size());
    double var = 0.0;
    for (const auto& a : per_run) var += (a.*field - mean) * (a.*field - mean);
    sd = per_run.size() > 1 ? std::sqrt(var / static_cast<double>(per_run.size() - 1)) : 0.0;
  };
  stats(&SplitAccuracy::overall, r.sampled_mean.overall, r.sampled_std.overall);
  stats(&SplitAccuracy::rare, r.sampled_mean.rare, r.sampled_std.rare);
  stats(&SplitAccuracy::general, r.sampled_mean.general, r.sampled_std.general);
  return r;
}

void StagePlan::validate() const {
  if (stages.empty()) throw std::invalid_argument("stage plan: no stages");
  for (const auto& s : stages) {
    if (s.sources.empty()) throw std::invalid_argument("stage plan: stage '" + s.name + "' has no sources");
    s.config.validate();
    for (const auto& src : s.sources) {
      if (src.mode == LabelMode::offline_pseudo && src.digest.empty()) {
        throw std::invalid_argument("stage plan: offline source '" + src.dataset + "' must pin a digest");
      }
    }
  }
}

StagePlan make_two_stage(const std::string& synthetic, const std::string& synthetic_digest, const std::string& real,
                         const TrainConfig& synthetic_config, const TrainConfig& real_config) {
  StagePlan plan;
  plan.mode = PlanMode::two_stage;
  plan.stages.push_back({"self_supervised", {{synthetic, LabelMode::offline_pseudo, synthetic_digest}}, synthetic_config});
  plan.stages.push_back({"supervised", {{real, LabelMode::ground_truth, {}}}, real_config});
  return plan;
}

StagePlan make_reverse(const std::string& synthetic, const std::string& synthetic_digest, const std::string& real,
                       const TrainConfig& synthetic_config, const TrainConfig& real_config) {
  StagePlan plan;
  plan.mode = PlanMode::reverse;
  plan.stages.push_back({"supervised", {{real, LabelMode::ground_truth, {}}}, real_config});
  plan.stages.push_back({"self_supervised", {{synthetic, LabelMode::offline_pseudo, synthetic_digest}}, synthetic_config});
  return plan;
}

StagePlan make_one_stage_mixed(const std::string& synthetic, const std::string& synthetic_digest,
                               const std::string& real, const TrainConfig& config) {
  StagePlan plan;
  plan.mode = PlanMode::one_stage_mixed;
  plan.stages.push_back({"mixed",
                         {{synthetic, LabelMode::offline_pseudo, synthetic_digest}, {real, LabelMode::ground_truth, {}}},
                         config});
  return plan;
}

namespace {

void check_sources(const Stage& stage, const DatasetMap& datasets) {
  for (const auto& src : stage.sources) {
    const auto it = datasets.find(src.dataset);
    if (it == datasets.end()) throw std::invalid_argument("stage plan: unknown dataset '" + src.dataset + "'");
    const Dataset& d = it->second;
    if (src.mode == LabelMode::offline_pseudo) {
      if (!d.verify_digest() || d.content_digest() != src.digest) {
        throw DigestMismatch("offline dataset '" + src.dataset + "' digest " + d.content_digest() +
                             " does not match pinned " + src.digest);
      }
    }
    if (src.mode != LabelMode::online_vote && !d.fully_labeled()) {
      throw std::invalid_argument("dataset '" + src.dataset + "' has unlabeled questions but label mode is " +
                                  std::string(to_string(src.mode)));
    }
  }
}

}  // namespace

RunResult run_stage_plan(const StagePlan& plan, const DatasetMap& datasets, const PolicyParams& base,
                         const MetricsCallback& on_step) {
  plan.validate();
  base.validate();
  const Dataset* holdout = nullptr;
  if (plan.holdout) {
    const auto it = datasets.find(*plan.holdout);
    if (it == datasets.end()) throw std::invalid_argument("stage plan: unknown holdout dataset '" + *plan.holdout + "'");
    holdout = &it->second;
  }
  RunResult result{base, {}, {}, {}};
  TrainState state(base);
  if (holdout) result.initial = expected_accuracy(state.params, *holdout);

  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const Stage& stage = plan.stages[s];
    if (plan.ref_reset == RefReset::per_stage || s == 0) state.reference = snapshot(state.params);
    check_sources(stage, datasets);

    std::vector<BatchItem> items;
    for (const auto& src : stage.sources) {
      for (const auto& q : datasets.at(src.dataset)) items.push_back({&q, src.mode});
    }
    if (items.empty()) throw std::invalid_argument("stage '" + stage.name + "' has no questions");

    Rng order_rng(stream_seed(stage.config.rng_seed ^ 0x5eedULL, s));
    order_rng.shuffle(items.begin(), items.end());
    std::size_t cursor = 0;
    std::vector<BatchItem> batch;
    for (std::size_t k = 0; k < stage.config.steps; ++k) {
      batch.clear();
      while (batch.size() < stage.config.batch_questions) {
        if (cursor == items.size()) {
          check_sources(stage, datasets);
          order_rng.shuffle(items.begin(), items.end());
          cursor = 0;
        }
        batch.push_back(items[cursor++]);
      }
      MetricsRecord rec = train_step(state, batch, stage.config);
      rec.stage = s;
      const bool last = k + 1 == stage.config.steps;
      if (holdout && plan.eval_every > 0 && (rec.step % plan.eval_every == 0 || last)) {
        const auto acc = expected_accuracy(state.params, *holdout);
        rec.accuracy_holdout = acc.overall;
        rec.accuracy_rare = acc.rare;
        rec.accuracy_general = acc.general;
      }
      if (on_step) on_step(rec);
      result.metrics.push_back(rec);
    }
    if (holdout) {
      StageEval ev;
      ev.stage = s;
      ev.name = stage.name;
      ev.expected = expected_accuracy(state.params, *holdout);
      ev.greedy = evaluate(state.params, *holdout, 0, 0).greedy;
      result.stage_evals.push_back(ev);
    }
  }
  result.params = std::move(state.params);
  return result;
}

namespace {

TrainConfig config_from(const ojson& j) {
  TrainConfig c;
  c.G = j.value("G", c.G);
  c.clip_eps = j.value("clip_eps", c.clip_eps);
  c.kl_beta = j.value("kl_beta", c.kl_beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_questions = j.value("batch_questions", c.batch_questions);
  c.steps = j.value("steps", c.steps);
  c.updates_per_batch = j.value("updates_per_batch", c.updates_per_batch);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.validate();
  return c;
}

ojson config_to(const TrainConfig& c) {
  ojson j;
  j["G"] = c.G;
  j["clip_eps"] = c.clip_eps;
  j["kl_beta"] = c.kl_beta;
  j["learning_rate"] = c.learning_rate;
  j["batch_questions"] = c.batch_questions;
  j["steps"] = c.steps;
  j["updates_per_batch"] = c.updates_per_batch;
  j["rng_seed"] = c.rng_seed;
  return j;
}

}  // namespace

TrainConfig train_config_from_json(std::string_view text) { return config_from(ojson::parse(text)); }

PlanFile load_plan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open plan " + path.string());
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed plan JSON: ") + e.what());
  }
  PlanFile pf;
  try {
    std::map<std::string, std::string> digests;
    for (const auto& [key, d] : j.at("datasets").items()) {
      std::filesystem::path p = d.at("path").get<std::string>();
      if (p.is_relative()) p = path.parent_path() / p;
      pf.dataset_paths[key] = p;
      digests[key] = d.value("digest", std::string{});
    }
    pf.plan.mode = parse_plan_mode(j.value("mode", std::string("custom")));
    pf.plan.ref_reset = parse_ref_reset(j.value("ref_reset", std::string("per-stage")));
    pf.plan.eval_every = j.value("eval_every", std::size_t{1});
    if (j.contains("holdout") && !j["holdout"].is_null()) pf.plan.holdout = j["holdout"].get<std::string>();
    for (const auto& sj : j.at("stages")) {
      Stage st;
      st.name = sj.value("name", std::string("stage") + std::to_string(pf.plan.stages.size()));
      st.config = config_from(sj.value("config", ojson::object()));
      const std::string default_mode = sj.value("label_mode", std::string("ground_truth"));
      for (const auto& srcj : sj.at("sources")) {
        StageSource src;
        src.dataset = srcj.at("dataset").get<std::string>();
        src.mode = parse_label_mode(srcj.value("label_mode", default_mode));
        const auto dg = digests.find(src.dataset);
        if (dg == digests.end()) throw std::invalid_argument("stage references undeclared dataset '" + src.dataset + "'");
        src.digest = dg->second;
        st.sources.push_back(std::move(src));
      }
      pf.plan.stages.push_back(std::move(st));
    }
    pf.plan.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid plan: ") + e.what());
  }
  return pf;
}

std::string plan_to_json(const PlanFile& pf) {
  ojson j;
  j["mode"] = to_string(pf.plan.mode);
  j["ref_reset"] = pf.plan.ref_reset == RefReset::per_stage ? "per-stage" : "global";
  j["eval_every"] = pf.plan.eval_every;
  j["holdout"] = pf.plan.holdout ? ojson(*pf.plan.holdout) : ojson(nullptr);
  ojson ds = ojson::object();
  std::map<std::string, std::string> digests;
  for (const auto& st : pf.plan.stages) {
    for (const auto& src : st.sources) {
      if (!src.digest.empty()) digests[src.dataset] = src.digest;
    }
  }
  for (const auto& [key, path] : pf.dataset_paths) {
    ojson d;
    d["path"] = path.generic_string();
    if (digests.count(key)) d["digest"] = digests[key];
    ds[key] = std::move(d);
  }
  j["datasets"] = std::move(ds);
  ojson stages = ojson::array();
  for (const auto& st : pf.plan.stages) {
    ojson sj;
    sj["name"] = st.name;
    ojson sources = ojson::array();
    for (const auto& src : st.sources) {
      ojson s;
      s["dataset"] = src.dataset;
      s["label_mode"] = to_string(src.mode);
      sources.push_back(std::move(s));
    }
    sj["sources"] = std::move(sources);
    sj["config"] = config_to(st.config);
    stages.push_back(std::move(sj));
  }
  j["stages"] = std::move(stages);
  return j.dump(2) + "\n";
}

namespace {

std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string metrics_csv(std::span<const MetricsRecord> metrics) {
  std::string out =
      "step,stage,mean_reward,accuracy_holdout,accuracy_rare,accuracy_general,agreement_fraction,mean_kl,clip_fraction\n";
  for (const auto& m : metrics) {
    out += std::to_string(m.step) + ',' + std::to_string(m.stage) + ',' + fmt_num(m.mean_reward) + ',' +
           fmt_num(m.accuracy_holdout) + ',' + fmt_num(m.accuracy_rare) + ',' + fmt_num(m.accuracy_general) + ',' +
           fmt_num(m.agreement_fraction) + ',' + fmt_num(m.mean_kl) + ',' + fmt_num(m.clip_fraction) + '\n';
  }
  return out;
}

}  // namespace pseudolab
