#pragma once

#include "pseudolab/dataset.hpp"
#include "pseudolab/policy.hpp"
#include "pseudolab/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pseudolab {

enum class LabelMode { ground_truth, offline_pseudo, online_vote };
enum class PlanMode { two_stage, reverse, one_stage_mixed, custom };
enum class RefReset { per_stage, global };

std::string_view to_string(LabelMode m);
std::string_view to_string(PlanMode m);
LabelMode parse_label_mode(std::string_view s);
PlanMode parse_plan_mode(std::string_view s);
RefReset parse_ref_reset(std::string_view s);

struct TrainConfig {
  std::size_t G = 8;
  double clip_eps = 0.2;
  double kl_beta = 1e-3;
  double learning_rate = 0.1;
  std::size_t batch_questions = 32;
  std::size_t steps = 300;
  /// Gradient updates per rollout batch; 1 keeps training strictly on-policy.
  std::size_t updates_per_batch = 1;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Group-normalized rewards: (r_i - mean) / population std, or all zeros when
/// the group is unanimous.
struct AdvantageVector {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;
};

/// Throws std::invalid_argument when fewer than two rewards are given.
AdvantageVector group_advantages(std::span<const double> rewards);

/// min(c * A, clip(c, 1 - eps, 1 + eps) * A).
double clipped_term(double ratio, double advantage, double clip_eps);

struct SurrogateResult {
  double loss = 0.0;
  PolicyGradient gradient;
  double clip_fraction = 0.0;  ///< share of tokens whose ratio path is clipped
  double mean_kl = 0.0;        ///< token-averaged exact KL to the reference
};

/// Raised when the loss or its gradient becomes non-finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Clipped token-level surrogate with a KL penalty for one rollout group:
///   loss = -(1/G) sum_i (1/|y_i|) sum_t ( min(c A_i, clip(c) A_i) - beta KL_t )
/// with c = pi_theta / pi_old per token. The gradient is exact.
SurrogateResult clipped_surrogate_loss(const PolicyParams& params, const PolicyParams& ref, const Question& question,
                                       std::span<const TokenSeq> responses,
                                       std::span<const std::vector<double>> old_logprobs,
                                       std::span<const double> advantages, double clip_eps, double kl_beta);

struct MetricsRecord {
  std::size_t step = 0;
  std::size_t stage = 0;
  double mean_reward = 0.0;
  double mean_abs_advantage = 0.0;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
  /// Share of batch questions whose G answers are all the same option.
  double agreement_fraction = 0.0;
  double accuracy_holdout = std::numeric_limits<double>::quiet_NaN();
  double accuracy_rare = std::numeric_limits<double>::quiet_NaN();
  double accuracy_general = std::numeric_limits<double>::quiet_NaN();
};

struct TrainState {
  PolicyParams params;
  FrozenPolicy reference;
  std::size_t step = 0;

  explicit TrainState(PolicyParams p) : params(std::move(p)), reference(params) {}
};

struct BatchItem {
  const Question* question;
  LabelMode mode;
};

/// Per-rollout rewards for one group under a label source. Online voting
/// rewards agreement with the group's own majority (all zeros if no rollout
/// parses). Throws std::invalid_argument for a missing label otherwise.
std::vector<double> group_rewards(const Question& q, const RolloutGroup& group, LabelMode mode);

/// One rollout batch followed by `updates_per_batch` gradient-descent steps.
/// Rollouts for item i use the rng stream (rng_seed, step, i).
MetricsRecord train_step(TrainState& state, std::span<const BatchItem> batch, const TrainConfig& config);

struct SplitAccuracy {
  double overall = std::numeric_limits<double>::quiet_NaN();
  double rare = std::numeric_limits<double>::quiet_NaN();
  double general = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
  SplitAccuracy greedy;    ///< greedy decoding
  SplitAccuracy expected;  ///< exact probability of answering correctly when sampling
  SplitAccuracy sampled_mean;
  SplitAccuracy sampled_std;
  std::size_t runs = 0;
};

/// Exact per-question probability that a sampled response answers `label`.
double answer_probability(const PolicyParams& params, const Question& q, AnswerSymbol label);
/// Answer produced by greedy (argmax) decoding, if it is an option.
std::optional<AnswerSymbol> greedy_answer(const PolicyParams& params, const Question& q);

/// Exact expected accuracy split by rarity (the holdout metric used in training logs).
SplitAccuracy expected_accuracy(const PolicyParams& params, const Dataset& eval);

/// Greedy and exact accuracy plus `runs` seeded sampling passes of
/// n_samples_per_q draws per question. Requires ground-truth labels.
EvalReport evaluate(const PolicyParams& params, const Dataset& eval, std::size_t n_samples_per_q,
                    std::size_t runs = 4, std::uint64_t seed = 0);

struct StageSource {
  std::string dataset;  ///< key into the dataset map
  LabelMode mode = LabelMode::ground_truth;
  /// Pinned content digest; required for offline pseudo-labeled sources.
  std::string digest;
};

struct Stage {
  std::string name;
  std::vector<StageSource> sources;
  TrainConfig config;
};

struct StagePlan {
  PlanMode mode = PlanMode::custom;
  RefReset ref_reset = RefReset::per_stage;
  std::vector<Stage> stages;
  std::optional<std::string> holdout;  ///< dataset key used for evaluation
  std::size_t eval_every = 1;

  void validate() const;
};

/// Self-labeled synthetic stage, then ground-truth real stage.
StagePlan make_two_stage(const std::string& synthetic, const std::string& synthetic_digest, const std::string& real,
                         const TrainConfig& synthetic_config, const TrainConfig& real_config);
/// Mirror of make_two_stage.
StagePlan make_reverse(const std::string& synthetic, const std::string& synthetic_digest, const std::string& real,
                       const TrainConfig& synthetic_config, const TrainConfig& real_config);
/// Single stage over the shuffled union; each example keeps its label source.
StagePlan make_one_stage_mixed(const std::string& synthetic, const std::string& synthetic_digest,
                               const std::string& real, const TrainConfig& config);

class DigestMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageEval {
  std::size_t stage = 0;
  std::string name;
  SplitAccuracy expected;
  SplitAccuracy greedy;
};

struct RunResult {
  PolicyParams params;
  std::vector<MetricsRecord> metrics;
  std::vector<StageEval> stage_evals;
  SplitAccuracy initial;
};

using DatasetMap = std::map<std::string, Dataset>;
using MetricsCallback = std::function<void(const MetricsRecord&)>;

/// Runs the stages in order. The reference policy is re-snapshotted at each
/// stage start (RefReset::per_stage) or once (RefReset::global). Each stage
/// walks its sources in per-epoch shuffled order; offline sources have their
/// digest re-verified at every epoch. Throws DigestMismatch on a breach.
RunResult run_stage_plan(const StagePlan& plan, const DatasetMap& datasets, const PolicyParams& base,
                         const MetricsCallback& on_step = {});

/// Plan JSON: {mode, ref_reset, eval_every, holdout?, datasets: {key: {path, digest?}},
/// stages: [{name, sources: [{dataset, label_mode}], config: {...}}]}.
struct PlanFile {
  StagePlan plan;
  std::map<std::string, std::filesystem::path> dataset_paths;
};
PlanFile load_plan(const std::filesystem::path& path);
std::string plan_to_json(const PlanFile& plan);
TrainConfig train_config_from_json(std::string_view json_object_text);

/// CSV with columns step, stage, mean_reward, accuracy_holdout, accuracy_rare,
/// accuracy_general, agreement_fraction, mean_kl, clip_fraction.
std::string metrics_csv(std::span<const MetricsRecord> metrics);

}  // namespace pseudolab
