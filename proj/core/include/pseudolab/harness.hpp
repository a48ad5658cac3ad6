#pragma once

#include "pseudolab/dataset.hpp"
#include "pseudolab/grpo.hpp"
#include "pseudolab/labeling.hpp"
#include "pseudolab/policy.hpp"
#include "pseudolab/retrieval.hpp"
#include "pseudolab/synthesis.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pseudolab {

/// Shape of the synthetic task family the experiments train on.
///
/// Feature columns are laid out as [bias | intrinsic | extrinsic | rare].
/// A hidden teacher matrix scores the option letters; the base policy copies
/// the teacher's intrinsic (and, weakly, rare) columns and knows nothing of
/// the extrinsic ones.
struct WorldConfig {
  std::size_t letters = 4;
  std::size_t intrinsic_dims = 8;
  std::size_t extrinsic_dims = 0;
  std::size_t rare_dims = 0;
  std::size_t response_length = 4;
  /// Scale of the base policy's copy of the intrinsic teacher columns.
  double base_confidence = 0.5;
  /// Scale of the base policy's copy of the rare teacher columns.
  double rare_knowledge = 0.0;
  /// Teacher weight of the extrinsic and rare columns relative to intrinsic.
  double extrinsic_strength = 1.0;
  double rare_strength = 1.0;
  /// Base-policy logit offset of the first option letter (answer-position bias).
  double letter_bias = 0.0;
  /// Logit margin that keeps the filler "reasoning" tokens in order.
  double scaffold_strength = 8.0;
  /// Share of generated real questions that are rare.
  double rare_fraction = 0.13;

  std::size_t dim() const noexcept { return 1 + intrinsic_dims + extrinsic_dims + rare_dims; }
};

enum class TruthKind { intrinsic, full };

class ToyWorld {
 public:
  ToyWorld(WorldConfig config, std::uint64_t seed);

  const WorldConfig& config() const noexcept { return config_; }

  /// Teacher answer for a question, restricted to its option letters.
  AnswerSymbol truth(const Question& q, TruthKind kind) const;

  /// Same questions with `label` replaced by the teacher answer.
  Dataset with_truth(const Dataset& d, TruthKind kind) const;

  /// Share of labeled entries whose label matches the teacher.
  double label_accuracy(const Dataset& d, TruthKind kind) const;

  /// Base policy: teacher-aligned letter weights plus the filler scaffold.
  PolicyParams base_policy() const;

  /// Real-style seed questions (`prefix`-0, `prefix`-1, ...), labeled by the teacher.
  Dataset make_questions(const std::string& prefix, std::size_t n, TruthKind kind, std::uint64_t stream) const;

  /// Knowledge corpus and rare-entity list, hash-embedded at `dim`.
  Corpus make_corpus(std::size_t n_docs, std::size_t dim) const;
  std::vector<RareEntity> make_entities(std::size_t n, std::size_t dim) const;

 private:
  WorldConfig config_;
  std::uint64_t seed_;
  std::vector<double> teacher_;  // letters x dim
};

enum class Scenario { labeling_dynamics, stage_ablation, alpha_sweep, long_run };
std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view s);

struct ExperimentSpec {
  std::string name = "experiment";
  Scenario scenario = Scenario::labeling_dynamics;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4};
  std::size_t n_syn = 2000;
  std::size_t n_real = 2000;
  std::size_t n_holdout = 1000;
  /// Steps per stage (long_run: total steps).
  std::size_t steps = 300;
  std::size_t eval_every = 5;
  double alpha = 0.25;
  std::vector<double> alphas = {0.0, 0.13, 0.25, 0.33, 0.5};
  std::filesystem::path out_dir = "runs";
  /// Threads for independent runs (seeds, modes, alphas); 0 uses all cores.
  std::size_t workers = 0;
  WorldConfig world;
  TrainConfig train;

  void validate() const;
};

/// Scenario defaults tuned for each experiment design.
ExperimentSpec default_spec(Scenario scenario);
ExperimentSpec spec_from_json(std::string_view text);
ExperimentSpec load_spec(const std::filesystem::path& path);

/// Everything a scenario needs for one seed: the world, datasets and base policy.
struct Workbench {
  ToyWorld world;
  PolicyParams base;
  Dataset real;            ///< teacher-labeled seed/real questions
  Dataset synthetic;       ///< unlabeled synthesized questions
  Dataset synthetic_voted; ///< offline majority-vote labels from the base policy
  Dataset synthetic_true;  ///< teacher labels (oracle upper bound)
  Dataset holdout;
  LabelReport label_report;
  double injected_fraction = 0.0;
};

/// Builds the full pipeline (seed questions, corpus, synthesis at `alpha`,
/// offline labeling) for one seed. `synthetic_truth` picks the teacher used
/// for synthetic questions; real and holdout questions use `real_truth`.
Workbench build_workbench(const ExperimentSpec& spec, std::uint64_t seed, double alpha, TruthKind synthetic_truth,
                          TruthKind real_truth);

/// Collapse: some step where agreement >= threshold while the most recent
/// holdout accuracy is below the starting accuracy.
bool collapse_flag(std::span<const MetricsRecord> metrics, double start_accuracy, double agreement_threshold = 0.99);

/// Last evaluated holdout accuracy in a metrics stream (NaN if none).
double final_accuracy(std::span<const MetricsRecord> metrics);

struct Curve {
  std::string label;
  std::vector<MetricsRecord> metrics;
};

struct DynamicsSeedResult {
  std::uint64_t seed = 0;
  double start_accuracy = 0.0;
  std::vector<Curve> curves;  ///< online_vote, offline_pseudo, ground_truth
  double online_peak_reward = 0.0;
  double online_peak_agreement = 0.0;
  double online_final = 0.0;
  double offline_final = 0.0;
  double offline_min = 0.0;
  double ground_truth_final = 0.0;
  bool online_hacked = false;
  bool offline_tracks = false;
  bool pass = false;
};

struct DynamicsResult {
  std::vector<DynamicsSeedResult> seeds;
  std::size_t passing = 0;
  bool verdict = false;  ///< at least 3 of 4 seeds (or all but one) pass
};

struct AblationRow {
  std::string mode;
  std::vector<double> finals;
  double mean = 0.0;
  double std = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;  ///< two_stage, reverse, one_stage_mixed
  bool verdict = false;           ///< two_stage mean >= both others
};

struct AlphaRow {
  double alpha = 0.0;
  double injected_fraction = 0.0;
  double rare_mean = 0.0, rare_std = 0.0;
  double general_mean = 0.0, general_std = 0.0;
};

struct AlphaSweepResult {
  std::vector<AlphaRow> rows;
};

struct LongRunResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> metrics;
  double start_accuracy = 0.0;
  double end_accuracy = 0.0;
  bool collapse = false;
  bool pass = false;
};

DynamicsResult run_labeling_dynamics(const ExperimentSpec& spec);
AblationResult run_stage_ablation(const ExperimentSpec& spec);
AlphaSweepResult run_alpha_sweep(const ExperimentSpec& spec);
std::vector<LongRunResult> run_long_run(const ExperimentSpec& spec);

struct ChartSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Standalone SVG line chart; the plotted data is embedded as CSV in a comment.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const ChartSeries> series);

/// Writes CSV tables and SVG charts under out_dir/name/... . Output bytes are
/// a pure function of the results. Returns the files written.
std::vector<std::filesystem::path> emit_report(const ExperimentSpec& spec, const DynamicsResult& r);
std::vector<std::filesystem::path> emit_report(const ExperimentSpec& spec, const AblationResult& r);
std::vector<std::filesystem::path> emit_report(const ExperimentSpec& spec, const AlphaSweepResult& r);
std::vector<std::filesystem::path> emit_report(const ExperimentSpec& spec, std::span<const LongRunResult> r);

/// Runs the scenario named by `spec.scenario` and emits its report.
std::vector<std::filesystem::path> run_experiment(const ExperimentSpec& spec);

}  // namespace pseudolab
