#pragma once

#include "pseudolab/dataset.hpp"
#include "pseudolab/retrieval.hpp"
#include "pseudolab/rng.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pseudolab {

enum class Branch { inject, plain };
enum class GeneratorKind { local_template, external_client };

struct SynthesisConfig {
  double alpha = 0.25;
  std::size_t k = 4;
  std::size_t n_target = 1;
  std::uint64_t rng_seed = 0;
  GeneratorKind generator = GeneratorKind::local_template;

  void validate() const;
};

struct GenerationRequest {
  std::string id;  ///< id the generated question will carry
  Question seed_a;
  Question seed_b;
  std::optional<RareEntity> entity;
  std::vector<CorpusDoc> context;

  bool injected() const noexcept { return entity.has_value(); }
};

/// inject iff a uniform draw in [0, 1) falls below alpha.
Branch draw_branch(Rng& rng, double alpha);

/// Two distinct entries, uniform without replacement.
std::pair<Question, Question> sample_seed_pair(const Dataset& dataset, Rng& rng);

/// Stamps id, rarity, provenance, entity and context onto generated content.
/// Injected requests yield rare questions; plain ones are rare only when both
/// seeds are rare.
Question assemble_synthetic(const GenerationRequest& request, std::string text, std::vector<AnswerOption> options);

class QuestionGenerator {
 public:
  virtual ~QuestionGenerator() = default;
  virtual Question generate(const GenerationRequest& request, Rng& rng) = 0;
};

/// Deterministic stand-in for an LLM question writer.
///
/// Fuses the first half of seed A's wording with the second half of seed B's.
/// For injected requests the entity name is the correct option and the
/// distractors are other entity names; otherwise the correct position is
/// feature_seed(id) mod option count. The label is always left empty.
class LocalTemplateGenerator final : public QuestionGenerator {
 public:
  explicit LocalTemplateGenerator(std::vector<std::string> entity_names = {})
      : entity_names_(std::move(entity_names)) {}

  Question generate(const GenerationRequest& request, Rng& rng) override;

 private:
  std::vector<std::string> entity_names_;
};

/// Renders the generation prompt: the seed-only template, or the template
/// with a knowledge-context block when the request carries retrieved docs.
std::string render_generation_prompt(const GenerationRequest& request);

struct ExternalGeneratorConfig {
  std::string base_url = "http://127.0.0.1:8080";
  std::string path = "/generate";
  std::string auth_token;
  std::size_t max_attempts = 4;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds timeout{30};
};

class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& what, GenerationRequest request)
      : std::runtime_error(what), request_(std::move(request)) {}
  const GenerationRequest& request() const noexcept { return request_; }

 private:
  GenerationRequest request_;
};

/// HTTP client: POST {"prompt": ...}, expects {"question", "options": [{symbol, text}]}.
/// Retries network and parse failures with exponential backoff.
class ExternalGenerator final : public QuestionGenerator {
 public:
  explicit ExternalGenerator(ExternalGeneratorConfig config) : config_(std::move(config)) {}

  Question generate(const GenerationRequest& request, Rng& rng) override;

  std::size_t attempts_made() const noexcept { return attempts_; }

 private:
  ExternalGeneratorConfig config_;
  std::size_t attempts_ = 0;
};

/// Parses a generator response body; throws std::invalid_argument on bad shape.
std::pair<std::string, std::vector<AnswerOption>> parse_generation_response(std::string_view body);

/// Optional post-generation predicate; rejected questions are regenerated.
using QuestionFilter = std::function<bool(const Question&)>;

/// Runs the injection-branching pipeline. Request i derives its rng stream
/// from (rng_seed, i). Throws std::invalid_argument when alpha > 0 and the
/// corpus or entity list is empty, or when there are fewer than two seeds.
Dataset synthesize(const SynthesisConfig& config, const Dataset& seeds, const Corpus& corpus,
                   std::span<const RareEntity> entities, QuestionGenerator& generator,
                   const QuestionFilter& filter = {});

}  // namespace pseudolab
