#pragma once

#include "pseudolab/dataset.hpp"
#include "pseudolab/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pseudolab {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

/// Parameters of the toy autoregressive policy.
///
/// The logits for the next token are W * phi(question) + B[prev], divided by
/// the temperature. At the first position there is no previous token and the
/// transition term is omitted. phi is a fixed hash feature map of the
/// question's feature seed (component 0 is a constant bias).
struct PolicyParams {
  std::vector<std::string> vocab;
  std::size_t dim = 0;
  /// Trailing feature columns that are only active for rare questions.
  std::size_t rare_block = 0;
  std::size_t response_length = 4;
  double temperature = 1.0;
  std::vector<double> W;  ///< vocab x dim, row-major
  std::vector<double> B;  ///< vocab x vocab, B[prev * V + next]

  std::size_t vocab_size() const noexcept { return vocab.size(); }
  double& w(std::size_t token, std::size_t j) { return W[token * dim + j]; }
  double w(std::size_t token, std::size_t j) const { return W[token * dim + j]; }
  double& b(std::size_t prev, std::size_t next) { return B[prev * vocab.size() + next]; }
  double b(std::size_t prev, std::size_t next) const { return B[prev * vocab.size() + next]; }

  std::optional<TokenId> token_id(std::string_view token) const;
  /// The option letter a token stands for, if it is a single uppercase letter.
  std::optional<AnswerSymbol> token_symbol(TokenId t) const;

  /// Throws std::invalid_argument on inconsistent shapes or non-finite values.
  void validate() const;

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

/// Parameter-shaped vector used for gradients and updates.
struct PolicyGradient {
  std::vector<double> W;
  std::vector<double> B;

  static PolicyGradient zeros_like(const PolicyParams& p);
  void add_scaled(const PolicyGradient& other, double scale);
  double max_abs() const;
};

/// Deep immutable copy of a parameter set (the reference / old policy).
class FrozenPolicy {
 public:
  explicit FrozenPolicy(const PolicyParams& p) : params_(std::make_shared<const PolicyParams>(p)) {}
  const PolicyParams& params() const noexcept { return *params_; }
  operator const PolicyParams&() const noexcept { return *params_; }

 private:
  std::shared_ptr<const PolicyParams> params_;
};

inline FrozenPolicy snapshot(const PolicyParams& p) { return FrozenPolicy(p); }

/// Hash feature vector of a question (length dim).
std::vector<double> question_features(const Question& q, std::size_t dim, std::size_t rare_block);

/// Per-question evaluator: caches phi and W*phi.
class QuestionScorer {
 public:
  QuestionScorer(const PolicyParams& params, const Question& q);

  const PolicyParams& params() const noexcept { return *params_; }
  std::span<const double> features() const noexcept { return phi_; }

  /// Log-probabilities over the vocabulary after `prev` (nullopt at start).
  void log_probs(std::optional<TokenId> prev, std::vector<double>& out) const;
  std::vector<double> probs(std::optional<TokenId> prev) const;

 private:
  const PolicyParams* params_;
  std::vector<double> phi_;
  std::vector<double> base_;
};

/// Probability vector over the vocabulary at `position`.
/// Throws std::out_of_range when position >= response_length.
std::vector<double> token_distribution(const PolicyParams& params, const Question& q, std::size_t position,
                                       std::optional<TokenId> prev);

struct RolloutGroup {
  std::string question_id;
  std::vector<TokenSeq> responses;
  std::vector<std::vector<double>> logprobs_old;
  std::vector<std::optional<AnswerSymbol>> extracted;

  std::size_t size() const noexcept { return responses.size(); }
};

/// The answer a response commits to: its last token, if that token is one of
/// the question's option letters.
std::optional<AnswerSymbol> response_answer(const PolicyParams& params, const Question& q, const TokenSeq& response);

/// Samples G independent responses. Throws std::invalid_argument when G < 2.
RolloutGroup sample_group(const PolicyParams& params, const Question& q, std::size_t G, Rng& rng);

/// Exact per-token log-probabilities of a response.
std::vector<double> sequence_logprob(const PolicyParams& params, const Question& q, const TokenSeq& response);
/// Token-string overload; throws std::invalid_argument on unknown tokens.
std::vector<double> sequence_logprob(const PolicyParams& params, const Question& q,
                                     const std::vector<std::string>& response);

TokenSeq encode_tokens(const PolicyParams& params, const std::vector<std::string>& tokens);

/// Exact KL(pi_theta(.|ctx) || pi_ref(.|ctx)) at each position of `response`.
std::vector<double> per_token_kl(const PolicyParams& params, const PolicyParams& ref, const Question& q,
                                 const TokenSeq& response);

/// Categorical KL(p || q) from log-probabilities.
double categorical_kl(std::span<const double> logp, std::span<const double> logq);

struct PolicyInitOptions {
  std::size_t vocab_size = 7;
  std::size_t letters = 4;
  std::size_t dim = 16;
  std::size_t rare_block = 0;
  std::size_t response_length = 4;
  double temperature = 1.0;
  double init_scale = 0.01;
  std::uint64_t seed = 0;
};

/// Vocabulary is the first `letters` option letters followed by filler
/// tokens "<r1>", "<r2>", ...; weights are N(0, init_scale^2).
PolicyParams init_policy(const PolicyInitOptions& opts);

/// SHA-256 over the canonical checkpoint body.
std::string policy_digest(const PolicyParams& p);
std::string policy_to_json(const PolicyParams& p);
PolicyParams policy_from_json(std::string_view text);
void save_policy(const PolicyParams& p, const std::filesystem::path& path);
/// Throws FormatError when the stored digest does not match the contents.
PolicyParams load_policy(const std::filesystem::path& path);

}  // namespace pseudolab
