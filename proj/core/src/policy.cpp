#include "pseudolab/policy.hpp"

#include "pseudolab/digest.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pseudolab {

using ojson = nlohmann::ordered_json;

std::optional<TokenId> PolicyParams::token_id(std::string_view token) const {
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i] == token) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}

std::optional<AnswerSymbol> PolicyParams::token_symbol(TokenId t) const {
  const auto& s = vocab.at(t);
  if (s.size() == 1 && s[0] >= 'A' && s[0] <= 'Z') return AnswerSymbol(s[0]);
  return std::nullopt;
}

void PolicyParams::validate() const {
  const std::size_t V = vocab.size();
  if (V < 2) throw std::invalid_argument("policy: vocabulary needs at least 2 tokens");
  if (dim < 1) throw std::invalid_argument("policy: feature dimension must be positive");
  if (rare_block >= dim) throw std::invalid_argument("policy: rare_block must be smaller than dim");
  if (response_length < 1) throw std::invalid_argument("policy: response length must be at least 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("policy: temperature must be positive and finite");
  }
  if (W.size() != V * dim) throw std::invalid_argument("policy: W has wrong size");
  if (B.size() != V * V) throw std::invalid_argument("policy: B has wrong size");
  const auto finite = [](double x) { return std::isfinite(x); };
  if (!std::all_of(W.begin(), W.end(), finite) || !std::all_of(B.begin(), B.end(), finite)) {
    throw std::invalid_argument("policy: non-finite parameter");
  }
  for (std::size_t i = 0; i < V; ++i) {
    for (std::size_t j = i + 1; j < V; ++j) {
      if (vocab[i] == vocab[j]) throw std::invalid_argument("policy: duplicate token '" + vocab[i] + "'");
    }
  }
}

PolicyGradient PolicyGradient::zeros_like(const PolicyParams& p) {
  return PolicyGradient{std::vector<double>(p.W.size(), 0.0), std::vector<double>(p.B.size(), 0.0)};
}

void PolicyGradient::add_scaled(const PolicyGradient& other, double scale) {
  for (std::size_t i = 0; i < W.size(); ++i) W[i] += scale * other.W[i];
  for (std::size_t i = 0; i < B.size(); ++i) B[i] += scale * other.B[i];
}

double PolicyGradient::max_abs() const {
  double m = 0.0;
  for (double x : W) m = std::max(m, std::abs(x));
  for (double x : B) m = std::max(m, std::abs(x));
  return m;
}

std::vector<double> question_features(const Question& q, std::size_t dim, std::size_t rare_block) {
  std::vector<double> phi(dim, 0.0);
  if (dim == 0) return phi;
  phi[0] = 1.0;
  const std::uint64_t seed = q.feature_seed();
  // Uniform on [-sqrt(3), sqrt(3)): unit variance, exact arithmetic only.
  constexpr double kScale = 1.7320508075688772;
  const std::size_t active_end = q.rarity == Rarity::rare ? dim : dim - rare_block;
  for (std::size_t j = 1; j < active_end; ++j) {
    const double u = static_cast<double>(stream_seed(seed, j) >> 11) * 0x1.0p-53;
    phi[j] = (2.0 * u - 1.0) * kScale;
  }
  return phi;
}

QuestionScorer::QuestionScorer(const PolicyParams& params, const Question& q)
    : params_(&params), phi_(question_features(q, params.dim, params.rare_block)), base_(params.vocab_size(), 0.0) {
  const std::size_t V = params.vocab_size();
  for (std::size_t k = 0; k < V; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < params.dim; ++j) s += params.w(k, j) * phi_[j];
    base_[k] = s;
  }
}

void QuestionScorer::log_probs(std::optional<TokenId> prev, std::vector<double>& out) const {
  const std::size_t V = params_->vocab_size();
  const double inv_t = 1.0 / params_->temperature;
  out.resize(V);
  double mx = -INFINITY;
  for (std::size_t k = 0; k < V; ++k) {
    double z = base_[k];
    if (prev) z += params_->b(*prev, k);
    out[k] = z * inv_t;
    mx = std::max(mx, out[k]);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < V; ++k) sum += std::exp(out[k] - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t k = 0; k < V; ++k) out[k] -= lse;
}

std::vector<double> QuestionScorer::probs(std::optional<TokenId> prev) const {
  std::vector<double> lp;
  log_probs(prev, lp);
  for (double& x : lp) x = std::exp(x);
  return lp;
}

std::vector<double> token_distribution(const PolicyParams& params, const Question& q, std::size_t position,
                                       std::optional<TokenId> prev) {
  if (position >= params.response_length) throw std::out_of_range("token_distribution: position beyond response length");
  if (prev && *prev >= params.vocab_size()) throw std::out_of_range("token_distribution: unknown previous token");
  return QuestionScorer(params, q).probs(position == 0 ? std::nullopt : prev);
}

std::optional<AnswerSymbol> response_answer(const PolicyParams& params, const Question& q, const TokenSeq& response) {
  if (response.empty()) return std::nullopt;
  const auto sym = params.token_symbol(response.back());
  if (sym && q.has_option(*sym)) return sym;
  return std::nullopt;
}

RolloutGroup sample_group(const PolicyParams& params, const Question& q, std::size_t G, Rng& rng) {
  if (G < 2) throw std::invalid_argument("sample_group: group size must be at least 2");
  const QuestionScorer scorer(params, q);
  const std::size_t T = params.response_length;
  RolloutGroup group;
  group.question_id = q.id;
  group.responses.reserve(G);
  group.logprobs_old.reserve(G);
  std::vector<double> lp, p;
  for (std::size_t g = 0; g < G; ++g) {
    TokenSeq seq;
    std::vector<double> lps;
    seq.reserve(T);
    lps.reserve(T);
    std::optional<TokenId> prev;
    for (std::size_t t = 0; t < T; ++t) {
      scorer.log_probs(prev, lp);
      p.resize(lp.size());
      for (std::size_t k = 0; k < lp.size(); ++k) p[k] = std::exp(lp[k]);
      const auto tok = static_cast<TokenId>(rng.categorical(p));
      seq.push_back(tok);
      lps.push_back(lp[tok]);
      prev = tok;
    }
    group.extracted.push_back(response_answer(params, q, seq));
    group.responses.push_back(std::move(seq));
    group.logprobs_old.push_back(std::move(lps));
  }
  return group;
}

std::vector<double> sequence_logprob(const PolicyParams& params, const Question& q, const TokenSeq& response) {
  const QuestionScorer scorer(params, q);
  std::vector<double> out;
  out.reserve(response.size());
  std::vector<double> lp;
  std::optional<TokenId> prev;
  for (TokenId tok : response) {
    if (tok >= params.vocab_size()) throw std::invalid_argument("sequence_logprob: token id out of range");
    scorer.log_probs(prev, lp);
    out.push_back(lp[tok]);
    prev = tok;
  }
  return out;
}

TokenSeq encode_tokens(const PolicyParams& params, const std::vector<std::string>& tokens) {
  TokenSeq out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    const auto id = params.token_id(t);
    if (!id) throw std::invalid_argument("unknown token '" + t + "'");
    out.push_back(*id);
  }
  return out;
}

std::vector<double> sequence_logprob(const PolicyParams& params, const Question& q,
                                     const std::vector<std::string>& response) {
  return sequence_logprob(params, q, encode_tokens(params, response));
}

double categorical_kl(std::span<const double> logp, std::span<const double> logq) {
  double kl = 0.0;
  for (std::size_t k = 0; k < logp.size(); ++k) kl += std::exp(logp[k]) * (logp[k] - logq[k]);
  return std::max(kl, 0.0);
}

std::vector<double> per_token_kl(const PolicyParams& params, const PolicyParams& ref, const Question& q,
                                 const TokenSeq& response) {
  if (params.vocab != ref.vocab) throw std::invalid_argument("per_token_kl: policies use different vocabularies");
  const QuestionScorer cur(params, q);
  const QuestionScorer base(ref, q);
  std::vector<double> out;
  out.reserve(response.size());
  std::vector<double> lp, lq;
  std::optional<TokenId> prev;
  for (TokenId tok : response) {
    cur.log_probs(prev, lp);
    base.log_probs(prev, lq);
    out.push_back(categorical_kl(lp, lq));
    prev = tok;
  }
  return out;
}

PolicyParams init_policy(const PolicyInitOptions& opts) {
  if (opts.letters < 2 || opts.letters > 8) throw std::invalid_argument("policy init: letters must be in [2, 8]");
  if (opts.vocab_size < opts.letters) throw std::invalid_argument("policy init: vocab size smaller than letter count");
  PolicyParams p;
  for (std::size_t i = 0; i < opts.letters; ++i) p.vocab.push_back(std::string(1, static_cast<char>('A' + i)));
  for (std::size_t i = opts.letters; i < opts.vocab_size; ++i) {
    p.vocab.push_back("<r" + std::to_string(i - opts.letters + 1) + ">");
  }
  p.dim = opts.dim;
  p.rare_block = opts.rare_block;
  p.response_length = opts.response_length;
  p.temperature = opts.temperature;
  const std::size_t V = p.vocab.size();
  p.W.resize(V * p.dim);
  p.B.resize(V * V);
  Rng rng(opts.seed);
  for (double& x : p.W) x = opts.init_scale * rng.normal();
  for (double& x : p.B) x = opts.init_scale * rng.normal();
  p.validate();
  return p;
}

namespace {

ojson policy_body(const PolicyParams& p) {
  ojson j;
  j["format"] = "pseudolab-policy-v1";
  j["vocab"] = p.vocab;
  j["dim"] = p.dim;
  j["rare_block"] = p.rare_block;
  j["T"] = p.response_length;
  j["temperature"] = p.temperature;
  j["W"] = p.W;
  j["B"] = p.B;
  return j;
}

}  // namespace

std::string policy_digest(const PolicyParams& p) { return sha256_hex(policy_body(p).dump()); }

std::string policy_to_json(const PolicyParams& p) {
  ojson j = policy_body(p);
  j["digest"] = sha256_hex(j.dump());
  return j.dump() + "\n";
}

PolicyParams policy_from_json(std::string_view text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed policy checkpoint: ") + e.what());
  }
  PolicyParams p;
  try {
    if (j.value("format", std::string{}) != "pseudolab-policy-v1") throw FormatError("unknown checkpoint format");
    p.vocab = j.at("vocab").get<std::vector<std::string>>();
    p.dim = j.at("dim").get<std::size_t>();
    p.rare_block = j.value("rare_block", std::size_t{0});
    p.response_length = j.at("T").get<std::size_t>();
    p.temperature = j.at("temperature").get<double>();
    p.W = j.at("W").get<std::vector<double>>();
    p.B = j.at("B").get<std::vector<double>>();
    p.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid policy checkpoint: ") + e.what());
  }
  if (j.contains("digest") && j["digest"].get<std::string>() != policy_digest(p)) {
    throw FormatError("policy checkpoint digest mismatch");
  }
  return p;
}

void save_policy(const PolicyParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << policy_to_json(p);
}

PolicyParams load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return policy_from_json(ss.str());
}

}  // namespace pseudolab
