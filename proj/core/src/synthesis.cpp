#include "pseudolab/synthesis.hpp"

#include "pseudolab/digest.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace pseudolab {

void SynthesisConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("synthesis: alpha must lie in [0, 1]");
  if (n_target < 1) throw std::invalid_argument("synthesis: n_target must be at least 1");
  if (k < 1) throw std::invalid_argument("synthesis: retrieval depth k must be at least 1");
}

Branch draw_branch(Rng& rng, double alpha) { return rng.uniform() < alpha ? Branch::inject : Branch::plain; }

std::pair<Question, Question> sample_seed_pair(const Dataset& dataset, Rng& rng) {
  if (dataset.size() < 2) throw std::invalid_argument("sample_seed_pair: need at least two seed questions");
  const auto n = dataset.size();
  const auto i = rng.uniform_index(n);
  auto j = rng.uniform_index(n - 1);
  if (j >= i) ++j;
  return {dataset[i], dataset[j]};
}

Question assemble_synthetic(const GenerationRequest& request, std::string text, std::vector<AnswerOption> options) {
  Question q;
  q.id = request.id;
  q.text = std::move(text);
  q.options = std::move(options);
  if (request.injected()) {
    q.provenance = Provenance::synthetic_injected;
    q.rarity = Rarity::rare;
    q.entity = request.entity->name;
    for (const auto& d : request.context) q.context.push_back(d.doc_id);
  } else {
    q.provenance = Provenance::synthetic_plain;
    const bool both_rare = request.seed_a.rarity == Rarity::rare && request.seed_b.rarity == Rarity::rare;
    q.rarity = both_rare ? Rarity::rare : Rarity::general;
  }
  q.validate();
  return q;
}

namespace {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) words.push_back(std::move(w));
  return words;
}

std::string join(const std::vector<std::string>& words, std::size_t from, std::size_t to) {
  std::string out;
  for (std::size_t i = from; i < to && i < words.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string render_seed(const Question& q) {
  std::string out = q.text;
  for (const auto& o : q.options) out += "\n" + o.symbol.str() + ". " + o.text;
  return out;
}

}  // namespace

Question LocalTemplateGenerator::generate(const GenerationRequest& request, Rng& rng) {
  const auto a = split_words(request.seed_a.text);
  const auto b = split_words(request.seed_b.text);
  std::string text = join(a, 0, (a.size() + 1) / 2);
  std::size_t from = b.size() / 2;
  if (from < b.size() && !a.empty() && a[(a.size() + 1) / 2 - 1] == b[from]) ++from;
  const std::string tail = join(b, from, b.size());
  if (!tail.empty()) text += (text.empty() ? "" : " ") + tail;

  const std::size_t n = std::clamp<std::size_t>(request.seed_a.options.size(), 2, 8);
  std::vector<std::string> texts;
  std::size_t correct = 0;

  if (request.injected()) {
    const auto& name = request.entity->name;
    if (!request.context.empty()) {
      const auto ctx = split_words(request.context.front().text);
      text += " Relevant background on " + name + ": " + join(ctx, 0, 24) + ".";
    }
    text += " Which condition best explains this presentation?";
    std::vector<std::string> pool;
    for (const auto& e : entity_names_) {
      if (e != name && std::find(pool.begin(), pool.end(), e) == pool.end()) pool.push_back(e);
    }
    rng.shuffle(pool.begin(), pool.end());
    correct = rng.uniform_index(n);
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == correct) {
        texts.push_back(name);
      } else if (next < pool.size()) {
        texts.push_back(pool[next++]);
      } else {
        texts.push_back("None of the listed conditions (" + std::to_string(i + 1) + ")");
      }
    }
  } else {
    // The fused question keeps seed A's keyed answer (or its first option) at
    // position feature_seed(id) mod n.
    const Question& sa = request.seed_a;
    std::string answer = sa.options.front().text;
    if (sa.label) {
      for (const auto& o : sa.options) {
        if (o.symbol == *sa.label) answer = o.text;
      }
    }
    std::vector<std::string> pool;
    std::unordered_set<std::string> seen{answer};
    for (const auto* seed : {&request.seed_a, &request.seed_b}) {
      for (const auto& o : seed->options) {
        if (!o.text.empty() && seen.insert(o.text).second) pool.push_back(o.text);
      }
    }
    rng.shuffle(pool.begin(), pool.end());
    correct = feature_seed_for(request.id) % n;
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == correct) {
        texts.push_back(answer);
      } else {
        texts.push_back(next < pool.size() ? pool[next++] : "Option " + std::to_string(i + 1));
      }
    }
  }

  std::vector<AnswerOption> options;
  for (std::size_t i = 0; i < n; ++i) options.push_back({AnswerSymbol(static_cast<char>('A' + i)), texts[i]});
  return assemble_synthetic(request, std::move(text), std::move(options));
}

std::string render_generation_prompt(const GenerationRequest& request) {
  std::string p = "Write one new multiple-choice clinical question inspired by the two examples below.\n\n";
  p += "Example 1: " + render_seed(request.seed_a) + "\n\n";
  p += "Example 2: " + render_seed(request.seed_b) + "\n\n";
  if (request.injected()) {
    p += "Background on " + request.entity->name + ":\n";
    for (const auto& d : request.context) p += "- " + d.text + "\n";
    p += "\nUse the background where it helps; the question should hinge on " + request.entity->name + ".\n";
  }
  p += "Requirements:\n";
  p += "- comparable difficulty to the examples, answerable only by several reasoning steps\n";
  p += "- medically accurate and self-contained\n";
  p += "- between 2 and 8 options, exactly one correct\n";
  p += "Reply with JSON: {\"question\": ..., \"options\": [{\"symbol\": \"A\", \"text\": ...}, ...]}\n";
  return p;
}

std::pair<std::string, std::vector<AnswerOption>> parse_generation_response(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("generator response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("question") || !j.contains("options") || !j["options"].is_array()) {
    throw std::invalid_argument("generator response lacks 'question' or 'options'");
  }
  std::vector<AnswerOption> options;
  for (const auto& o : j["options"]) {
    options.push_back({parse_symbol(o.at("symbol").get<std::string>()), o.value("text", std::string{})});
  }
  if (options.size() < 2 || options.size() > 8) {
    throw std::invalid_argument("generator returned " + std::to_string(options.size()) + " options (need 2-8)");
  }
  return {j["question"].get<std::string>(), std::move(options)};
}

Question ExternalGenerator::generate(const GenerationRequest& request, Rng&) {
  nlohmann::json body;
  body["prompt"] = render_generation_prompt(request);
  const std::string payload = body.dump();

  httplib::Client client(config_.base_url);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  httplib::Headers headers;
  if (!config_.auth_token.empty()) headers.emplace("Authorization", "Bearer " + config_.auth_token);

  std::string last_error = "no attempt made";
  auto backoff = config_.initial_backoff;
  const std::size_t attempts = std::max<std::size_t>(1, config_.max_attempts);
  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    ++attempts_;
    auto res = client.Post(config_.path, headers, payload, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      auto [text, options] = parse_generation_response(res->body);
      return assemble_synthetic(request, std::move(text), std::move(options));
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  throw GenerationError("external generator failed after " + std::to_string(attempts) + " attempts: " + last_error,
                        request);
}

Dataset synthesize(const SynthesisConfig& config, const Dataset& seeds, const Corpus& corpus,
                   std::span<const RareEntity> entities, QuestionGenerator& generator, const QuestionFilter& filter) {
  config.validate();
  if (seeds.size() < 2) throw std::invalid_argument("synthesize: need at least two seed questions");
  if (config.alpha > 0.0 && (corpus.empty() || entities.empty())) {
    throw std::invalid_argument("synthesize: corpus and rare entities are required when alpha > 0");
  }
  std::vector<Question> out;
  out.reserve(config.n_target);
  const std::size_t max_requests = config.n_target * 20 + 100;
  for (std::size_t i = 0; out.size() < config.n_target; ++i) {
    if (i >= max_requests) throw std::runtime_error("synthesize: filter rejected too many generated questions");
    Rng rng(stream_seed(config.rng_seed, i));
    const Branch branch = draw_branch(rng, config.alpha);
    auto [a, b] = sample_seed_pair(seeds, rng);
    GenerationRequest request;
    request.id = "syn-" + hex64(mix64(a.feature_seed() ^ (b.feature_seed() << 1) ^ rng.next_u64()));
    request.seed_a = std::move(a);
    request.seed_b = std::move(b);
    if (branch == Branch::inject) {
      const RareEntity& e = entities[rng.uniform_index(entities.size())];
      request.entity = e;
      request.context = retrieve_top_k(e, corpus.docs(), config.k);
    }
    Question q = generator.generate(request, rng);
    if (filter && !filter(q)) continue;
    out.push_back(std::move(q));
  }
  return Dataset(std::move(out), DatasetKind::synthetic);
}

}  // namespace pseudolab
