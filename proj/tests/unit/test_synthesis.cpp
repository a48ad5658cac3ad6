#include "fixtures.hpp"

#include "pseudolab/synthesis.hpp"

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <set>
#include <thread>

using namespace pseudolab;

namespace {

Dataset seed_pool(std::size_t n, std::size_t rare_every = 0) {
  std::vector<Question> qs;
  for (std::size_t i = 0; i < n; ++i) {
    auto q = fixtures::question("seed-" + std::to_string(i), 4, static_cast<char>('A' + i % 4));
    q.text = "A patient number " + std::to_string(i) + " presents with cough and fever. What next?";
    if (rare_every && i % rare_every == 0) q.rarity = Rarity::rare;
    qs.push_back(std::move(q));
  }
  return Dataset(std::move(qs));
}

Corpus small_corpus() {
  std::vector<CorpusDoc> docs;
  for (int i = 0; i < 30; ++i) {
    const std::string text = "entity " + std::to_string(i % 10) + " causes finding " + std::to_string(i);
    docs.push_back({"doc-" + std::to_string(i), text, hash_embed(text, 32)});
  }
  return Corpus(std::move(docs));
}

std::vector<RareEntity> small_entities() {
  std::vector<RareEntity> out;
  for (int i = 0; i < 10; ++i) {
    const std::string name = "entity " + std::to_string(i);
    out.push_back({name, hash_embed(name, 32)});
  }
  return out;
}

std::vector<std::string> names_of(const std::vector<RareEntity>& es) {
  std::vector<std::string> n;
  for (const auto& e : es) n.push_back(e.name);
  return n;
}

SynthesisConfig config(double alpha, std::size_t n, std::uint64_t seed = 7) {
  SynthesisConfig c;
  c.alpha = alpha;
  c.n_target = n;
  c.rng_seed = seed;
  c.k = 3;
  return c;
}

// Serves canned responses on a random local port.
class FakeServer {
 public:
  explicit FakeServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/generate", [this, handler](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      handler(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::atomic<int> hits{0};
  std::string last_body;
  std::string last_auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

ExternalGeneratorConfig client_for(const FakeServer& s) {
  ExternalGeneratorConfig c;
  c.base_url = s.url();
  c.max_attempts = 3;
  c.initial_backoff = std::chrono::milliseconds(1);
  c.timeout = std::chrono::seconds(5);
  c.auth_token = "secret";
  return c;
}

GenerationRequest plain_request() {
  GenerationRequest r;
  r.id = "syn-test";
  r.seed_a = fixtures::question("a", 4, 'B');
  r.seed_b = fixtures::question("b", 4, 'C');
  return r;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(config(0.0, 1).validate());
  CHECK_NOTHROW(config(1.0, 1).validate());
  CHECK_THROWS_AS(config(-0.1, 1).validate(), std::invalid_argument);
  CHECK_THROWS_AS(config(1.5, 1).validate(), std::invalid_argument);
  CHECK_THROWS_AS(config(0.5, 0).validate(), std::invalid_argument);
}

TEST_CASE("draw_branch extremes and frequency") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) CHECK(draw_branch(rng, 0.0) == Branch::plain);
  for (int i = 0; i < 10000; ++i) CHECK(draw_branch(rng, 1.0) == Branch::inject);

  Rng r2(2024);
  const int N = 100000;
  int inject = 0;
  for (int i = 0; i < N; ++i) inject += draw_branch(r2, 0.25) == Branch::inject ? 1 : 0;
  CHECK(std::abs(inject / double(N) - 0.25) <= 0.005);
  CHECK(std::abs(inject / double(N) - 0.25) <= 3.0 * std::sqrt(0.25 * 0.75 / N));
}

TEST_CASE("sample_seed_pair draws two distinct entries") {
  const Dataset pool = seed_pool(5);
  Rng rng(3);
  std::set<std::pair<std::string, std::string>> seen;
  for (int i = 0; i < 500; ++i) {
    auto [a, b] = sample_seed_pair(pool, rng);
    CHECK(a.id != b.id);
    seen.insert({a.id, b.id});
  }
  CHECK(seen.size() == 20);  // every ordered pair of 5 appears
  CHECK_THROWS_AS(sample_seed_pair(seed_pool(1), rng), std::invalid_argument);
}

TEST_CASE("synthesize branch laws") {
  const Dataset pool = seed_pool(40);
  const Corpus corpus = small_corpus();
  const auto ents = small_entities();
  LocalTemplateGenerator gen(names_of(ents));

  SUBCASE("alpha 0") {
    const Dataset d = synthesize(config(0.0, 100), pool, corpus, ents, gen);
    CHECK(d.size() == 100);
    CHECK(d.kind() == DatasetKind::synthetic);
    for (const auto& q : d) {
      CHECK(q.provenance == Provenance::synthetic_plain);
      CHECK_FALSE(q.label.has_value());
    }
  }
  SUBCASE("alpha 1") {
    const Dataset d = synthesize(config(1.0, 100), pool, corpus, ents, gen);
    CHECK(d.size() == 100);
    for (const auto& q : d) {
      CHECK(q.provenance == Provenance::synthetic_injected);
      CHECK(q.rarity == Rarity::rare);
      CHECK(q.entity.has_value());
      CHECK(q.context.size() == 3);
    }
  }
  SUBCASE("alpha 0.25 at 4300") {
    const Dataset d = synthesize(config(0.25, 4300), pool, corpus, ents, gen);
    std::size_t inj = 0;
    for (const auto& q : d) inj += q.provenance == Provenance::synthetic_injected ? 1 : 0;
    CHECK(std::abs(inj / 4300.0 - 0.25) <= 0.02);
  }
  SUBCASE("alpha 0 needs no corpus") {
    CHECK_NOTHROW(synthesize(config(0.0, 5), pool, Corpus{}, {}, gen));
    CHECK_THROWS_AS(synthesize(config(0.5, 5), pool, Corpus{}, {}, gen), std::invalid_argument);
  }
}

TEST_CASE("synthesize is deterministic and injected context equals retrieval") {
  const Dataset pool = seed_pool(40);
  const Corpus corpus = small_corpus();
  const auto ents = small_entities();
  LocalTemplateGenerator gen(names_of(ents));
  const Dataset a = synthesize(config(0.4, 300, 99), pool, corpus, ents, gen);
  const Dataset b = synthesize(config(0.4, 300, 99), pool, corpus, ents, gen);
  CHECK(a.content_digest() == b.content_digest());
  CHECK(synthesize(config(0.4, 300, 100), pool, corpus, ents, gen).content_digest() != a.content_digest());

  for (const auto& q : a) {
    if (q.provenance != Provenance::synthetic_injected) continue;
    const auto it = std::find_if(ents.begin(), ents.end(), [&](const RareEntity& e) { return e.name == *q.entity; });
    REQUIRE(it != ents.end());
    std::vector<std::string> ids;
    for (const auto& d : retrieve_top_k(*it, corpus.docs(), 3)) ids.push_back(d.doc_id);
    CHECK(q.context == ids);
  }
}

TEST_CASE("plain synthetic rarity needs both seeds rare") {
  GenerationRequest r = plain_request();
  r.seed_a.rarity = Rarity::rare;
  CHECK(assemble_synthetic(r, "t", r.seed_a.options).rarity == Rarity::general);
  r.seed_b.rarity = Rarity::rare;
  CHECK(assemble_synthetic(r, "t", r.seed_a.options).rarity == Rarity::rare);
}

TEST_CASE("local generator") {
  const auto ents = small_entities();
  LocalTemplateGenerator gen(names_of(ents));

  SUBCASE("same request and seed give identical questions") {
    GenerationRequest r = plain_request();
    Rng r1(5), r2(5);
    CHECK(gen.generate(r, r1) == gen.generate(r, r2));
  }
  SUBCASE("injected entity appears among the options") {
    GenerationRequest r = plain_request();
    r.entity = ents[4];
    r.context = retrieve_top_k(ents[4], small_corpus().docs(), 2);
    for (std::uint64_t s = 0; s < 50; ++s) {
      Rng rng(s);
      const Question q = gen.generate(r, rng);
      const bool present = std::any_of(q.options.begin(), q.options.end(),
                                       [&](const AnswerOption& o) { return o.text == ents[4].name; });
      CHECK(present);
      CHECK(q.entity == ents[4].name);
      CHECK_FALSE(q.label.has_value());
    }
  }
  SUBCASE("plain questions keep seed A's keyed answer at the id-derived position") {
    GenerationRequest r = plain_request();
    Rng rng(8);
    const Question q = gen.generate(r, rng);
    const std::size_t pos = feature_seed_for(r.id) % q.options.size();
    CHECK(q.options[pos].text == "option B");
  }
  SUBCASE("1000 generated questions have unique ids") {
    const Dataset d = synthesize(config(0.3, 1000, 3), seed_pool(60), small_corpus(), ents, gen);
    std::set<std::string> ids;
    for (const auto& q : d) ids.insert(q.id);
    CHECK(ids.size() == 1000);
  }
}

TEST_CASE("filter hook rejects and the pipeline refills") {
  LocalTemplateGenerator gen(names_of(small_entities()));
  std::size_t calls = 0;
  const QuestionFilter only_injected = [&](const Question& q) {
    ++calls;
    return q.provenance == Provenance::synthetic_injected;
  };
  const Dataset d = synthesize(config(0.5, 50), seed_pool(10), small_corpus(), small_entities(), gen, only_injected);
  CHECK(d.size() == 50);
  CHECK(calls > 50);
  for (const auto& q : d) CHECK(q.provenance == Provenance::synthetic_injected);

  const QuestionFilter none = [](const Question&) { return false; };
  CHECK_THROWS_AS(synthesize(config(0.5, 5), seed_pool(10), small_corpus(), small_entities(), gen, none),
                  std::runtime_error);
}

TEST_CASE("generation prompt carries seeds and context") {
  GenerationRequest r = plain_request();
  const std::string plain = render_generation_prompt(r);
  CHECK(plain.find(r.seed_a.text) != std::string::npos);
  CHECK(plain.find(r.seed_b.text) != std::string::npos);
  r.entity = small_entities()[2];
  r.context = {{"doc-x", "entity 2 is a lysosomal storage disorder", {}}};
  const std::string inj = render_generation_prompt(r);
  CHECK(inj.find("entity 2 is a lysosomal storage disorder") != std::string::npos);
  CHECK(inj.find("entity 2") != std::string::npos);
}

TEST_CASE("parse_generation_response") {
  auto [text, opts] = parse_generation_response(
      R"({"question":"Q?","options":[{"symbol":"A","text":"x"},{"symbol":"B","text":"y"}]})");
  CHECK(text == "Q?");
  CHECK(opts.size() == 2);
  CHECK_THROWS_AS(parse_generation_response("nope"), std::invalid_argument);
  CHECK_THROWS_AS(parse_generation_response(R"({"question":"Q?"})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_generation_response(R"({"question":"Q?","options":[{"symbol":"A","text":"x"}]})"),
                  std::invalid_argument);
  nlohmann::json many;
  many["question"] = "Q";
  for (char c = 'A'; c <= 'I'; ++c) many["options"].push_back({{"symbol", std::string(1, c)}, {"text", "t"}});
  CHECK_THROWS_AS(parse_generation_response(many.dump()), std::invalid_argument);
}

TEST_CASE("external generator talks JSON over HTTP") {
  FakeServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"question":"Which enzyme?","options":[{"symbol":"A","text":"GBA"},{"symbol":"B","text":"GLA"},)"
                    R"({"symbol":"C","text":"HEXA"}]})",
                    "application/json");
  });
  ExternalGenerator gen(client_for(server));
  GenerationRequest r = plain_request();
  r.entity = small_entities()[1];
  r.context = {{"doc-1", "entity 1 background", {}}};
  Rng rng(0);
  const Question q = gen.generate(r, rng);
  CHECK(q.id == "syn-test");
  CHECK(q.text == "Which enzyme?");
  CHECK(q.options.size() == 3);
  CHECK(q.provenance == Provenance::synthetic_injected);
  CHECK(q.context == std::vector<std::string>{"doc-1"});
  CHECK(server.last_auth == "Bearer secret");
  const auto body = nlohmann::json::parse(server.last_body);
  CHECK(body.at("prompt").get<std::string>() == render_generation_prompt(r));
}

TEST_CASE("external generator retries transient failures") {
  std::atomic<int> n{0};
  FakeServer server([&](const httplib::Request&, httplib::Response& res) {
    if (n++ < 2) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"question":"Q","options":[{"symbol":"A","text":"x"},{"symbol":"B","text":"y"}]})",
                    "application/json");
  });
  ExternalGenerator gen(client_for(server));
  Rng rng(0);
  CHECK_NOTHROW(gen.generate(plain_request(), rng));
  CHECK(gen.attempts_made() == 3);
}

TEST_CASE("external generator gives up with the request attached") {
  FakeServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"question":"Q","options":[{"symbol":"A","text":"only one"}]})", "application/json");
  });
  ExternalGenerator gen(client_for(server));
  Rng rng(0);
  try {
    (void)gen.generate(plain_request(), rng);
    FAIL("expected GenerationError");
  } catch (const GenerationError& e) {
    CHECK(e.request().id == "syn-test");
    CHECK(std::string(e.what()).find("need 2-8") != std::string::npos);
  }
  CHECK(server.hits == 3);
}

TEST_CASE("external generator reports unreachable endpoints") {
  ExternalGeneratorConfig c;
  c.base_url = "http://127.0.0.1:1";
  c.max_attempts = 2;
  c.initial_backoff = std::chrono::milliseconds(1);
  c.timeout = std::chrono::seconds(1);
  ExternalGenerator gen(c);
  Rng rng(0);
  CHECK_THROWS_AS(gen.generate(plain_request(), rng), GenerationError);
}
