#include "pseudolab/retrieval.hpp"

#include "pseudolab/dataset.hpp"
#include "pseudolab/digest.hpp"
#include "pseudolab/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace pseudolab {

using ojson = nlohmann::ordered_json;

double similarity(std::span<const double> query, std::span<const double> doc) {
  if (query.size() != doc.size()) {
    throw std::invalid_argument("similarity: dimension mismatch (" + std::to_string(query.size()) + " vs " +
                                std::to_string(doc.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t j = 0; j < query.size(); ++j) s += query[j] * doc[j];
  return s;
}

namespace {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

void add_feature(Embedding& v, std::string_view feature) {
  const std::uint64_t h = mix64(fnv1a64(feature));
  const std::size_t bucket = h % v.size();
  v[bucket] += (h >> 63) ? -1.0 : 1.0;
}

bool all_finite(const Embedding& e) {
  return std::all_of(e.begin(), e.end(), [](double x) { return std::isfinite(x); });
}

// Strict ordering: higher score first, then ascending doc_id.
struct ScoredIndex {
  double score;
  std::size_t index;
};

}  // namespace

Embedding hash_embed(std::string_view text, std::size_t dim) {
  if (dim < 8) throw std::invalid_argument("hash_embed: dimension must be at least 8");
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw std::invalid_argument("hash_embed: text has no tokens (zero vector)");
  Embedding v(dim, 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    add_feature(v, "u:" + tokens[i]);
    if (i + 1 < tokens.size()) add_feature(v, "b:" + tokens[i] + ' ' + tokens[i + 1]);
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    // Every feature cancelled; fall back to a single deterministic bucket.
    v[mix64(fnv1a64(text)) % dim] = 1.0;
    return v;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

Corpus::Corpus(std::vector<CorpusDoc> docs) : docs_(std::move(docs)) {
  std::unordered_set<std::string_view> ids;
  for (const auto& d : docs_) {
    if (docs_.front().embedding.size() != d.embedding.size()) {
      throw std::invalid_argument("corpus: doc '" + d.doc_id + "' has embedding dimension " +
                                  std::to_string(d.embedding.size()) + ", expected " +
                                  std::to_string(docs_.front().embedding.size()));
    }
    if (d.embedding.empty()) throw std::invalid_argument("corpus: doc '" + d.doc_id + "' has an empty embedding");
    if (!all_finite(d.embedding)) throw std::invalid_argument("corpus: doc '" + d.doc_id + "' has non-finite embedding");
    if (!ids.insert(d.doc_id).second) throw std::invalid_argument("corpus: duplicate doc_id '" + d.doc_id + "'");
  }
  dim_ = docs_.empty() ? 0 : docs_.front().embedding.size();
}

std::vector<std::size_t> top_k_indices(std::span<const double> query, std::span<const CorpusDoc> corpus,
                                       std::size_t k) {
  if (corpus.empty()) throw std::invalid_argument("retrieve_top_k: corpus is empty");
  if (k == 0) throw std::invalid_argument("retrieve_top_k: k must be positive");
  std::vector<ScoredIndex> scored;
  scored.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) scored.push_back({similarity(query, corpus[i].embedding), i});

  const auto before = [&](const ScoredIndex& a, const ScoredIndex& b) {
    if (a.score != b.score) return a.score > b.score;
    return corpus[a.index].doc_id < corpus[b.index].doc_id;
  };
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), before);

  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = scored[i].index;
  return out;
}

std::vector<CorpusDoc> retrieve_top_k(const RareEntity& entity, std::span<const CorpusDoc> corpus, std::size_t k) {
  std::vector<CorpusDoc> out;
  for (std::size_t i : top_k_indices(entity.embedding, corpus, k)) out.push_back(corpus[i]);
  return out;
}

namespace {

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed JSON record: ") + e.what(), line_no);
    }
    try {
      fn(j);
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ": " + e.what(), line_no);
    }
  }
}

Embedding embedding_or_hash(const ojson& j, const std::string& text, std::optional<std::size_t> dim) {
  if (j.contains("embedding") && !j["embedding"].is_null()) {
    auto e = j["embedding"].get<Embedding>();
    if (dim && e.size() != *dim) {
      throw std::invalid_argument("embedding dimension " + std::to_string(e.size()) + " != " + std::to_string(*dim));
    }
    if (!all_finite(e)) throw std::invalid_argument("embedding has non-finite components");
    return e;
  }
  if (!dim) throw std::invalid_argument("record has no embedding and no --dim was given");
  return hash_embed(text, *dim);
}

void write_lines(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, std::optional<std::size_t> dim) {
  std::vector<CorpusDoc> docs;
  for_each_json_line(path, [&](const ojson& j) {
    CorpusDoc d;
    d.doc_id = j.at("doc_id").get<std::string>();
    d.text = j.value("text", std::string{});
    d.embedding = embedding_or_hash(j, d.text, dim);
    if (!dim) dim = d.embedding.size();
    docs.push_back(std::move(d));
  });
  return Corpus(std::move(docs));
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::string out;
  for (const auto& d : corpus.docs()) {
    ojson j;
    j["doc_id"] = d.doc_id;
    j["text"] = d.text;
    j["embedding"] = d.embedding;
    out += j.dump();
    out += '\n';
  }
  write_lines(path, out);
}

std::vector<RareEntity> load_entities(const std::filesystem::path& path, std::optional<std::size_t> dim) {
  std::vector<RareEntity> out;
  for_each_json_line(path, [&](const ojson& j) {
    RareEntity e;
    e.name = j.at("name").get<std::string>();
    e.embedding = embedding_or_hash(j, e.name, dim);
    if (!dim) dim = e.embedding.size();
    out.push_back(std::move(e));
  });
  return out;
}

void save_entities(std::span<const RareEntity> entities, const std::filesystem::path& path) {
  std::string out;
  for (const auto& e : entities) {
    ojson j;
    j["name"] = e.name;
    j["embedding"] = e.embedding;
    out += j.dump();
    out += '\n';
  }
  write_lines(path, out);
}

}  // namespace pseudolab
