#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pseudolab {

using Embedding = std::vector<double>;

struct CorpusDoc {
  std::string doc_id;
  std::string text;
  Embedding embedding;
};

struct RareEntity {
  std::string name;
  Embedding embedding;
};

/// Dot product. Throws std::invalid_argument on dimension mismatch.
double similarity(std::span<const double> query, std::span<const double> doc);

/// Signed feature-hash embedding of word unigrams and bigrams, L2-normalized.
/// Requires dim >= 8; throws std::invalid_argument on text without tokens.
Embedding hash_embed(std::string_view text, std::size_t dim);

/// Immutable document store; all embeddings share one finite dimension.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<CorpusDoc> docs);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return docs_.size(); }
  bool empty() const noexcept { return docs_.empty(); }
  std::span<const CorpusDoc> docs() const noexcept { return docs_; }
  const CorpusDoc& operator[](std::size_t i) const { return docs_[i]; }

 private:
  std::vector<CorpusDoc> docs_;
  std::size_t dim_ = 0;
};

/// Indices of the min(k, |corpus|) most similar documents, ordered by
/// descending score, ties by ascending doc_id.
std::vector<std::size_t> top_k_indices(std::span<const double> query, std::span<const CorpusDoc> corpus,
                                       std::size_t k);

/// Top-k documents for an entity query. Throws on empty corpus or k == 0.
std::vector<CorpusDoc> retrieve_top_k(const RareEntity& entity, std::span<const CorpusDoc> corpus, std::size_t k);

/// Line-delimited {doc_id, text, embedding?}. Missing embeddings are filled
/// with hash_embed(text, dim); `dim` is required only when some are missing.
Corpus load_corpus(const std::filesystem::path& path, std::optional<std::size_t> dim = std::nullopt);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Line-delimited {name, embedding?}; missing embeddings are hash-embedded.
std::vector<RareEntity> load_entities(const std::filesystem::path& path, std::optional<std::size_t> dim = std::nullopt);
void save_entities(std::span<const RareEntity> entities, const std::filesystem::path& path);

}  // namespace pseudolab
