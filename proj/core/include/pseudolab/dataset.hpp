#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pseudolab {

/// Raised when a dataset, corpus, plan or checkpoint file cannot be parsed.
/// `line()` is 1-based, or 0 when the problem is not tied to one line.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A single canonical option letter, e.g. 'B'.
class AnswerSymbol {
 public:
  constexpr AnswerSymbol() = default;
  explicit constexpr AnswerSymbol(char value) : value_(value) {}

  constexpr char value() const noexcept { return value_; }
  std::string str() const { return std::string(1, value_); }

  friend constexpr auto operator<=>(AnswerSymbol, AnswerSymbol) = default;

 private:
  char value_ = 'A';
};

/// Parses a one-letter symbol string; throws std::invalid_argument otherwise.
AnswerSymbol parse_symbol(std::string_view s);

enum class Rarity { rare, general };
enum class Provenance { real_seed, synthetic_injected, synthetic_plain };
enum class DatasetKind { real, synthetic };

std::string_view to_string(Rarity r);
std::string_view to_string(Provenance p);
std::string_view to_string(DatasetKind k);
Rarity parse_rarity(std::string_view s);
Provenance parse_provenance(std::string_view s);

struct AnswerOption {
  AnswerSymbol symbol;
  std::string text;

  friend bool operator==(const AnswerOption&, const AnswerOption&) = default;
};

/// Deterministic 64-bit seed derived from a question id.
std::uint64_t feature_seed_for(std::string_view id);

struct Question {
  std::string id;
  std::string text;
  std::vector<AnswerOption> options;
  std::optional<AnswerSymbol> label;
  Rarity rarity = Rarity::general;
  Provenance provenance = Provenance::real_seed;
  /// Rare entity the question was generated around (injected synthetics only).
  std::optional<std::string> entity;
  /// doc_ids of the retrieval context used at generation time.
  std::vector<std::string> context;

  std::uint64_t feature_seed() const { return feature_seed_for(id); }
  std::vector<AnswerSymbol> option_symbols() const;
  bool has_option(AnswerSymbol s) const;

  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;

  friend bool operator==(const Question&, const Question&) = default;
};

/// Ordered, immutable collection of questions with a content digest.
class Dataset {
 public:
  Dataset() : Dataset(std::vector<Question>{}) {}
  /// Validates every entry and id uniqueness. Kind defaults to real when every
  /// entry is a real seed, synthetic otherwise.
  explicit Dataset(std::vector<Question> entries, std::optional<DatasetKind> kind = std::nullopt);

  const std::vector<Question>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const Question& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  DatasetKind kind() const noexcept { return kind_; }
  const std::string& content_digest() const noexcept { return digest_; }

  /// Recomputes the digest over the entries and compares with the stored one.
  bool verify_digest() const;

  bool fully_labeled() const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.kind_ == b.kind_ && a.digest_ == b.digest_ && a.entries_ == b.entries_;
  }

 private:
  std::vector<Question> entries_;
  DatasetKind kind_;
  std::string digest_;
};

/// Canonical one-line JSON encoding with a fixed field order.
std::string to_json_line(const Question& q);
/// Parses one record; errors carry `line_no`.
Question question_from_json_line(std::string_view line, std::size_t line_no = 0);

/// Canonical serialization (one record per line, '\n' terminated).
std::string serialize(const Dataset& d);
std::string compute_digest(const std::vector<Question>& entries);

Dataset read_dataset(std::istream& in, std::optional<DatasetKind> kind = std::nullopt);
Dataset load_dataset(const std::filesystem::path& path, std::optional<DatasetKind> kind = std::nullopt);
void save_dataset(const Dataset& d, const std::filesystem::path& path);

/// Finds the last "The answer is <L>" whose letter is one of `options`.
std::optional<AnswerSymbol> extract_answer(std::string_view response_text,
                                           const std::vector<AnswerSymbol>& options);

/// Indicator reward. Throws std::invalid_argument if `label` is empty.
double verification_reward(const std::optional<AnswerSymbol>& label,
                           const std::optional<AnswerSymbol>& extracted);

}  // namespace pseudolab
