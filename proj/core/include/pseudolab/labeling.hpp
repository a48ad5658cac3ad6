#pragma once

#include "pseudolab/dataset.hpp"
#include "pseudolab/policy.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pseudolab {

struct VoteTally {
  std::map<AnswerSymbol, std::size_t> counts;  ///< one entry per option symbol
  std::size_t none_count = 0;
  AnswerSymbol winner;
  /// Winner count minus runner-up count (winner count when only one option).
  std::size_t margin = 0;

  std::size_t total() const;
  std::size_t winner_count() const { return counts.at(winner); }
};

/// Plurality vote over the option symbols. Unparseable entries (and symbols
/// outside `options`) are counted in none_count and never win. Ties go to the
/// alphabetically first symbol. Throws std::invalid_argument when fewer than
/// two entries are given or every entry is unparseable.
VoteTally majority_vote(std::span<const std::optional<AnswerSymbol>> extracted, std::span<const AnswerSymbol> options);

struct LabelReport {
  std::size_t total = 0;
  std::size_t labeled = 0;
  std::size_t dropped = 0;
  double mean_margin = 0.0;
  /// agreement_histogram[c] = number of labeled questions whose winner got c votes.
  std::vector<std::size_t> agreement_histogram;
  std::string output_digest;

  std::string to_json() const;
};

struct LabelResult {
  Dataset dataset;
  LabelReport report;
};

/// Offline pseudo-labeling with the frozen base policy. Each question gets its
/// own rng stream derived from (rng_seed, index). Questions whose G answers are
/// all unparseable are dropped.
LabelResult label_offline(const Dataset& dataset, const PolicyParams& base, std::size_t G, std::uint64_t rng_seed);

/// Majority answer of the current rollouts, or nullopt when none parsed.
std::optional<AnswerSymbol> label_online(const RolloutGroup& group, std::span<const AnswerSymbol> options);

}  // namespace pseudolab
