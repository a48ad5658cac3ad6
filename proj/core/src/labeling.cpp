#include "pseudolab/labeling.hpp"

#include <json.hpp>

#include <algorithm>
#include <stdexcept>

namespace pseudolab {

std::size_t VoteTally::total() const {
  std::size_t n = none_count;
  for (const auto& [sym, c] : counts) n += c;
  return n;
}

VoteTally majority_vote(std::span<const std::optional<AnswerSymbol>> extracted, std::span<const AnswerSymbol> options) {
  if (extracted.size() < 2) throw std::invalid_argument("majority_vote: need at least two answers");
  if (options.empty()) throw std::invalid_argument("majority_vote: empty option set");
  VoteTally tally;
  for (AnswerSymbol s : options) tally.counts[s] = 0;
  for (const auto& a : extracted) {
    auto it = a ? tally.counts.find(*a) : tally.counts.end();
    if (it == tally.counts.end()) {
      ++tally.none_count;
    } else {
      ++it->second;
    }
  }
  if (tally.none_count == extracted.size()) throw std::invalid_argument("majority_vote: every answer is unparseable");

  // std::map iterates in ascending symbol order, so strict '>' keeps the first on ties.
  std::size_t best = 0, second = 0;
  bool have_best = false;
  for (const auto& [sym, c] : tally.counts) {
    if (!have_best || c > best) {
      if (have_best) second = std::max(second, best);
      best = c;
      tally.winner = sym;
      have_best = true;
    } else {
      second = std::max(second, c);
    }
  }
  tally.margin = best - second;
  return tally;
}

std::string LabelReport::to_json() const {
  nlohmann::ordered_json j;
  j["total"] = total;
  j["labeled"] = labeled;
  j["dropped"] = dropped;
  j["mean_margin"] = mean_margin;
  j["agreement_histogram"] = agreement_histogram;
  j["output_digest"] = output_digest;
  return j.dump(2) + "\n";
}

LabelResult label_offline(const Dataset& dataset, const PolicyParams& base, std::size_t G, std::uint64_t rng_seed) {
  if (G < 2) throw std::invalid_argument("label_offline: G must be at least 2");
  std::vector<Question> out;
  out.reserve(dataset.size());
  LabelReport report;
  report.total = dataset.size();
  report.agreement_histogram.assign(G + 1, 0);
  double margin_sum = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Question& q = dataset[i];
    Rng rng(stream_seed(rng_seed, i));
    const RolloutGroup group = sample_group(base, q, G, rng);
    const auto symbols = q.option_symbols();
    if (std::all_of(group.extracted.begin(), group.extracted.end(), [](const auto& a) { return !a; })) {
      ++report.dropped;
      continue;
    }
    const VoteTally tally = majority_vote(group.extracted, symbols);
    Question labeled = q;
    labeled.label = tally.winner;
    out.push_back(std::move(labeled));
    ++report.labeled;
    margin_sum += static_cast<double>(tally.margin);
    ++report.agreement_histogram[tally.winner_count()];
  }
  report.mean_margin = report.labeled ? margin_sum / static_cast<double>(report.labeled) : 0.0;
  Dataset labeled(std::move(out), DatasetKind::synthetic);
  report.output_digest = labeled.content_digest();
  return {std::move(labeled), std::move(report)};
}

std::optional<AnswerSymbol> label_online(const RolloutGroup& group, std::span<const AnswerSymbol> options) {
  const bool any = std::any_of(group.extracted.begin(), group.extracted.end(), [&](const auto& a) {
    return a && std::find(options.begin(), options.end(), *a) != options.end();
  });
  if (!any) return std::nullopt;
  return majority_vote(group.extracted, options).winner;
}

}  // namespace pseudolab
