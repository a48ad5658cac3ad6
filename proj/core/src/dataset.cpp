#include "pseudolab/dataset.hpp"

#include "pseudolab/digest.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <sstream>
#include <unordered_set>

namespace pseudolab {

using ojson = nlohmann::ordered_json;

AnswerSymbol parse_symbol(std::string_view s) {
  if (s.size() != 1 || s[0] < 'A' || s[0] > 'Z') {
    throw std::invalid_argument("answer symbol must be a single uppercase letter, got '" + std::string(s) + "'");
  }
  return AnswerSymbol(s[0]);
}

std::string_view to_string(Rarity r) { return r == Rarity::rare ? "rare" : "general"; }

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::real_seed: return "real_seed";
    case Provenance::synthetic_injected: return "synthetic_injected";
    case Provenance::synthetic_plain: return "synthetic_plain";
  }
  return "real_seed";
}

std::string_view to_string(DatasetKind k) { return k == DatasetKind::real ? "real" : "synthetic"; }

Rarity parse_rarity(std::string_view s) {
  if (s == "rare") return Rarity::rare;
  if (s == "general") return Rarity::general;
  throw std::invalid_argument("unknown rarity '" + std::string(s) + "'");
}

Provenance parse_provenance(std::string_view s) {
  if (s == "real_seed") return Provenance::real_seed;
  if (s == "synthetic_injected") return Provenance::synthetic_injected;
  if (s == "synthetic_plain") return Provenance::synthetic_plain;
  throw std::invalid_argument("unknown provenance '" + std::string(s) + "'");
}

std::uint64_t feature_seed_for(std::string_view id) { return fnv1a64(id); }

std::vector<AnswerSymbol> Question::option_symbols() const {
  std::vector<AnswerSymbol> out;
  out.reserve(options.size());
  for (const auto& o : options) out.push_back(o.symbol);
  return out;
}

bool Question::has_option(AnswerSymbol s) const {
  return std::any_of(options.begin(), options.end(), [s](const AnswerOption& o) { return o.symbol == s; });
}

void Question::validate() const {
  if (id.empty()) throw std::invalid_argument("question id must not be empty");
  if (options.size() < 2 || options.size() > 8) {
    throw std::invalid_argument("question " + id + ": expected 2-8 options, got " + std::to_string(options.size()));
  }
  for (std::size_t i = 0; i < options.size(); ++i) {
    for (std::size_t j = i + 1; j < options.size(); ++j) {
      if (options[i].symbol == options[j].symbol) {
        throw std::invalid_argument("question " + id + ": duplicate option symbol " + options[i].symbol.str());
      }
    }
  }
  if (label && !has_option(*label)) {
    throw std::invalid_argument("question " + id + ": label " + label->str() + " is not an option");
  }
  if (provenance == Provenance::synthetic_injected && rarity != Rarity::rare) {
    throw std::invalid_argument("question " + id + ": injected synthetic questions must be rare");
  }
}

Dataset::Dataset(std::vector<Question> entries, std::optional<DatasetKind> kind) : entries_(std::move(entries)) {
  std::unordered_set<std::string_view> ids;
  ids.reserve(entries_.size());
  bool all_real = true;
  for (const auto& q : entries_) {
    q.validate();
    if (!ids.insert(q.id).second) throw std::invalid_argument("duplicate question id '" + q.id + "'");
    all_real = all_real && q.provenance == Provenance::real_seed;
  }
  kind_ = kind.value_or(all_real ? DatasetKind::real : DatasetKind::synthetic);
  digest_ = compute_digest(entries_);
}

bool Dataset::verify_digest() const { return compute_digest(entries_) == digest_; }

bool Dataset::fully_labeled() const {
  return std::all_of(entries_.begin(), entries_.end(), [](const Question& q) { return q.label.has_value(); });
}

std::string to_json_line(const Question& q) {
  ojson j;
  j["id"] = q.id;
  j["text"] = q.text;
  ojson opts = ojson::array();
  for (const auto& o : q.options) {
    ojson oj;
    oj["symbol"] = o.symbol.str();
    oj["text"] = o.text;
    opts.push_back(std::move(oj));
  }
  j["options"] = std::move(opts);
  j["label"] = q.label ? ojson(q.label->str()) : ojson(nullptr);
  j["rarity"] = to_string(q.rarity);
  j["provenance"] = to_string(q.provenance);
  if (q.entity) j["entity"] = *q.entity;
  if (!q.context.empty()) j["context"] = q.context;
  return j.dump();
}

Question question_from_json_line(std::string_view line, std::size_t line_no) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed JSON record: ") + e.what(), line_no);
  }
  try {
    if (!j.is_object()) throw FormatError("record is not a JSON object", line_no);
    Question q;
    q.id = j.at("id").get<std::string>();
    q.text = j.at("text").get<std::string>();
    for (const auto& o : j.at("options")) {
      if (o.is_object()) {
        q.options.push_back({parse_symbol(o.at("symbol").get<std::string>()), o.value("text", std::string{})});
      } else {
        q.options.push_back({parse_symbol(o.get<std::string>()), std::string{}});
      }
    }
    if (j.contains("label") && !j["label"].is_null()) q.label = parse_symbol(j["label"].get<std::string>());
    q.rarity = parse_rarity(j.value("rarity", std::string("general")));
    q.provenance = parse_provenance(j.value("provenance", std::string("real_seed")));
    if (j.contains("entity") && !j["entity"].is_null()) q.entity = j["entity"].get<std::string>();
    if (j.contains("context")) q.context = j["context"].get<std::vector<std::string>>();
    q.validate();
    return q;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid question record: ") + e.what(), line_no);
  }
}

std::string serialize(const Dataset& d) {
  std::string out;
  for (const auto& q : d) {
    out += to_json_line(q);
    out += '\n';
  }
  return out;
}

std::string compute_digest(const std::vector<Question>& entries) {
  std::string out;
  for (const auto& q : entries) {
    out += to_json_line(q);
    out += '\n';
  }
  return sha256_hex(out);
}

Dataset read_dataset(std::istream& in, std::optional<DatasetKind> kind) {
  std::vector<Question> entries;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Question q = question_from_json_line(line, line_no);
    if (!ids.insert(q.id).second) throw FormatError("duplicate question id '" + q.id + "'", line_no);
    entries.push_back(std::move(q));
  }
  return Dataset(std::move(entries), kind);
}

Dataset load_dataset(const std::filesystem::path& path, std::optional<DatasetKind> kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file " + path.string());
  return read_dataset(in, kind);
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset file " + path.string());
  out << serialize(d);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::optional<AnswerSymbol> extract_answer(std::string_view text, const std::vector<AnswerSymbol>& options) {
  static constexpr std::string_view kMarker = "The answer is ";
  if (options.empty()) throw std::invalid_argument("extract_answer: option set must not be empty");
  std::optional<AnswerSymbol> found;
  std::size_t pos = text.find(kMarker);
  while (pos != std::string_view::npos) {
    const std::size_t at = pos + kMarker.size();
    if (at < text.size()) {
      const char c = text[at];
      const bool boundary = at + 1 >= text.size() || !std::isalnum(static_cast<unsigned char>(text[at + 1]));
      if (boundary && std::find(options.begin(), options.end(), AnswerSymbol(c)) != options.end()) {
        found = AnswerSymbol(c);
      }
    }
    pos = text.find(kMarker, pos + 1);
  }
  return found;
}

double verification_reward(const std::optional<AnswerSymbol>& label, const std::optional<AnswerSymbol>& extracted) {
  if (!label) throw std::invalid_argument("verification_reward: question carries no label");
  return extracted && *extracted == *label ? 1.0 : 0.0;
}

}  // namespace pseudolab
