#pragma once

#include "pseudolab/dataset.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fixtures {

inline pseudolab::Question question(const std::string& id, std::size_t n_options = 4,
                                    std::optional<char> label = std::nullopt,
                                    pseudolab::Rarity rarity = pseudolab::Rarity::general) {
  pseudolab::Question q;
  q.id = id;
  q.text = "Question " + id + " about a patient with fever?";
  for (std::size_t i = 0; i < n_options; ++i) {
    const char c = static_cast<char>('A' + i);
    q.options.push_back({pseudolab::AnswerSymbol(c), std::string("option ") + c});
  }
  if (label) q.label = pseudolab::AnswerSymbol(*label);
  q.rarity = rarity;
  return q;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pseudolab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
