#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynaslice/errors.hpp"
#include "dynaslice/io.hpp"
#include "dynaslice/rng.hpp"

namespace dynaslice {

struct ChoiceItem {
  std::string context;
  std::vector<std::string> options;
  std::size_t gold = 0;
};

struct EvalTask {
  std::string id;
  std::vector<ChoiceItem> items;
};

// Fixture format: JSON lines, one {"context", "options", "gold"} per item.
inline EvalTask load_task(const std::string& path) {
  EvalTask task;
  task.id = path_stem(path);
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      ChoiceItem item;
      item.context = j.at("context").get<std::string>();
      item.options = j.at("options").get<std::vector<std::string>>();
      item.gold = j.at("gold").get<std::size_t>();
      task.items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw format_error("task " + path + " line " + std::to_string(line_no) +
                         ": " + e.what());
    }
  }
  return task;
}

inline void save_task(const EvalTask& task, const std::string& path) {
  std::string out;
  for (const ChoiceItem& item : task.items) {
    nlohmann::json j = {
        {"context", item.context}, {"options", item.options}, {"gold", item.gold}};
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

enum class CorruptMode {
  kSlice,    // distractor is a slice taken elsewhere in the corpus
  kShuffle,  // distractor is the true continuation with bytes shuffled
};

// Builds a 2-option continuation task from raw corpus text: the gold option
// is the actual continuation of the context, the distractor depends on the
// mode. Gold positions are balanced by the seeded coin flip.
inline EvalTask generate_choice_task(const std::string& corpus_text,
                                     std::size_t n_items, std::size_t context_len,
                                     std::size_t option_len, std::uint64_t seed,
                                     CorruptMode mode = CorruptMode::kSlice,
                                     const std::string& id = "choice") {
  if (corpus_text.size() < context_len + 2 * option_len + 1)
    throw precondition_error("generate_choice_task: corpus too short for " +
                             std::to_string(context_len) + "+" +
                             std::to_string(option_len) + " items");
  Rng rng(seed);
  EvalTask task;
  task.id = id;
  task.items.reserve(n_items);
  const std::size_t span = context_len + option_len;

  for (std::size_t i = 0; i < n_items; ++i) {
    const std::size_t start = rng.index(corpus_text.size() - span);
    ChoiceItem item;
    item.context = corpus_text.substr(start, context_len);
    std::string truth = corpus_text.substr(start + context_len, option_len);

    std::string distractor;
    if (mode == CorruptMode::kShuffle) {
      distractor = truth;
      for (std::size_t j = distractor.size(); j > 1; --j)
        std::swap(distractor[j - 1], distractor[rng.index(j)]);
      if (distractor == truth && option_len > 1)
        std::swap(distractor[0], distractor[1]);
    } else {
      for (int attempt = 0; attempt < 16; ++attempt) {
        const std::size_t alt = rng.index(corpus_text.size() - option_len);
        distractor = corpus_text.substr(alt, option_len);
        if (distractor != truth) break;
      }
      if (distractor == truth)
        distractor.back() = distractor.back() == 'x' ? 'y' : 'x';
    }

    const bool gold_first = rng.uniform() < 0.5;
    if (gold_first) {
      item.options = {truth, distractor};
      item.gold = 0;
    } else {
      item.options = {distractor, truth};
      item.gold = 1;
    }
    task.items.push_back(std::move(item));
  }
  return task;
}

}  // namespace dynaslice
