#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fabir/data_io.hpp"
#include "fabir/embeddings.hpp"
#include "fabir/rng.hpp"

// Marker-lookup reading task used for desk-scale end-to-end training.
//
// Vocabulary (100 words): fillers w00..w87, markers k0..k9, "stop", "find".
// A passage of 10-30 tokens contains one pair of distinct markers; each
// marker is followed by a 1-3 token filler span closed by "stop". The
// question is "find <marker>" for one of the two, and the gold answer is the
// span that follows that marker.

namespace fabir::synthetic {

inline constexpr std::size_t kFillers = 88;
inline constexpr std::size_t kMarkers = 10;

inline std::string filler(std::size_t i) { return (i < 10 ? "w0" : "w") + std::to_string(i); }
inline std::string marker(std::size_t i) { return "k" + std::to_string(i); }

inline std::vector<std::string> vocabulary() {
  std::vector<std::string> words;
  for (std::size_t i = 0; i < kFillers; ++i) words.push_back(filler(i));
  for (std::size_t i = 0; i < kMarkers; ++i) words.push_back(marker(i));
  words.push_back("stop");
  words.push_back("find");
  return words;
}

inline SquadExample generate_example(Rng& rng, const std::string& id) {
  const std::size_t total = 10 + rng.below(21);
  const std::size_t first_marker = rng.below(kMarkers);
  std::size_t second_marker = rng.below(kMarkers - 1);
  if (second_marker >= first_marker) ++second_marker;

  auto make_segment = [&](std::size_t m) {
    std::vector<std::string> seg{marker(m)};
    const std::size_t len = 1 + rng.below(3);
    for (std::size_t k = 0; k < len; ++k) seg.push_back(filler(rng.below(kFillers)));
    seg.push_back("stop");
    return seg;
  };
  const auto seg_a = make_segment(first_marker);
  const auto seg_b = make_segment(second_marker);
  const std::size_t n_fill = total - seg_a.size() - seg_b.size();
  std::size_t at_a = rng.below(n_fill + 1);
  std::size_t at_b = rng.below(n_fill + 1);
  if (at_b < at_a) std::swap(at_a, at_b);

  std::vector<std::string> words;
  const bool target_is_a = rng.below(2) == 0;
  std::size_t answer_word = 0, answer_len = 0;
  for (std::size_t k = 0; k <= n_fill; ++k) {
    if (k == at_a) {
      if (target_is_a) answer_word = words.size() + 1, answer_len = seg_a.size() - 2;
      words.insert(words.end(), seg_a.begin(), seg_a.end());
    }
    if (k == at_b) {
      if (!target_is_a) answer_word = words.size() + 1, answer_len = seg_b.size() - 2;
      words.insert(words.end(), seg_b.begin(), seg_b.end());
    }
    if (k < n_fill) words.push_back(filler(rng.below(kFillers)));
  }

  SquadExample ex;
  ex.id = id;
  std::size_t answer_start = 0;
  std::string answer;
  for (std::size_t k = 0; k < words.size(); ++k) {
    if (k) ex.passage += ' ';
    if (k == answer_word) answer_start = ex.passage.size();
    if (k >= answer_word && k < answer_word + answer_len) answer += (answer.empty() ? "" : " ") + words[k];
    ex.passage += words[k];
  }
  ex.question = "find " + marker(target_is_a ? first_marker : second_marker);
  ex.answers.push_back({answer, answer_start});
  return ex;
}

inline std::vector<SquadExample> generate(std::size_t count, Rng& rng, const std::string& id_prefix) {
  std::vector<SquadExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_example(rng, id_prefix + std::to_string(i)));
  return out;
}

/// Random frozen vectors with unit-variance entries for the task vocabulary.
template <typename T>
WordVocab<T> word_vectors(std::size_t dim, Rng& rng) {
  WordVocab<T> vocab(dim);
  const double sd = 1.0;
  for (const auto& w : vocabulary()) {
    std::vector<T> v(dim);
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, sd));
    vocab.add(w, v);
  }
  return vocab;
}

// Compact architecture used for the synthetic task.
inline ModelConfig toy_config() {
  ModelConfig c;
  c.word_dim = 32;
  c.char_dim = 16;
  c.d_model = 32;
  c.n_heads = 2;
  c.ff_hidden_processing = 64;
  c.ff_hidden_reduction = 96;
  c.n_processing_layers = 1;
  c.selector_hidden = 16;
  c.keep_processing = c.keep_reduction = c.keep_char = c.keep_selector = 1.0;
  return c;
}

// Training preset for the synthetic task.
inline constexpr std::size_t kEpochs = 20;
inline constexpr std::size_t kBatchSize = 25;
inline constexpr std::size_t kWarmupSteps = 400;
inline constexpr std::size_t kTrainExamples = 2000;
inline constexpr std::size_t kDevExamples = 500;

}  // namespace fabir::synthetic
