#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fabir/errors.hpp"
#include "fabir/rng.hpp"

namespace fabir {

// ---------------------------------------------------------------------------
// SQuAD examples

struct Answer {
  std::string text;
  std::size_t char_start = 0;  // byte offset into the UTF-8 passage
};

struct SquadExample {
  std::string id;
  std::string passage;
  std::string question;
  std::vector<Answer> answers;
};

struct RejectedEntry {
  std::string id;
  std::string reason;
};

struct SquadDataset {
  std::vector<SquadExample> examples;
  std::vector<RejectedEntry> rejects;
};

namespace detail {

// Byte offset of code point `cp_index` in a UTF-8 string, or npos past the end.
inline std::size_t utf8_byte_offset(const std::string& s, std::size_t cp_index) {
  std::size_t cp = 0;
  for (std::size_t b = 0; b < s.size(); ++b) {
    if ((static_cast<unsigned char>(s[b]) & 0xC0) == 0x80) continue;
    if (cp == cp_index) return b;
    ++cp;
  }
  return cp == cp_index ? s.size() : std::string::npos;
}

}  // namespace detail

/// Flattens SQuAD v1.1 JSON (data -> paragraphs -> qas -> answers). Answer
/// offsets are converted from code points to byte offsets. Entries that break
/// an invariant are collected in `rejects` rather than aborting the load.
inline SquadDataset parse_squad(const nlohmann::json& root) {
  if (!root.is_object() || !root.contains("data") || !root["data"].is_array()) {
    throw ParseError("SQuAD file must be an object with a 'data' array");
  }
  SquadDataset ds;
  for (const auto& article : root["data"]) {
    if (!article.is_object() || !article.contains("paragraphs") || !article["paragraphs"].is_array()) {
      ds.rejects.push_back({"", "article without a 'paragraphs' array"});
      continue;
    }
    for (const auto& para : article["paragraphs"]) {
      if (!para.is_object() || !para.contains("context") || !para["context"].is_string() || !para.contains("qas") ||
          !para["qas"].is_array()) {
        ds.rejects.push_back({"", "paragraph without 'context' string or 'qas' array"});
        continue;
      }
      const std::string context = para["context"].get<std::string>();
      for (const auto& qa : para["qas"]) {
        SquadExample ex;
        ex.passage = context;
        if (!qa.is_object() || !qa.contains("id") || !qa["id"].is_string() || !qa.contains("question") ||
            !qa["question"].is_string() || !qa.contains("answers") || !qa["answers"].is_array()) {
          ds.rejects.push_back({qa.is_object() && qa.contains("id") && qa["id"].is_string() ? qa["id"].get<std::string>() : "",
                                "qa entry missing id, question or answers"});
          continue;
        }
        ex.id = qa["id"].get<std::string>();
        ex.question = qa["question"].get<std::string>();
        std::string reason;
        for (const auto& ans : qa["answers"]) {
          if (!ans.is_object() || !ans.contains("text") || !ans["text"].is_string() || !ans.contains("answer_start") ||
              !ans["answer_start"].is_number_integer()) {
            reason = "answer missing text or integer answer_start";
            break;
          }
          const auto start_cp = ans["answer_start"].get<long long>();
          const std::string text = ans["text"].get<std::string>();
          const std::size_t start = start_cp < 0 ? std::string::npos
                                                 : detail::utf8_byte_offset(context, static_cast<std::size_t>(start_cp));
          if (start == std::string::npos || start + text.size() > context.size()) {
            reason = "answer_start " + std::to_string(start_cp) + " with answer length " + std::to_string(text.size()) +
                     " lies beyond the passage";
            break;
          }
          ex.answers.push_back({text, start});
        }
        if (reason.empty() && ex.answers.empty()) reason = "no answers";
        if (!reason.empty()) {
          ds.rejects.push_back({ex.id, reason});
          continue;
        }
        ds.examples.push_back(std::move(ex));
      }
    }
  }
  return ds;
}

inline SquadDataset load_squad(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open SQuAD file '" + path + "'");
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
  return parse_squad(root);
}

// Inverse of parse_squad for datasets built in memory (one paragraph per example).
inline nlohmann::json to_squad_json(const std::vector<SquadExample>& examples, const std::string& title = "generated") {
  nlohmann::json paragraphs = nlohmann::json::array();
  for (const auto& ex : examples) {
    nlohmann::json answers = nlohmann::json::array();
    for (const auto& a : ex.answers) answers.push_back({{"text", a.text}, {"answer_start", a.char_start}});
    paragraphs.push_back({{"context", ex.passage},
                          {"qas", nlohmann::json::array({{{"id", ex.id}, {"question", ex.question}, {"answers", answers}}})}});
  }
  return {{"version", "1.1"}, {"data", nlohmann::json::array({{{"title", title}, {"paragraphs", paragraphs}}})}};
}

// ---------------------------------------------------------------------------
// Tokenization

struct Token {
  std::string text;
  std::size_t begin = 0;  // byte offsets into the source, [begin, end)
  std::size_t end = 0;
};

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

inline bool iequals_suffix(const std::string& s, std::size_t from, const char* suffix) {
  const std::string suf(suffix);
  if (s.size() - from != suf.size()) return false;
  for (std::size_t i = 0; i < suf.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[from + i])) != suf[i]) return false;
  return true;
}

// Position where a contraction suffix begins in `core`, if any.
inline std::optional<std::size_t> contraction_split(const std::string& core) {
  const std::size_t n = core.size();
  if (n > 3 && iequals_suffix(core, n - 3, "n't")) return n - 3;
  const auto apos = core.rfind('\'');
  if (apos == std::string::npos || apos == 0) return std::nullopt;
  for (const char* suf : {"'s", "'re", "'ve", "'ll", "'d", "'m"}) {
    if (iequals_suffix(core, apos, suf)) return apos;
  }
  return std::nullopt;
}

}  // namespace detail

/// Rule tokenizer with exact byte offsets.
///
/// Text is split on whitespace; leading and trailing ASCII punctuation is
/// detached one character per token; English contractions are split off
/// ("don't" -> "do" "n't", "it's" -> "it" "'s"). Punctuation inside a word,
/// such as hyphens, stays in the word.
inline std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> tokens;
  auto emit = [&](std::size_t b, std::size_t e) {
    if (e > b) tokens.push_back({text.substr(b, e - b), b, e});
  };
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_space(text[i])) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !detail::is_space(text[j])) ++j;
    std::size_t b = i, e = j;
    while (b < e && detail::is_punct(text[b])) {
      emit(b, b + 1);
      ++b;
    }
    std::vector<std::pair<std::size_t, std::size_t>> trailing;
    while (e > b && detail::is_punct(text[e - 1])) {
      trailing.emplace_back(e - 1, e);
      --e;
    }
    if (e > b) {
      const std::string core = text.substr(b, e - b);
      if (auto cut = detail::contraction_split(core)) {
        emit(b, b + *cut);
        emit(b + *cut, e);
      } else {
        emit(b, e);
      }
    }
    for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) emit(it->first, it->second);
    i = j;
  }
  return tokens;
}

inline std::vector<std::string> token_texts(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

struct GoldSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const GoldSpan& o) const { return start == o.start && end == o.end; }
};

struct TokenizedExample {
  std::string id;
  std::string passage;
  std::vector<Token> passage_tokens;
  std::vector<Token> question_tokens;
  std::vector<GoldSpan> spans;          // one per alignable answer
  std::vector<std::string> answer_texts;  // every gold answer, for evaluation
};

/// Token span covering the answer's characters [char_start, char_start + len).
/// Equals (token containing the first char, token containing the last char)
/// when both exist; otherwise the minimal span of tokens overlapping the range.
inline std::optional<GoldSpan> align_answer(const std::vector<Token>& tokens, const std::string& answer_text,
                                            std::size_t char_start) {
  const std::size_t char_end = char_start + std::max<std::size_t>(answer_text.size(), 1);
  std::optional<std::size_t> first, last;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t].end > char_start && tokens[t].begin < char_end) {
      if (!first) first = t;
      last = t;
    }
  }
  if (!first) return std::nullopt;
  return GoldSpan{*first, *last};
}

struct TokenizeStats {
  std::size_t unalignable = 0;
};

inline TokenizedExample tokenize_example(const SquadExample& ex, TokenizeStats* stats = nullptr) {
  TokenizedExample out;
  out.id = ex.id;
  out.passage = ex.passage;
  out.passage_tokens = tokenize(ex.passage);
  out.question_tokens = tokenize(ex.question);
  for (const auto& a : ex.answers) {
    out.answer_texts.push_back(a.text);
    if (auto span = align_answer(out.passage_tokens, a.text, a.char_start)) {
      out.spans.push_back(*span);
    } else if (stats) {
      ++stats->unalignable;
    }
  }
  return out;
}

// Original passage characters spanning tokens [start, end].
inline std::string span_text(const TokenizedExample& ex, std::size_t start, std::size_t end) {
  const auto& toks = ex.passage_tokens;
  return ex.passage.substr(toks[start].begin, toks[end].end - toks[start].begin);
}

// ---------------------------------------------------------------------------
// Length-bucketed batching

inline const std::vector<std::size_t>& default_bucket_edges() {
  static const std::vector<std::size_t> edges = {60, 100, 140, 180, 220, 260};
  return edges;
}

// Bucket b holds lengths in (edges[b-1], edges[b]]; the last bucket is unbounded.
inline std::size_t bucket_of(std::size_t len, const std::vector<std::size_t>& edges) {
  for (std::size_t b = 0; b < edges.size(); ++b)
    if (len <= edges[b]) return b;
  return edges.size();
}

struct Batch {
  std::vector<std::size_t> indices;  // into the example list
  std::size_t bucket = 0;
  std::size_t passage_len = 0;   // padded length = max in batch
  std::size_t question_len = 0;
};

/// Groups examples by passage-length bucket, shuffles within each bucket, cuts
/// batches of at most `batch_size`, then shuffles the batch order.
inline std::vector<Batch> bucket_batches(const std::vector<std::size_t>& passage_lens,
                                         const std::vector<std::size_t>& question_lens, std::size_t batch_size,
                                         const std::vector<std::size_t>& edges, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (passage_lens.size() != question_lens.size()) throw ContractError("bucket_batches: length lists differ in size");
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < passage_lens.size(); ++i) buckets[bucket_of(passage_lens[i], edges)].push_back(i);
  std::vector<Batch> batches;
  for (auto& [bucket, members] : buckets) {
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t s = 0; s < members.size(); s += batch_size) {
      Batch b;
      b.bucket = bucket;
      for (std::size_t k = s; k < std::min(members.size(), s + batch_size); ++k) {
        b.indices.push_back(members[k]);
        b.passage_len = std::max(b.passage_len, passage_lens[members[k]]);
        b.question_len = std::max(b.question_len, question_lens[members[k]]);
      }
      batches.push_back(std::move(b));
    }
  }
  rng.shuffle(std::span<Batch>(batches));
  return batches;
}

// ---------------------------------------------------------------------------
// Metrics

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace; returns the remaining tokens.
inline std::vector<std::string> normalize_answer_tokens(const std::string& s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (char c : s) {
    if (detail::is_punct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  std::vector<std::string> out;
  std::istringstream is(cleaned);
  std::string w;
  while (is >> w) {
    if (w == "a" || w == "an" || w == "the") continue;
    out.push_back(w);
  }
  return out;
}

inline std::string normalize_answer(const std::string& s) {
  std::string out;
  for (const auto& w : normalize_answer_tokens(s)) out += (out.empty() ? "" : " ") + w;
  return out;
}

inline double exact_match_score(const std::string& prediction, const std::string& gold) {
  return normalize_answer(prediction) == normalize_answer(gold) ? 1.0 : 0.0;
}

// Token-bag F1 between normalized answers; two empty answers score 1.
inline double f1_score(const std::string& prediction, const std::string& gold) {
  const auto p = normalize_answer_tokens(prediction);
  const auto g = normalize_answer_tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, long> counts;
  for (const auto& w : g) ++counts[w];
  long same = 0;
  for (const auto& w : p) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++same;
    }
  }
  if (same == 0) return 0.0;
  const double precision = static_cast<double>(same) / static_cast<double>(p.size());
  const double recall = static_cast<double>(same) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

struct ExampleScore {
  std::string id;
  std::string prediction;
  double em = 0.0;  // 0 or 1
  double f1 = 0.0;  // in [0, 1]
  bool missing = false;
};

struct MetricReport {
  double em = 0.0;  // percentages
  double f1 = 0.0;
  std::vector<ExampleScore> per_example;
  std::vector<std::string> missing_ids;
  std::vector<std::string> unknown_ids;  // predictions with no matching example
};

template <typename Example>
MetricReport evaluate(const std::map<std::string, std::string>& predictions, const std::vector<Example>& examples,
                      auto&& gold_answers_of) {
  MetricReport report;
  std::map<std::string, bool> known;
  double em_sum = 0.0, f1_sum = 0.0;
  for (const auto& ex : examples) {
    known[ex.id] = true;
    ExampleScore s;
    s.id = ex.id;
    auto it = predictions.find(ex.id);
    if (it == predictions.end()) {
      s.missing = true;
      report.missing_ids.push_back(ex.id);
    } else {
      s.prediction = it->second;
      for (const auto& gold : gold_answers_of(ex)) {
        s.em = std::max(s.em, exact_match_score(s.prediction, gold));
        s.f1 = std::max(s.f1, f1_score(s.prediction, gold));
      }
    }
    em_sum += s.em;
    f1_sum += s.f1;
    report.per_example.push_back(std::move(s));
  }
  for (const auto& [id, _] : predictions)
    if (!known.count(id)) report.unknown_ids.push_back(id);
  if (!examples.empty()) {
    report.em = 100.0 * em_sum / static_cast<double>(examples.size());
    report.f1 = 100.0 * f1_sum / static_cast<double>(examples.size());
  }
  return report;
}

/// EM and F1 (percentages) of id -> answer predictions against every gold
/// answer of each example. Missing predictions score 0 and are listed.
inline MetricReport evaluate(const std::map<std::string, std::string>& predictions,
                             const std::vector<SquadExample>& examples) {
  return evaluate(predictions, examples, [](const SquadExample& ex) {
    std::vector<std::string> golds;
    for (const auto& a : ex.answers) golds.push_back(a.text);
    return golds;
  });
}

inline MetricReport evaluate(const std::map<std::string, std::string>& predictions,
                             const std::vector<TokenizedExample>& examples) {
  return evaluate(predictions, examples, [](const TokenizedExample& ex) { return ex.answer_texts; });
}

// ---------------------------------------------------------------------------
// Predictions file: one flat JSON object id -> answer, keys sorted.

inline std::string predictions_to_json(const std::map<std::string, std::string>& predictions) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, answer] : predictions) j[id] = answer;
  return j.dump();
}

inline void write_predictions(const std::string& path, const std::map<std::string, std::string>& predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << predictions_to_json(predictions);
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline std::map<std::string, std::string> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open predictions file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ParseError("predictions file must be a JSON object");
  std::map<std::string, std::string> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) throw ParseError("prediction for '" + it.key() + "' is not a string");
    out[it.key()] = it.value().get<std::string>();
  }
  return out;
}

}  // namespace fabir
