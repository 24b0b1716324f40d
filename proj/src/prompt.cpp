#include "momentdet/prompt.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace momentdet {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

StructuredPrompt build_prompt(const std::vector<std::string>& raw_queries,
                              const Tokenizer& tokenizer, int max_tokens) {
  if (raw_queries.empty()) {
    throw std::invalid_argument("build_prompt: need at least one query");
  }

  std::vector<std::string> queries;
  queries.reserve(raw_queries.size());
  std::unordered_set<std::string> seen;
  for (const std::string& raw : raw_queries) {
    const std::string q = trim(raw);
    if (q.empty()) {
      throw std::invalid_argument("build_prompt: empty query");
    }
    if (q.find('.') != std::string::npos) {
      throw std::invalid_argument("build_prompt: query contains the separator '.': \"" + q + "\"");
    }
    if (!seen.insert(q).second) {
      throw std::invalid_argument("build_prompt: duplicate query \"" + q + "\"");
    }
    queries.push_back(q);
  }

  StructuredPrompt prompt;
  prompt.queries = queries;

  // "query_1. query_2. ... . query_n." with the byte range of each query kept.
  std::vector<std::pair<size_t, size_t>> char_ranges;
  char_ranges.reserve(queries.size());
  std::string text;
  for (size_t i = 0; i < queries.size(); ++i) {
    if (i > 0) text += ' ';
    const size_t b = text.size();
    text += queries[i];
    char_ranges.emplace_back(b, text.size());
    text += '.';
  }
  prompt.text = text;

  prompt.tokens = tokenizer.encode(text);
  prompt.token_ids.reserve(prompt.tokens.size());
  for (const Token& t : prompt.tokens) prompt.token_ids.push_back(t.id);

  prompt.query_spans.assign(queries.size(), QuerySpan{});
  // Separator count up to and including each query's own trailing ".".
  std::vector<int> end_with_separator(queries.size(), 0);
  size_t qi = 0;
  for (size_t ti = 0; ti < prompt.tokens.size(); ++ti) {
    const Token& t = prompt.tokens[ti];
    if (t.id == Tokenizer::kSeparatorId) {
      if (qi < queries.size()) end_with_separator[qi] = static_cast<int>(ti) + 1;
      ++qi;
      continue;
    }
    if (qi >= queries.size()) {
      throw std::logic_error("build_prompt: token past the final separator");
    }
    QuerySpan& span = prompt.query_spans[qi];
    if (span.size() == 0) span.begin = static_cast<int>(ti);
    span.end = static_cast<int>(ti) + 1;
    if (t.begin < char_ranges[qi].first || t.end > char_ranges[qi].second) {
      throw std::logic_error("build_prompt: token crosses a query boundary");
    }
  }
  if (qi != queries.size()) {
    throw std::logic_error("build_prompt: separator count does not match query count");
  }
  for (size_t i = 0; i < queries.size(); ++i) {
    if (prompt.query_spans[i].size() <= 0) {
      throw std::invalid_argument("build_prompt: query \"" + queries[i] + "\" produced no tokens");
    }
  }

  if (prompt.num_tokens() > max_tokens) {
    for (size_t i = 0; i < queries.size(); ++i) {
      if (end_with_separator[i] > max_tokens) {
        throw std::invalid_argument("build_prompt: token budget of " + std::to_string(max_tokens) +
                                    " exceeded at query \"" + queries[i] + "\" (prompt needs " +
                                    std::to_string(prompt.num_tokens()) + " tokens)");
      }
    }
    throw std::invalid_argument("build_prompt: token budget exceeded");
  }
  return prompt;
}

std::pair<StructuredPrompt, PromptLabelMap> sample_training_prompt(
    const std::vector<PositiveQuery>& positives, const std::vector<std::string>& negative_pool,
    int cap, Rng& rng, const Tokenizer& tokenizer, int max_tokens) {
  if (cap <= 0) {
    throw std::invalid_argument("sample_training_prompt: cap must be positive");
  }
  if (static_cast<int>(positives.size()) > cap) {
    throw std::invalid_argument("sample_training_prompt: " + std::to_string(positives.size()) +
                                " positives exceed the cap of " + std::to_string(cap));
  }

  struct Entry {
    std::string query;
    int positive_index;  // -1 for negatives
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<size_t>(cap));
  for (size_t i = 0; i < positives.size(); ++i) {
    entries.push_back(Entry{trim(positives[i].query), static_cast<int>(i)});
  }

  const size_t want = static_cast<size_t>(cap) - positives.size();
  const size_t draw = std::min(want, negative_pool.size());
  for (const size_t j : rng.sample_without_replacement(negative_pool.size(), draw)) {
    entries.push_back(Entry{trim(negative_pool[j]), -1});
  }

  std::unordered_set<std::string> seen;
  for (const Entry& e : entries) {
    if (!seen.insert(e.query).second) {
      throw std::invalid_argument("sample_training_prompt: duplicate query \"" + e.query +
                                  "\" after merging positives and negatives");
    }
  }

  rng.shuffle(entries);

  std::vector<std::string> queries;
  queries.reserve(entries.size());
  for (const Entry& e : entries) queries.push_back(e.query);
  StructuredPrompt prompt = build_prompt(queries, tokenizer, max_tokens);

  PromptLabelMap labels;
  labels.positive.assign(entries.size(), 0);
  labels.segments.assign(entries.size(), {});
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].positive_index >= 0) {
      labels.positive[i] = 1;
      labels.segments[i] = positives[static_cast<size_t>(entries[i].positive_index)].segments;
    }
  }
  return {std::move(prompt), std::move(labels)};
}

std::vector<StructuredPrompt> chunk_eval_prompts(const std::vector<std::string>& categories,
                                                 const Tokenizer& tokenizer, int max_queries,
                                                 int max_tokens) {
  if (categories.empty()) {
    throw std::invalid_argument("chunk_eval_prompts: category list is empty");
  }
  if (max_queries <= 0) {
    throw std::invalid_argument("chunk_eval_prompts: max_queries must be positive");
  }

  std::vector<StructuredPrompt> chunks;
  std::vector<std::string> current;
  std::unordered_set<std::string> current_set;
  int current_tokens = 0;
  auto flush = [&]() {
    if (!current.empty()) {
      chunks.push_back(build_prompt(current, tokenizer, max_tokens));
      current.clear();
      current_set.clear();
      current_tokens = 0;
    }
  };

  for (const std::string& raw : categories) {
    const std::string cat = trim(raw);
    // A category must fit a prompt on its own; this also validates it.
    const StructuredPrompt alone = build_prompt({cat}, tokenizer, max_tokens);
    const int cat_tokens = alone.num_tokens();  // query tokens plus its separator

    if (static_cast<int>(current.size()) + 1 > max_queries ||
        current_tokens + cat_tokens > max_tokens || current_set.count(cat) > 0) {
      flush();
    }
    current.push_back(cat);
    current_set.insert(cat);
    current_tokens += cat_tokens;
  }
  flush();
  return chunks;
}

}  // namespace momentdet
