#pragma once

#include <string>
#include <utility>
#include <vector>

#include "momentdet/geometry.hpp"
#include "momentdet/rng.hpp"
#include "momentdet/tokenizer.hpp"

namespace momentdet {

/// Token index range [begin, end) of one query, excluding separator tokens.
struct QuerySpan {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
};

/// An ordered query list rendered as "query_1. query_2. ... . query_n."
/// together with its token sequence and per-query token spans.
struct StructuredPrompt {
  std::vector<std::string> queries;
  std::string text;
  std::vector<int> token_ids;
  std::vector<Token> tokens;
  std::vector<QuerySpan> query_spans;

  int num_queries() const { return static_cast<int>(queries.size()); }
  int num_tokens() const { return static_cast<int>(token_ids.size()); }
};

/// Which prompt queries are positive for the current video and, for each
/// positive one, the ground-truth segments it labels.
struct PromptLabelMap {
  std::vector<char> positive;                            // per prompt query
  std::vector<std::vector<TemporalSegment>> segments;    // empty for negatives
};

/// A query that is present in the current video, with its segments.
struct PositiveQuery {
  std::string query;
  std::vector<TemporalSegment> segments;
};

/// Renders and tokenizes a prompt. Queries are trimmed, must be nonempty,
/// unique, and must not contain "." (the separator). Throws when the token
/// budget is exceeded, naming the first offending query.
StructuredPrompt build_prompt(const std::vector<std::string>& queries,
                              const Tokenizer& tokenizer, int max_tokens = 512);

/// Training-time prompt: keeps all positives, draws distinct negatives
/// uniformly without replacement from the pool until the query count reaches
/// `cap` (fewer if the pool is smaller), shuffles, and builds the prompt plus
/// its label map. Reproducible given the rng state.
std::pair<StructuredPrompt, PromptLabelMap> sample_training_prompt(
    const std::vector<PositiveQuery>& positives,
    const std::vector<std::string>& negative_pool, int cap, Rng& rng,
    const Tokenizer& tokenizer, int max_tokens = 512);

/// Greedy in-order packing of categories into prompts: a chunk closes when
/// adding the next category would exceed max_queries or max_tokens. The
/// concatenation of all chunks' query lists equals the input in order.
std::vector<StructuredPrompt> chunk_eval_prompts(const std::vector<std::string>& categories,
                                                 const Tokenizer& tokenizer,
                                                 int max_queries = 35, int max_tokens = 512);

}  // namespace momentdet
