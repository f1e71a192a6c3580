#pragma once

#include <string>
#include <vector>

#include "cdcd/embedding.hpp"

namespace cdcd {

enum class TokenizerKind { chars, whitespace };

struct CorpusData {
    Vocabulary vocab;  // index 0 is the reserved pad token
    std::vector<std::vector<int>> sequences;
};

// Builds a vocabulary from the observed symbols (sorted for determinism, pad
// token at index 0) and chunks the token stream into non-overlapping length-L
// windows; the last partial window is padded. Errors on empty or non-UTF-8
// input.
CorpusData ingest_corpus(const std::string& path, TokenizerKind tokenizer, int seq_len);
CorpusData ingest_corpus_text(const std::string& text, TokenizerKind tokenizer, int seq_len);

extern const std::string kPadToken;

}  // namespace cdcd
