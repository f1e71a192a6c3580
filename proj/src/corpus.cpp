#include "cdcd/corpus.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cdcd {

const std::string kPadToken = "<pad>";

namespace {

// Strict UTF-8 decode into codepoint strings; throws on malformed input.
std::vector<std::string> decode_utf8(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        const unsigned char b0 = static_cast<unsigned char>(text[i]);
        size_t len;
        if (b0 < 0x80)
            len = 1;
        else if ((b0 & 0xE0) == 0xC0)
            len = 2;
        else if ((b0 & 0xF0) == 0xE0)
            len = 3;
        else if ((b0 & 0xF8) == 0xF0)
            len = 4;
        else
            throw std::runtime_error("ingest_corpus: invalid UTF-8 lead byte at offset " +
                                     std::to_string(i));
        if (i + len > text.size())
            throw std::runtime_error("ingest_corpus: truncated UTF-8 sequence at offset " +
                                     std::to_string(i));
        uint32_t cp = 0;
        if (len == 1) {
            cp = b0;
        } else {
            cp = b0 & (0x7F >> len);
            for (size_t k = 1; k < len; ++k) {
                const unsigned char bk = static_cast<unsigned char>(text[i + k]);
                if ((bk & 0xC0) != 0x80)
                    throw std::runtime_error("ingest_corpus: invalid UTF-8 continuation at offset " +
                                             std::to_string(i + k));
                cp = (cp << 6) | (bk & 0x3F);
            }
            // reject overlong encodings and surrogates
            static const uint32_t min_cp[5] = {0, 0, 0x80, 0x800, 0x10000};
            if (cp < min_cp[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
                throw std::runtime_error("ingest_corpus: invalid UTF-8 scalar at offset " +
                                         std::to_string(i));
        }
        out.push_back(text.substr(i, len));
        i += len;
    }
    return out;
}

bool is_ws(const std::string& cp) {
    return cp == " " || cp == "\t" || cp == "\n" || cp == "\r" || cp == "\f" || cp == "\v";
}

}  // namespace

CorpusData ingest_corpus_text(const std::string& text, TokenizerKind tokenizer, int seq_len) {
    if (seq_len < 1) throw std::invalid_argument("ingest_corpus: seq_len must be >= 1");
    if (text.empty()) throw std::runtime_error("ingest_corpus: empty input");
    const std::vector<std::string> codepoints = decode_utf8(text);

    std::vector<std::string> symbols;
    if (tokenizer == TokenizerKind::chars) {
        symbols = codepoints;
    } else {
        std::string word;
        for (const std::string& cp : codepoints) {
            if (is_ws(cp)) {
                if (!word.empty()) symbols.push_back(std::move(word));
                word.clear();
            } else {
                word += cp;
            }
        }
        if (!word.empty()) symbols.push_back(std::move(word));
    }
    if (symbols.empty()) throw std::runtime_error("ingest_corpus: no tokens after tokenization");

    std::map<std::string, int> index;  // sorted keys give a deterministic vocabulary
    for (const std::string& s : symbols) index.emplace(s, 0);
    if (index.count(kPadToken) > 0)
        throw std::runtime_error("ingest_corpus: corpus contains the reserved pad token");

    CorpusData out;
    out.vocab.tokens.push_back(kPadToken);
    for (auto& [sym, idx] : index) {
        idx = static_cast<int>(out.vocab.tokens.size());
        out.vocab.tokens.push_back(sym);
    }

    std::vector<int> stream;
    stream.reserve(symbols.size());
    for (const std::string& s : symbols) stream.push_back(index.at(s));

    for (size_t start = 0; start < stream.size(); start += static_cast<size_t>(seq_len)) {
        std::vector<int> window(static_cast<size_t>(seq_len), 0);
        const size_t n = std::min(static_cast<size_t>(seq_len), stream.size() - start);
        std::copy(stream.begin() + static_cast<long>(start),
                  stream.begin() + static_cast<long>(start + n), window.begin());
        out.sequences.push_back(std::move(window));
    }
    return out;
}

CorpusData ingest_corpus(const std::string& path, TokenizerKind tokenizer, int seq_len) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ingest_corpus: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ingest_corpus_text(ss.str(), tokenizer, seq_len);
}

}  // namespace cdcd
