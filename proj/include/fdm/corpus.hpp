#pragma once

#include "fdm/error.hpp"
#include "fdm/parallel.hpp"
#include "fdm/porter_stemmer.hpp"
#include "fdm/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace fdm {

using TokenId = std::uint32_t;

/// Bidirectional token <-> dense id map.
class Vocabulary {
  public:
    Vocabulary() = default;

    explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        index_.reserve(tokens_.size());
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
                throw FormatError("duplicate token in vocabulary: " + tokens_[i]);
        }
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::string& token(TokenId id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    std::optional<TokenId> find(std::string_view token) const {
        auto it = index_.find(std::string(token));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.tokens_ == b.tokens_;
    }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

/// Sparse bag-of-words count vector, entries sorted by token id.
class BowDocument {
  public:
    struct Entry {
        TokenId id;
        std::uint32_t count;
        friend bool operator==(const Entry&, const Entry&) = default;
    };

    BowDocument() = default;

    /// Entries may arrive unsorted and with repeated ids; zero counts dropped.
    explicit BowDocument(std::vector<Entry> entries) {
        std::sort(entries.begin(), entries.end(),
                  [](const Entry& a, const Entry& b) { return a.id < b.id; });
        for (const auto& e : entries) {
            if (e.count == 0) continue;
            if (!entries_.empty() && entries_.back().id == e.id)
                entries_.back().count += e.count;
            else
                entries_.push_back(e);
            length_ += e.count;
        }
    }

    static BowDocument from_ids(std::span<const TokenId> ids) {
        std::vector<Entry> entries;
        entries.reserve(ids.size());
        for (TokenId id : ids) entries.push_back({id, 1});
        return BowDocument(std::move(entries));
    }

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    /// Total token count l_d.
    std::uint64_t length() const noexcept { return length_; }
    std::size_t distinct() const noexcept { return entries_.size(); }

    std::uint32_t count(TokenId id) const {
        auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                                   [](const Entry& e, TokenId v) { return e.id < v; });
        return (it != entries_.end() && it->id == id) ? it->count : 0;
    }

    friend bool operator==(const BowDocument&, const BowDocument&) = default;

  private:
    std::vector<Entry> entries_;
    std::uint64_t length_ = 0;
};

struct Corpus {
    Vocabulary vocab;
    std::vector<BowDocument> docs;

    std::size_t num_docs() const noexcept { return docs.size(); }
    std::size_t vocab_size() const noexcept { return vocab.size(); }

    /// Throws FormatError if any document references an id outside the vocabulary.
    void validate() const {
        const auto n = vocab.size();
        for (std::size_t d = 0; d < docs.size(); ++d)
            for (const auto& e : docs[d].entries())
                if (e.id >= n)
                    throw FormatError("document " + std::to_string(d) + " references token id " +
                                      std::to_string(e.id) + " >= N=" + std::to_string(n));
    }

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

// ---------------------------------------------------------------------------
// Tokenization

struct PreprocessConfig {
    std::size_t min_token_length = 3;
    std::unordered_set<std::string> stopwords;
    bool stem = false;
};

/// Lowercased ASCII-alphabetic tokens. Anything else (digits, punctuation,
/// bytes of multi-byte UTF-8 sequences) separates tokens and is dropped.
inline std::vector<std::string> tokenize(std::string_view text, const PreprocessConfig& config) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (current.size() >= config.min_token_length && !config.stopwords.contains(current)) {
            out.push_back(config.stem ? porter_stem(current) : current);
        }
        current.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
            current.push_back(static_cast<char>(c | 0x20));
        } else if (!current.empty()) {
            flush();
        }
    }
    if (!current.empty()) flush();
    return out;
}

/// One word per line (blank lines and lines starting with '#' ignored).
inline std::unordered_set<std::string> read_stopwords(std::istream& in) {
    std::unordered_set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#') continue;
        auto e = line.find_last_not_of(" \t\r");
        std::string w = line.substr(b, e - b + 1);
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        words.insert(std::move(w));
    }
    return words;
}

// ---------------------------------------------------------------------------
// Corpus construction

struct CorpusBuildOptions {
    std::uint64_t min_token_count = 1;
    std::uint64_t min_doc_len = 2;
    /// Remove this many most frequent tokens before thresholding.
    std::size_t drop_top_k = 0;
    std::size_t threads = 1;
};

namespace detail {

struct InternedStreams {
    std::vector<std::string> strings;
    std::vector<std::vector<std::uint32_t>> docs;
};

inline InternedStreams intern(std::span<const std::vector<std::string>> streams,
                              std::size_t threads) {
    // Per-shard interning, then an associative merge into a global table.
    const std::size_t shards = chunk_count(streams.size(), threads);
    std::vector<std::unordered_map<std::string, std::uint32_t>> local(shards);
    std::vector<std::vector<std::string>> local_strings(shards);
    std::vector<std::vector<std::vector<std::uint32_t>>> local_docs(shards);
    parallel_chunks(streams.size(), threads, [&](std::size_t w, std::size_t b, std::size_t e) {
        auto& map = local[w];
        for (std::size_t d = b; d < e; ++d) {
            std::vector<std::uint32_t> ids;
            ids.reserve(streams[d].size());
            for (const auto& tok : streams[d]) {
                auto [it, fresh] =
                    map.emplace(tok, static_cast<std::uint32_t>(local_strings[w].size()));
                if (fresh) local_strings[w].push_back(tok);
                ids.push_back(it->second);
            }
            local_docs[w].push_back(std::move(ids));
        }
    });

    InternedStreams out;
    std::unordered_map<std::string, std::uint32_t> global;
    out.docs.reserve(streams.size());
    for (std::size_t w = 0; w < shards; ++w) {
        std::vector<std::uint32_t> remap(local_strings[w].size());
        for (std::size_t i = 0; i < remap.size(); ++i) {
            auto [it, fresh] =
                global.emplace(local_strings[w][i], static_cast<std::uint32_t>(out.strings.size()));
            if (fresh) out.strings.push_back(local_strings[w][i]);
            remap[i] = it->second;
        }
        for (auto& doc : local_docs[w]) {
            for (auto& id : doc) id = remap[id];
            out.docs.push_back(std::move(doc));
        }
    }
    return out;
}

} // namespace detail

/// Build the vocabulary and bag-of-words documents.
///
/// Tokens below `min_token_count` are removed and documents left shorter
/// than `min_doc_len` are dropped. Dropping documents lowers token counts, so
/// both filters are repeated until neither changes anything; every retained
/// token then has corpus frequency >= min_token_count in the returned corpus.
/// Token ids follow lexicographic token order.
inline Corpus build_corpus(std::span<const std::vector<std::string>> streams,
                           const CorpusBuildOptions& opts = {}) {
    if (opts.min_doc_len < 2)
        throw InvalidArgument("min_doc_len must be >= 2, got " + std::to_string(opts.min_doc_len));

    auto interned = detail::intern(streams, opts.threads);
    const std::size_t n_raw = interned.strings.size();

    std::vector<std::uint64_t> freq(n_raw, 0);
    for (const auto& doc : interned.docs)
        for (auto id : doc) ++freq[id];

    std::vector<char> alive(n_raw, 1);
    if (opts.drop_top_k > 0) {
        std::vector<std::uint32_t> order(n_raw);
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            if (freq[a] != freq[b]) return freq[a] > freq[b];
            return interned.strings[a] < interned.strings[b];
        });
        for (std::size_t i = 0; i < std::min(opts.drop_top_k, n_raw); ++i) alive[order[i]] = 0;
    }

    std::vector<char> doc_alive(interned.docs.size(), 1);
    for (;;) {
        bool changed = false;
        for (std::size_t t = 0; t < n_raw; ++t) {
            if (alive[t] && freq[t] < opts.min_token_count) {
                alive[t] = 0;
                changed = true;
            }
        }
        std::fill(freq.begin(), freq.end(), 0);
        for (std::size_t d = 0; d < interned.docs.size(); ++d) {
            if (!doc_alive[d]) continue;
            std::uint64_t len = 0;
            for (auto id : interned.docs[d]) len += alive[id] ? 1 : 0;
            if (len < opts.min_doc_len) {
                doc_alive[d] = 0;
                changed = true;
                continue;
            }
            for (auto id : interned.docs[d])
                if (alive[id]) ++freq[id];
        }
        if (!changed) break;
    }

    std::vector<std::uint32_t> kept;
    for (std::uint32_t t = 0; t < n_raw; ++t)
        if (alive[t] && freq[t] > 0) kept.push_back(t);
    std::sort(kept.begin(), kept.end(), [&](std::uint32_t a, std::uint32_t b) {
        return interned.strings[a] < interned.strings[b];
    });
    constexpr auto none = static_cast<std::uint32_t>(-1);
    std::vector<std::uint32_t> new_id(n_raw, none);
    std::vector<std::string> tokens;
    tokens.reserve(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        new_id[kept[i]] = static_cast<std::uint32_t>(i);
        tokens.push_back(interned.strings[kept[i]]);
    }

    Corpus corpus;
    corpus.vocab = Vocabulary(std::move(tokens));
    for (std::size_t d = 0; d < interned.docs.size(); ++d) {
        if (!doc_alive[d]) continue;
        std::vector<TokenId> ids;
        for (auto id : interned.docs[d])
            if (new_id[id] != none) ids.push_back(new_id[id]);
        corpus.docs.push_back(BowDocument::from_ids(ids));
    }
    if (corpus.docs.empty()) throw EmptyCorpus("no document survived filtering");
    return corpus;
}

/// Map token streams onto an existing vocabulary; out-of-vocabulary tokens are
/// dropped. Every stream yields a document, possibly empty.
inline Corpus apply_vocabulary(std::span<const std::vector<std::string>> streams,
                               const Vocabulary& vocab) {
    Corpus corpus;
    corpus.vocab = vocab;
    corpus.docs.reserve(streams.size());
    for (const auto& stream : streams) {
        std::vector<TokenId> ids;
        for (const auto& tok : stream)
            if (auto id = vocab.find(tok)) ids.push_back(*id);
        corpus.docs.push_back(BowDocument::from_ids(ids));
    }
    return corpus;
}

/// Random train/test partition. The test part holds round(fraction * D)
/// documents; both parts keep the original relative document order.
inline std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, double fraction,
                                               std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw InvalidArgument("holdout fraction must lie in (0, 1)");
    const std::size_t n = corpus.docs.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "holdout"));
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);

    const auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<char> is_test(n, 0);
    for (std::size_t i = 0; i < n_test; ++i) is_test[perm[i]] = 1;

    Corpus train, test;
    train.vocab = corpus.vocab;
    test.vocab = corpus.vocab;
    for (std::size_t d = 0; d < n; ++d) (is_test[d] ? test : train).docs.push_back(corpus.docs[d]);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Text corpus format:
//   N D
//   <id>\t<token>          (N lines)
//   <doc_id> id:count ...  (D lines)

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
    out << corpus.vocab.size() << ' ' << corpus.docs.size() << '\n';
    for (std::size_t i = 0; i < corpus.vocab.size(); ++i)
        out << i << '\t' << corpus.vocab.tokens()[i] << '\n';
    for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
        out << d;
        for (const auto& e : corpus.docs[d].entries()) out << ' ' << e.id << ':' << e.count;
        out << '\n';
    }
}

inline Corpus read_corpus(std::istream& in) {
    std::string line;
    std::size_t n = 0, n_docs = 0;
    {
        if (!std::getline(in, line)) throw FormatError("corpus: missing header");
        std::istringstream hs(line);
        if (!(hs >> n >> n_docs)) throw FormatError("corpus: malformed header '" + line + "'");
    }
    std::vector<std::string> tokens(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw FormatError("corpus: truncated vocabulary");
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw FormatError("corpus: malformed vocabulary line");
        std::size_t id = 0;
        try {
            id = std::stoul(line.substr(0, tab));
        } catch (const std::exception&) {
            throw FormatError("corpus: malformed vocabulary id");
        }
        if (id != i) throw FormatError("corpus: vocabulary ids must be dense and ordered");
        tokens[i] = line.substr(tab + 1);
    }
    Corpus corpus;
    corpus.vocab = Vocabulary(std::move(tokens));
    corpus.docs.reserve(n_docs);
    for (std::size_t d = 0; d < n_docs; ++d) {
        if (!std::getline(in, line)) throw FormatError("corpus: truncated document list");
        std::istringstream ls(line);
        std::size_t doc_id = 0;
        if (!(ls >> doc_id) || doc_id != d) throw FormatError("corpus: bad document id");
        std::vector<BowDocument::Entry> entries;
        std::string item;
        while (ls >> item) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) throw FormatError("corpus: bad entry '" + item + "'");
            unsigned long id = 0, count = 0;
            try {
                id = std::stoul(item.substr(0, colon));
                count = std::stoul(item.substr(colon + 1));
            } catch (const std::exception&) {
                throw FormatError("corpus: bad entry '" + item + "'");
            }
            if (count == 0) throw FormatError("corpus: zero count in entry '" + item + "'");
            entries.push_back({static_cast<TokenId>(id), static_cast<std::uint32_t>(count)});
        }
        corpus.docs.emplace_back(std::move(entries));
    }
    corpus.validate();
    return corpus;
}

inline void save_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    write_corpus(out, corpus);
    if (!out) throw IoError("write failed: " + path);
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    return read_corpus(in);
}

/// Read one document per line and tokenize each.
inline std::vector<std::vector<std::string>> read_token_streams(std::istream& in,
                                                                const PreprocessConfig& config) {
    std::vector<std::vector<std::string>> streams;
    std::string line;
    while (std::getline(in, line)) streams.push_back(tokenize(line, config));
    return streams;
}

} // namespace fdm
