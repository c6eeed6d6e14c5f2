#pragma once

#include "fdm/alias_table.hpp"
#include "fdm/corpus.hpp"
#include "fdm/error.hpp"
#include "fdm/matrix.hpp"
#include "fdm/parallel.hpp"
#include "fdm/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace fdm {

struct CoocEntry {
    TokenId u;
    TokenId v;
    double weight;
    friend bool operator==(const CoocEntry&, const CoocEntry&) = default;
};

struct TokenPair {
    TokenId u;
    TokenId v;
    friend bool operator==(const TokenPair&, const TokenPair&) = default;
};

/// Sparse symmetric probability matrix over token pairs, stored as the full
/// symmetric coordinate list sorted by (u, v). Zero entries are never stored.
class CoocMatrix {
  public:
    CoocMatrix() = default;

    /// Takes ownership of entries; sorts them and drops zeros. No symmetry or
    /// normalization is imposed here, see validate().
    CoocMatrix(std::size_t n, std::vector<CoocEntry> entries) : n_(n), entries_(std::move(entries)) {
        std::erase_if(entries_, [](const CoocEntry& e) { return e.weight == 0.0; });
        std::sort(entries_.begin(), entries_.end(), [](const CoocEntry& a, const CoocEntry& b) {
            return a.u != b.u ? a.u < b.u : a.v < b.v;
        });
    }

    std::size_t n() const noexcept { return n_; }
    std::size_t nnz() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<CoocEntry>& entries() const noexcept { return entries_; }

    double at(TokenId u, TokenId v) const {
        auto it = std::lower_bound(entries_.begin(), entries_.end(), TokenPair{u, v},
                                   [](const CoocEntry& e, const TokenPair& p) {
                                       return e.u != p.u ? e.u < p.u : e.v < p.v;
                                   });
        return (it != entries_.end() && it->u == u && it->v == v) ? it->weight : 0.0;
    }

    double total_mass() const {
        double s = 0.0;
        for (const auto& e : entries_) s += e.weight;
        return s;
    }

    MatrixD dense() const {
        MatrixD m(n_, n_);
        for (const auto& e : entries_) m(e.u, e.v) = e.weight;
        return m;
    }

    /// Checks ids, nonnegativity, exact symmetry and unit mass.
    void validate(double mass_tol = 1e-9) const {
        for (const auto& e : entries_) {
            if (e.u >= n_ || e.v >= n_) throw FormatError("cooc: token id out of range");
            if (!(e.weight > 0.0) || !std::isfinite(e.weight))
                throw FormatError("cooc: non-positive or non-finite weight");
            if (at(e.v, e.u) != e.weight) throw FormatError("cooc: matrix is not symmetric");
        }
        if (std::abs(total_mass() - 1.0) > mass_tol) throw FormatError("cooc: total mass != 1");
    }

    friend bool operator==(const CoocMatrix&, const CoocMatrix&) = default;

  private:
    std::size_t n_ = 0;
    std::vector<CoocEntry> entries_;
};

namespace detail {

constexpr std::uint64_t pair_key(TokenId u, TokenId v) {
    return (static_cast<std::uint64_t>(u) << 32) | v;
}

/// Integer pair counts for one document length: key (u<=v) -> sum over
/// documents of c(u)c(v) (u != v) or c(u)(c(u)-1) (u == v).
using PairCounts = std::unordered_map<std::uint64_t, std::uint64_t>;
using PairCountsByLength = std::map<std::uint64_t, PairCounts>;

inline void accumulate_doc(const BowDocument& d, PairCounts& counts) {
    const auto& es = d.entries();
    for (std::size_t a = 0; a < es.size(); ++a) {
        const std::uint64_t ca = es[a].count;
        if (ca > 1) counts[pair_key(es[a].id, es[a].id)] += ca * (ca - 1);
        for (std::size_t b = a + 1; b < es.size(); ++b)
            counts[pair_key(es[a].id, es[b].id)] += ca * es[b].count;
    }
}

inline void check_doc(const BowDocument& d, std::size_t index) {
    if (d.length() < 2)
        throw DegenerateDocument("document " + std::to_string(index) + " has length " +
                                 std::to_string(d.length()) + " < 2");
}

inline std::vector<CoocEntry> mirror(const std::vector<std::pair<std::uint64_t, double>>& upper) {
    std::vector<CoocEntry> out;
    out.reserve(upper.size() * 2);
    for (const auto& [key, w] : upper) {
        const auto u = static_cast<TokenId>(key >> 32);
        const auto v = static_cast<TokenId>(key & 0xffffffffu);
        out.push_back({u, v, w});
        if (u != v) out.push_back({v, u, w});
    }
    return out;
}

} // namespace detail

/// Bias-corrected pair-frequency matrix of one document:
///   off-diagonal c(u)c(v) / (l(l-1)),  diagonal c(u)(c(u)-1) / (l(l-1)).
/// This equals the fraction of ordered position pairs (i != j) reading (u, v).
inline CoocMatrix doc_cooc(const BowDocument& d, std::size_t n) {
    detail::check_doc(d, 0);
    if (!d.entries().empty() && d.entries().back().id >= n)
        throw FormatError("doc_cooc: token id >= N");
    detail::PairCounts counts;
    detail::accumulate_doc(d, counts);
    const double denom = static_cast<double>(d.length() * (d.length() - 1));
    std::vector<std::pair<std::uint64_t, double>> upper;
    upper.reserve(counts.size());
    for (const auto& [k, c] : counts) upper.emplace_back(k, static_cast<double>(c) / denom);
    return CoocMatrix(n, detail::mirror(upper));
}

inline CoocMatrix doc_cooc(const BowDocument& d) {
    const std::size_t n = d.entries().empty() ? 0 : d.entries().back().id + std::size_t{1};
    return doc_cooc(d, n);
}

/// Corpus co-occurrence matrix: the plain mean of doc_cooc over documents.
///
/// Pair counts are accumulated as integers grouped by document length, and
/// converted to reals once per (length, pair) in ascending length order. The
/// result is therefore bit-identical for any thread count.
inline CoocMatrix corpus_cooc(const Corpus& corpus, std::size_t threads = 1) {
    const auto& docs = corpus.docs;
    if (docs.empty()) throw EmptyCorpus("corpus_cooc: corpus has no documents");
    for (std::size_t i = 0; i < docs.size(); ++i) detail::check_doc(docs[i], i);
    corpus.validate();

    const std::size_t shards = chunk_count(docs.size(), threads);
    std::vector<detail::PairCountsByLength> partial(shards);
    parallel_chunks(docs.size(), threads, [&](std::size_t w, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) detail::accumulate_doc(docs[i], partial[w][docs[i].length()]);
    });
    detail::PairCountsByLength& merged = partial[0];
    for (std::size_t w = 1; w < shards; ++w)
        for (auto& [len, counts] : partial[w]) {
            auto& dst = merged[len];
            for (const auto& [k, c] : counts) dst[k] += c;
        }

    std::unordered_map<std::uint64_t, double> sums;
    for (const auto& [len, counts] : merged) {
        const double denom = static_cast<double>(len * (len - 1));
        for (const auto& [k, c] : counts) sums[k] += static_cast<double>(c) / denom;
    }
    const double n_docs = static_cast<double>(docs.size());
    std::vector<std::pair<std::uint64_t, double>> upper(sums.begin(), sums.end());
    for (auto& kv : upper) {
        kv.second /= n_docs;
        // Numerators are nonnegative integers; only float residue may be clamped.
        if (kv.second < 0.0) {
            if (kv.second < -1e-12) throw FormatError("corpus_cooc: negative mass");
            kv.second = 0.0;
        }
    }
    return CoocMatrix(corpus.vocab_size(), detail::mirror(upper));
}

/// Draws token pairs (u, v) with probability equal to the matrix entry.
class PairSampler {
  public:
    PairSampler(const CoocMatrix& m, std::uint64_t seed) : rng_(seed) {
        if (m.empty()) throw InvalidArgument("pair sampler: empty matrix");
        pairs_.reserve(m.nnz());
        std::vector<double> w;
        w.reserve(m.nnz());
        for (const auto& e : m.entries()) {
            pairs_.push_back({e.u, e.v});
            w.push_back(e.weight);
        }
        table_ = AliasTable(w);
    }

    TokenPair operator()() { return pairs_[table_.sample(rng_)]; }

    void sample(std::span<TokenPair> out) {
        for (auto& p : out) p = (*this)();
    }

    const Rng& rng() const noexcept { return rng_; }
    Rng& rng() noexcept { return rng_; }

  private:
    std::vector<TokenPair> pairs_;
    AliasTable table_;
    Rng rng_;
};

inline std::vector<TokenPair> sample_pairs(PairSampler& sampler, std::size_t count) {
    if (count == 0) throw InvalidArgument("sample_pairs: batch size must be >= 1");
    std::vector<TokenPair> out(count);
    sampler.sample(out);
    return out;
}

/// Monte-Carlo check of E[doc_cooc] = nu (x) nu: averages doc_cooc over `reps`
/// documents of `length` i.i.d. tokens from nu and returns the largest
/// absolute entry deviation from the outer product.
inline double unbiasedness_probe(std::span<const double> nu, std::size_t length, std::size_t reps,
                                 std::uint64_t seed) {
    if (length < 2 || reps < 1) throw InvalidArgument("unbiasedness_probe: need length >= 2, reps >= 1");
    const std::size_t n = nu.size();
    AliasTable table(nu);
    Rng rng(derive_seed(seed, "unbiasedness"));
    std::vector<std::uint64_t> pair_sum(n * n, 0);
    std::vector<std::uint32_t> counts(n);
    for (std::size_t r = 0; r < reps; ++r) {
        std::fill(counts.begin(), counts.end(), 0u);
        for (std::size_t i = 0; i < length; ++i) ++counts[table.sample(rng)];
        for (std::size_t u = 0; u < n; ++u) {
            if (counts[u] == 0) continue;
            for (std::size_t v = 0; v < n; ++v) {
                const std::uint64_t cu = counts[u], cv = counts[v];
                pair_sum[u * n + v] += (u == v) ? cu * (cu - 1) : cu * cv;
            }
        }
    }
    double total = 0.0;
    for (double p : nu) total += p;
    const double denom = static_cast<double>(reps) * static_cast<double>(length * (length - 1));
    double dev = 0.0;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v) {
            const double mean = static_cast<double>(pair_sum[u * n + v]) / denom;
            dev = std::max(dev, std::abs(mean - (nu[u] / total) * (nu[v] / total)));
        }
    return dev;
}

// ---------------------------------------------------------------------------
// Binary format: "FDM1", u32 N, u64 count, then (u32 u, u32 v, f64 w) sorted
// by (u, v). Little-endian.

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

namespace detail {

template <typename T> void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T> T read_pod(std::istream& in, const char* what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw FormatError(std::string("truncated file while reading ") + what);
    return v;
}

} // namespace detail

inline void write_cooc_binary(std::ostream& out, const CoocMatrix& m) {
    out.write("FDM1", 4);
    detail::write_pod(out, static_cast<std::uint32_t>(m.n()));
    detail::write_pod(out, static_cast<std::uint64_t>(m.nnz()));
    for (const auto& e : m.entries()) {
        detail::write_pod(out, e.u);
        detail::write_pod(out, e.v);
        detail::write_pod(out, e.weight);
    }
}

inline CoocMatrix read_cooc_binary(std::istream& in) {
    char magic[4] = {};
    if (!in.read(magic, 4) || std::memcmp(magic, "FDM1", 4) != 0)
        throw FormatError("cooc: bad magic (expected FDM1)");
    const auto n = detail::read_pod<std::uint32_t>(in, "N");
    const auto count = detail::read_pod<std::uint64_t>(in, "entry count");
    std::vector<CoocEntry> entries;
    entries.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 26)));
    for (std::uint64_t i = 0; i < count; ++i) {
        CoocEntry e{};
        e.u = detail::read_pod<std::uint32_t>(in, "entry");
        e.v = detail::read_pod<std::uint32_t>(in, "entry");
        e.weight = detail::read_pod<double>(in, "entry");
        if (e.u >= n || e.v >= n) throw FormatError("cooc: token id out of range");
        if (!entries.empty()) {
            const auto& p = entries.back();
            if (!(p.u < e.u || (p.u == e.u && p.v < e.v)))
                throw FormatError("cooc: entries not strictly sorted by (u, v)");
        }
        entries.push_back(e);
    }
    return CoocMatrix(n, std::move(entries));
}

inline void write_cooc_text(std::ostream& out, const CoocMatrix& m) {
    char buf[64];
    for (const auto& e : m.entries()) {
        std::snprintf(buf, sizeof buf, "%.17g", e.weight);
        out << e.u << ' ' << e.v << ' ' << buf << '\n';
    }
}

inline void save_cooc(const std::string& path, const CoocMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    write_cooc_binary(out, m);
    if (!out) throw IoError("write failed: " + path);
}

inline CoocMatrix load_cooc(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return read_cooc_binary(in);
}

} // namespace fdm
