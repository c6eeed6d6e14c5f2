#pragma once

#include "fdm/alias_table.hpp"
#include "fdm/corpus.hpp"
#include "fdm/error.hpp"
#include "fdm/evaluation.hpp"
#include "fdm/matrix.hpp"
#include "fdm/parallel.hpp"
#include "fdm/random.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace fdm {

struct SymmetricDirichlet {
    double concentration;
};
struct Dirichlet {
    std::vector<double> alpha;
};
/// Document d uses thetas[d % thetas.size()].
struct FixedThetas {
    std::vector<std::vector<double>> thetas;
};

using DocPrior = std::variant<SymmetricDirichlet, Dirichlet, FixedThetas>;

struct GroundTruth {
    TopicSet topics;
    DocPrior prior = SymmetricDirichlet{1.0};
    std::size_t tokens_per_doc = 30;
    std::size_t docs = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        const std::size_t t = topics.topics();
        if (t == 0) throw InvalidArgument("ground truth: no topics");
        if (tokens_per_doc < 2) throw InvalidArgument("ground truth: tokens_per_doc must be >= 2");
        std::visit(
            [&](const auto& p) {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, SymmetricDirichlet>) {
                    if (!(p.concentration > 0.0)) throw InvalidArgument("prior: concentration must be > 0");
                } else if constexpr (std::is_same_v<P, Dirichlet>) {
                    if (p.alpha.size() != t) throw DimensionMismatch("prior: Dirichlet vector length != T");
                    for (double a : p.alpha)
                        if (!(a > 0.0)) throw InvalidArgument("prior: Dirichlet entries must be > 0");
                } else {
                    if (p.thetas.empty()) throw InvalidArgument("prior: empty theta list");
                    for (const auto& th : p.thetas) {
                        if (th.size() != t) throw DimensionMismatch("prior: theta length != T");
                        double s = 0.0;
                        for (double x : th) {
                            if (!(x >= 0.0)) throw InvalidArgument("prior: negative theta entry");
                            s += x;
                        }
                        if (std::abs(s - 1.0) > 1e-9) throw InvalidArgument("prior: theta does not sum to 1");
                    }
                }
            },
            prior);
    }
};

/// Dirichlet parameter vector for Dirichlet-type priors.
inline std::vector<double> dirichlet_params(const DocPrior& prior, std::size_t t) {
    if (auto* s = std::get_if<SymmetricDirichlet>(&prior)) return std::vector<double>(t, s->concentration);
    if (auto* d = std::get_if<Dirichlet>(&prior)) return d->alpha;
    throw InvalidArgument("prior is not a Dirichlet");
}

/// Draw from Dir(alpha) via normalized Gamma variates. Shapes below one use
/// Gamma(a) = Gamma(a + 1) * U^(1/a) in log space, which keeps tiny
/// concentrations (e.g. 1/T for large T) from underflowing to all zeros.
inline std::vector<double> sample_dirichlet(std::span<const double> alpha, Rng& rng) {
    const std::size_t t = alpha.size();
    std::vector<double> logs(t);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t; ++i) {
        const double a = alpha[i];
        if (a >= 1.0) {
            std::gamma_distribution<double> g(a, 1.0);
            logs[i] = std::log(g(rng));
        } else {
            std::gamma_distribution<double> g(a + 1.0, 1.0);
            double u = uniform01(rng);
            while (u == 0.0) u = uniform01(rng);
            logs[i] = std::log(g(rng)) + std::log(u) / a;
        }
        mx = std::max(mx, logs[i]);
    }
    std::vector<double> theta(t);
    double s = 0.0;
    for (std::size_t i = 0; i < t; ++i) s += (theta[i] = std::exp(logs[i] - mx));
    for (auto& x : theta) x /= s;
    return theta;
}

inline std::vector<double> sample_theta(const DocPrior& prior, std::size_t t, std::size_t doc, Rng& rng) {
    if (auto* f = std::get_if<FixedThetas>(&prior)) return f->thetas[doc % f->thetas.size()];
    const auto a = dirichlet_params(prior, t);
    return sample_dirichlet(a, rng);
}

/// Alphabetic, fixed-width synthetic token name so lexicographic order
/// matches id order and the tokenizer keeps it intact ("waa", "wab", ...).
inline std::string synthetic_token(std::size_t id, std::size_t vocab) {
    std::size_t width = 2;
    for (std::size_t cap = 26 * 26; cap < vocab; cap *= 26) ++width;
    std::string s(width + 1, 'a');
    s[0] = 'w';
    for (std::size_t i = 0; i < width; ++i) {
        s[width - i] = static_cast<char>('a' + id % 26);
        id /= 26;
    }
    return s;
}

inline Vocabulary synthetic_vocabulary(std::size_t n) {
    std::vector<std::string> tokens(n);
    for (std::size_t i = 0; i < n; ++i) tokens[i] = synthetic_token(i, n);
    return Vocabulary(std::move(tokens));
}

struct SyntheticCorpus {
    Corpus corpus;
    /// D x T matrix of the per-document topic weights actually drawn.
    MatrixD thetas;
};

/// pLSA generation: theta_d from the prior, then each token by drawing a
/// topic from theta_d and a token from that topic (the same law as i.i.d.
/// draws from sum_t theta_d(t) mu_t). Document d uses its own seed stream.
inline SyntheticCorpus generate(const GroundTruth& gt, std::size_t threads = 1) {
    gt.validate();
    const std::size_t t = gt.topics.topics(), n = gt.topics.vocab();
    std::vector<AliasTable> topic_tables;
    topic_tables.reserve(t);
    for (std::size_t k = 0; k < t; ++k) topic_tables.emplace_back(gt.topics.row(k));

    SyntheticCorpus out;
    out.corpus.vocab = synthetic_vocabulary(n);
    out.corpus.docs.resize(gt.docs);
    out.thetas = MatrixD(gt.docs, t);
    parallel_chunks(gt.docs, threads, [&](std::size_t, std::size_t b, std::size_t e) {
        std::vector<TokenId> ids(gt.tokens_per_doc);
        for (std::size_t d = b; d < e; ++d) {
            Rng rng(derive_seed(gt.seed, d));
            const auto theta = sample_theta(gt.prior, t, d, rng);
            std::copy(theta.begin(), theta.end(), out.thetas.row(d).begin());
            AliasTable mix(theta);
            for (auto& id : ids) id = static_cast<TokenId>(topic_tables[mix.sample(rng)].sample(rng));
            out.corpus.docs[d] = BowDocument::from_ids(ids);
        }
    });
    return out;
}

inline Corpus gen_corpus(const GroundTruth& gt, std::size_t threads = 1) {
    return generate(gt, threads).corpus;
}

/// Topic t uniform on the 1-based inclusive token interval [lo_t, hi_t].
inline TopicSet interval_topics(std::size_t n, std::span<const std::pair<std::size_t, std::size_t>> intervals) {
    MatrixD m(intervals.size(), n, 0.0);
    for (std::size_t t = 0; t < intervals.size(); ++t) {
        const auto [lo, hi] = intervals[t];
        if (lo < 1 || hi > n || lo > hi)
            throw InvalidArgument("interval [" + std::to_string(lo) + "," + std::to_string(hi) +
                                  "] outside [1," + std::to_string(n) + "]");
        const double p = 1.0 / static_cast<double>(hi - lo + 1);
        for (std::size_t u = lo; u <= hi; ++u) m(t, u - 1) = p;
    }
    return TopicSet(std::move(m));
}

/// Theta = E[theta theta^T]. Closed form for Dirichlet priors:
/// a_i (a_j + [i = j]) / (a0 (a0 + 1)); exact list average for FixedThetas.
inline MatrixD theta_moment(const DocPrior& prior, std::size_t t) {
    MatrixD m(t, t, 0.0);
    if (auto* f = std::get_if<FixedThetas>(&prior)) {
        for (const auto& th : f->thetas)
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = 0; j < t; ++j) m(i, j) += th[i] * th[j];
        for (auto& x : m.data()) x /= static_cast<double>(f->thetas.size());
        return m;
    }
    const auto a = dirichlet_params(prior, t);
    double a0 = 0.0;
    for (double x : a) a0 += x;
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j)
            m(i, j) = a[i] * (a[j] + (i == j ? 1.0 : 0.0)) / (a0 * (a0 + 1.0));
    return m;
}

/// Empirical second moment of the rows of a D x T matrix of topic weights.
inline MatrixD theta_moment(const MatrixD& thetas) {
    const std::size_t t = thetas.cols();
    MatrixD m(t, t, 0.0);
    for (std::size_t d = 0; d < thetas.rows(); ++d) {
        const auto th = thetas.row(d);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < t; ++j) m(i, j) += th[i] * th[j];
    }
    for (auto& x : m.data()) x /= static_cast<double>(thetas.rows());
    return m;
}

/// Monte-Carlo estimate of E[theta theta^T] from `samples` prior draws.
inline MatrixD theta_moment_mc(const DocPrior& prior, std::size_t t, std::size_t samples, std::uint64_t seed) {
    MatrixD draws(samples, t);
    for (std::size_t s = 0; s < samples; ++s) {
        Rng rng(derive_seed(seed, s));
        const auto th = sample_theta(prior, t, s, rng);
        std::copy(th.begin(), th.end(), draws.row(s).begin());
    }
    return theta_moment(draws);
}

/// Dense M(mu, Theta)_{uv} = sum_ij Theta_ij mu_i(u) mu_j(v).
inline MatrixD mixture_cooc(const TopicSet& topics, const MatrixD& theta) {
    const std::size_t t = topics.topics(), n = topics.vocab();
    MatrixD tmp(t, n, 0.0); // Theta * mu
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j)
            for (std::size_t v = 0; v < n; ++v) tmp(i, v) += theta(i, j) * topics(j, v);
    MatrixD m(n, n, 0.0);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t u = 0; u < n; ++u) {
            const double mu = topics(i, u);
            if (mu == 0.0) continue;
            for (std::size_t v = 0; v < n; ++v) m(u, v) += mu * tmp(i, v);
        }
    return m;
}

/// Expected co-occurrence matrix of the generative model (test-scale, dense).
/// theta_samples == 0 uses the exact moment; otherwise a Monte-Carlo estimate.
inline MatrixD expected_cooc(const GroundTruth& gt, std::size_t theta_samples = 0) {
    gt.validate();
    const std::size_t t = gt.topics.topics();
    const MatrixD theta = theta_samples == 0 ? theta_moment(gt.prior, t)
                                             : theta_moment_mc(gt.prior, t, theta_samples, gt.seed);
    return mixture_cooc(gt.topics, theta);
}

/// One line per document, tokens repeated by count in id order.
inline void write_documents_text(std::ostream& out, const Corpus& corpus) {
    for (const auto& d : corpus.docs) {
        bool first = true;
        for (const auto& e : d.entries())
            for (std::uint32_t c = 0; c < e.count; ++c) {
                if (!first) out << ' ';
                out << corpus.vocab.token(e.id);
                first = false;
            }
        out << '\n';
    }
}

} // namespace fdm
