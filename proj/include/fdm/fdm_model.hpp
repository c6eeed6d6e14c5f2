#pragma once

#include "fdm/cooccurrence.hpp"
#include "fdm/error.hpp"
#include "fdm/matrix.hpp"
#include "fdm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace fdm {

/// Index of (i, j), i <= j, in a row-major packed upper triangle of a T x T matrix.
constexpr std::size_t upper_index(std::size_t t, std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return i * t - i * (i - 1) / 2 + (j - i);
}

constexpr std::size_t upper_size(std::size_t t) { return t * (t + 1) / 2; }

/// Unconstrained FDM parameters: topic logits (T x N) and the packed upper
/// triangle of the symmetric mixing logits (T(T+1)/2 values).
struct FdmParams {
    MatrixD mu_free;
    std::vector<double> alpha_free;

    FdmParams() = default;
    FdmParams(std::size_t topics, std::size_t vocab)
        : mu_free(topics, vocab, 0.0), alpha_free(upper_size(topics), 0.0) {}

    std::size_t topics() const noexcept { return mu_free.rows(); }
    std::size_t vocab() const noexcept { return mu_free.cols(); }

    double alpha_logit(std::size_t i, std::size_t j) const {
        return alpha_free[upper_index(topics(), i, j)];
    }

    bool all_finite() const {
        auto fin = [](double x) { return std::isfinite(x); };
        return std::all_of(mu_free.data().begin(), mu_free.data().end(), fin) &&
               std::all_of(alpha_free.begin(), alpha_free.end(), fin);
    }

    /// Logits reproducing the given probabilities; zeros are floored so that
    /// every logit stays finite. Alpha is symmetrized.
    static FdmParams from_probabilities(const MatrixD& mu, const MatrixD& alpha,
                                        double floor = 1e-300) {
        const std::size_t t = mu.rows();
        if (alpha.rows() != t || alpha.cols() != t)
            throw DimensionMismatch("from_probabilities: alpha must be T x T");
        FdmParams p(t, mu.cols());
        for (std::size_t i = 0; i < mu.data().size(); ++i)
            p.mu_free.data()[i] = std::log(std::max(mu.data()[i], floor));
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = i; j < t; ++j)
                p.alpha_free[upper_index(t, i, j)] =
                    std::log(std::max(0.5 * (alpha(i, j) + alpha(j, i)), floor));
        return p;
    }

    friend bool operator==(const FdmParams&, const FdmParams&) = default;
};

/// Realized FDM: row-stochastic topics and a symmetric mixing matrix summing
/// to one, with cached logarithms.
struct FdmDist {
    MatrixD mu;
    MatrixD log_mu;
    MatrixD alpha;
    MatrixD log_alpha;

    std::size_t topics() const noexcept { return mu.rows(); }
    std::size_t vocab() const noexcept { return mu.cols(); }

    /// Build directly from probabilities. Zero probabilities are allowed and
    /// give -inf logs.
    static FdmDist from_probabilities(MatrixD mu, MatrixD alpha) {
        if (alpha.rows() != mu.rows() || alpha.cols() != mu.rows())
            throw DimensionMismatch("FdmDist: alpha must be T x T");
        FdmDist d;
        d.log_mu = MatrixD(mu.rows(), mu.cols());
        d.log_alpha = MatrixD(alpha.rows(), alpha.cols());
        for (std::size_t i = 0; i < mu.data().size(); ++i) d.log_mu.data()[i] = std::log(mu.data()[i]);
        for (std::size_t i = 0; i < alpha.data().size(); ++i)
            d.log_alpha.data()[i] = std::log(alpha.data()[i]);
        d.mu = std::move(mu);
        d.alpha = std::move(alpha);
        return d;
    }
};

namespace detail {

/// softmax of `in` into `out` and log-softmax into `log_out`.
inline void softmax(std::span<const double> in, std::span<double> out, std::span<double> log_out) {
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) s += std::exp(in[i] - mx);
    const double log_z = mx + std::log(s);
    for (std::size_t i = 0; i < in.size(); ++i) {
        log_out[i] = in[i] - log_z;
        out[i] = std::exp(log_out[i]);
    }
}

} // namespace detail

inline FdmDist realize(const FdmParams& params) {
    const std::size_t t = params.topics(), n = params.vocab();
    FdmDist d;
    d.mu = MatrixD(t, n);
    d.log_mu = MatrixD(t, n);
    for (std::size_t k = 0; k < t; ++k) detail::softmax(params.mu_free.row(k), d.mu.row(k), d.log_mu.row(k));

    MatrixD full(t, t);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) full(i, j) = params.alpha_logit(i, j);
    d.alpha = MatrixD(t, t);
    d.log_alpha = MatrixD(t, t);
    detail::softmax(full.data(), d.alpha.data(), d.log_alpha.data());
    return d;
}

namespace detail {

/// Computes log M(u, v). When `post` is non-null, also writes the posterior
/// p_ij = alpha_ij mu_i(u) mu_j(v) / M(u, v) into it (T x T, row-major).
///
/// The double sum factorizes as x^T alpha y with x_i = mu_i(u), y_j = mu_j(v).
/// Both vectors are rescaled by their largest entry (a separable log-sum-exp
/// shift); if the rescaled sum still underflows, the full T^2 log-sum-exp is
/// used instead.
inline double log_entry(const FdmDist& d, TokenId u, TokenId v, std::vector<double>& scratch,
                        double* post = nullptr) {
    const std::size_t t = d.topics();
    if (u > v) {
        // Evaluate in canonical order so that M(u, v) == M(v, u) bit for bit.
        const double lm = log_entry(d, v, u, scratch, post);
        if (post)
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = i + 1; j < t; ++j) std::swap(post[i * t + j], post[j * t + i]);
        return lm;
    }
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    scratch.resize(2 * t);
    double* x = scratch.data();
    double* y = x + t;
    double mx = neg_inf, my = neg_inf;
    for (std::size_t i = 0; i < t; ++i) {
        mx = std::max(mx, d.log_mu(i, u));
        my = std::max(my, d.log_mu(i, v));
    }
    if (mx == neg_inf || my == neg_inf) {
        if (post) std::fill(post, post + t * t, 0.0);
        return neg_inf;
    }
    for (std::size_t i = 0; i < t; ++i) {
        x[i] = std::exp(d.log_mu(i, u) - mx);
        y[i] = std::exp(d.log_mu(i, v) - my);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
        const auto arow = d.alpha.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < t; ++j) acc += arow[j] * y[j];
        s += x[i] * acc;
    }
    if (s > 1e-250) {
        if (post) {
            const double inv = 1.0 / s;
            for (std::size_t i = 0; i < t; ++i) {
                const auto arow = d.alpha.row(i);
                const double xi = x[i] * inv;
                for (std::size_t j = 0; j < t; ++j) post[i * t + j] = arow[j] * xi * y[j];
            }
        }
        return mx + my + std::log(s);
    }

    // Underflow: full log-sum-exp over the T^2 log terms.
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j)
            m = std::max(m, d.log_alpha(i, j) + d.log_mu(i, u) + d.log_mu(j, v));
    if (m == -std::numeric_limits<double>::infinity()) {
        if (post) std::fill(post, post + t * t, 0.0);
        return m;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j)
            acc += std::exp(d.log_alpha(i, j) + d.log_mu(i, u) + d.log_mu(j, v) - m);
    const double lm = m + std::log(acc);
    if (post)
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < t; ++j)
                post[i * t + j] = std::exp(d.log_alpha(i, j) + d.log_mu(i, u) + d.log_mu(j, v) - lm);
    return lm;
}

} // namespace detail

inline double log_fdm_entry(const FdmDist& d, TokenId u, TokenId v) {
    std::vector<double> scratch;
    return detail::log_entry(d, u, v, scratch);
}

/// M(u, v) = sum_ij alpha_ij mu_i(u) mu_j(v).
inline double fdm_entry(const FdmDist& d, TokenId u, TokenId v) {
    return std::exp(log_fdm_entry(d, u, v));
}

/// Dense N x N model matrix (test-scale only).
inline MatrixD dense_model(const FdmDist& d) {
    const std::size_t n = d.vocab();
    MatrixD m(n, n);
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v)
            m(u, v) = fdm_entry(d, static_cast<TokenId>(u), static_cast<TokenId>(v));
    return m;
}

/// Ascent objective sum_k log M(u_k, v_k).
inline double batch_loss(const FdmDist& d, std::span<const TokenPair> pairs) {
    std::vector<double> scratch;
    double s = 0.0;
    for (const auto& p : pairs) s += detail::log_entry(d, p.u, p.v, scratch);
    return s;
}

/// Cross-entropy -sum_{u,v} Mhat(u,v) log M(u,v) over the stored entries.
inline double full_loss(const FdmDist& d, const CoocMatrix& cooc) {
    if (cooc.n() != d.vocab())
        throw DimensionMismatch("full_loss: cooc N=" + std::to_string(cooc.n()) +
                                " but model N=" + std::to_string(d.vocab()));
    std::vector<double> scratch;
    double s = 0.0;
    for (const auto& e : cooc.entries()) s -= e.weight * detail::log_entry(d, e.u, e.v, scratch);
    return s;
}

/// Gradient with respect to the free variables, same layout as FdmParams.
struct FdmGradient {
    MatrixD mu;
    std::vector<double> alpha;

    FdmGradient() = default;
    FdmGradient(std::size_t topics, std::size_t vocab)
        : mu(topics, vocab, 0.0), alpha(upper_size(topics), 0.0) {}

    void zero() {
        mu.fill(0.0);
        std::fill(alpha.begin(), alpha.end(), 0.0);
    }
};

struct GradientOptions {
    /// Skip the topic gradient (alpha-only fitting); grad.mu is left zero.
    bool topics = true;
    std::size_t threads = 1;
};

/// Gradient of batch_loss(realize(params)) with respect to (mu_free,
/// alpha_free), evaluated at the realized `d`. Returns the batch objective.
///
/// With p_ij the pair posterior, r = row sums of p and c = column sums:
///   d/d mu_free(t, w) = r_t [w = u] + c_t [w = v] - (r_t + c_t) mu_t(w)
///   d/d alpha_full(i, j) = p_ij - alpha_ij
/// and a packed off-diagonal logit receives both (i, j) and (j, i) terms.
inline double batch_gradient(const FdmDist& d, std::span<const TokenPair> pairs, FdmGradient& grad,
                             const GradientOptions& opts = {}) {
    const std::size_t t = d.topics(), n = d.vocab();
    if (grad.mu.rows() != t || grad.mu.cols() != n || grad.alpha.size() != upper_size(t))
        grad = FdmGradient(t, n);
    grad.zero();

    struct Partial {
        std::vector<double> post_sum;  // T x T
        std::vector<double> topic_mass; // per topic, sum of r_t + c_t
        std::vector<std::pair<std::size_t, double>> mu_hits; // (t*N + w, value)
        double objective = 0.0;
    };
    const std::size_t workers = chunk_count(pairs.size(), opts.threads);
    std::vector<Partial> parts(workers);
    parallel_chunks(pairs.size(), opts.threads, [&](std::size_t w, std::size_t b, std::size_t e) {
        Partial& part = parts[w];
        part.post_sum.assign(t * t, 0.0);
        part.topic_mass.assign(t, 0.0);
        // A single worker writes topic hits straight into the gradient.
        const bool direct = workers == 1;
        if (opts.topics && !direct) part.mu_hits.reserve((e - b) * 2 * t);
        std::vector<double> scratch, post(t * t);
        for (std::size_t k = b; k < e; ++k) {
            const auto [u, v] = pairs[k];
            part.objective += detail::log_entry(d, u, v, scratch, post.data());
            for (std::size_t i = 0; i < t * t; ++i) part.post_sum[i] += post[i];
            if (!opts.topics) continue;
            for (std::size_t i = 0; i < t; ++i) {
                double r = 0.0, c = 0.0;
                for (std::size_t j = 0; j < t; ++j) {
                    r += post[i * t + j];
                    c += post[j * t + i];
                }
                if (direct) {
                    grad.mu(i, u) += r;
                    grad.mu(i, v) += c;
                } else {
                    part.mu_hits.emplace_back(i * n + u, r);
                    part.mu_hits.emplace_back(i * n + v, c);
                }
                part.topic_mass[i] += r + c;
            }
        }
    });

    double objective = 0.0;
    std::vector<double> post_sum(t * t, 0.0), topic_mass(t, 0.0);
    for (const auto& part : parts) {
        objective += part.objective;
        for (std::size_t i = 0; i < t * t; ++i) post_sum[i] += part.post_sum[i];
        for (std::size_t i = 0; i < t; ++i) topic_mass[i] += part.topic_mass[i];
        for (const auto& [idx, val] : part.mu_hits) grad.mu.data()[idx] += val;
    }

    const double batch = static_cast<double>(pairs.size());
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i; j < t; ++j) {
            double g = post_sum[i * t + j] - batch * d.alpha(i, j);
            if (i != j) g += post_sum[j * t + i] - batch * d.alpha(j, i);
            grad.alpha[upper_index(t, i, j)] = g;
        }
    if (opts.topics)
        for (std::size_t i = 0; i < t; ++i) {
            auto grow = grad.mu.row(i);
            const auto mrow = d.mu.row(i);
            for (std::size_t w = 0; w < n; ++w) grow[w] -= topic_mass[i] * mrow[w];
        }
    return objective;
}

inline FdmGradient batch_gradient(const FdmParams& params, std::span<const TokenPair> pairs) {
    if (pairs.empty()) throw InvalidArgument("batch_gradient: empty batch");
    FdmGradient g(params.topics(), params.vocab());
    batch_gradient(realize(params), pairs, g);
    return g;
}

// ---------------------------------------------------------------------------
// Text formats.
//   topics: "T N" then T lines of N probabilities (%.17e)
//   alpha:  "T T" then T lines of T values

inline void write_prob_matrix(std::ostream& out, const MatrixD& m) {
    out << m.rows() << ' ' << m.cols() << '\n';
    char buf[40];
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17e", m(r, c));
            if (c) out << ' ';
            out << buf;
        }
        out << '\n';
    }
}

inline MatrixD read_prob_matrix(std::istream& in) {
    std::size_t rows = 0, cols = 0;
    if (!(in >> rows >> cols)) throw FormatError("matrix file: malformed header");
    MatrixD m(rows, cols);
    for (auto& x : m.data()) {
        std::string tok;
        if (!(in >> tok)) throw FormatError("matrix file: truncated");
        try {
            x = std::stod(tok);
        } catch (const std::exception&) {
            throw FormatError("matrix file: bad number '" + tok + "'");
        }
    }
    return m;
}

inline void save_prob_matrix(const std::string& path, const MatrixD& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    write_prob_matrix(out, m);
    if (!out) throw IoError("write failed: " + path);
}

inline MatrixD load_prob_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    return read_prob_matrix(in);
}

/// Human-readable top-k tokens per topic. `tokens` may be empty (ids are
/// printed instead).
inline void write_top_tokens(std::ostream& out, const MatrixD& topics, std::size_t k,
                             std::span<const std::string> tokens = {}) {
    char buf[32];
    for (std::size_t t = 0; t < topics.rows(); ++t) {
        const auto row = topics.row(t);
        std::vector<std::size_t> idx(row.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        const std::size_t kk = std::min(k, idx.size());
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(),
                          [&](std::size_t a, std::size_t b) {
                              return row[a] != row[b] ? row[a] > row[b] : a < b;
                          });
        out << "topic " << t << ':';
        for (std::size_t i = 0; i < kk; ++i) {
            std::snprintf(buf, sizeof buf, "%.4f", row[idx[i]]);
            out << ' ';
            if (idx[i] < tokens.size())
                out << tokens[idx[i]];
            else
                out << idx[i];
            out << '(' << buf << ')';
        }
        out << '\n';
    }
}

} // namespace fdm
