#pragma once

#include "fdm/corpus.hpp"
#include "fdm/error.hpp"
#include "fdm/matrix.hpp"
#include "fdm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fdm {

/// T probability vectors over a vocabulary of size N.
class TopicSet {
  public:
    TopicSet() = default;

    explicit TopicSet(MatrixD probs, double tol = 1e-9) : probs_(std::move(probs)) {
        for (std::size_t t = 0; t < probs_.rows(); ++t) {
            double s = 0.0;
            for (double p : probs_.row(t)) {
                if (!(p >= 0.0) || !std::isfinite(p))
                    throw FormatError("topic " + std::to_string(t) + " has a negative or non-finite entry");
                s += p;
            }
            if (std::abs(s - 1.0) > tol)
                throw FormatError("topic " + std::to_string(t) + " sums to " + std::to_string(s));
        }
    }

    std::size_t topics() const noexcept { return probs_.rows(); }
    std::size_t vocab() const noexcept { return probs_.cols(); }
    std::span<const double> row(std::size_t t) const { return probs_.row(t); }
    double operator()(std::size_t t, std::size_t u) const { return probs_(t, u); }
    const MatrixD& matrix() const noexcept { return probs_; }

    /// (1 - eps) * topic + eps * uniform.
    TopicSet smoothed(double eps) const {
        MatrixD m = probs_;
        const double add = eps / static_cast<double>(vocab());
        for (auto& p : m.data()) p = (1.0 - eps) * p + add;
        return TopicSet(std::move(m));
    }

  private:
    MatrixD probs_;
};

// ---------------------------------------------------------------------------
// KL projection (folding-in)

struct SparseDist {
    std::vector<TokenId> ids;
    std::vector<double> probs;

    static SparseDist from_document(const BowDocument& d) {
        SparseDist s;
        const double l = static_cast<double>(d.length());
        for (const auto& e : d.entries()) {
            s.ids.push_back(e.id);
            s.probs.push_back(static_cast<double>(e.count) / l);
        }
        return s;
    }

    static SparseDist from_dense(std::span<const double> p) {
        SparseDist s;
        for (std::size_t u = 0; u < p.size(); ++u)
            if (p[u] > 0.0) {
                s.ids.push_back(static_cast<TokenId>(u));
                s.probs.push_back(p[u]);
            }
        return s;
    }
};

struct KlProjectOptions {
    std::size_t max_iter = 1000;
    double tol = 1e-10;
    bool record_history = false;
};

struct KlProjection {
    std::vector<double> theta;
    /// KL(dhat || m(theta)).
    double objective = 0.0;
    std::size_t iterations = 0;
    /// Objective before the first update and after each update, when recorded.
    std::vector<double> history;
};

namespace detail {

inline double kl_objective(const SparseDist& dhat, const TopicSet& topics,
                           std::span<const double> theta, std::vector<double>& mix) {
    const std::size_t k = dhat.ids.size();
    mix.assign(k, 0.0);
    for (std::size_t t = 0; t < topics.topics(); ++t) {
        if (theta[t] == 0.0) continue;
        const auto row = topics.row(t);
        for (std::size_t i = 0; i < k; ++i) mix[i] += theta[t] * row[dhat.ids[i]];
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        if (dhat.probs[i] > 0.0) kl += dhat.probs[i] * (std::log(dhat.probs[i]) - std::log(mix[i]));
    return kl;
}

} // namespace detail

/// theta = argmin_theta KL(dhat || sum_t theta_t mu_t) over the simplex, by
/// multiplicative EM updates from the uniform point. The objective never
/// increases between iterations; iteration stops once an update improves it
/// by less than `tol`.
inline KlProjection kl_project(const SparseDist& dhat, const TopicSet& topics,
                               const KlProjectOptions& opts = {}) {
    const std::size_t t_count = topics.topics();
    for (auto id : dhat.ids)
        if (id >= topics.vocab()) throw VocabMismatch("kl_project: token id outside topic vocabulary");
    KlProjection out;
    out.theta.assign(t_count, 1.0 / static_cast<double>(t_count));
    std::vector<double> mix;
    out.objective = detail::kl_objective(dhat, topics, out.theta, mix);
    if (opts.record_history) out.history.push_back(out.objective);
    if (t_count == 1) return out;

    const std::size_t k = dhat.ids.size();
    std::vector<double> next(t_count), ratio(k);
    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        for (std::size_t i = 0; i < k; ++i) ratio[i] = mix[i] > 0.0 ? dhat.probs[i] / mix[i] : 0.0;
        double total = 0.0;
        for (std::size_t t = 0; t < t_count; ++t) {
            const auto row = topics.row(t);
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += row[dhat.ids[i]] * ratio[i];
            next[t] = out.theta[t] * s;
            total += next[t];
        }
        for (auto& x : next) x /= total;
        out.theta.swap(next);
        const double prev = out.objective;
        out.objective = detail::kl_objective(dhat, topics, out.theta, mix);
        ++out.iterations;
        if (opts.record_history) out.history.push_back(out.objective);
        if (prev - out.objective < opts.tol) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Holdout likelihood

struct DocLikelihood {
    std::size_t doc;
    double loglik;
};

struct MatchResult {
    double err = 0.0;
    /// permutation[t] = learned topic matched to reference topic t.
    std::vector<std::size_t> permutation;
    /// distances[t] = l1 distance between reference t and its match.
    std::vector<double> distances;
};

struct EvalReport {
    std::vector<DocLikelihood> docs;
    double mean_loglik = 0.0;
    std::size_t excluded = 0;
    double smoothing = 0.0;
    std::optional<MatchResult> matching;
    std::optional<std::vector<std::vector<TokenId>>> anchors;
};

struct HoldoutOptions {
    double smoothing = 1e-10;
    KlProjectOptions projection{};
    std::size_t threads = 1;
};

/// Per-document L_d = sum_u dhat(u) log m(theta_d)(u) (natural log, per token)
/// with theta_d from kl_project against the smoothed topics. Empty documents
/// (all tokens out of vocabulary) are excluded and counted.
inline EvalReport holdout_loglik(const Corpus& test, const TopicSet& topics,
                                 const HoldoutOptions& opts = {}) {
    if (test.vocab_size() != topics.vocab())
        throw VocabMismatch("holdout_loglik: corpus N=" + std::to_string(test.vocab_size()) +
                            " but topics N=" + std::to_string(topics.vocab()));
    if (test.docs.empty()) throw EmptyCorpus("holdout_loglik: no test documents");
    const TopicSet smooth = opts.smoothing > 0.0 ? topics.smoothed(opts.smoothing) : topics;

    std::vector<double> ll(test.docs.size(), 0.0);
    std::vector<char> used(test.docs.size(), 0);
    parallel_chunks(test.docs.size(), opts.threads, [&](std::size_t, std::size_t b, std::size_t e) {
        std::vector<double> mix;
        for (std::size_t d = b; d < e; ++d) {
            if (test.docs[d].length() == 0) continue;
            const auto dhat = SparseDist::from_document(test.docs[d]);
            const auto proj = kl_project(dhat, smooth, opts.projection);
            detail::kl_objective(dhat, smooth, proj.theta, mix);
            double l = 0.0;
            for (std::size_t i = 0; i < dhat.ids.size(); ++i) l += dhat.probs[i] * std::log(mix[i]);
            ll[d] = l;
            used[d] = 1;
        }
    });

    EvalReport report;
    report.smoothing = opts.smoothing;
    double sum = 0.0;
    for (std::size_t d = 0; d < ll.size(); ++d) {
        if (!used[d]) {
            ++report.excluded;
            continue;
        }
        report.docs.push_back({d, ll[d]});
        sum += ll[d];
    }
    if (report.docs.empty()) throw EmptyCorpus("holdout_loglik: every test document is empty");
    report.mean_loglik = sum / static_cast<double>(report.docs.size());
    return report;
}

inline void write_loglik_csv(std::ostream& out, const EvalReport& report) {
    char buf[64];
    out << "doc,loglik\n";
    for (const auto& d : report.docs) {
        std::snprintf(buf, sizeof buf, "%.17g", d.loglik);
        out << d.doc << ',' << buf << '\n';
    }
}

// ---------------------------------------------------------------------------
// Assignment and matching

struct Assignment {
    /// row_to_col[r] = column assigned to row r.
    std::vector<std::size_t> row_to_col;
    double cost = 0.0;
};

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, O(n^3)). Ties resolve toward the lowest column index.
inline Assignment solve_assignment(const MatrixD& cost) {
    const std::size_t n = cost.rows();
    if (cost.cols() != n) throw DimensionMismatch("solve_assignment: cost matrix must be square");
    Assignment out;
    if (n == 0) return out;
    constexpr double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; index 0 is the virtual start column.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    out.row_to_col.assign(n, 0);
    for (std::size_t j = 1; j <= n; ++j) out.row_to_col[p[j] - 1] = j - 1;
    for (std::size_t r = 0; r < n; ++r) out.cost += cost(r, out.row_to_col[r]);
    return out;
}

inline double l1_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s;
}

/// err = (1/T) min over permutations tau of sum_t |ref_t - learned_tau(t)|_1.
inline MatchResult matching_error(const TopicSet& reference, const TopicSet& learned) {
    if (reference.topics() != learned.topics() || reference.vocab() != learned.vocab())
        throw DimensionMismatch("matching_error: reference is " + std::to_string(reference.topics()) +
                                "x" + std::to_string(reference.vocab()) + ", learned is " +
                                std::to_string(learned.topics()) + "x" +
                                std::to_string(learned.vocab()));
    const std::size_t t = reference.topics();
    MatrixD cost(t, t);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) cost(i, j) = l1_distance(reference.row(i), learned.row(j));
    const auto a = solve_assignment(cost);
    MatchResult r;
    r.permutation = a.row_to_col;
    r.distances.resize(t);
    double total = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
        r.distances[i] = cost(i, a.row_to_col[i]);
        total += r.distances[i];
    }
    r.err = t ? total / static_cast<double>(t) : 0.0;
    return r;
}

/// Mean l1 distance over unordered pairs of distinct topics.
inline double mean_pairwise_l1(const TopicSet& topics) {
    const std::size_t t = topics.topics();
    if (t < 2) return 0.0;
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i + 1; j < t; ++j, ++n) s += l1_distance(topics.row(i), topics.row(j));
    return s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Anchor words

/// Token u is an eps-anchor of topic t when mu_t(u) >= pmin and
/// mu_t'(u) <= eps for every other topic t'.
inline std::vector<std::vector<TokenId>> anchor_check(const TopicSet& topics, double eps, double pmin) {
    if (!(eps >= 0.0) || !(pmin > 0.0)) throw InvalidArgument("anchor_check: need eps >= 0, pmin > 0");
    const std::size_t t_count = topics.topics(), n = topics.vocab();
    std::vector<std::vector<TokenId>> anchors(t_count);
    for (std::size_t u = 0; u < n; ++u) {
        // largest and second-largest topic mass at u
        std::size_t best = 0;
        double first = -1.0, second = -1.0;
        for (std::size_t t = 0; t < t_count; ++t) {
            const double p = topics(t, u);
            if (p > first) {
                second = first;
                first = p;
                best = t;
            } else if (p > second) {
                second = p;
            }
        }
        for (std::size_t t = 0; t < t_count; ++t) {
            const double p = topics(t, u);
            if (p < pmin) continue;
            const double others_max = (t == best) ? second : first;
            if (t_count == 1 || others_max <= eps) anchors[t].push_back(static_cast<TokenId>(u));
        }
    }
    return anchors;
}

} // namespace fdm
