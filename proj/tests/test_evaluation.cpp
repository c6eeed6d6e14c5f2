#include "fdm/evaluation.hpp"
#include "fdm/synthetic.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

using namespace fdm;
using Catch::Approx;

namespace {

TopicSet random_topics(Rng& rng, std::size_t t, std::size_t n) {
    MatrixD m(t, n);
    for (std::size_t i = 0; i < t; ++i) {
        const auto row = sample_dirichlet(std::vector<double>(n, 1.0), rng);
        std::copy(row.begin(), row.end(), m.row(i).begin());
    }
    return TopicSet(std::move(m));
}

double kl_at(const SparseDist& dhat, const TopicSet& topics, const std::vector<double>& theta) {
    double kl = 0;
    for (std::size_t i = 0; i < dhat.ids.size(); ++i) {
        double m = 0;
        for (std::size_t t = 0; t < topics.topics(); ++t) m += theta[t] * topics(t, dhat.ids[i]);
        kl += dhat.probs[i] * std::log(dhat.probs[i] / m);
    }
    return kl;
}

// Oracle: coarse simplex grid, then a fine grid around the coarse winner.
std::vector<double> grid_argmin(const SparseDist& dhat, const TopicSet& topics) {
    const std::size_t t = topics.topics();
    std::vector<double> best(t), th(t);
    double best_kl = std::numeric_limits<double>::infinity();
    auto consider = [&](double a, double b) {
        if (a < 0 || b < 0 || a > 1 || (t == 3 && a + b > 1)) return;
        th[0] = a;
        if (t == 2) th[1] = 1 - a;
        else {
            th[1] = b;
            th[2] = std::max(0.0, 1 - a - b);
        }
        const double kl = kl_at(dhat, topics, th);
        if (kl < best_kl) {
            best_kl = kl;
            best = th;
        }
    };
    if (t == 2) {
        for (int i = 0; i <= 1000; ++i) consider(i / 1000.0, 0);
        const double c = best[0];
        for (int i = -2000; i <= 2000; ++i) consider(c + i * 1e-6, 0);
    } else {
        for (int i = 0; i <= 200; ++i)
            for (int j = 0; i + j <= 200; ++j) consider(i / 200.0, j / 200.0);
        const double c0 = best[0], c1 = best[1];
        for (int i = -250; i <= 250; ++i)
            for (int j = -250; j <= 250; ++j) consider(c0 + i * 2e-5, c1 + j * 2e-5);
    }
    return best;
}

double brute_force_matching(const TopicSet& a, const TopicSet& b) {
    std::vector<std::size_t> perm(a.topics());
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0;
        for (std::size_t t = 0; t < perm.size(); ++t) s += l1_distance(a.row(t), b.row(perm[t]));
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(a.topics());
}

Corpus corpus_with(std::size_t n, const std::vector<std::vector<TokenId>>& docs) {
    Corpus c;
    c.vocab = synthetic_vocabulary(n);
    for (const auto& d : docs) c.docs.push_back(BowDocument::from_ids(d));
    return c;
}

} // namespace

TEST_CASE("TopicSet validation and smoothing") {
    CHECK_THROWS_AS(TopicSet(MatrixD(1, 2, 0.4)), FormatError);
    MatrixD neg(1, 2);
    neg(0, 0) = 1.5;
    neg(0, 1) = -0.5;
    CHECK_THROWS_AS(TopicSet(neg), FormatError);
    MatrixD point(1, 4, 0.0);
    point(0, 2) = 1.0;
    const auto s = TopicSet(point).smoothed(0.1);
    CHECK(s(0, 2) == Approx(0.925));
    CHECK(s(0, 0) == Approx(0.025));
}

TEST_CASE("kl_project worked examples") {
    MatrixD m(2, 2, 0.0);
    m(0, 0) = 1;
    m(1, 1) = 1;
    const TopicSet disjoint(m);
    const std::vector<double> d{0.3, 0.7};
    const auto p = kl_project(SparseDist::from_dense(d), disjoint, {100000, 1e-15, false});
    CHECK(p.theta[0] == Approx(0.3).margin(1e-6));
    CHECK(p.theta[1] == Approx(0.7).margin(1e-6));
    CHECK(p.objective == Approx(0.0).margin(1e-9));

    MatrixD one(1, 3, 1.0 / 3);
    const auto q = kl_project(SparseDist::from_dense(d), TopicSet(one));
    CHECK(q.theta == std::vector<double>{1.0});
    CHECK(q.iterations == 0);

    SparseDist bad{{5}, {1.0}};
    CHECK_THROWS_AS(kl_project(bad, disjoint), VocabMismatch);
}

TEST_CASE("kl_project matches a grid-search oracle") {
    Rng rng(31);
    for (std::size_t t : {2u, 3u}) {
        for (int trial = 0; trial < 10; ++trial) {
            const auto topics = random_topics(rng, t, 8);
            const auto theta = sample_dirichlet(std::vector<double>(t, 2.0), rng);
            std::vector<double> d(8, 0.0);
            for (std::size_t k = 0; k < t; ++k)
                for (std::size_t u = 0; u < 8; ++u) d[u] += theta[k] * topics(k, u);
            // perturb so the target is not exactly representable
            for (auto& x : d) x *= 0.8 + 0.4 * uniform01(rng);
            const double s = std::accumulate(d.begin(), d.end(), 0.0);
            for (auto& x : d) x /= s;

            const auto dhat = SparseDist::from_dense(d);
            const auto proj = kl_project(dhat, topics, {100000, 1e-16, false});
            const auto oracle = grid_argmin(dhat, topics);
            double linf = 0;
            for (std::size_t k = 0; k < t; ++k) linf = std::max(linf, std::abs(proj.theta[k] - oracle[k]));
            CHECK(linf < 1e-3);
        }
    }
}

TEST_CASE("kl_project objective is monotone non-increasing") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t t = 2 + uniform_index(rng, 4);
        const auto topics = random_topics(rng, t, 15);
        const auto d = sample_dirichlet(std::vector<double>(15, 0.5), rng);
        const auto p = kl_project(SparseDist::from_dense(d), topics, {500, 0.0, true});
        REQUIRE(p.history.size() == p.iterations + 1);
        for (std::size_t i = 1; i < p.history.size(); ++i) CHECK(p.history[i] <= p.history[i - 1] + 1e-15);
        double s = 0;
        for (double x : p.theta) {
            CHECK(x >= 0.0);
            s += x;
        }
        CHECK(s == Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("holdout_loglik worked example") {
    // single topic uniform over 4 tokens: every document scores log(1/4)
    MatrixD u(1, 4, 0.25);
    const auto c = corpus_with(4, {{0, 1}, {2, 2, 3}});
    const auto r = holdout_loglik(c, TopicSet(u), {0.0, {}, 1});
    REQUIRE(r.docs.size() == 2);
    CHECK(r.docs[0].loglik == Approx(std::log(0.25)));
    CHECK(r.mean_loglik == Approx(std::log(0.25)));
    CHECK(r.excluded == 0);

    std::ostringstream csv;
    write_loglik_csv(csv, r);
    CHECK(csv.str().rfind("doc,loglik\n0,", 0) == 0);
}

TEST_CASE("holdout_loglik on disjoint topics recovers the empirical entropy") {
    MatrixD m(2, 4, 0.0);
    m(0, 0) = m(0, 1) = 0.5;
    m(1, 2) = m(1, 3) = 0.5;
    // doc {0,2,2,3}: theta = (1/4, 3/4); m = (1/8, 0, 3/8, 3/8)
    const auto c = corpus_with(4, {{0, 2, 2, 3}});
    HoldoutOptions opts;
    opts.smoothing = 0;
    opts.projection = {100000, 1e-15, false};
    const auto r = holdout_loglik(c, TopicSet(m), opts);
    const double want = 0.25 * std::log(1.0 / 8) + 0.5 * std::log(3.0 / 8) + 0.25 * std::log(3.0 / 8);
    CHECK(r.mean_loglik == Approx(want).epsilon(1e-6));
}

TEST_CASE("holdout_loglik errors, exclusions and threads") {
    MatrixD u(1, 4, 0.25);
    CHECK_THROWS_AS(holdout_loglik(corpus_with(5, {{0, 1}}), TopicSet(u)), VocabMismatch);
    Corpus empty;
    empty.vocab = synthetic_vocabulary(4);
    CHECK_THROWS_AS(holdout_loglik(empty, TopicSet(u)), EmptyCorpus);

    auto c = corpus_with(4, {{0, 1}});
    c.docs.push_back(BowDocument{});
    const auto r = holdout_loglik(c, TopicSet(u));
    CHECK(r.excluded == 1);
    CHECK(r.docs.size() == 1);

    Rng rng(4);
    const auto topics = random_topics(rng, 3, 20);
    std::vector<std::vector<TokenId>> docs;
    for (int d = 0; d < 100; ++d) {
        std::vector<TokenId> s(5 + uniform_index(rng, 20));
        for (auto& x : s) x = static_cast<TokenId>(uniform_index(rng, 20));
        docs.push_back(s);
    }
    const auto big = corpus_with(20, docs);
    HoldoutOptions one, four;
    four.threads = 4;
    const auto a = holdout_loglik(big, topics, one), b = holdout_loglik(big, topics, four);
    CHECK(a.mean_loglik == b.mean_loglik);
}

TEST_CASE("Hungarian assignment equals brute force") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t t = 1 + uniform_index(rng, 6);
        const auto a = random_topics(rng, t, 10);
        const auto b = random_topics(rng, t, 10);
        const auto r = matching_error(a, b);
        CHECK(r.err == Approx(brute_force_matching(a, b)).margin(1e-12));
        auto perm = r.permutation;
        std::sort(perm.begin(), perm.end());
        for (std::size_t i = 0; i < t; ++i) CHECK(perm[i] == i);
    }
}

TEST_CASE("matching error is zero for permuted copies and symmetric") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t t = 2 + uniform_index(rng, 5);
        const auto a = random_topics(rng, t, 12);
        std::vector<std::size_t> perm(t);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        MatrixD pm(t, 12);
        for (std::size_t i = 0; i < t; ++i)
            std::copy(a.row(perm[i]).begin(), a.row(perm[i]).end(), pm.row(i).begin());
        const TopicSet permuted(pm);
        const auto r = matching_error(a, permuted);
        CHECK(r.err == 0.0);
        for (std::size_t i = 0; i < t; ++i) CHECK(perm[r.permutation[i]] == i);

        const auto b = random_topics(rng, t, 12);
        CHECK(matching_error(a, b).err == Approx(matching_error(b, a).err).margin(1e-12));
    }
    CHECK_THROWS_AS(matching_error(random_topics(rng, 2, 5), random_topics(rng, 3, 5)), DimensionMismatch);
}

TEST_CASE("assignment on a known cost matrix") {
    MatrixD c(3, 3);
    const double v[9] = {4, 1, 3, 2, 0, 5, 3, 2, 2};
    std::copy(v, v + 9, c.data().begin());
    const auto a = solve_assignment(c);
    CHECK(a.cost == 5.0);
    CHECK(a.row_to_col == std::vector<std::size_t>{1, 0, 2});
}

TEST_CASE("mean pairwise l1") {
    MatrixD m(2, 2, 0.0);
    m(0, 0) = 1;
    m(1, 1) = 1;
    CHECK(mean_pairwise_l1(TopicSet(m)) == 2.0);
}

TEST_CASE("anchor check on interval topics") {
    const std::vector<std::pair<std::size_t, std::size_t>> iv{{1, 40}, {30, 70}, {60, 100}};
    const auto topics = interval_topics(100, iv);
    const auto anchors = anchor_check(topics, 1e-4, 1e-3);
    auto range = [](TokenId lo, TokenId hi) {
        std::vector<TokenId> r;
        for (TokenId u = lo; u <= hi; ++u) r.push_back(u - 1);
        return r;
    };
    CHECK(anchors[0] == range(1, 29));
    CHECK(anchors[1] == range(41, 59));
    CHECK(anchors[2] == range(71, 100));
    CHECK_THROWS_AS(anchor_check(topics, -1, 1e-3), InvalidArgument);
}
