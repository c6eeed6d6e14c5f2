#include "fdm/synthetic.hpp"
#include "fdm/trainer.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fdm;
using Catch::Approx;

namespace {

CoocMatrix random_cooc(std::uint64_t seed, std::size_t n) {
    Rng rng(seed);
    std::vector<CoocEntry> e;
    double total = 0;
    for (TokenId u = 0; u < n; ++u)
        for (TokenId v = u; v < n; ++v) {
            const double w = 0.05 + uniform01(rng);
            total += (u == v ? 1 : 2) * w;
            e.push_back({u, v, w});
            if (u != v) e.push_back({v, u, w});
        }
    for (auto& x : e) x.weight /= total;
    return CoocMatrix(n, e);
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("fdm_test_" + name);
}

TrainConfig small_config(std::size_t topics) {
    TrainConfig c;
    c.topics = topics;
    c.batch = 256;
    c.lr = 0.01;
    c.max_steps = 1000;
    c.seed = 11;
    return c;
}

} // namespace

TEST_CASE("init_params") {
    auto zero = init_params(3, 5, 0.0, 1);
    for (double x : zero.mu_free.data()) CHECK(x == 0.0);
    for (double x : zero.alpha_free) CHECK(x == 0.0);
    auto d = realize(zero);
    CHECK(d.mu(2, 4) == Approx(0.2));
    CHECK(d.alpha(1, 2) == Approx(1.0 / 9));

    CHECK(init_params(4, 100, 0.1, 9) == init_params(4, 100, 0.1, 9));
    CHECK_FALSE(init_params(4, 100, 0.1, 9) == init_params(4, 100, 0.1, 10));

    auto r = realize(init_params(4, 100, 0.1, 3));
    for (std::size_t t = 0; t < 4; ++t) {
        double s = 0;
        for (double x : r.mu.row(t)) s += x;
        CHECK(s == Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(init_params(0, 5, 0.1, 1), InvalidArgument);
    CHECK_THROWS_AS(init_params(2, 1, 0.1, 1), InvalidArgument);
}

TEST_CASE("optimizer_step: zero gradient is a no-op") {
    FdmParams p = init_params(2, 4, 0.5, 1);
    const FdmParams before = p;
    OptimizerState s(2, 4);
    FdmGradient g(2, 4);
    optimizer_step(s, p, g, 0.001);
    CHECK(p == before);
    CHECK(s.step == 1);
}

TEST_CASE("optimizer_step: single step matches the bias-corrected formula") {
    FdmParams p(1, 3);
    OptimizerState s(1, 3);
    FdmGradient g(1, 3);
    g.mu(0, 0) = 2.0;
    g.mu(0, 1) = -0.5;
    g.mu(0, 2) = 1e-9;
    const double lr = 0.001, eps = 1e-8;
    optimizer_step(s, p, g, lr);
    // m = 0.1 g, v = 0.001 g^2; bias correction gives mhat = g, vhat = g^2.
    for (std::size_t w = 0; w < 3; ++w) {
        const double gw = g.mu(0, w);
        CHECK(p.mu_free(0, w) == Approx(lr * gw / (std::abs(gw) + eps)).epsilon(1e-12));
    }
}

TEST_CASE("optimizer_step: constant gradient approaches lr * sign(g)") {
    FdmParams p(1, 2);
    OptimizerState s(1, 2);
    FdmGradient g(1, 2);
    g.mu(0, 0) = 3.0;
    g.mu(0, 1) = -0.01;
    const double lr = 0.01;
    for (int i = 0; i < 5000; ++i) optimizer_step(s, p, g, lr);
    const FdmParams before = p;
    optimizer_step(s, p, g, lr);
    CHECK(p.mu_free(0, 0) - before.mu_free(0, 0) == Approx(lr).epsilon(1e-5));
    CHECK(p.mu_free(0, 1) - before.mu_free(0, 1) == Approx(-lr).epsilon(1e-5));
}

TEST_CASE("optimizer_step rejects shape mismatches") {
    FdmParams p(2, 3);
    OptimizerState s(2, 4);
    FdmGradient g(2, 3);
    CHECK_THROWS_AS(optimizer_step(s, p, g, 0.1), DimensionMismatch);
}

TEST_CASE("train with max_steps = 0 returns the initial parameters") {
    auto cooc = random_cooc(1, 6);
    auto cfg = small_config(2);
    cfg.max_steps = 0;
    auto r = train(cooc, cfg);
    CHECK(r.params == init_params(2, 6, cfg.init_scale, cfg.seed));
    CHECK(r.trace.rows.empty());
}

TEST_CASE("train validates its configuration") {
    auto cooc = random_cooc(1, 6);
    auto cfg = small_config(2);
    cfg.lr = 0;
    CHECK_THROWS_AS(train(cooc, cfg), InvalidArgument);
    cfg = small_config(2);
    cfg.conv_window = 1;
    CHECK_THROWS_AS(train(cooc, cfg), InvalidArgument);
    cfg = small_config(2);
    CHECK_THROWS_AS(train(cooc, cfg, FdmParams(3, 6)), DimensionMismatch);
}

TEST_CASE("single-topic training converges to the marginal of Mhat") {
    auto cooc = random_cooc(2, 10);
    std::vector<double> marginal(10, 0.0);
    for (const auto& e : cooc.entries()) marginal[e.u] += e.weight;

    TrainConfig cfg;
    cfg.topics = 1;
    cfg.batch = 4096;
    cfg.lr = 0.003;
    cfg.max_steps = 8000;
    cfg.seed = 5;
    auto r = train(cooc, cfg);
    auto d = realize(r.params);
    double l1 = 0;
    for (std::size_t u = 0; u < 10; ++u) l1 += std::abs(d.mu(0, u) - marginal[u]);
    CHECK(l1 < 0.01);
}

TEST_CASE("training is deterministic in sequential mode") {
    auto cooc = random_cooc(3, 8);
    auto cfg = small_config(2);
    cfg.max_steps = 300;
    auto a = train(cooc, cfg);
    auto b = train(cooc, cfg);
    CHECK(a.params == b.params);
    CHECK(a.trace.rows.size() == 300);
}

TEST_CASE("full loss settles on a small dense problem") {
    auto cooc = random_cooc(4, 6);
    auto cfg = small_config(2);
    cfg.lr = 0.001;
    cfg.batch = 1024;
    cfg.conv_tol = 0; // never stop early
    Trainer tr(cooc, cfg);
    std::vector<double> losses;
    for (int k = 0; k < 20; ++k) {
        tr.run_steps(500);
        losses.push_back(full_loss(realize(tr.params()), cooc));
    }
    // checkpoints at steps 500, 1000, ...; from step 2000 on (index 3)
    for (std::size_t k = 4; k < losses.size(); ++k) CHECK(losses[k] <= losses[k - 1] + 1e-3);
}

TEST_CASE("convergence detection stops the run") {
    auto cooc = random_cooc(5, 6);
    auto cfg = small_config(2);
    cfg.max_steps = 100000;
    cfg.check_every = 50;
    cfg.conv_window = 3;
    cfg.conv_tol = 1e-3;
    auto r = train(cooc, cfg);
    CHECK(r.trace.converged);
    CHECK(r.trace.rows.size() < 100000);
    CHECK(r.trace.converged_step == r.trace.rows.size());
}

TEST_CASE("divergence is reported as NonFiniteLoss") {
    auto cooc = random_cooc(6, 6);
    auto cfg = small_config(2);
    cfg.lr = 1e308;
    CHECK_THROWS_AS(train(cooc, cfg), NonFiniteLoss);
}

TEST_CASE("checkpoint and resume reproduce the uninterrupted trajectory") {
    auto cooc = random_cooc(7, 9);
    auto cfg = small_config(3);
    const auto path = temp_path("resume.ckpt").string();

    Trainer a(cooc, cfg);
    a.run_steps(25);
    a.save_checkpoint(path);
    a.run_steps(10);

    Trainer b = Trainer::resume(cooc, cfg, path);
    CHECK(b.steps_done() == 25);
    b.run_steps(10);
    CHECK(a.params() == b.params());
    CHECK(a.optimizer() == b.optimizer());
    CHECK(a.ema_objective() == b.ema_objective());
    std::filesystem::remove(path);
}

TEST_CASE("resume error paths") {
    auto cooc = random_cooc(8, 5);
    auto cfg = small_config(2);
    CHECK_THROWS_AS(Trainer::resume(cooc, cfg, "/nonexistent/dir/x.ckpt"), IoError);

    std::stringstream ss;
    Trainer(cooc, cfg).write_checkpoint(ss);
    std::string bytes = ss.str();
    bytes[3] = 'Z';
    std::istringstream corrupt(bytes);
    CHECK_THROWS_AS(Trainer::resume(cooc, cfg, corrupt), FormatError);

    std::istringstream truncated(ss.str().substr(0, 60));
    CHECK_THROWS_AS(Trainer::resume(cooc, cfg, truncated), FormatError);

    auto other = random_cooc(8, 7);
    std::istringstream wrong_n(ss.str());
    CHECK_THROWS_AS(Trainer::resume(other, cfg, wrong_n), DimensionMismatch);
}

TEST_CASE("trace CSV") {
    TrainTrace t;
    t.rows.push_back({1, -3.5, 0.001});
    std::ostringstream out;
    write_trace_csv(out, t);
    CHECK(out.str().rfind("step,ema_objective,seconds\n1,-3.5,", 0) == 0);
}

TEST_CASE("truth beats perturbed topics on a large synthetic Mhat") {
    // Anchor-word interval topics, D = 1e5 documents.
    const std::vector<std::pair<std::size_t, std::size_t>> iv{{1, 12}, {9, 22}, {19, 30}};
    GroundTruth gt{interval_topics(30, iv), Dirichlet{{2.0, 1.0, 1.5}}, 10, 100000, 21};
    auto cooc = corpus_cooc(gen_corpus(gt));
    const MatrixD theta = theta_moment(gt.prior, 3);

    const auto& mu = gt.topics.matrix();
    MatrixD swapped = mu;
    for (std::size_t u = 0; u < 30; ++u) {
        swapped(0, u) = 0.8 * mu(0, u) + 0.2 * mu(1, u);
        swapped(1, u) = 0.8 * mu(1, u) + 0.2 * mu(0, u);
    }
    const double truth = full_loss(FdmDist::from_probabilities(mu, theta), cooc);
    const double perturbed = full_loss(FdmDist::from_probabilities(swapped, theta), cooc);
    CHECK(truth < perturbed);
}
