#pragma once

#include "fdm/adam.hpp"
#include "fdm/cooccurrence.hpp"
#include "fdm/error.hpp"
#include "fdm/fdm_model.hpp"
#include "fdm/random.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace fdm {

struct TrainConfig {
    std::size_t topics = 10;
    std::size_t batch = 1024;
    double lr = 0.001;
    std::uint64_t max_steps = 200000;
    /// Convergence is tested every `check_every` steps on the smoothed objective.
    std::uint64_t check_every = 500;
    std::size_t conv_window = 20;
    double conv_tol = 1e-4;
    double ema_decay = 0.99;
    double init_scale = 0.1;
    std::uint64_t seed = 0;
    std::uint64_t checkpoint_every = 0;
    std::string checkpoint_path;
    bool train_topics = true;
    std::size_t threads = 1;
    AdamHyper adam;

    void validate() const {
        if (topics < 1) throw InvalidArgument("train: topics must be >= 1");
        if (batch < 1) throw InvalidArgument("train: batch must be >= 1");
        if (!(lr > 0.0)) throw InvalidArgument("train: lr must be > 0");
        if (conv_window < 2) throw InvalidArgument("train: conv_window must be >= 2");
        if (check_every < 1) throw InvalidArgument("train: check_every must be >= 1");
        if (!(init_scale >= 0.0)) throw InvalidArgument("train: init_scale must be >= 0");
        if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw InvalidArgument("train: ema_decay in [0,1)");
    }
};

struct TraceRow {
    std::uint64_t step;
    double ema_objective;
    double seconds;
};

struct TrainTrace {
    std::vector<TraceRow> rows;
    bool converged = false;
    std::uint64_t converged_step = 0;
};

inline void write_trace_csv(std::ostream& out, const TrainTrace& trace) {
    out << "step,ema_objective,seconds\n";
    char buf[96];
    for (const auto& r : trace.rows) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.9f\n", static_cast<unsigned long long>(r.step),
                      r.ema_objective, r.seconds);
        out << buf;
    }
}

/// I.i.d. Gaussian(0, scale^2) logits.
inline FdmParams init_params(std::size_t topics, std::size_t vocab, double scale, std::uint64_t seed) {
    if (topics < 1) throw InvalidArgument("init_params: T must be >= 1");
    if (vocab < 2) throw InvalidArgument("init_params: N must be >= 2");
    FdmParams p(topics, vocab);
    if (scale == 0.0) return p;
    Rng rng(derive_seed(seed, "init"));
    std::normal_distribution<double> gauss(0.0, scale);
    for (auto& x : p.mu_free.data()) x = gauss(rng);
    for (auto& x : p.alpha_free) x = gauss(rng);
    return p;
}

/// Stochastic gradient ascent on sum_k log M(u_k, v_k) over pairs drawn
/// from the co-occurrence matrix, one fresh batch per step.
class Trainer {
  public:
    Trainer(const CoocMatrix& cooc, TrainConfig config, std::optional<FdmParams> init = std::nullopt)
        : config_(std::move(config)),
          sampler_(cooc, derive_seed(config_.seed, "pairs")) {
        config_.validate();
        if (cooc.n() < 2) throw InvalidArgument("train: vocabulary must have N >= 2");
        if (init) {
            if (init->topics() != config_.topics || init->vocab() != cooc.n())
                throw DimensionMismatch("train: initial parameters are " +
                                        std::to_string(init->topics()) + "x" +
                                        std::to_string(init->vocab()) + ", expected " +
                                        std::to_string(config_.topics) + "x" +
                                        std::to_string(cooc.n()));
            params_ = std::move(*init);
        } else {
            params_ = init_params(config_.topics, cooc.n(), config_.init_scale, config_.seed);
        }
        opt_ = OptimizerState(params_.topics(), params_.vocab(), config_.adam);
        batch_.resize(config_.batch);
    }

    const FdmParams& params() const noexcept { return params_; }
    const OptimizerState& optimizer() const noexcept { return opt_; }
    const TrainTrace& trace() const noexcept { return trace_; }
    const TrainConfig& config() const noexcept { return config_; }
    std::uint64_t steps_done() const noexcept { return opt_.step; }
    bool converged() const noexcept { return trace_.converged; }
    double ema_objective() const noexcept { return ema_; }

    /// One sample -> gradient -> update step. Returns the per-pair objective.
    double step() {
        const auto t0 = std::chrono::steady_clock::now();
        sampler_.sample(batch_);
        const FdmDist dist = realize(params_);
        const double obj = batch_gradient(dist, batch_, grad_, {config_.train_topics, config_.threads});
        const double per_pair = obj / static_cast<double>(batch_.size());
        if (!std::isfinite(per_pair))
            throw NonFiniteLoss("objective became non-finite at step " + std::to_string(opt_.step + 1) +
                                "; try a lower learning rate");
        optimizer_step(opt_, params_, grad_, config_.lr, config_.train_topics);
        if (!params_.all_finite())
            throw NonFiniteLoss("parameters became non-finite at step " + std::to_string(opt_.step));

        ema_ = have_ema_ ? config_.ema_decay * ema_ + (1.0 - config_.ema_decay) * per_pair : per_pair;
        have_ema_ = true;
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        trace_.rows.push_back({opt_.step, ema_, secs});

        if (opt_.step % config_.check_every == 0) check_convergence();
        if (config_.checkpoint_every > 0 && !config_.checkpoint_path.empty() &&
            opt_.step % config_.checkpoint_every == 0)
            save_checkpoint(config_.checkpoint_path);
        return per_pair;
    }

    /// Step until converged or `max_steps` total steps have run.
    void run() {
        while (!trace_.converged && opt_.step < config_.max_steps) step();
    }

    /// Run exactly `n` more steps regardless of convergence.
    void run_steps(std::uint64_t n) {
        for (std::uint64_t i = 0; i < n; ++i) step();
    }

    // Checkpoint: "FDMCKPT1", then u64 T, N, step, flags; f64 hyperparameters
    // and EMA state; free variables; both moment blocks; the pair sampler's
    // RNG state as a length-prefixed string. Everything little-endian 64-bit.
    void save_checkpoint(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open for writing: " + path);
        write_checkpoint(out);
        if (!out) throw IoError("write failed: " + path);
    }

    void write_checkpoint(std::ostream& out) const {
        using detail::write_pod;
        out.write("FDMCKPT1", 8);
        write_pod(out, static_cast<std::uint64_t>(params_.topics()));
        write_pod(out, static_cast<std::uint64_t>(params_.vocab()));
        write_pod(out, opt_.step);
        write_pod(out, static_cast<std::uint64_t>((have_ema_ ? 1u : 0u) | (trace_.converged ? 2u : 0u)));
        write_pod(out, static_cast<std::uint64_t>(streak_));
        write_pod(out, trace_.converged_step);
        write_pod(out, opt_.hyper.beta1);
        write_pod(out, opt_.hyper.beta2);
        write_pod(out, opt_.hyper.epsilon);
        write_pod(out, ema_);
        write_pod(out, last_check_ema_);
        write_pod(out, static_cast<std::uint64_t>(have_last_check_ ? 1 : 0));
        auto block = [&](const std::vector<double>& v) {
            out.write(reinterpret_cast<const char*>(v.data()),
                      static_cast<std::streamsize>(v.size() * sizeof(double)));
        };
        block(params_.mu_free.data());
        block(params_.alpha_free);
        block(opt_.m_mu.data());
        block(opt_.v_mu.data());
        block(opt_.m_alpha);
        block(opt_.v_alpha);
        std::ostringstream rs;
        rs << sampler_.rng();
        const std::string rng_state = rs.str();
        write_pod(out, static_cast<std::uint64_t>(rng_state.size()));
        out.write(rng_state.data(), static_cast<std::streamsize>(rng_state.size()));
    }

    /// Restore a trainer from a checkpoint written by save_checkpoint. The
    /// checkpoint's shapes must agree with `cooc` and `config.topics`.
    static Trainer resume(const CoocMatrix& cooc, const TrainConfig& config, const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open checkpoint: " + path);
        return resume(cooc, config, in);
    }

    static Trainer resume(const CoocMatrix& cooc, const TrainConfig& config, std::istream& in) {
        using detail::read_pod;
        char magic[8] = {};
        if (!in.read(magic, 8) || std::memcmp(magic, "FDMCKPT1", 8) != 0)
            throw FormatError("checkpoint: bad magic (expected FDMCKPT1)");
        const auto t = read_pod<std::uint64_t>(in, "T");
        const auto n = read_pod<std::uint64_t>(in, "N");
        if (t != config.topics || n != cooc.n())
            throw DimensionMismatch("checkpoint is " + std::to_string(t) + "x" + std::to_string(n) +
                                    " but run expects " + std::to_string(config.topics) + "x" +
                                    std::to_string(cooc.n()));
        if (t > (1u << 20) || n > (1ull << 32)) throw FormatError("checkpoint: implausible shape");
        TrainConfig cfg = config;
        const auto step = read_pod<std::uint64_t>(in, "step");
        const auto flags = read_pod<std::uint64_t>(in, "flags");
        const auto streak = read_pod<std::uint64_t>(in, "streak");
        const auto conv_step = read_pod<std::uint64_t>(in, "converged step");
        cfg.adam.beta1 = read_pod<double>(in, "beta1");
        cfg.adam.beta2 = read_pod<double>(in, "beta2");
        cfg.adam.epsilon = read_pod<double>(in, "epsilon");
        const auto ema = read_pod<double>(in, "ema");
        const auto last_check = read_pod<double>(in, "last check");
        const auto have_last = read_pod<std::uint64_t>(in, "last check flag");

        FdmParams p(t, n);
        auto block = [&](std::vector<double>& v) {
            if (!in.read(reinterpret_cast<char*>(v.data()),
                         static_cast<std::streamsize>(v.size() * sizeof(double))))
                throw FormatError("checkpoint: truncated parameter block");
        };
        block(p.mu_free.data());
        block(p.alpha_free);
        Trainer tr(cooc, cfg, std::move(p));
        block(tr.opt_.m_mu.data());
        block(tr.opt_.v_mu.data());
        block(tr.opt_.m_alpha);
        block(tr.opt_.v_alpha);
        const auto len = read_pod<std::uint64_t>(in, "rng state length");
        if (len > (1u << 20)) throw FormatError("checkpoint: implausible rng state length");
        std::string rng_state(len, '\0');
        if (!in.read(rng_state.data(), static_cast<std::streamsize>(len)))
            throw FormatError("checkpoint: truncated rng state");
        std::istringstream rs(rng_state);
        if (!(rs >> tr.sampler_.rng())) throw FormatError("checkpoint: bad rng state");

        tr.opt_.step = step;
        tr.have_ema_ = (flags & 1u) != 0;
        tr.trace_.converged = (flags & 2u) != 0;
        tr.trace_.converged_step = conv_step;
        tr.streak_ = static_cast<std::size_t>(streak);
        tr.ema_ = ema;
        tr.last_check_ema_ = last_check;
        tr.have_last_check_ = have_last != 0;
        return tr;
    }

  private:
    void check_convergence() {
        if (have_last_check_) {
            const double denom = std::max(std::abs(last_check_ema_), 1e-300);
            const double rel = std::abs(ema_ - last_check_ema_) / denom;
            streak_ = rel < config_.conv_tol ? streak_ + 1 : 0;
            if (streak_ >= config_.conv_window) {
                trace_.converged = true;
                trace_.converged_step = opt_.step;
            }
        }
        last_check_ema_ = ema_;
        have_last_check_ = true;
    }

    TrainConfig config_;
    PairSampler sampler_;
    FdmParams params_;
    OptimizerState opt_;
    FdmGradient grad_;
    std::vector<TokenPair> batch_;
    TrainTrace trace_;
    double ema_ = 0.0;
    bool have_ema_ = false;
    double last_check_ema_ = 0.0;
    bool have_last_check_ = false;
    std::size_t streak_ = 0;
};

struct TrainResult {
    FdmParams params;
    TrainTrace trace;
};

inline TrainResult train(const CoocMatrix& cooc, const TrainConfig& config,
                         std::optional<FdmParams> init = std::nullopt) {
    if (cooc.empty()) throw InvalidArgument("train: empty co-occurrence matrix");
    Trainer tr(cooc, config, std::move(init));
    tr.run();
    return {tr.params(), tr.trace()};
}

} // namespace fdm
