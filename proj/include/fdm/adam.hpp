#pragma once

#include "fdm/error.hpp"
#include "fdm/fdm_model.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace fdm {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    friend bool operator==(const AdamHyper&, const AdamHyper&) = default;
};

/// One bias-corrected adaptive-moment step on a flat parameter block. The
/// update direction is +grad (gradient ascent). `step` is the 1-based count
/// of updates including this one.
inline void adam_ascent(std::span<double> x, std::span<const double> grad, std::span<double> m,
                        std::span<double> v, std::uint64_t step, double lr, const AdamHyper& h) {
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grad[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
        x[i] += lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.epsilon);
    }
}

/// Moment accumulators shaped like FdmParams.
struct OptimizerState {
    MatrixD m_mu, v_mu;
    std::vector<double> m_alpha, v_alpha;
    std::uint64_t step = 0;
    AdamHyper hyper;

    OptimizerState() = default;
    OptimizerState(std::size_t topics, std::size_t vocab, AdamHyper h = {})
        : m_mu(topics, vocab, 0.0), v_mu(topics, vocab, 0.0), m_alpha(upper_size(topics), 0.0),
          v_alpha(upper_size(topics), 0.0), hyper(h) {}

    bool matches(const FdmParams& p) const {
        return m_mu.rows() == p.topics() && m_mu.cols() == p.vocab() &&
               m_alpha.size() == p.alpha_free.size();
    }

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Apply one ascent update to `params`. With update_topics=false only the
/// mixing logits move (their moments are still advanced).
inline void optimizer_step(OptimizerState& state, FdmParams& params, const FdmGradient& grad,
                           double lr, bool update_topics = true) {
    if (!state.matches(params) || grad.mu.rows() != params.topics() ||
        grad.mu.cols() != params.vocab() || grad.alpha.size() != params.alpha_free.size())
        throw DimensionMismatch("optimizer_step: shape mismatch");
    ++state.step;
    if (update_topics)
        adam_ascent(params.mu_free.data(), grad.mu.data(), state.m_mu.data(), state.v_mu.data(),
                    state.step, lr, state.hyper);
    adam_ascent(params.alpha_free, grad.alpha, state.m_alpha, state.v_alpha, state.step, lr,
                state.hyper);
}

} // namespace fdm
