#pragma once

#include "fdm/error.hpp"
#include "fdm/random.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fdm {

/// Walker/Vose alias table: O(n) setup, O(1) per draw.
class AliasTable {
  public:
    AliasTable() = default;

    /// Weights need not be normalized but must be nonnegative with positive sum.
    explicit AliasTable(std::span<const double> weights) : prob_(weights.size()), alias_(weights.size()) {
        const std::size_t n = weights.size();
        if (n == 0) throw InvalidArgument("alias table: empty weight vector");
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw InvalidArgument("alias table: negative or NaN weight");
            total += w;
        }
        if (!(total > 0.0)) throw InvalidArgument("alias table: weights sum to zero");

        std::vector<double> scaled(n);
        std::vector<std::uint32_t> small, large;
        small.reserve(n);
        large.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            scaled[i] = weights[i] * static_cast<double>(n) / total;
            (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
        }
        while (!small.empty() && !large.empty()) {
            const auto s = small.back();
            small.pop_back();
            const auto l = large.back();
            prob_[s] = scaled[s];
            alias_[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if (scaled[l] < 1.0) {
                large.pop_back();
                small.push_back(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for (auto i : large) {
            prob_[i] = 1.0;
            alias_[i] = i;
        }
        for (auto i : small) {
            prob_[i] = 1.0;
            alias_[i] = i;
        }
    }

    std::size_t size() const noexcept { return prob_.size(); }

    std::size_t sample(Rng& rng) const {
        const auto i = static_cast<std::size_t>(uniform_index(rng, prob_.size()));
        return uniform01(rng) < prob_[i] ? i : alias_[i];
    }

    /// Exact probability mass the table assigns to outcome i (test helper).
    std::vector<double> implied_distribution() const {
        const std::size_t n = prob_.size();
        std::vector<double> p(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] += prob_[i] / static_cast<double>(n);
            p[alias_[i]] += (1.0 - prob_[i]) / static_cast<double>(n);
        }
        return p;
    }

  private:
    std::vector<double> prob_;
    std::vector<std::uint32_t> alias_;
};

} // namespace fdm
