#include "dal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/distributions/binomial.hpp>

#include "dal/errors.hpp"

namespace dal::stats {

Proportion clopper_pearson(std::size_t successes, std::size_t trials, double confidence) {
    if (trials == 0)
        return {0.0, 1.0};
    using boost::math::binomial_distribution;
    const double tail = (1.0 - confidence) / 2.0;
    const auto n = static_cast<double>(trials), k = static_cast<double>(successes);
    return {binomial_distribution<>::find_lower_bound_on_p(n, k, tail),
            binomial_distribution<>::find_upper_bound_on_p(n, k, tail)};
}

Proportion binomial_acceptance(double p, std::size_t trials, double confidence) {
    if (trials == 0)
        throw Error("binomial_acceptance: no trials");
    const boost::math::binomial_distribution<> dist(static_cast<double>(trials), p);
    const double tail = (1.0 - confidence) / 2.0;
    // Smallest k with cdf(k) > tail and largest k with cdf(k - 1) < 1 - tail.
    std::size_t lo = 0;
    while (lo < trials && boost::math::cdf(dist, static_cast<double>(lo)) <= tail)
        ++lo;
    std::size_t hi = trials;
    while (hi > 0 && boost::math::cdf(dist, static_cast<double>(hi - 1)) >= 1.0 - tail)
        --hi;
    const auto n = static_cast<double>(trials);
    return {static_cast<double>(lo) / n, static_cast<double>(hi) / n};
}

double kolmogorov_tail(double lambda) {
    if (lambda <= 0.0)
        return 1.0;
    if (lambda < 0.3) {
        // Alternating series converges slowly here; use the Jacobi-transformed form.
        double s = 0.0;
        const double c = std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
        for (int k = 1; k < 50; k += 2)
            s += std::exp(-static_cast<double>(k * k) * c);
        return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
    }
    double s = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        s += (k % 2 ? 2.0 : -2.0) * term;
        if (term < 1e-18)
            break;
    }
    return std::clamp(s, 0.0, 1.0);
}

KsResult ks_uniform(std::span<const double> values) {
    if (values.empty())
        throw Error("ks_uniform: no values");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const auto n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double u = std::clamp(v[i], 0.0, 1.0);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - u, u - static_cast<double>(i) / n});
    }
    const double sn = std::sqrt(n);
    return {d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d)};
}

} // namespace dal::stats
