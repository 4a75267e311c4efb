#pragma once
// Helpers shared by the unit tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "dal/pwl.hpp"
#include "dal/rng.hpp"

namespace test {

inline std::vector<double> normals(dal::Rng &rng, std::size_t n, double scale = 1.0) {
    auto v = rng.normal_vector(n);
    for (auto &x : v)
        x *= scale;
    return v;
}

inline dal::AffineVector random_line(dal::Rng &rng, std::size_t n, double scale = 1.0) {
    return {normals(rng, n, scale), normals(rng, n, scale)};
}

inline double max_abs_diff(const std::vector<double> &a, const std::vector<double> &b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// A point strictly inside [lo, hi], clamped to a finite window around `anchor`.
inline double interior_point(const dal::FixedInterval &iv, double anchor, dal::Rng &rng, double reach = 5.0) {
    const double lo = std::max(iv.lo, anchor - reach), hi = std::min(iv.hi, anchor + reach);
    const double w = hi - lo;
    return lo + w * (0.02 + 0.96 * rng.uniform());
}


// log of the N(0,1) mass on [lo, hi] by quadrature. On [lo, hi] with lo >= 0
// the mass is phi(lo) * int_0^{hi-lo} exp(-lo u - u^2 / 2) du, which keeps the
// integrand O(1) however far out lo is.
inline double log_mass_quadrature(double lo, double hi) {
    if (lo >= hi)
        return -std::numeric_limits<double>::infinity();
    if (hi <= 0.0)
        return log_mass_quadrature(-hi, -lo);
    if (lo < 0.0) {
        const double a = log_mass_quadrature(0.0, -lo), b = log_mass_quadrature(0.0, hi);
        const double m = std::max(a, b);
        return m + std::log(std::exp(a - m) + std::exp(b - m));
    }
    using Quad = boost::math::quadrature::gauss_kronrod<double, 61>;
    const auto f = [lo](double u) { return std::exp(-lo * u - 0.5 * u * u); };
    const double w = hi - lo;
    double integral = 0.0;
    if (std::isinf(w)) {
        integral = Quad::integrate(f, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-14);
    } else {
        // Panels sized to the decay scale so the peak at u = 0 is resolved.
        const double scale = 1.0 / std::max(1.0, lo);
        const int panels = static_cast<int>(std::min(64.0, std::ceil(w / scale)));
        for (int p = 0; p < panels; ++p)
            integral += Quad::integrate(f, w * p / panels, w * (p + 1) / panels, 15, 1e-14);
    }
    return -0.5 * lo * lo - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(integral);
}

// P(|T| >= |z| | T in set) for T ~ N(0, sigma^2), by quadrature.
inline double selective_p_quadrature(double z, double sigma, const std::vector<dal::FixedInterval> &set) {
    const double t = std::abs(z) / sigma;
    std::vector<double> num, den;
    for (const auto &iv : set) {
        const double lo = iv.lo / sigma, hi = iv.hi / sigma;
        den.push_back(log_mass_quadrature(lo, hi));
        num.push_back(log_mass_quadrature(lo, std::min(hi, -t)));
        num.push_back(log_mass_quadrature(std::max(lo, t), hi));
    }
    const auto lse = [](const std::vector<double> &v) {
        const double m = *std::max_element(v.begin(), v.end());
        if (std::isinf(m))
            return m;
        double s = 0.0;
        for (double x : v)
            s += std::exp(x - m);
        return m + std::log(s);
    };
    return std::exp(lse(num) - lse(den));
}

// A union of 1 to 5 disjoint intervals in sigma units, some unbounded, with
// z (returned as first) inside one of them.
inline std::pair<double, std::vector<dal::FixedInterval>> random_union(dal::Rng &rng, double sigma) {
    const int count = 1 + static_cast<int>(rng.uniform() * 5);
    std::vector<double> cuts;
    for (int i = 0; i < 2 * count; ++i)
        cuts.push_back(-8.0 + 16.0 * rng.uniform());
    std::sort(cuts.begin(), cuts.end());
    std::vector<dal::FixedInterval> set;
    for (int i = 0; i < count; ++i)
        set.push_back({cuts[2 * i] * sigma, cuts[2 * i + 1] * sigma});
    if (rng.uniform() < 0.3)
        set.front().lo = -std::numeric_limits<double>::infinity();
    if (rng.uniform() < 0.3)
        set.back().hi = std::numeric_limits<double>::infinity();
    const auto &iv = set[static_cast<std::size_t>(rng.uniform() * count)];
    const double lo = std::max(iv.lo, -9.0 * sigma), hi = std::min(iv.hi, 9.0 * sigma);
    return {lo + (hi - lo) * rng.uniform(), set};
}

} // namespace test
