#include "dal/normal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace dal::normal {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178; // log(sqrt(2*pi))
// Beyond this point the continued fraction replaces erfc.
constexpr double kTailSwitch = 8.0;

// P(0 <= Z <= x) for x >= 0, without cancellation near 0.
double central_mass(double x) { return 0.5 * std::erf(x / std::numbers::sqrt2); }

} // namespace

double pdf(double x) { return std::exp(log_pdf(x)); }

double log_pdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

double mills_ratio(double x) {
    if (x < kTailSwitch)
        return upper_tail(x) / pdf(x);
    // R(x) = 1 / (x + 1 / (x + 2 / (x + 3 / (x + ...)))), evaluated backwards.
    double t = x;
    for (int k = 120; k >= 1; --k)
        t = x + k / t;
    return 1.0 / t;
}

double log_upper_tail(double x) {
    if (std::isnan(x))
        return x;
    if (x == -kInf)
        return 0.0;
    if (x == kInf)
        return -kInf;
    if (x < 0.0)
        return std::log1p(-0.5 * std::erfc(-x / std::numbers::sqrt2));
    if (x < kTailSwitch)
        return std::log(0.5 * std::erfc(x / std::numbers::sqrt2));
    return log_pdf(x) + std::log(mills_ratio(x));
}

double upper_tail(double x) {
    if (x < kTailSwitch)
        return 0.5 * std::erfc(x / std::numbers::sqrt2);
    return std::exp(log_upper_tail(x));
}

double cdf(double x) { return upper_tail(-x); }

double log_mass(double lo, double hi) {
    if (!(lo < hi))
        return -kInf;
    if (lo < 0.0 && hi > 0.0) {
        const double lower = lo == -kInf ? 0.5 : central_mass(-lo);
        const double upper = hi == kInf ? 0.5 : central_mass(hi);
        return std::log(lower + upper);
    }
    // Reflect onto the positive half-line.
    if (hi <= 0.0) {
        const double t = lo;
        lo = -hi;
        hi = -t;
    }
    // 0 <= lo < hi
    if (hi < 1.0)
        return std::log(central_mass(hi) - central_mass(lo));
    const double a = log_upper_tail(lo);
    const double b = log_upper_tail(hi);
    return a + std::log1p(-std::exp(b - a));
}

double log_sum_exp(std::span<const double> values) {
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end(), std::greater<>());
    if (v.empty() || v.front() == -kInf)
        return -kInf;
    const double top = v.front();
    double acc = 0.0;
    for (double x : v)
        acc += std::exp(x - top);
    return top + std::log(acc);
}

} // namespace dal::normal
