#include "dal/families.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/skew_normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "dal/errors.hpp"
#include "dal/normal.hpp"

namespace dal {

std::string family_name(Family family) {
    switch (family) {
    case Family::skew_normal:
        return "skew-normal";
    case Family::exp_modified_gaussian:
        return "exp-modified-gaussian";
    case Family::generalized_normal:
        return "generalized-normal";
    case Family::student_t:
        return "student-t";
    }
    throw Error("unknown family");
}

Family parse_family(const std::string &name) {
    for (auto f : kAllFamilies)
        if (name == family_name(f))
            return f;
    if (name == "snd")
        return Family::skew_normal;
    if (name == "emg")
        return Family::exp_modified_gaussian;
    if (name == "gnd")
        return Family::generalized_normal;
    if (name == "t")
        return Family::student_t;
    throw Error("unknown noise family '" + name + "'");
}

FamilyRange family_range(Family family) {
    switch (family) {
    case Family::skew_normal:
        return {0.0, 30.0};
    case Family::exp_modified_gaussian:
        return {0.0, 5.0};
    case Family::generalized_normal:
        return {2.0, 1.0};
    case Family::student_t:
        return {0.0, 0.45};
    }
    throw Error("unknown family");
}

namespace {

double skew_delta(double a) { return a / std::sqrt(1.0 + a * a); }

double dof(double theta) { return 1.0 / theta; }

double gnd_scale(double beta) {
    return std::sqrt(std::tgamma(1.0 / beta) / std::tgamma(3.0 / beta));
}

} // namespace

StandardizedFamily::StandardizedFamily(Family family, double param) : family_(family), param_(param) {
    const auto range = family_range(family);
    const double lo = std::min(range.gaussian, range.far), hi = std::max(range.gaussian, range.far);
    if (!(param >= lo && param <= hi))
        throw CalibrationError(family_name(family) + " parameter " + std::to_string(param) + " outside [" +
                               std::to_string(lo) + ", " + std::to_string(hi) + "]");
    switch (family) {
    case Family::skew_normal: {
        const double d = skew_delta(param);
        shift_ = d * std::sqrt(2.0 / std::numbers::pi);
        scale_ = std::sqrt(1.0 - 2.0 * d * d / std::numbers::pi);
        break;
    }
    case Family::exp_modified_gaussian:
        shift_ = param;
        scale_ = std::sqrt(1.0 + param * param);
        break;
    case Family::generalized_normal:
    case Family::student_t:
        break;
    }
}

double StandardizedFamily::cdf(double x) const {
    switch (family_) {
    case Family::skew_normal: {
        if (param_ == 0.0)
            return normal::cdf(x);
        const boost::math::skew_normal_distribution<> dist(0.0, 1.0, param_);
        return boost::math::cdf(dist, shift_ + scale_ * x);
    }
    case Family::exp_modified_gaussian: {
        // Raw variable Y = Z + K E. F(y) = Phi(y) - phi(y) R(1/K - y), with R
        // the Mills ratio, written in log form so neither factor overflows.
        const double y = shift_ + scale_ * x;
        if (param_ == 0.0)
            return normal::cdf(y);
        const double v = 1.0 / param_ - y;
        const double tail = std::exp(normal::log_pdf(y) + normal::log_upper_tail(v) - normal::log_pdf(v));
        return std::clamp(normal::cdf(y) - tail, 0.0, 1.0);
    }
    case Family::generalized_normal: {
        const double beta = param_;
        const double u = std::pow(std::abs(x) / gnd_scale(beta), beta);
        const double half = 0.5 * boost::math::gamma_p(1.0 / beta, u);
        return x < 0.0 ? 0.5 - half : 0.5 + half;
    }
    case Family::student_t: {
        if (param_ == 0.0)
            return normal::cdf(x);
        const double nu = dof(param_);
        const boost::math::students_t_distribution<> dist(nu);
        return boost::math::cdf(dist, x / std::sqrt((nu - 2.0) / nu));
    }
    }
    throw Error("unknown family");
}

double StandardizedFamily::sample(Rng &rng) const {
    switch (family_) {
    case Family::skew_normal: {
        const double d = skew_delta(param_);
        const double u0 = rng.normal(), u1 = rng.normal();
        return (d * std::abs(u0) + std::sqrt(1.0 - d * d) * u1 - shift_) / scale_;
    }
    case Family::exp_modified_gaussian: {
        const double z = rng.normal();
        const double e = -std::log(rng.uniform_open());
        return (z + param_ * e - shift_) / scale_;
    }
    case Family::generalized_normal: {
        const double beta = param_;
        const double g = boost::math::gamma_p_inv(1.0 / beta, rng.uniform_open());
        const double magnitude = gnd_scale(beta) * std::pow(g, 1.0 / beta);
        return rng.uniform() < 0.5 ? -magnitude : magnitude;
    }
    case Family::student_t: {
        if (param_ == 0.0)
            return rng.normal();
        const double nu = dof(param_);
        const boost::math::students_t_distribution<> dist(nu);
        return boost::math::quantile(dist, rng.uniform_open()) * std::sqrt((nu - 2.0) / nu);
    }
    }
    throw Error("unknown family");
}

double wasserstein1_to_std_normal(Family family, double param) {
    const StandardizedFamily dist(family, param);
    auto gap = [&](double x) { return std::abs(dist.cdf(x) - normal::cdf(x)); };
    using Quad = boost::math::quadrature::gauss_kronrod<double, 31>;
    constexpr double edge = 16.0, width = 2.0;
    double total = Quad::integrate(gap, -std::numeric_limits<double>::infinity(), -edge, 10, 1e-11) +
                   Quad::integrate(gap, edge, std::numeric_limits<double>::infinity(), 10, 1e-11);
    for (double lo = -edge; lo < edge; lo += width)
        total += Quad::integrate(gap, lo, lo + width, 10, 1e-11);
    if (!std::isfinite(total))
        throw CalibrationError("W1 of " + family_name(family) + " is not finite");
    return total;
}

double calibrate_family(Family family, double target) {
    const auto range = family_range(family);
    if (target == 0.0)
        return range.gaussian;
    const double reach = wasserstein1_to_std_normal(family, range.far);
    if (!(target > 0.0 && target <= reach))
        throw CalibrationError(family_name(family) + ": W1 target " + std::to_string(target) +
                               " outside the achievable range [0, " + std::to_string(reach) + "]");

    // The map must be increasing from the Gaussian end for bisection to be valid.
    constexpr int probes = 8;
    double prev = 0.0;
    for (int i = 1; i <= probes; ++i) {
        const double p = range.gaussian + (range.far - range.gaussian) * i / probes;
        const double w = wasserstein1_to_std_normal(family, p);
        if (w < prev)
            throw CalibrationError(family_name(family) + ": W1 is not monotone on the bracket");
        prev = w;
    }

    double near = range.gaussian, far = range.far;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (near + far);
        const double w = wasserstein1_to_std_normal(family, mid);
        if (std::abs(w - target) < 1e-8 || std::abs(far - near) < 1e-13)
            return mid;
        (w < target ? near : far) = mid;
    }
    return 0.5 * (near + far);
}

} // namespace dal
