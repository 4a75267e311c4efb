#include "dal/covariance.hpp"

#include <cmath>

#include "dal/errors.hpp"

namespace dal {

CovarianceModel CovarianceModel::parse(const std::string &name, std::size_t n) {
    if (name == "iid" || name == "identity")
        return identity(n);
    if (name == "ar")
        return ar(n);
    throw CovarianceError("unknown covariance '" + name + "' (expected iid or ar)");
}

void CovarianceModel::validate() const {
    if (n == 0)
        throw CovarianceError("covariance dimension must be positive");
    if (kind == Kind::ar && !(std::abs(rho) < 1.0))
        throw CovarianceError("AR correlation must lie in (-1, 1) to be positive definite");
}

double CovarianceModel::entry(std::size_t i, std::size_t j) const {
    if (kind == Kind::identity)
        return i == j ? 1.0 : 0.0;
    const auto lag = i > j ? i - j : j - i;
    return std::pow(rho, static_cast<double>(lag));
}

std::vector<double> CovarianceModel::multiply(std::span<const double> v) const {
    if (v.size() != n)
        throw CovarianceError("covariance multiply: vector length does not match dimension");
    if (kind == Kind::identity)
        return {v.begin(), v.end()};
    // Sigma = forward + backward geometric sums minus the doubled diagonal.
    std::vector<double> fwd(n), bwd(n), out(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc = rho * acc + v[i];
        fwd[i] = acc;
    }
    acc = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        acc = rho * acc + v[i];
        bwd[i] = acc;
    }
    for (std::size_t i = 0; i < n; ++i)
        out[i] = fwd[i] + bwd[i] - v[i];
    return out;
}

double CovarianceModel::quadratic_form(std::span<const double> v) const {
    const auto sv = multiply(v);
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        q += v[i] * sv[i];
    return q;
}

std::vector<double> CovarianceModel::sample(Rng &rng) const {
    auto e = rng.normal_vector(n);
    if (kind == Kind::identity)
        return e;
    const double innov = std::sqrt(1.0 - rho * rho);
    for (std::size_t i = 1; i < n; ++i)
        e[i] = rho * e[i - 1] + innov * e[i];
    return e;
}

} // namespace dal
