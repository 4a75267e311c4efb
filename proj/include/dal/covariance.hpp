#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dal/rng.hpp"

namespace dal {

// Pixel noise covariance: identity, or 0.5^|i-j| over the flattened index.
struct CovarianceModel {
    enum class Kind { identity, ar };

    Kind kind = Kind::identity;
    std::size_t n = 0;
    double rho = 0.5;

    static CovarianceModel identity(std::size_t n) { return {Kind::identity, n, 0.0}; }
    static CovarianceModel ar(std::size_t n, double rho = 0.5) { return {Kind::ar, n, rho}; }
    // "iid" or "ar"
    static CovarianceModel parse(const std::string &name, std::size_t n);

    std::string name() const { return kind == Kind::identity ? "iid" : "ar"; }
    void validate() const;
    double entry(std::size_t i, std::size_t j) const;
    std::vector<double> multiply(std::span<const double> v) const;
    double quadratic_form(std::span<const double> v) const;
    // One exact draw from N(0, Sigma); the AR kernel uses its Markov recursion.
    std::vector<double> sample(Rng &rng) const;
};

} // namespace dal
