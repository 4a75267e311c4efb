#pragma once
// Small summaries used by the experiment harness.

#include <cstddef>
#include <span>

namespace dal::stats {

struct Proportion {
    double lo = 0.0;
    double hi = 1.0;
};

// Exact (Clopper-Pearson) two-sided interval for a binomial proportion.
Proportion clopper_pearson(std::size_t successes, std::size_t trials, double confidence = 0.95);

// Two-sided acceptance region [lo, hi] for the observed rate k/trials under
// Binomial(trials, p): the central interval holding at least `confidence` of
// the mass.
Proportion binomial_acceptance(double p, std::size_t trials, double confidence);

// P(K > lambda) for the Kolmogorov limit distribution.
double kolmogorov_tail(double lambda);

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// One-sample Kolmogorov-Smirnov test against Uniform(0, 1), with Stephens'
// finite-sample correction of the asymptotic p-value.
KsResult ks_uniform(std::span<const double> values);

} // namespace dal::stats
