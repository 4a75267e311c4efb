#pragma once
// Selective inference for a detected anomaly region.
//
// The test compares mean intensity inside the region between the test image
// and a reference image. Conditioning on the nuisance component reduces the
// selection event to a set of z on the line a + b z, found by scanning the
// line with region_and_interval; the p-value is a truncated Gaussian tail.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dal/anomaly.hpp"
#include "dal/covariance.hpp"
#include "dal/pwl.hpp"
#include "dal/region.hpp"

namespace dal {

struct TestInstance {
    std::vector<double> x;
    std::vector<double> x_ref;
    CovarianceModel covariance;

    void validate() const;
    std::size_t pixels() const { return x.size(); }
    // (x; x_ref)
    std::vector<double> stacked() const;
};

struct Decomposition {
    std::vector<double> nu;
    std::vector<double> a;
    std::vector<double> b;
    double sigma2 = 0.0;
    double z_obs = 0.0;

    double sigma() const;
    // a + b z over the stacked 2n coordinates.
    AffineVector line() const { return {a, b}; }
};

struct TruncatedGaussian {
    double variance = 1.0;
    IntervalSet truncation;
};

// Mean of x over the region minus mean of x_ref over it.
double test_statistic(const TestInstance &instance, const AnomalyRegion &region);

// Contrast vector selecting the region in x and subtracting it in x_ref.
std::vector<double> contrast_vector(const AnomalyRegion &region, std::size_t pixels);

Decomposition decompose(const TestInstance &instance, const AnomalyRegion &region);

struct SearchConfig {
    // The scan covers [min(-range*sigma, z_obs - sigma), max(range*sigma, z_obs + sigma)].
    double range_sigmas = 20.0;
    // gamma = step_sigmas * sigma
    double step_sigmas = 1e-4;
    std::size_t max_pieces = 5'000'000;
};

struct SearchResult {
    IntervalSet truncation;
    FixedInterval range;
    double gamma = 0.0;
    // Sub-interval around z_obs (the over-conditioned truncation).
    FixedInterval observed_piece;
    std::size_t pieces = 0;
    std::size_t matched = 0;
    std::size_t zero_width = 0;
};

SearchResult parametric_search(const Pipeline &pipeline, const AnomalyRegion &observed,
                               const Decomposition &decomposition, const SearchConfig &config = {});

// P(|T| >= |z_obs| | T in truncation), T ~ N(0, variance).
double selective_p(double z_obs, const TruncatedGaussian &tg);
double naive_p(double z_obs, double sigma2);
double bonferroni_p(double naive, std::size_t pixels);
double oc_p(double z_obs, double sigma2, const FixedInterval &zsub);

// Fraction of B uniformly permuted test images whose statistic strictly
// exceeds |z_obs| in magnitude. Permuted images with an empty region count
// as |z| = 0.
double permutation_p(const TestInstance &instance, const Pipeline &pipeline, int permutations,
                     std::uint64_t seed);
double permutation_p(const TestInstance &instance, const Pipeline &pipeline,
                     std::span<const std::vector<std::size_t>> permutations);

struct TestOptions {
    SearchConfig search;
    int permutations = 0; // 0 disables the permutation baseline
    std::uint64_t permutation_seed = 0;
};

struct TestResult {
    AnomalyRegion region;
    double z_obs = 0.0;
    double sigma2 = 0.0;
    IntervalSet truncation;
    FixedInterval observed_piece;
    double p_selective = 1.0;
    double p_naive = 1.0;
    double p_bonferroni = 1.0;
    double p_oc = 1.0;
    std::optional<double> p_permutation;
    std::uint64_t plan_seed = 0;
    std::size_t pieces = 0;
    std::size_t zero_width = 0;
    double seconds_search = 0.0;
    double seconds_total = 0.0;
};

// Detects the region on instance.x and computes every p-value.
// Throws UndefinedTestError when no region is detected.
TestResult run_test(const TestInstance &instance, const Pipeline &pipeline, const TestOptions &options = {});

nlohmann::json to_json(const TestResult &result);

} // namespace dal
