#include "dal/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "dal/normal.hpp"

namespace dal {

void TestInstance::validate() const {
    if (x.empty() || x.size() != x_ref.size())
        throw ShapeError("test and reference images must be non-empty and of equal length");
    if (covariance.n != x.size())
        throw CovarianceError("covariance dimension does not match the image");
    covariance.validate();
}

std::vector<double> TestInstance::stacked() const {
    std::vector<double> s(x);
    s.insert(s.end(), x_ref.begin(), x_ref.end());
    return s;
}

double Decomposition::sigma() const { return std::sqrt(sigma2); }

std::vector<double> contrast_vector(const AnomalyRegion &region, std::size_t pixels) {
    if (region.empty())
        throw UndefinedTestError("no anomaly detected; test undefined");
    std::vector<double> nu(2 * pixels, 0.0);
    const double w = 1.0 / static_cast<double>(region.size());
    for (auto i : region.pixels) {
        if (i >= pixels)
            throw ShapeError("region index out of range");
        nu[i] = w;
        nu[pixels + i] = -w;
    }
    return nu;
}

double test_statistic(const TestInstance &instance, const AnomalyRegion &region) {
    if (region.empty())
        throw UndefinedTestError("no anomaly detected; test undefined");
    double sx = 0.0, sr = 0.0;
    for (auto i : region.pixels) {
        sx += instance.x.at(i);
        sr += instance.x_ref.at(i);
    }
    const auto m = static_cast<double>(region.size());
    return sx / m - sr / m;
}

Decomposition decompose(const TestInstance &instance, const AnomalyRegion &region) {
    instance.validate();
    const std::size_t n = instance.pixels();
    Decomposition d;
    d.nu = contrast_vector(region, n);

    const std::span<const double> nu(d.nu);
    auto top = instance.covariance.multiply(nu.first(n));
    auto bottom = instance.covariance.multiply(nu.last(n));
    std::vector<double> sigma_nu(top);
    sigma_nu.insert(sigma_nu.end(), bottom.begin(), bottom.end());

    d.sigma2 = std::inner_product(d.nu.begin(), d.nu.end(), sigma_nu.begin(), 0.0);
    if (!(d.sigma2 > 0.0))
        throw CovarianceError("contrast variance is not positive");

    const auto data = instance.stacked();
    d.z_obs = std::inner_product(d.nu.begin(), d.nu.end(), data.begin(), 0.0);
    d.b.resize(2 * n);
    d.a.resize(2 * n);
    for (std::size_t i = 0; i < 2 * n; ++i) {
        d.b[i] = sigma_nu[i] / d.sigma2;
        d.a[i] = data[i] - d.b[i] * d.z_obs;
    }
    return d;
}

SearchResult parametric_search(const Pipeline &pipeline, const AnomalyRegion &observed,
                               const Decomposition &decomposition, const SearchConfig &config) {
    const double sigma = decomposition.sigma();
    const double z_obs = decomposition.z_obs;
    SearchResult result;
    result.range = {std::min(-config.range_sigmas * sigma, z_obs - sigma),
                    std::max(config.range_sigmas * sigma, z_obs + sigma)};
    result.gamma = config.step_sigmas * sigma;

    const AffineVector line = decomposition.line();

    // The piece at z_obs is part of the truncation set by construction; its
    // region must reproduce the one detected on the concrete image.
    const auto at_obs = pipeline.region_and_interval(line, z_obs);
    if (!(at_obs.region == observed))
        throw ConsistencyError("propagated region at z_obs differs from the observed region");
    result.observed_piece = at_obs.interval;

    std::vector<FixedInterval> parts{intersect(at_obs.interval, result.range)};
    double z = result.range.lo;
    while (z <= result.range.hi) {
        if (++result.pieces > config.max_pieces)
            throw ResourceError("parametric search exceeded " + std::to_string(config.max_pieces) + " pieces",
                                (z - result.range.lo) / result.range.width());
        const auto piece = pipeline.region_and_interval(line, z);
        const auto &iv = piece.interval;
        if (iv.width() <= kWidthTolerance * std::max(1.0, std::abs(z))) {
            ++result.zero_width;
            z += result.gamma;
            continue;
        }
        if (piece.region == observed) {
            ++result.matched;
            parts.push_back(intersect(iv, result.range));
        }
        if (!iv.bounded_above())
            break;
        z = std::max(iv.hi, z) + result.gamma;
    }
    result.truncation = intervals_union(parts);
    if (!result.truncation.contains(z_obs))
        throw ConsistencyError("z_obs is not inside the computed truncation set");
    return result;
}

namespace {

// log P(T in set, |T| >= threshold) in standardised units when `threshold`
// is given, else log P(T in set).
double log_set_mass(const IntervalSet &set, double scale, std::optional<double> threshold) {
    std::vector<double> terms;
    for (const auto &iv : set.intervals()) {
        const double lo = iv.lo / scale, hi = iv.hi / scale;
        if (!threshold) {
            terms.push_back(normal::log_mass(lo, hi));
            continue;
        }
        const double t = *threshold;
        if (lo < -t)
            terms.push_back(normal::log_mass(lo, std::min(hi, -t)));
        if (hi > t)
            terms.push_back(normal::log_mass(std::max(lo, t), hi));
    }
    return normal::log_sum_exp(terms);
}

} // namespace

double selective_p(double z_obs, const TruncatedGaussian &tg) {
    if (!(tg.variance > 0.0))
        throw UnderflowError("truncated Gaussian needs a positive variance");
    const double scale = std::sqrt(tg.variance);
    const double log_den = log_set_mass(tg.truncation, scale, std::nullopt);
    if (!std::isfinite(log_den))
        throw UnderflowError("truncation mass underflow");
    const double log_num = log_set_mass(tg.truncation, scale, std::abs(z_obs) / scale);
    if (log_num == -kInf)
        return 0.0;
    return std::clamp(std::exp(log_num - log_den), 0.0, 1.0);
}

double naive_p(double z_obs, double sigma2) {
    if (!(sigma2 > 0.0))
        throw UnderflowError("naive p-value needs a positive variance");
    return std::min(1.0, 2.0 * normal::upper_tail(std::abs(z_obs) / std::sqrt(sigma2)));
}

double bonferroni_p(double naive, std::size_t pixels) {
    if (naive <= 0.0)
        return 0.0;
    const double log_p = static_cast<double>(pixels) * std::numbers::ln2 + std::log(naive);
    return log_p >= 0.0 ? 1.0 : std::exp(log_p);
}

double oc_p(double z_obs, double sigma2, const FixedInterval &zsub) {
    const FixedInterval parts[] = {zsub};
    return selective_p(z_obs, {sigma2, intervals_union(parts)});
}

double permutation_p(const TestInstance &instance, const Pipeline &pipeline,
                     std::span<const std::vector<std::size_t>> permutations) {
    if (permutations.empty())
        throw Error("permutation test needs at least one permutation");
    const auto observed = pipeline.region(instance.x);
    const double z_obs = std::abs(test_statistic(instance, observed));
    std::size_t exceed = 0;
    TestInstance permuted = instance;
    for (const auto &perm : permutations) {
        if (perm.size() != instance.pixels())
            throw ShapeError("permutation has the wrong length");
        for (std::size_t i = 0; i < perm.size(); ++i)
            permuted.x[i] = instance.x.at(perm[i]);
        const auto region = pipeline.region(permuted.x);
        const double z = region.empty() ? 0.0 : std::abs(test_statistic(permuted, region));
        if (z > z_obs)
            ++exceed;
    }
    return static_cast<double>(exceed) / static_cast<double>(permutations.size());
}

double permutation_p(const TestInstance &instance, const Pipeline &pipeline, int permutations,
                     std::uint64_t seed) {
    if (permutations < 1)
        throw Error("permutation test needs at least one permutation");
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> perms(static_cast<std::size_t>(permutations));
    for (auto &p : perms) {
        p.resize(instance.pixels());
        std::iota(p.begin(), p.end(), std::size_t{0});
        rng.shuffle(p);
    }
    return permutation_p(instance, pipeline, perms);
}

TestResult run_test(const TestInstance &instance, const Pipeline &pipeline, const TestOptions &options) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    instance.validate();
    if (instance.pixels() != pipeline.pixels())
        throw ShapeError("instance and pipeline sizes differ");

    TestResult r;
    r.plan_seed = pipeline.plan->seed;
    r.region = pipeline.region(instance.x);
    if (r.region.empty())
        throw UndefinedTestError("no anomaly detected; test undefined");

    const auto d = decompose(instance, r.region);
    r.z_obs = d.z_obs;
    r.sigma2 = d.sigma2;

    const auto t1 = clock::now();
    auto search = parametric_search(pipeline, r.region, d, options.search);
    r.seconds_search = std::chrono::duration<double>(clock::now() - t1).count();
    r.truncation = std::move(search.truncation);
    r.observed_piece = search.observed_piece;
    r.pieces = search.pieces;
    r.zero_width = search.zero_width;

    r.p_selective = selective_p(r.z_obs, {r.sigma2, r.truncation});
    r.p_naive = naive_p(r.z_obs, r.sigma2);
    r.p_bonferroni = bonferroni_p(r.p_naive, instance.pixels());
    r.p_oc = oc_p(r.z_obs, r.sigma2, r.observed_piece);
    if (options.permutations > 0)
        r.p_permutation = permutation_p(instance, pipeline, options.permutations, options.permutation_seed);
    r.seconds_total = std::chrono::duration<double>(clock::now() - t0).count();
    return r;
}

nlohmann::json to_json(const TestResult &r) {
    nlohmann::json intervals = nlohmann::json::array();
    for (const auto &iv : r.truncation.intervals())
        intervals.push_back({iv.lo, iv.hi});
    nlohmann::json j = {{"region", r.region.pixels},
                        {"lambda", r.region.lambda},
                        {"z_obs", r.z_obs},
                        {"sigma2", r.sigma2},
                        {"intervals", intervals},
                        {"p_selective", r.p_selective},
                        {"p_naive", r.p_naive},
                        {"p_bonferroni", r.p_bonferroni},
                        {"p_oc", r.p_oc},
                        {"plan_seed", r.plan_seed},
                        {"pieces", r.pieces},
                        {"zero_width_pieces", r.zero_width},
                        {"timings", {{"search_seconds", r.seconds_search}, {"total_seconds", r.seconds_total}}}};
    if (r.p_permutation)
        j["p_permutation"] = *r.p_permutation;
    return j;
}

} // namespace dal
