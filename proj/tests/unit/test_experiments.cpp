#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <boost/math/tools/roots.hpp>

#include "dal/errors.hpp"
#include "dal/experiments.hpp"
#include "dal/normal.hpp"
#include "support.hpp"

using namespace dal;

namespace {

// W1 in quantile form, int_0^1 |Q(u) - Phi^{-1}(u)| du, written as
// int |Q(Phi(s)) - s| phi(s) ds with Q found by root bracketing on the CDF.
double w1_quantile_form(Family family, double param) {
    const StandardizedFamily dist(family, param);
    auto quantile = [&](double u) {
        boost::uintmax_t iters = 200;
        auto [lo, hi] = boost::math::tools::toms748_solve([&](double x) { return dist.cdf(x) - u; }, -1e3, 1e3,
                                                          boost::math::tools::eps_tolerance<double>(50), iters);
        return 0.5 * (lo + hi);
    };
    using Quad = boost::math::quadrature::gauss_kronrod<double, 31>;
    const auto f = [&](double s) { return std::abs(quantile(normal::cdf(s)) - s) * normal::pdf(s); };
    double total = 0.0;
    for (int p = -7; p < 7; ++p)
        total += Quad::integrate(f, p, p + 1, 10, 1e-10);
    return total;
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

StudyConfig small_study(int trials) {
    StudyConfig c;
    c.n = 64;
    c.trials = trials;
    c.seed = 11;
    c.threads = 1;
    return c;
}

} // namespace

TEST_CASE("noise draws have the requested covariance") {
    for (auto cov : {CovarianceModel::identity(64), CovarianceModel::ar(64)}) {
        const auto draws = sample_noise(cov, 4000, 1);
        double var = 0.0, lag1 = 0.0, lag2 = 0.0;
        std::size_t cnt = 0;
        for (const auto &v : draws)
            for (std::size_t i = 0; i + 2 < v.size(); ++i, ++cnt) {
                var += v[i] * v[i];
                lag1 += v[i] * v[i + 1];
                lag2 += v[i] * v[i + 2];
            }
        CHECK(var / cnt == doctest::Approx(1.0).epsilon(0.02));
        CHECK(lag1 / cnt == doctest::Approx(cov.entry(0, 1)).epsilon(0.02).scale(1.0));
        CHECK(lag2 / cnt == doctest::Approx(cov.entry(0, 2)).epsilon(0.02).scale(1.0));
    }
    CHECK(sample_noise(CovarianceModel::ar(64), 3, 5) == sample_noise(CovarianceModel::ar(64), 3, 5));
}

TEST_CASE("families are standardized and Gaussian at one end") {
    for (auto f : kAllFamilies) {
        const auto range = family_range(f);
        CHECK(wasserstein1_to_std_normal(f, range.gaussian) < 1e-10);
        CHECK(parse_family(family_name(f)) == f);

        const double mid = 0.5 * (range.gaussian + range.far);
        const StandardizedFamily dist(f, mid);
        Rng rng(3);
        double m1 = 0.0, m2 = 0.0;
        const int draws = 200000;
        for (int i = 0; i < draws; ++i) {
            const double v = dist.sample(rng);
            m1 += v;
            m2 += v * v;
        }
        CHECK(m1 / draws == doctest::Approx(0.0).scale(1.0).epsilon(0.01));
        CHECK(m2 / draws == doctest::Approx(1.0).epsilon(0.05));
        CHECK(dist.cdf(-40.0) < 1e-5);
        CHECK(dist.cdf(40.0) > 1.0 - 1e-5);
        CHECK(dist.cdf(-0.5) < dist.cdf(0.5));
    }
    CHECK(parse_family("emg") == Family::exp_modified_gaussian);
    CHECK_THROWS(parse_family("cauchy"));
}

TEST_CASE("W1 agrees with the quantile form") {
    for (auto f : kAllFamilies) {
        const auto range = family_range(f);
        const double p = range.gaussian + 0.3 * (range.far - range.gaussian);
        CHECK(wasserstein1_to_std_normal(f, p) == doctest::Approx(w1_quantile_form(f, p)).epsilon(1e-5));
    }
}

TEST_CASE("calibration round trip") {
    const double p = calibrate_family(Family::exp_modified_gaussian, 0.04);
    CHECK(std::abs(wasserstein1_to_std_normal(Family::exp_modified_gaussian, p) - 0.04) < 1e-4);
    CHECK_THROWS_AS(calibrate_family(Family::exp_modified_gaussian, 10.0), CalibrationError);
    CHECK_THROWS_AS(calibrate_family(Family::exp_modified_gaussian, -1.0), CalibrationError);
    for (auto f : kAllFamilies)
        CHECK(calibrate_family(f, 0.0) == family_range(f).gaussian);
}

TEST_CASE("signal patch") {
    CHECK(SignalSpec::patch_side(64) == 3);
    CHECK(SignalSpec::patch_side(256) == 6);
    Rng rng(4);
    for (int k = 0; k < 50; ++k) {
        const auto s = SignalSpec::random(64, 2.0, rng);
        REQUIRE(s.pixels.size() == 9);
        const auto y0 = s.pixels.front() / 8, x0 = s.pixels.front() % 8;
        for (std::size_t i = 0; i < 9; ++i)
            CHECK(s.pixels[i] == (y0 + i / 3) * 8 + x0 + i % 3);
        CHECK(s.overlaps(AnomalyRegion{{s.pixels[4]}, 0.8}));
        CHECK_FALSE(s.overlaps(AnomalyRegion{}));
    }
}

TEST_CASE("studies are reproducible and thread-count independent") {
    const UNet net(random_weights(harness_net_config(64), 21));
    auto cfg = small_study(6);
    const auto one = run_type1(cfg, net);
    cfg.threads = 3;
    const auto three = run_type1(cfg, net);
    CHECK(summary_csv(one) == summary_csv(three));
    CHECK(trials_csv(one, {&one.cells[0]}) == trials_csv(three, {&three.cells[0]}));

    // Signal strength zero reproduces the null study trial by trial.
    const auto power = run_power(cfg, net, {0.0});
    REQUIRE(power.cells[0].trials.size() == one.cells[0].trials.size());
    for (std::size_t i = 0; i < one.cells[0].trials.size(); ++i)
        CHECK(power.cells[0].trials[i].p_selective == one.cells[0].trials[i].p_selective);

    const auto &cell = one.cells[0];
    CHECK(cell.drawn == 6);
    CHECK(cell.trials.size() + cell.excluded_empty + cell.excluded_error == cell.drawn);
}

TEST_CASE("valid target keeps drawing") {
    const UNet net(random_weights(harness_net_config(64), 21));
    auto cfg = small_study(2);
    cfg.valid_target = 5;
    const auto r = run_type1(cfg, net);
    CHECK(r.cells[0].trials.size() == 5);
    CHECK(r.cells[0].drawn >= 5);
    CHECK(r.cells[0].trials.back().index + 1 == r.cells[0].drawn);
}

TEST_CASE("study CSV and config files") {
    const UNet net(random_weights(harness_net_config(64), 21));
    auto cfg = small_study(4);
    const auto r = run_power(cfg, net, {1.0, 3.0});
    const auto dir = std::filesystem::temp_directory_path() / "dal_unit_study";
    std::filesystem::remove_all(dir);
    write_study(r, dir);

    const auto summary = slurp(dir / "summary.csv");
    std::istringstream lines(summary);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "group,setting,method,alpha,basis,count,rejections,rejection_rate,ci_lo,ci_hi");
    int rows = 0, footers = 0;
    while (std::getline(lines, line))
        (line.starts_with("#") ? footers : rows)++;
    // 2 deltas x 4 methods x 2 alphas x (all, overlap)
    CHECK(rows == 32);
    CHECK(footers == 2);
    CHECK(summary.find("# group=iid setting=3 drawn=4") != std::string::npos);

    const auto trials = slurp(dir / "trials.csv");
    std::size_t valid = r.cells[0].trials.size() + r.cells[1].trials.size();
    CHECK(static_cast<std::size_t>(std::count(trials.begin(), trials.end(), '\n')) == valid + 1);

    const auto doc = nlohmann::json::parse(slurp(dir / "config.json"));
    CHECK(doc["kind"] == "power");
    CHECK(doc["cells"].size() == 2);
    CHECK(doc["config"]["pipeline"]["tprime"] == 460);

    for (const auto &row : summarize(r)) {
        CHECK(row.ci_lo <= row.rate);
        CHECK(row.rate <= row.ci_hi);
    }
    std::filesystem::remove_all(dir);
}
