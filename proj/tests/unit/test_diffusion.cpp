#include <doctest.h>

#include <cmath>

#include "dal/diffusion.hpp"
#include "dal/errors.hpp"
#include "support.hpp"

using namespace dal;

TEST_CASE("alpha is the running product of 1 - beta") {
    NoiseSchedule s({0.1, 0.2});
    CHECK(s.alpha(0) == 1.0);
    CHECK(s.alpha(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.alpha(2) == doctest::Approx(0.72).epsilon(1e-15));

    const auto lin = ScheduleSpec{}.build();
    CHECK(lin.steps() == 1000);
    CHECK(lin.beta(1) == 1e-4);
    CHECK(lin.beta(1000) == doctest::Approx(2e-2).epsilon(1e-14));
    for (int t = 1; t <= 1000; ++t) {
        CHECK(lin.alpha(t) == lin.alpha(t - 1) * (1.0 - lin.beta(t)));
        CHECK(lin.alpha(t) < lin.alpha(t - 1));
    }
}

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(NoiseSchedule({0.2, 0.1}), ScheduleError);
    CHECK_THROWS_AS(NoiseSchedule({0.0, 0.1}), ScheduleError);
    CHECK_THROWS_AS(NoiseSchedule({0.5, 1.0}), ScheduleError);
    CHECK_THROWS_AS(NoiseSchedule({0.1}).alpha(2), ScheduleError);
}

TEST_CASE("evenly spaced subsequence") {
    CHECK(even_subsequence(460, 5) == std::vector<int>{1, 116, 231, 345, 460});
    CHECK(even_subsequence(3, 5) == std::vector<int>{1, 2, 3});
    CHECK(even_subsequence(7, 1) == std::vector<int>{7});
    CHECK(even_subsequence(0, 5).empty());
}

TEST_CASE("plan validation") {
    const auto s = ScheduleSpec{}.build();
    CHECK_THROWS_AS(make_plan(s, 4, 1001, 5, 1.0, 1), ScheduleError);
    CHECK_THROWS_AS(make_plan(s, 4, 460, 5, 1.5, 1), ScheduleError);
    const auto p = make_plan(s, 4, 460, 5, 0.0, 1);
    for (std::size_t i = 0; i < p.reverse_steps(); ++i) {
        auto [t, t_prev] = p.step_timesteps(i);
        CHECK(step_sigma(s, t, t_prev, p.eta) == 0.0);
    }
    CHECK(p.step_timesteps(0) == std::pair{460, 345});
    CHECK(p.step_timesteps(4) == std::pair{1, 0});
}

TEST_CASE("forward noising") {
    const auto s = ScheduleSpec{}.build();
    auto plan = make_plan(s, 16, 460, 5, 1.0, 2);
    Rng rng(2);
    const auto x = rng.normal_vector(16), y = rng.normal_vector(16);
    const double sa = std::sqrt(s.alpha(460));

    const auto fx = forward_noise(x, plan, s);
    const auto fy = forward_noise(y, plan, s);
    std::vector<double> xy(16);
    for (int i = 0; i < 16; ++i)
        xy[i] = x[i] + y[i];
    const auto fxy = forward_noise(xy, plan, s);
    for (int i = 0; i < 16; ++i)
        CHECK(fxy[i] - fy[i] == doctest::Approx(sa * x[i]).epsilon(1e-12));

    std::fill(plan.forward_noise.begin(), plan.forward_noise.end(), 0.0);
    const auto f0 = forward_noise(x, plan, s);
    for (int i = 0; i < 16; ++i)
        CHECK(f0[i] == sa * x[i]);
    (void)fx;
}

TEST_CASE("deterministic sampling ignores the step noise") {
    const auto s = ScheduleSpec{}.build();
    UNet net(random_weights(UNetConfig{}, 3));
    auto a = make_plan(s, 64, 460, 5, 0.0, 3);
    auto b = make_plan(s, 64, 460, 5, 0.0, 4);
    b.forward_noise = a.forward_noise;
    Rng rng(3);
    const auto x = rng.normal_vector(64);
    CHECK(reconstruct(x, a, s, net) == reconstruct(x, b, s, net));
    CHECK(reverse_step(x, 1, a, s, net) == reverse_step(x, 1, a, s, net));
}

TEST_CASE("zero network gives the closed-form reverse step") {
    const auto s = ScheduleSpec{}.build();
    UNet net(zero_weights(UNetConfig{}));
    const auto plan = make_plan(s, 64, 460, 5, 1.0, 5);
    Rng rng(5);
    const auto x = rng.normal_vector(64);
    for (std::size_t step = 0; step < plan.reverse_steps(); ++step) {
        auto [t, t_prev] = plan.step_timesteps(step);
        const double sigma = step_sigma(s, t, t_prev, 1.0);
        const auto out = reverse_step(x, step, plan, s, net);
        for (int i = 0; i < 64; ++i)
            CHECK(out[i] == doctest::Approx(std::sqrt(s.alpha(t_prev) / s.alpha(t)) * x[i] +
                                            sigma * plan.step_noise[step][i])
                                .epsilon(1e-12));
    }
}

TEST_CASE("two-step chain with a zero network matches the hand-unrolled formula") {
    NoiseSchedule s({0.01, 0.02, 0.03, 0.04, 0.05, 0.06});
    UNet net(zero_weights(UNetConfig{}));
    const auto plan = make_plan(s, 64, 6, 2, 1.0, 6);
    REQUIRE(plan.tau == std::vector<int>{1, 6});
    Rng rng(6);
    const auto x = rng.normal_vector(64);
    const auto out = reconstruct(x, plan, s, net);

    const double a6 = s.alpha(6), a1 = s.alpha(1);
    // 6 -> 1 with fresh noise, then 1 -> 0 which injects none.
    const double sig = std::sqrt((1 - a1) / (1 - a6)) * std::sqrt(1 - a6 / a1);
    for (int i = 0; i < 64; ++i) {
        const double x6 = std::sqrt(a6) * x[i] + std::sqrt(1 - a6) * plan.forward_noise[i];
        const double x1 = std::sqrt(a1 / a6) * x6 + sig * plan.step_noise[0][i];
        const double x0 = std::sqrt(1.0 / a1) * x1;
        CHECK(out[i] == doctest::Approx(x0).epsilon(1e-12));
    }
}

TEST_CASE("empty subsequence reconstructs the identity") {
    const auto s = ScheduleSpec{}.build();
    UNet net(random_weights(UNetConfig{}, 7));
    const auto plan = make_plan(s, 64, 0, 5, 1.0, 7);
    Rng rng(7);
    const auto x = rng.normal_vector(64);
    CHECK(reconstruct(x, plan, s, net) == x);
}

TEST_CASE("reconstruction is a pure function of input, plan and weights") {
    const auto s = ScheduleSpec{}.build();
    UNet net(random_weights(UNetConfig{}, 8));
    const auto p1 = make_plan(s, 64, 460, 5, 1.0, 8);
    const auto p2 = make_plan(s, 64, 460, 5, 1.0, 8);
    Rng rng(8);
    const auto x = rng.normal_vector(64);
    CHECK(reconstruct(x, p1, s, net) == reconstruct(x, p2, s, net));
}

TEST_CASE("affine reconstruction of a constant line keeps the interval") {
    const auto s = ScheduleSpec{}.build();
    UNet net(random_weights(UNetConfig{}, 9));
    const auto plan = make_plan(s, 64, 460, 5, 1.0, 9);
    Rng rng(9);
    const auto x = rng.normal_vector(64);
    const FixedInterval current{-1.0, 1.0};
    const auto p = reconstruct_affine(AffineVector::fixed(x), 0.0, current, plan, s, net);
    CHECK(p.interval == current);
    CHECK(test::max_abs_diff(p.line.constant, reconstruct(x, plan, s, net)) < 1e-12);
}

TEST_CASE("affine reconstruction is exact inside its interval") {
    const auto s = ScheduleSpec{}.build();
    Rng rng(10);
    for (auto [t_start, steps] : {std::pair{460, 5}, std::pair{20, 20}}) {
        UNet net(random_weights(UNetConfig{}, 10 + t_start));
        const auto plan = make_plan(s, 64, t_start, steps, 1.0, 10);
        const auto line = test::random_line(rng, 64);
        const double anchor = 0.3;
        const auto p = reconstruct_affine(line, anchor, FixedInterval::whole(), plan, s, net);
        REQUIRE(p.interval.contains(anchor));
        double worst = 0.0;
        for (int k = 0; k < 20; ++k) {
            const double z = test::interior_point(p.interval, anchor, rng);
            worst = std::max(worst, test::max_abs_diff(p.line.eval(z), reconstruct(line.eval(z), plan, s, net)));
        }
        CHECK(worst < 1e-8);
    }
}

TEST_CASE("affine interval ends where bisection finds the first activation flip") {
    const auto s = ScheduleSpec{}.build();
    UNet net(random_weights(UNetConfig{}, 11));
    Rng rng(11);
    int checked = 0;
    for (int rep = 0; rep < 4; ++rep) {
        const auto plan = make_plan(s, 64, 460, 5, 1.0, 100 + rep);
        const auto line = test::random_line(rng, 64);
        const auto p = reconstruct_affine(line, 0.0, FixedInterval::whole(), plan, s, net);
        auto trace = [&](double z) {
            std::vector<std::uint8_t> tr;
            reconstruct(line.eval(z), plan, s, net, &tr);
            return tr;
        };
        const auto base = trace(0.0);
        for (int side : {-1, 1}) {
            const double end = side > 0 ? p.interval.hi : p.interval.lo;
            if (std::isinf(end))
                continue;
            double inside = 0.0, outside = end + side * 1e-3;
            REQUIRE(trace(outside) != base);
            while (std::abs(outside - inside) > 1e-9) {
                const double mid = 0.5 * (inside + outside);
                (trace(mid) == base ? inside : outside) = mid;
            }
            CHECK(std::abs(outside - end) < 1e-6);
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("plan JSON round trip regenerates the frozen draws") {
    const ScheduleSpec spec;
    const auto plan = make_plan(spec.build(), 64, 460, 5, 1.0, 12);
    const auto doc = nlohmann::json::parse(plan_to_json(plan, spec).dump());
    ScheduleSpec back_spec;
    const auto back = plan_from_json(doc, &back_spec);
    CHECK(back.tau == plan.tau);
    CHECK(back.forward_noise == plan.forward_noise);
    CHECK(back.step_noise == plan.step_noise);
    CHECK(back_spec.beta_end == spec.beta_end);
    CHECK_THROWS_AS(plan_from_json(nlohmann::json{{"seed", 1}}), FormatError);
}
