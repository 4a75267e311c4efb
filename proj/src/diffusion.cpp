#include "dal/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dal/rng.hpp"

namespace dal {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    for (std::size_t i = 0; i < betas_.size(); ++i) {
        const double b = betas_[i];
        if (!(b > 0.0 && b < 1.0))
            throw ScheduleError("beta_" + std::to_string(i + 1) + " = " + std::to_string(b) +
                                " is outside (0, 1)");
        if (i > 0 && !(b > betas_[i - 1]))
            throw ScheduleError("betas must be strictly increasing");
    }
    alphas_.resize(betas_.size() + 1);
    alphas_[0] = 1.0;
    for (std::size_t t = 1; t <= betas_.size(); ++t)
        alphas_[t] = alphas_[t - 1] * (1.0 - betas_[t - 1]);
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps <= 0)
        throw ScheduleError("schedule needs at least one step");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
        betas[static_cast<std::size_t>(i)] =
            steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
    return NoiseSchedule(std::move(betas));
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > steps())
        throw ScheduleError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
    return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const {
    if (t < 0 || t > steps())
        throw ScheduleError("timestep " + std::to_string(t) + " outside 0.." + std::to_string(steps()));
    return alphas_[static_cast<std::size_t>(t)];
}

std::vector<int> even_subsequence(int t_start, int count) {
    if (t_start < 0)
        throw ScheduleError("t_start must be non-negative");
    std::vector<int> tau;
    if (t_start == 0)
        return tau;
    if (count <= 0)
        throw ScheduleError("at least one reverse step is required when t_start > 0");
    if (count == 1)
        return {t_start};
    for (int i = 0; i < count; ++i) {
        const double v = 1.0 + static_cast<double>(t_start - 1) * i / (count - 1);
        const int r = static_cast<int>(std::lround(v));
        if (tau.empty() || r != tau.back())
            tau.push_back(r);
    }
    return tau;
}

double step_sigma(const NoiseSchedule &schedule, int t, int t_prev, double eta) {
    const double a = schedule.alpha(t);
    const double a_prev = schedule.alpha(t_prev);
    if (eta == 0.0 || a_prev == 1.0)
        return 0.0;
    return eta * std::sqrt((1.0 - a_prev) / (1.0 - a)) * std::sqrt(1.0 - a / a_prev);
}

std::pair<int, int> ReconstructionPlan::step_timesteps(std::size_t i) const {
    const std::size_t s = tau.size();
    if (i >= s)
        throw ScheduleError("reverse step index out of range");
    const int t = tau[s - 1 - i];
    const int t_prev = (i + 1 < s) ? tau[s - 2 - i] : 0;
    return {t, t_prev};
}

ReconstructionPlan make_plan(const NoiseSchedule &schedule, std::size_t pixels, int t_start, int steps,
                             double eta, std::uint64_t seed) {
    if (t_start > schedule.steps())
        throw ScheduleError("t_start exceeds the number of diffusion steps");
    if (!(eta >= 0.0 && eta <= 1.0))
        throw ScheduleError("eta must lie in [0, 1]");
    ReconstructionPlan plan;
    plan.seed = seed;
    plan.t_start = t_start;
    plan.tau = even_subsequence(t_start, steps);
    plan.eta = eta;
    Rng rng(seed);
    plan.forward_noise = rng.normal_vector(pixels);
    for (std::size_t i = 0; i < plan.tau.size(); ++i)
        plan.step_noise.push_back(rng.normal_vector(pixels));
    for (std::size_t i = 0; i < plan.tau.size(); ++i) {
        auto [t, t_prev] = plan.step_timesteps(i);
        const double sigma = step_sigma(schedule, t, t_prev, eta);
        if (1.0 - schedule.alpha(t_prev) - sigma * sigma < -1e-12)
            throw ScheduleError("eta/tau combination gives a negative variance at step " +
                                std::to_string(t));
    }
    return plan;
}

nlohmann::json plan_to_json(const ReconstructionPlan &plan, const ScheduleSpec &schedule) {
    return {{"seed", plan.seed},
            {"T", schedule.steps},
            {"beta_start", schedule.beta_start},
            {"beta_end", schedule.beta_end},
            {"t_start", plan.t_start},
            {"tau", plan.tau},
            {"eta", plan.eta},
            {"pixels", plan.pixels()}};
}

ReconstructionPlan plan_from_json(const nlohmann::json &doc, ScheduleSpec *schedule_out) {
    ScheduleSpec spec;
    try {
        spec.steps = doc.at("T").get<int>();
        spec.beta_start = doc.at("beta_start").get<double>();
        spec.beta_end = doc.at("beta_end").get<double>();
        const auto tau = doc.at("tau").get<std::vector<int>>();
        const auto schedule = spec.build();
        auto plan = make_plan(schedule, doc.at("pixels").get<std::size_t>(), doc.at("t_start").get<int>(),
                              static_cast<int>(tau.size()), doc.at("eta").get<double>(),
                              doc.at("seed").get<std::uint64_t>());
        if (plan.tau != tau) {
            // Custom subsequence: keep it, the frozen draws do not depend on it.
            plan.tau = tau;
        }
        if (schedule_out)
            *schedule_out = spec;
        return plan;
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("plan: malformed document: ") + e.what());
    }
}

std::vector<double> forward_noise(std::span<const double> x, const ReconstructionPlan &plan,
                                  const NoiseSchedule &schedule) {
    if (x.size() != plan.pixels())
        throw ShapeError("forward_noise: image and plan sizes differ");
    const double a = schedule.alpha(plan.t_start);
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = sa * x[i] + sn * plan.forward_noise[i];
    return out;
}

namespace {

// x_prev = keep * x_t + eps_weight * eps_theta(x_t) + sigma * noise
struct StepCoefficients {
    int t;
    double keep;
    double eps_weight;
    double sigma;
};

StepCoefficients step_coefficients(std::size_t step, const ReconstructionPlan &plan,
                                   const NoiseSchedule &schedule) {
    auto [t, t_prev] = plan.step_timesteps(step);
    const double a = schedule.alpha(t);
    const double a_prev = schedule.alpha(t_prev);
    const double sigma = step_sigma(schedule, t, t_prev, plan.eta);
    double rest = 1.0 - a_prev - sigma * sigma;
    if (rest < 0.0) {
        if (rest < -1e-12)
            throw ScheduleError("eta/tau combination gives a negative variance at step " + std::to_string(t));
        rest = 0.0;
    }
    const double keep = std::sqrt(a_prev / a);
    const double eps_weight = std::sqrt(rest) - std::sqrt(a_prev) * std::sqrt(1.0 - a) / std::sqrt(a);
    return {t, keep, eps_weight, sigma};
}

} // namespace

std::vector<double> reverse_step(std::span<const double> x_t, std::size_t step, const ReconstructionPlan &plan,
                                 const NoiseSchedule &schedule, const UNet &net,
                                 std::vector<std::uint8_t> *trace) {
    if (x_t.size() != plan.pixels())
        throw ShapeError("reverse_step: image and plan sizes differ");
    const auto c = step_coefficients(step, plan, schedule);
    const auto eps = net.predict_noise(x_t, c.t, trace);
    const auto &noise = plan.step_noise[step];
    std::vector<double> out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i)
        out[i] = c.keep * x_t[i] + c.eps_weight * eps[i] + c.sigma * noise[i];
    return out;
}

std::vector<double> reconstruct(std::span<const double> x, const ReconstructionPlan &plan,
                                const NoiseSchedule &schedule, const UNet &net, std::vector<std::uint8_t> *trace) {
    auto cur = forward_noise(x, plan, schedule);
    for (std::size_t i = 0; i < plan.reverse_steps(); ++i)
        cur = reverse_step(cur, i, plan, schedule, net, trace);
    return cur;
}

AffinePiece reconstruct_affine(const AffineVector &line, double anchor_z, FixedInterval current,
                               const ReconstructionPlan &plan, const NoiseSchedule &schedule, const UNet &net) {
    const std::size_t n = plan.pixels();
    if (line.size() != n)
        throw ShapeError("reconstruct_affine: line and plan sizes differ");
    if (!current.contains(anchor_z))
        throw ConsistencyError("reconstruct_affine: anchor outside the current interval");

    const double a = schedule.alpha(plan.t_start);
    AffinePiece piece{
        affine_linear(LinearOperator::scale_shift(n, std::sqrt(a), [&] {
                          std::vector<double> shift(plan.forward_noise);
                          for (auto &v : shift)
                              v *= std::sqrt(1.0 - a);
                          return shift;
                      }()),
                      line),
        current};

    for (std::size_t step = 0; step < plan.reverse_steps(); ++step) {
        const auto c = step_coefficients(step, plan, schedule);
        auto eps = net.predict_noise_affine(piece.line, c.t, anchor_z, piece.interval);
        piece.interval = eps.interval;
        const auto &noise = plan.step_noise[step];
        for (std::size_t i = 0; i < n; ++i) {
            piece.line.constant[i] = c.keep * piece.line.constant[i] + c.eps_weight * eps.line.constant[i] +
                                     c.sigma * noise[i];
            piece.line.coefficient[i] = c.keep * piece.line.coefficient[i] + c.eps_weight * eps.line.coefficient[i];
        }
    }
    return piece;
}

} // namespace dal
