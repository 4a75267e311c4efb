#pragma once
// Noise schedule, forward noising and the (accelerated) reverse process.
//
// With every random draw frozen inside a ReconstructionPlan, reconstruction
// is a deterministic piecewise-linear map of the input image, which is what
// reconstruct_affine exploits.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dal/pwl.hpp"
#include "dal/unet.hpp"

namespace dal {

class NoiseSchedule {
  public:
    // Requires 0 < beta_1 < ... < beta_T < 1.
    explicit NoiseSchedule(std::vector<double> betas);
    static NoiseSchedule linear(int steps, double beta_start, double beta_end);

    int steps() const { return static_cast<int>(betas_.size()); }
    // 1-based, as in the usual notation.
    double beta(int t) const;
    // Cumulative product of (1 - beta_s) for s <= t; alpha(0) = 1.
    double alpha(int t) const;
    const std::vector<double> &betas() const { return betas_; }

  private:
    std::vector<double> betas_;
    std::vector<double> alphas_; // alphas_[t], t = 0..T
};

struct ScheduleSpec {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;

    NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
};

// Evenly spaced timesteps from 1 to t_start inclusive, rounded, ascending,
// without duplicates. Empty when t_start == 0.
std::vector<int> even_subsequence(int t_start, int count);

// Standard deviation of the fresh noise injected when jumping t -> t_prev.
double step_sigma(const NoiseSchedule &schedule, int t, int t_prev, double eta);

struct ReconstructionPlan {
    std::uint64_t seed = 0;
    int t_start = 0;
    std::vector<int> tau; // ascending, last element == t_start
    double eta = 1.0;
    std::vector<double> forward_noise;
    // step_noise[i] belongs to reverse step i (see step_timesteps).
    std::vector<std::vector<double>> step_noise;

    std::size_t pixels() const { return forward_noise.size(); }
    std::size_t reverse_steps() const { return tau.size(); }
    // (t, t_prev) of reverse step i; step 0 starts at t_start, the last step
    // lands on 0.
    std::pair<int, int> step_timesteps(std::size_t i) const;
};

ReconstructionPlan make_plan(const NoiseSchedule &schedule, std::size_t pixels, int t_start,
                             int steps, double eta, std::uint64_t seed);

// Plans are serialised by their generating parameters; the frozen draws are
// regenerated from the seed on load.
nlohmann::json plan_to_json(const ReconstructionPlan &plan, const ScheduleSpec &schedule);
ReconstructionPlan plan_from_json(const nlohmann::json &doc, ScheduleSpec *schedule_out = nullptr);

std::vector<double> forward_noise(std::span<const double> x, const ReconstructionPlan &plan,
                                  const NoiseSchedule &schedule);

std::vector<double> reverse_step(std::span<const double> x_t, std::size_t step,
                                 const ReconstructionPlan &plan, const NoiseSchedule &schedule,
                                 const UNet &net, std::vector<std::uint8_t> *trace = nullptr);

std::vector<double> reconstruct(std::span<const double> x, const ReconstructionPlan &plan,
                                const NoiseSchedule &schedule, const UNet &net,
                                std::vector<std::uint8_t> *trace = nullptr);

AffinePiece reconstruct_affine(const AffineVector &line, double anchor_z, FixedInterval current,
                               const ReconstructionPlan &plan, const NoiseSchedule &schedule,
                               const UNet &net);

} // namespace dal
