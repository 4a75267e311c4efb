#pragma once
// Simulation harness for the type-I error, power and robustness studies.
//
// A study is a list of cells (one per covariance / signal strength / noise
// family and distance). Every trial of a cell draws its images from a child
// seed of (master seed, trial index), so results do not depend on the
// number of worker threads. Trials whose detected region is empty, or that
// fail, are excluded from the rates and counted separately.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dal/covariance.hpp"
#include "dal/diffusion.hpp"
#include "dal/families.hpp"
#include "dal/inference.hpp"
#include "dal/unet.hpp"

namespace dal {

// `count` independent draws from N(0, Sigma).
std::vector<std::vector<double>> sample_noise(const CovarianceModel &cov, std::size_t count,
                                              std::uint64_t seed);

// Trains a noise predictor on `images` draws from N(0, Sigma), the normal
// images of the synthetic studies. The dataset seed is derived from `seed`,
// the trainer's own seed from hyper.seed.
TrainResult train_normal_model(const UNetConfig &config, const CovarianceModel &cov, std::size_t images,
                               const ScheduleSpec &schedule, const TrainHyperparams &hyper, std::uint64_t seed);

// Network configuration used by the harness for n-pixel images.
UNetConfig harness_net_config(std::size_t n);

// Square anomaly patch of side ceil(sqrt(0.1 n)) with mean `delta`.
struct SignalSpec {
    double delta = 0.0;
    std::vector<std::size_t> pixels; // sorted

    static int patch_side(std::size_t n);
    static SignalSpec random(std::size_t n, double delta, Rng &rng);
    bool overlaps(const AnomalyRegion &region) const;
};

struct PipelineSettings {
    ScheduleSpec schedule;
    double lambda = 0.8;
    int kernel = 3;
    int t_prime = 460;
    int steps = 5;
    double eta = 1.0;

    nlohmann::json to_json() const;
};

struct StudyConfig {
    std::size_t n = 64;
    std::string cov = "iid";
    PipelineSettings pipeline;
    std::vector<double> alphas{0.05, 0.10};
    int trials = 500;
    // When positive, trials keep being drawn (indices trials, trials+1, ...)
    // until this many valid ones exist; `trials` is then only the first batch.
    int valid_target = 0;
    int max_draws = 100000;
    std::uint64_t seed = 1;
    int permutations = 0; // 0 disables the permutation baseline
    SearchConfig search;
    int threads = 0;      // 0 = hardware concurrency

    nlohmann::json to_json() const;
};

// Where the noise of a trial comes from.
struct NoiseSource {
    std::optional<StandardizedFamily> family; // unset = Gaussian with the study covariance
};

enum class TrialStatus { ok, empty, error };

struct TrialRecord {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    TrialStatus status = TrialStatus::ok;
    std::string message;
    std::size_t region_size = 0;
    bool overlap = false;
    double z_obs = 0.0;
    double sigma2 = 0.0;
    double p_selective = 1.0;
    double p_oc = 1.0;
    double p_naive = 1.0;
    double p_bonferroni = 1.0;
    std::optional<double> p_permutation;
    std::size_t intervals = 0;
    std::size_t pieces = 0;
};

struct Cell {
    std::string group;   // covariance name or noise family
    double setting = 0;  // n, delta or W1 distance
    bool has_signal = false;
    std::vector<TrialRecord> trials; // valid trials only, by index
    std::size_t drawn = 0;
    std::size_t excluded_empty = 0;
    std::size_t excluded_error = 0;
};

struct StudyResult {
    std::string kind; // type1 | power | robustness
    StudyConfig config;
    std::vector<Cell> cells;
    nlohmann::json extra = nlohmann::json::object(); // calibration etc.
};

// Runs one trial: draws x (noise plus signal) and x_ref, a plan seed and the
// signal position from the trial seed, then runs every test.
TrialRecord run_trial(const StudyConfig &config, const UNet &net, const NoiseSource &noise, double delta,
                      std::size_t index);

Cell run_cell(const StudyConfig &config, const UNet &net, const NoiseSource &noise, const std::string &group,
              double setting, double delta, bool has_signal);

StudyResult run_type1(const StudyConfig &config, const UNet &net);
StudyResult run_power(const StudyConfig &config, const UNet &net, const std::vector<double> &deltas);
StudyResult run_robustness(const StudyConfig &config, const UNet &net, const std::vector<Family> &families,
                           const std::vector<double> &distances);

struct RateRow {
    std::string group;
    double setting = 0;
    std::string method;
    double alpha = 0;
    std::string basis; // "all" or, for power, "overlap"
    std::size_t count = 0;
    std::size_t rejections = 0;
    double rate = 0;
    double ci_lo = 0;
    double ci_hi = 0;
};

std::vector<std::string> study_methods(const StudyConfig &config);
double method_p(const TrialRecord &record, const std::string &method);
std::vector<RateRow> summarize(const StudyResult &result);

// summary.csv, trials.csv and config.json in `dir` (created if needed).
// Robustness studies also get one trials.csv per family subdirectory.
void write_study(const StudyResult &result, const std::filesystem::path &dir);
std::string summary_csv(const StudyResult &result);
std::string trials_csv(const StudyResult &result, const std::vector<const Cell *> &cells);

// Brute-force audit of a parametric search: the concrete pipeline is run on
// a z grid over the search range and its region compared with membership in
// the computed truncation set.
struct OracleReport {
    std::size_t grid_points = 0;
    std::size_t agreements = 0;
    std::size_t disagreements_far = 0; // farther than 2 gamma from every endpoint
    double max_endpoint_distance = 0;  // over disagreements
    bool z_obs_inside = false;
    double gamma = 0;
    std::size_t pieces = 0;
    std::size_t intervals = 0;

    double agreement() const;
    nlohmann::json to_json() const;
};

OracleReport oracle_check(const TestInstance &instance, const Pipeline &pipeline, const SearchConfig &search,
                          double grid_step);

} // namespace dal
