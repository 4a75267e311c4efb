#pragma once
// Piecewise-linear U-Net noise predictor.
//
// Layout (side S, widths w0 < w1 < w2):
//
//   enc0: conv(1  -> w0) @ S     -----------------------------.
//   enc1: conv(w0 -> w1) @ S/2 after 2x2 average pooling  --.  |
//   enc2: conv(w1 -> w2) @ S/4 after 2x2 average pooling -. |  |
//   mid : conv(w2 -> w2) @ S/4                            | |  |
//   dec2: conv(w2+w2 -> w2) @ S/4  <-- skip from enc2 ----' |  |
//   dec1: conv(w2+w1 -> w1) @ S/2  <-- skip from enc1 ------'  |
//   dec0: conv(w1+w0 -> w0) @ S    <-- skip from enc0 ---------'
//   out : conv(w0 -> 1)    @ S
//
// Every block except `out` adds a timestep bias and applies ReLU. Upsampling
// replicates pixels. The timestep bias is a linear map of a sinusoidal
// embedding, so it never depends on the input image.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dal/errors.hpp"
#include "dal/pwl.hpp"

namespace dal {

struct UNetConfig {
    int image_side = 8;
    std::vector<int> channel_widths{8, 16, 32};
    int kernel_size = 3;
    int time_embed_dim = 16;

    std::size_t pixels() const { return static_cast<std::size_t>(image_side) * image_side; }
    void validate() const;

    friend bool operator==(const UNetConfig &, const UNetConfig &) = default;
};

struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data; // row-major

    std::size_t numel() const;
};

struct Weights {
    UNetConfig config;
    std::vector<Tensor> tensors;

    const Tensor &at(const std::string &name) const;
    Tensor &at(const std::string &name);
    std::size_t parameter_count() const;
};

// Tensor names and shapes implied by a configuration, in canonical order.
std::vector<Tensor> weight_layout(const UNetConfig &config);

Weights zero_weights(const UNetConfig &config);
// Uniform in +-1/sqrt(fan_in) for every tensor, biases included.
Weights random_weights(const UNetConfig &config, std::uint64_t seed);

nlohmann::json weights_to_json(const Weights &weights);
Weights weights_from_json(const nlohmann::json &doc);
void save_weights(const Weights &weights, const std::filesystem::path &path);
Weights load_weights(const std::filesystem::path &path);

std::vector<double> sinusoidal_embedding(int t, int dim);

// Per-block additive biases for one timestep: conv bias plus the projected
// time embedding.
struct TimeConditioning {
    int t = 0;
    std::vector<std::vector<double>> block_bias;
};

class UNet {
  public:
    explicit UNet(Weights weights);

    const UNetConfig &config() const { return weights_.config; }
    const Weights &weights() const { return weights_; }
    std::size_t pixels() const { return weights_.config.pixels(); }

    TimeConditioning time_conditioning(int t) const;

    // When `trace` is given, the sign of every ReLU pre-activation is appended
    // to it (1 for >= 0).
    std::vector<double> predict_noise(std::span<const double> x_t, int t,
                                      std::vector<std::uint8_t> *trace = nullptr) const;

    AffinePiece predict_noise_affine(const AffineVector &line, int t, double anchor_z,
                                     FixedInterval current) const;

  private:
    friend struct UNetTrainer;
    Weights weights_;
};

struct TrainHyperparams {
    int steps = 2000;
    int batch_size = 16;
    double learning_rate = 0.02;
    double momentum = 0.9;
    double heldout_fraction = 0.1;
    std::uint64_t seed = 1;
    // Steps between recorded losses in TrainResult::loss_curve.
    int log_every = 50;
};

struct TrainResult {
    Weights weights;
    double heldout_loss_initial = 0.0;
    double heldout_loss_final = 0.0;
    std::vector<double> loss_curve;
};

class TrainingDiverged : public TrainingError {
  public:
    TrainingDiverged(const std::string &what, Weights checkpoint, int step)
        : TrainingError(what), checkpoint_(std::move(checkpoint)), step_(step) {}
    const Weights &checkpoint() const { return checkpoint_; }
    int step() const { return step_; }

  private:
    Weights checkpoint_;
    int step_;
};

class NoiseSchedule;

// Mean over a batch of ||eps_theta(x_t) - eps||^2 / n, and its gradient with
// respect to every weight tensor (same order as weights.tensors).
struct LossAndGradient {
    double loss = 0.0;
    std::vector<std::vector<double>> gradient;
};

struct NoisedSample {
    std::vector<double> x_t;
    std::vector<double> noise;
    int t = 1;
};

LossAndGradient loss_and_gradient(const UNet &net, std::span<const NoisedSample> batch);
double batch_loss(const UNet &net, std::span<const NoisedSample> batch);

TrainResult train(const std::vector<std::vector<double>> &dataset, const UNetConfig &config,
                  const NoiseSchedule &schedule, const TrainHyperparams &hyper);

// Same as above but starting from the given weights.
TrainResult train_from(const std::vector<std::vector<double>> &dataset, Weights initial,
                       const NoiseSchedule &schedule, const TrainHyperparams &hyper);

} // namespace dal
