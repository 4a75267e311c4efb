#include "dal/unet.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dal/diffusion.hpp"
#include "dal/rng.hpp"
#include "tensor_ops.hpp"

namespace dal {

using ops::Mat;
using ops::RowMat;
using ops::Shape;

namespace {

enum Block : int { kEnc0, kEnc1, kEnc2, kMid, kDec2, kDec1, kDec0, kOut, kBlockCount };

constexpr std::array<const char *, kBlockCount> kBlockNames{"enc0", "enc1", "enc2", "mid",
                                                            "dec2", "dec1", "dec0", "out"};

struct BlockDef {
    int in_channels;
    int out_channels;
};

std::array<BlockDef, kBlockCount> block_defs(const UNetConfig &c) {
    const int w0 = c.channel_widths[0], w1 = c.channel_widths[1], w2 = c.channel_widths[2];
    return {{{1, w0}, {w0, w1}, {w1, w2}, {w2, w2}, {2 * w2, w2}, {w2 + w1, w1}, {w1 + w0, w0}, {w0, 1}}};
}

bool has_time(int block) { return block != kOut; }

// Index of each block's tensors inside Weights::tensors.
struct TensorIndex {
    int conv;
    int bias;
    int time; // -1 when absent
};

std::array<TensorIndex, kBlockCount> tensor_index() {
    std::array<TensorIndex, kBlockCount> idx{};
    int next = 0;
    for (int b = 0; b < kBlockCount; ++b) {
        idx[b].conv = next++;
        idx[b].bias = next++;
        idx[b].time = has_time(b) ? next++ : -1;
    }
    return idx;
}

const std::array<TensorIndex, kBlockCount> kIndex = tensor_index();

Eigen::Map<const RowMat> kernel_of(const Weights &w, int block) {
    const auto &t = w.tensors[kIndex[block].conv];
    return {t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
            static_cast<Eigen::Index>(t.shape[1] * t.shape[2] * t.shape[3])};
}

Eigen::Map<const Eigen::VectorXd> bias_of(const Weights &w, int block) {
    const auto &t = w.tensors[kIndex[block].bias];
    return {t.data.data(), static_cast<Eigen::Index>(t.data.size())};
}

Eigen::Map<const RowMat> time_proj_of(const Weights &w, int block) {
    const auto &t = w.tensors[kIndex[block].time];
    return {t.data.data(), static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1])};
}

Eigen::VectorXd block_bias(const Weights &w, int block, const std::vector<double> &embedding) {
    Eigen::VectorXd b = bias_of(w, block);
    if (has_time(block)) {
        Eigen::Map<const Eigen::VectorXd> e(embedding.data(), static_cast<Eigen::Index>(embedding.size()));
        b += time_proj_of(w, block) * e;
    }
    return b;
}

struct ForwardCache {
    std::array<Mat, kBlockCount> cols;
    std::array<Mat, kBlockCount> masks;
};

// Runs the network on a batch. `biases[block]` is Cout x B (one column per
// item). `activate(pre, block)` applies the ReLU in place.
template <class Activate>
Mat run_network(const Weights &w, const Mat &input, int batch,
                const std::array<Mat, kBlockCount> &biases, Activate &&activate,
                ForwardCache *cache) {
    const auto &cfg = w.config;
    const auto defs = block_defs(cfg);
    const int k = cfg.kernel_size;
    const int s0 = cfg.image_side, s1 = s0 / 2, s2 = s0 / 4;

    auto conv = [&](int block, const Mat &in, int side) {
        const Shape shape{defs[block].in_channels, side, batch};
        Mat cols = ops::im2col(in, shape, k);
        Mat out = ops::tap_major(kernel_of(w, block), defs[block].in_channels, k) * cols;
        const int area = side * side;
        for (int b = 0; b < batch; ++b)
            out.middleCols(static_cast<Eigen::Index>(b) * area, area).colwise() += biases[block].col(b);
        if (block != kOut) {
            activate(out, block, area);
            if (cache)
                cache->masks[block] = (out.array() > 0.0).cast<double>().matrix();
        }
        if (cache)
            cache->cols[block] = std::move(cols);
        return out;
    };

    const int w0 = cfg.channel_widths[0], w1 = cfg.channel_widths[1], w2 = cfg.channel_widths[2];
    Mat h0 = conv(kEnc0, input, s0);
    Mat h1 = conv(kEnc1, ops::avg_pool2(h0, {w0, s0, batch}), s1);
    Mat h2 = conv(kEnc2, ops::avg_pool2(h1, {w1, s1, batch}), s2);
    Mat m = conv(kMid, h2, s2);
    Mat d2 = conv(kDec2, ops::concat_channels(m, h2), s2);
    Mat d1 = conv(kDec1, ops::concat_channels(ops::upsample2(d2, {w2, s2, batch}), h1), s1);
    Mat d0 = conv(kDec0, ops::concat_channels(ops::upsample2(d1, {w1, s1, batch}), h0), s0);
    return conv(kOut, d0, s0);
}

Mat column_image(std::span<const double> x) {
    Mat m(1, static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i)
        m(0, static_cast<Eigen::Index>(i)) = x[i];
    return m;
}

std::size_t product(const std::vector<std::size_t> &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

} // namespace

void UNetConfig::validate() const {
    if (image_side <= 0)
        throw ShapeError("unet: image_side must be positive");
    if (channel_widths.size() != 3)
        throw ShapeError("unet: exactly three encoder levels are supported");
    for (int w : channel_widths)
        if (w <= 0)
            throw ShapeError("unet: channel widths must be positive");
    if (image_side % 4 != 0)
        throw ShapeError("unet: image_side must be divisible by 4");
    if (kernel_size <= 0 || kernel_size % 2 == 0)
        throw ShapeError("unet: kernel_size must be a positive odd integer");
    if (time_embed_dim <= 0)
        throw ShapeError("unet: time_embed_dim must be positive");
}

std::size_t Tensor::numel() const { return product(shape); }

const Tensor &Weights::at(const std::string &name) const {
    for (const auto &t : tensors)
        if (t.name == name)
            return t;
    throw ShapeError("weights: no tensor named " + name);
}

Tensor &Weights::at(const std::string &name) {
    return const_cast<Tensor &>(std::as_const(*this).at(name));
}

std::size_t Weights::parameter_count() const {
    std::size_t n = 0;
    for (const auto &t : tensors)
        n += t.data.size();
    return n;
}

std::vector<Tensor> weight_layout(const UNetConfig &config) {
    config.validate();
    const auto defs = block_defs(config);
    const auto k = static_cast<std::size_t>(config.kernel_size);
    std::vector<Tensor> out;
    for (int b = 0; b < kBlockCount; ++b) {
        const std::string base = kBlockNames[b];
        const auto cin = static_cast<std::size_t>(defs[b].in_channels);
        const auto cout = static_cast<std::size_t>(defs[b].out_channels);
        out.push_back({base + ".conv.weight", {cout, cin, k, k}, {}});
        out.push_back({base + ".conv.bias", {cout}, {}});
        if (has_time(b))
            out.push_back({base + ".time.weight", {cout, static_cast<std::size_t>(config.time_embed_dim)}, {}});
    }
    for (auto &t : out)
        t.data.assign(t.numel(), 0.0);
    return out;
}

Weights zero_weights(const UNetConfig &config) { return {config, weight_layout(config)}; }

Weights random_weights(const UNetConfig &config, std::uint64_t seed) {
    Weights w = zero_weights(config);
    const auto defs = block_defs(config);
    const auto k2 = static_cast<double>(config.kernel_size * config.kernel_size);
    Rng rng(seed);
    for (int b = 0; b < kBlockCount; ++b) {
        const double conv_bound = 1.0 / std::sqrt(defs[b].in_channels * k2);
        for (int which : {kIndex[b].conv, kIndex[b].bias})
            for (auto &v : w.tensors[which].data)
                v = rng.uniform(-conv_bound, conv_bound);
        if (kIndex[b].time >= 0) {
            const double time_bound = 1.0 / std::sqrt(static_cast<double>(config.time_embed_dim));
            for (auto &v : w.tensors[kIndex[b].time].data)
                v = rng.uniform(-time_bound, time_bound);
        }
    }
    return w;
}

nlohmann::json weights_to_json(const Weights &weights) {
    nlohmann::json cfg = {{"image_side", weights.config.image_side},
                          {"channel_widths", weights.config.channel_widths},
                          {"kernel_size", weights.config.kernel_size},
                          {"time_embed_dim", weights.config.time_embed_dim}};
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto &t : weights.tensors)
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"data", t.data}});
    return {{"config", cfg}, {"tensors", tensors}};
}

Weights weights_from_json(const nlohmann::json &doc) {
    try {
        UNetConfig cfg;
        const auto &c = doc.at("config");
        cfg.image_side = c.at("image_side").get<int>();
        cfg.channel_widths = c.at("channel_widths").get<std::vector<int>>();
        cfg.kernel_size = c.at("kernel_size").get<int>();
        cfg.time_embed_dim = c.at("time_embed_dim").get<int>();
        Weights w = zero_weights(cfg);
        const auto &tensors = doc.at("tensors");
        if (tensors.size() != w.tensors.size())
            throw FormatError("weights: expected " + std::to_string(w.tensors.size()) + " tensors, found " +
                              std::to_string(tensors.size()));
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            auto &dst = w.tensors[i];
            const auto &src = tensors[i];
            if (src.at("name").get<std::string>() != dst.name)
                throw FormatError("weights: tensor " + std::to_string(i) + " should be " + dst.name);
            if (src.at("shape").get<std::vector<std::size_t>>() != dst.shape)
                throw FormatError("weights: shape mismatch for " + dst.name);
            auto data = src.at("data").get<std::vector<double>>();
            if (data.size() != dst.data.size())
                throw FormatError("weights: wrong element count for " + dst.name);
            for (double v : data)
                if (!std::isfinite(v))
                    throw FormatError("weights: non-finite value in " + dst.name);
            dst.data = std::move(data);
        }
        return w;
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("weights: malformed document: ") + e.what());
    }
}

void save_weights(const Weights &weights, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out)
        throw FormatError("cannot open " + path.string() + " for writing");
    out << weights_to_json(weights).dump() << '\n';
}

Weights load_weights(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception &e) {
        throw FormatError("weights: " + path.string() + ": " + e.what());
    }
    return weights_from_json(doc);
}

std::vector<double> sinusoidal_embedding(int t, int dim) {
    std::vector<double> e(static_cast<std::size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < dim; ++i) {
        const int freq = i % std::max(half, 1);
        const double rate = std::pow(10000.0, -static_cast<double>(freq) / std::max(half, 1));
        e[static_cast<std::size_t>(i)] = i < half ? std::sin(t * rate) : std::cos(t * rate);
    }
    return e;
}

UNet::UNet(Weights weights) : weights_(std::move(weights)) {
    const auto expected = weight_layout(weights_.config);
    if (expected.size() != weights_.tensors.size())
        throw ShapeError("unet: tensor count does not match configuration");
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto &t = weights_.tensors[i];
        if (t.name != expected[i].name || t.shape != expected[i].shape || t.data.size() != t.numel())
            throw ShapeError("unet: tensor " + expected[i].name + " has the wrong name or shape");
        for (double v : t.data)
            if (!std::isfinite(v))
                throw ShapeError("unet: non-finite weight in " + t.name);
    }
}

TimeConditioning UNet::time_conditioning(int t) const {
    const auto e = sinusoidal_embedding(t, weights_.config.time_embed_dim);
    TimeConditioning tc{t, {}};
    for (int b = 0; b < kBlockCount; ++b) {
        Eigen::VectorXd v = block_bias(weights_, b, e);
        tc.block_bias.emplace_back(v.data(), v.data() + v.size());
    }
    return tc;
}

std::vector<double> UNet::predict_noise(std::span<const double> x_t, int t,
                                        std::vector<std::uint8_t> *trace) const {
    if (x_t.size() != pixels())
        throw ShapeError("predict_noise: expected " + std::to_string(pixels()) + " pixels, got " +
                         std::to_string(x_t.size()));
    const auto e = sinusoidal_embedding(t, weights_.config.time_embed_dim);
    std::array<Mat, kBlockCount> biases;
    for (int b = 0; b < kBlockCount; ++b)
        biases[b] = block_bias(weights_, b, e);

    auto relu = [trace](Mat &pre, int, int) {
        if (trace)
            for (Eigen::Index i = 0; i < pre.size(); ++i)
                trace->push_back(pre.data()[i] >= 0.0 ? 1 : 0);
        pre = pre.cwiseMax(0.0);
    };
    Mat out = run_network(weights_, column_image(x_t), 1, biases, relu, nullptr);
    return {out.data(), out.data() + out.size()};
}

AffinePiece UNet::predict_noise_affine(const AffineVector &line, int t, double anchor_z,
                                       FixedInterval current) const {
    const std::size_t n = pixels();
    if (line.size() != n)
        throw ShapeError("predict_noise_affine: expected " + std::to_string(n) + " pixels, got " +
                         std::to_string(line.size()));
    if (!current.contains(anchor_z))
        throw ConsistencyError("predict_noise_affine: anchor outside the current interval");

    const auto e = sinusoidal_embedding(t, weights_.config.time_embed_dim);
    std::array<Mat, kBlockCount> biases;
    for (int b = 0; b < kBlockCount; ++b) {
        biases[b] = Mat::Zero(weights_.tensors[kIndex[b].bias].data.size(), 2);
        biases[b].col(0) = block_bias(weights_, b, e);
    }

    Mat input(1, static_cast<Eigen::Index>(2 * n));
    for (std::size_t i = 0; i < n; ++i) {
        input(0, static_cast<Eigen::Index>(i)) = line.constant[i];
        input(0, static_cast<Eigen::Index>(n + i)) = line.coefficient[i];
    }

    FixedInterval interval = current;
    auto relu = [&](Mat &pre, int, int area) {
        for (Eigen::Index p = 0; p < area; ++p)
            for (Eigen::Index c = 0; c < pre.rows(); ++c) {
                double &cst = pre(c, p);
                double &coef = pre(c, area + p);
                tighten_sign(cst, coef, anchor_z, interval);
                if (cst + coef * anchor_z < 0.0) {
                    cst = 0.0;
                    coef = 0.0;
                }
            }
    };
    Mat out = run_network(weights_, input, 2, biases, relu, nullptr);
    if (!interval.contains(anchor_z))
        throw ConsistencyError("predict_noise_affine: propagated interval lost its anchor");

    AffinePiece piece{AffineVector(n), interval};
    for (std::size_t i = 0; i < n; ++i) {
        piece.line.constant[i] = out(0, static_cast<Eigen::Index>(i));
        piece.line.coefficient[i] = out(0, static_cast<Eigen::Index>(n + i));
    }
    return piece;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct BatchForward {
    Mat output;
    ForwardCache cache;
    std::vector<std::vector<double>> embeddings;
};

BatchForward forward_batch(const Weights &w, std::span<const NoisedSample> batch, bool keep_cache) {
    const std::size_t n = w.config.pixels();
    const int B = static_cast<int>(batch.size());
    BatchForward fw;
    Mat input(1, static_cast<Eigen::Index>(B * n));
    for (int b = 0; b < B; ++b) {
        if (batch[b].x_t.size() != n || batch[b].noise.size() != n)
            throw ShapeError("training sample has the wrong number of pixels");
        for (std::size_t i = 0; i < n; ++i)
            input(0, static_cast<Eigen::Index>(b * n + i)) = batch[b].x_t[i];
        fw.embeddings.push_back(sinusoidal_embedding(batch[b].t, w.config.time_embed_dim));
    }
    std::array<Mat, kBlockCount> biases;
    for (int blk = 0; blk < kBlockCount; ++blk) {
        biases[blk].resize(static_cast<Eigen::Index>(w.tensors[kIndex[blk].bias].data.size()), B);
        for (int b = 0; b < B; ++b)
            biases[blk].col(b) = block_bias(w, blk, fw.embeddings[b]);
    }
    auto relu = [](Mat &pre, int, int) { pre = pre.cwiseMax(0.0); };
    fw.output = run_network(w, input, B, biases, relu, keep_cache ? &fw.cache : nullptr);
    return fw;
}

double mse(const Mat &output, std::span<const NoisedSample> batch, std::size_t n, Mat *residual) {
    double total = 0.0;
    if (residual)
        residual->resize(1, output.cols());
    for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t i = 0; i < n; ++i) {
            const auto col = static_cast<Eigen::Index>(b * n + i);
            const double r = output(0, col) - batch[b].noise[i];
            total += r * r;
            if (residual)
                (*residual)(0, col) = r;
        }
    return total / static_cast<double>(batch.size() * n);
}

} // namespace

double batch_loss(const UNet &net, std::span<const NoisedSample> batch) {
    if (batch.empty())
        return 0.0;
    auto fw = forward_batch(net.weights(), batch, false);
    return mse(fw.output, batch, net.pixels(), nullptr);
}

LossAndGradient loss_and_gradient(const UNet &net, std::span<const NoisedSample> batch) {
    const Weights &w = net.weights();
    const auto &cfg = w.config;
    const std::size_t n = cfg.pixels();
    const int B = static_cast<int>(batch.size());
    if (B == 0)
        throw TrainingError("empty training batch");

    auto fw = forward_batch(w, batch, true);
    Mat residual;
    LossAndGradient out;
    out.loss = mse(fw.output, batch, n, &residual);
    out.gradient.resize(w.tensors.size());
    for (std::size_t i = 0; i < w.tensors.size(); ++i)
        out.gradient[i].assign(w.tensors[i].data.size(), 0.0);

    const auto defs = block_defs(cfg);
    const int k = cfg.kernel_size;
    const int s0 = cfg.image_side, s1 = s0 / 2, s2 = s0 / 4;
    const int w0 = cfg.channel_widths[0], w1 = cfg.channel_widths[1], w2 = cfg.channel_widths[2];

    // Gradient of the block's output (post-activation) -> gradient of its input.
    auto backward_block = [&](int block, Mat d_out, int side) {
        if (block != kOut)
            d_out = d_out.cwiseProduct(fw.cache.masks[block]);
        const int area = side * side;
        const auto &cols = fw.cache.cols[block];
        Eigen::Map<RowMat> dk(out.gradient[kIndex[block].conv].data(), defs[block].out_channels,
                              static_cast<Eigen::Index>(defs[block].in_channels) * k * k);
        dk += ops::channel_major(d_out * cols.transpose(), defs[block].in_channels, k);
        Eigen::Map<Eigen::VectorXd> db(out.gradient[kIndex[block].bias].data(), defs[block].out_channels);
        for (int b = 0; b < B; ++b) {
            Eigen::VectorXd item = d_out.middleCols(static_cast<Eigen::Index>(b) * area, area).rowwise().sum();
            db += item;
            if (has_time(block)) {
                Eigen::Map<RowMat> dt(out.gradient[kIndex[block].time].data(), defs[block].out_channels,
                                      cfg.time_embed_dim);
                Eigen::Map<const Eigen::RowVectorXd> e(fw.embeddings[b].data(), cfg.time_embed_dim);
                dt.noalias() += item * e;
            }
        }
        Mat d_cols = ops::tap_major(kernel_of(w, block), defs[block].in_channels, k).transpose() * d_out;
        return ops::col2im(d_cols, {defs[block].in_channels, side, B}, k);
    };

    Mat d_y = residual * (2.0 / static_cast<double>(B * n));
    Mat d_d0 = backward_block(kOut, d_y, s0);
    Mat d_cat0 = backward_block(kDec0, d_d0, s0);
    Mat d_h0 = d_cat0.bottomRows(w0);
    Mat d_d1 = ops::upsample2_backward(d_cat0.topRows(w1), {w1, s1, B});
    Mat d_cat1 = backward_block(kDec1, d_d1, s1);
    Mat d_h1 = d_cat1.bottomRows(w1);
    Mat d_d2 = ops::upsample2_backward(d_cat1.topRows(w2), {w2, s2, B});
    Mat d_cat2 = backward_block(kDec2, d_d2, s2);
    Mat d_m = d_cat2.topRows(w2);
    Mat d_h2 = d_cat2.bottomRows(w2);
    d_h2 += backward_block(kMid, d_m, s2);
    Mat d_p1 = backward_block(kEnc2, d_h2, s2);
    d_h1 += ops::avg_pool2_backward(d_p1, {w1, s1, B});
    Mat d_p0 = backward_block(kEnc1, d_h1, s1);
    d_h0 += ops::avg_pool2_backward(d_p0, {w0, s0, B});
    backward_block(kEnc0, d_h0, s0);
    return out;
}

namespace {

NoisedSample noised(const std::vector<double> &x, const NoiseSchedule &schedule, Rng &rng) {
    NoisedSample s;
    s.t = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(schedule.steps())));
    s.noise = rng.normal_vector(x.size());
    const double a = schedule.alpha(s.t);
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    s.x_t.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        s.x_t[i] = sa * x[i] + sn * s.noise[i];
    return s;
}

} // namespace

TrainResult train(const std::vector<std::vector<double>> &dataset, const UNetConfig &config,
                  const NoiseSchedule &schedule, const TrainHyperparams &hyper) {
    return train_from(dataset, random_weights(config, derive_seed(hyper.seed, 0)), schedule, hyper);
}

TrainResult train_from(const std::vector<std::vector<double>> &dataset, Weights initial,
                       const NoiseSchedule &schedule, const TrainHyperparams &hyper) {
    if (dataset.empty())
        throw TrainingError("training dataset is empty");
    const std::size_t n = initial.config.pixels();
    for (const auto &img : dataset)
        if (img.size() != n)
            throw ShapeError("training image has " + std::to_string(img.size()) + " pixels, expected " +
                             std::to_string(n));
    if (hyper.batch_size <= 0 || hyper.steps < 0)
        throw TrainingError("batch size must be positive and steps non-negative");

    // Held-out split; a single image serves as both.
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split_rng(derive_seed(hyper.seed, 1));
    split_rng.shuffle(order);
    std::size_t heldout = static_cast<std::size_t>(hyper.heldout_fraction * static_cast<double>(dataset.size()));
    if (dataset.size() > 1)
        heldout = std::clamp<std::size_t>(heldout, 1, dataset.size() - 1);
    else
        heldout = 0;
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(heldout), order.end());
    std::vector<std::size_t> held_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(heldout));
    if (held_idx.empty())
        held_idx = train_idx;

    // Fixed noise draws so the held-out loss is comparable across checkpoints.
    std::vector<NoisedSample> held_batch;
    {
        Rng rng(derive_seed(hyper.seed, 2));
        const std::size_t reps = std::max<std::size_t>(1, 256 / held_idx.size());
        for (std::size_t r = 0; r < reps; ++r)
            for (auto i : held_idx)
                held_batch.push_back(noised(dataset[i], schedule, rng));
    }

    TrainResult result{std::move(initial), 0.0, 0.0, {}};
    UNet net(result.weights);
    result.heldout_loss_initial = batch_loss(net, held_batch);

    std::vector<std::vector<double>> velocity(result.weights.tensors.size());
    for (std::size_t i = 0; i < velocity.size(); ++i)
        velocity[i].assign(result.weights.tensors[i].data.size(), 0.0);

    Rng rng(derive_seed(hyper.seed, 3));
    Weights checkpoint = result.weights;
    std::vector<NoisedSample> batch(static_cast<std::size_t>(hyper.batch_size));
    double running = 0.0;
    int running_count = 0;
    for (int step = 0; step < hyper.steps; ++step) {
        for (auto &s : batch)
            s = noised(dataset[train_idx[rng.index(train_idx.size())]], schedule, rng);
        auto lg = loss_and_gradient(net, batch);
        bool finite = std::isfinite(lg.loss);
        for (const auto &g : lg.gradient)
            for (double v : g)
                finite = finite && std::isfinite(v);
        if (!finite)
            throw TrainingDiverged("training diverged at step " + std::to_string(step), checkpoint, step);
        checkpoint = result.weights;

        for (std::size_t i = 0; i < velocity.size(); ++i) {
            auto &data = result.weights.tensors[i].data;
            for (std::size_t j = 0; j < data.size(); ++j) {
                velocity[i][j] = hyper.momentum * velocity[i][j] - hyper.learning_rate * lg.gradient[i][j];
                data[j] += velocity[i][j];
            }
        }
        net = UNet(result.weights);

        running += lg.loss;
        ++running_count;
        if (hyper.log_every > 0 && (step + 1) % hyper.log_every == 0) {
            result.loss_curve.push_back(running / running_count);
            running = 0.0;
            running_count = 0;
        }
    }
    result.heldout_loss_final = batch_loss(net, held_batch);
    if (!std::isfinite(result.heldout_loss_final))
        throw TrainingDiverged("held-out loss is not finite after training", checkpoint, hyper.steps);
    return result;
}

} // namespace dal
