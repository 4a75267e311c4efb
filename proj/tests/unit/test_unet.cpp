#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dal/diffusion.hpp"
#include "dal/errors.hpp"
#include "dal/unet.hpp"
#include "support.hpp"

using namespace dal;

namespace {

// Straight-line evaluation of the same architecture: feature maps as
// vector<channel>, every loop written out.
using Maps = std::vector<std::vector<double>>;

Maps conv(const Weights &w, const std::string &block, const Maps &in, int side, const std::vector<double> &emb,
          bool relu) {
    const auto &k = w.at(block + ".conv.weight");
    const auto &b = w.at(block + ".conv.bias");
    const int cout = static_cast<int>(k.shape[0]), cin = static_cast<int>(k.shape[1]);
    const int ks = static_cast<int>(k.shape[2]), r = ks / 2;
    Maps out(cout, std::vector<double>(side * side));
    for (int o = 0; o < cout; ++o) {
        double bias = b.data[o];
        if (relu) {
            const auto &tw = w.at(block + ".time.weight");
            for (std::size_t j = 0; j < emb.size(); ++j)
                bias += tw.data[o * emb.size() + j] * emb[j];
        }
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                double acc = bias;
                for (int c = 0; c < cin; ++c)
                    for (int ky = 0; ky < ks; ++ky)
                        for (int kx = 0; kx < ks; ++kx) {
                            const int yy = y + ky - r, xx = x + kx - r;
                            if (yy < 0 || yy >= side || xx < 0 || xx >= side)
                                continue;
                            acc += k.data[((o * cin + c) * ks + ky) * ks + kx] * in[c][yy * side + xx];
                        }
                out[o][y * side + x] = relu ? std::max(acc, 0.0) : acc;
            }
    }
    return out;
}

Maps pool(const Maps &in, int side) {
    const int h = side / 2;
    Maps out(in.size(), std::vector<double>(h * h));
    for (std::size_t c = 0; c < in.size(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < h; ++x)
                out[c][y * h + x] = (in[c][2 * y * side + 2 * x] + in[c][2 * y * side + 2 * x + 1] +
                                     in[c][(2 * y + 1) * side + 2 * x] + in[c][(2 * y + 1) * side + 2 * x + 1]) /
                                    4.0;
    return out;
}

Maps upsample(const Maps &in, int side) {
    const int s = 2 * side;
    Maps out(in.size(), std::vector<double>(s * s));
    for (std::size_t c = 0; c < in.size(); ++c)
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
                out[c][y * s + x] = in[c][(y / 2) * side + x / 2];
    return out;
}

Maps cat(Maps a, const Maps &b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

std::vector<double> embedding(int t, int dim) {
    std::vector<double> e(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double f = std::pow(10000.0, -static_cast<double>(i) / half);
        e[i] = std::sin(t * f);
        e[half + i] = std::cos(t * f);
    }
    return e;
}

std::vector<double> straight_line(const Weights &w, const std::vector<double> &x, int t) {
    const int s0 = w.config.image_side, s1 = s0 / 2, s2 = s0 / 4;
    const auto e = embedding(t, w.config.time_embed_dim);
    const Maps in{x};
    const auto h0 = conv(w, "enc0", in, s0, e, true);
    const auto h1 = conv(w, "enc1", pool(h0, s0), s1, e, true);
    const auto h2 = conv(w, "enc2", pool(h1, s1), s2, e, true);
    const auto m = conv(w, "mid", h2, s2, e, true);
    const auto d2 = conv(w, "dec2", cat(m, h2), s2, e, true);
    const auto d1 = conv(w, "dec1", cat(upsample(d2, s2), h1), s1, e, true);
    const auto d0 = conv(w, "dec0", cat(upsample(d1, s1), h0), s0, e, true);
    return conv(w, "out", d0, s0, e, false)[0];
}

} // namespace

TEST_CASE("zero weights predict zero noise") {
    UNet net(zero_weights(UNetConfig{}));
    Rng rng(1);
    for (double v : net.predict_noise(rng.normal_vector(64), 17))
        CHECK(v == 0.0);
}

TEST_CASE("prediction is deterministic") {
    UNet net(random_weights(UNetConfig{}, 2));
    Rng rng(2);
    const auto x = rng.normal_vector(64);
    CHECK(net.predict_noise(x, 300) == net.predict_noise(x, 300));
}

TEST_CASE("prediction matches a straight-line evaluation of the architecture") {
    const auto w = random_weights(UNetConfig{}, 3);
    UNet net(w);
    Rng rng(3);
    for (int t : {1, 92, 460}) {
        const auto x = rng.normal_vector(64);
        CHECK(test::max_abs_diff(net.predict_noise(x, t), straight_line(w, x, t)) < 1e-12);
    }
}

TEST_CASE("time conditioning depends on t only") {
    UNet net(random_weights(UNetConfig{}, 4));
    const auto a = net.time_conditioning(10), b = net.time_conditioning(10), c = net.time_conditioning(11);
    CHECK(a.block_bias == b.block_bias);
    CHECK(a.block_bias != c.block_bias);
    CHECK(a.block_bias.size() == 8);
}

TEST_CASE("shape errors") {
    UNet net(random_weights(UNetConfig{}, 5));
    CHECK_THROWS_AS(net.predict_noise(std::vector<double>(63), 1), ShapeError);
    UNetConfig bad;
    bad.image_side = 6;
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    auto w = random_weights(UNetConfig{}, 5);
    w.tensors[0].data.pop_back();
    CHECK_THROWS_AS(UNet{w}, ShapeError);
}

TEST_CASE("affine propagation of a constant line keeps the interval") {
    UNet net(random_weights(UNetConfig{}, 6));
    Rng rng(6);
    const auto x = rng.normal_vector(64);
    const FixedInterval current{-2.0, 3.0};
    const auto p = net.predict_noise_affine(AffineVector::fixed(x), 200, 0.5, current);
    CHECK(p.interval == current);
    CHECK(p.line.is_constant());
    CHECK(test::max_abs_diff(p.line.constant, net.predict_noise(x, 200)) < 1e-12);
}

TEST_CASE("affine propagation is exact inside its interval") {
    UNet net(random_weights(UNetConfig{}, 7));
    Rng rng(7);
    for (int rep = 0; rep < 5; ++rep) {
        const auto line = test::random_line(rng, 64);
        const double anchor = rng.normal();
        const auto p = net.predict_noise_affine(line, 300, anchor, FixedInterval::whole());
        REQUIRE(p.interval.contains(anchor));
        double worst = 0.0;
        for (int k = 0; k < 20; ++k) {
            const double z = test::interior_point(p.interval, anchor, rng);
            worst = std::max(worst, test::max_abs_diff(p.line.eval(z), net.predict_noise(line.eval(z), 300)));
        }
        CHECK(worst < 1e-8);

        // Three points inside the interval are collinear.
        const double z0 = test::interior_point(p.interval, anchor, rng), z1 = test::interior_point(p.interval, anchor, rng);
        const double zm = 0.5 * (z0 + z1);
        const auto f0 = net.predict_noise(line.eval(z0), 300), f1 = net.predict_noise(line.eval(z1), 300);
        const auto fm = net.predict_noise(line.eval(zm), 300);
        for (std::size_t i = 0; i < 64; ++i)
            CHECK(std::abs(fm[i] - 0.5 * (f0[i] + f1[i])) < 1e-9);
    }
}

TEST_CASE("stepping past a propagated endpoint flips a ReLU") {
    UNet net(random_weights(UNetConfig{}, 8));
    Rng rng(8);
    int checked = 0;
    for (int rep = 0; rep < 5; ++rep) {
        const auto line = test::random_line(rng, 64);
        const auto p = net.predict_noise_affine(line, 100, 0.0, FixedInterval::whole());
        std::vector<std::uint8_t> at_anchor;
        net.predict_noise(line.eval(0.0), 100, &at_anchor);
        for (double beyond : {p.interval.lo - 1e-6, p.interval.hi + 1e-6}) {
            if (std::isinf(beyond))
                continue;
            std::vector<std::uint8_t> there;
            net.predict_noise(line.eval(beyond), 100, &there);
            CHECK(there != at_anchor);
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("loss gradient matches central finite differences") {
    const UNetConfig cfg;
    auto w = random_weights(cfg, 9);
    const auto schedule = ScheduleSpec{}.build();
    Rng rng(9);
    std::vector<NoisedSample> batch;
    for (int b = 0; b < 3; ++b) {
        NoisedSample s;
        s.t = 1 + static_cast<int>(rng.index(1000));
        s.noise = rng.normal_vector(64);
        const auto x = rng.normal_vector(64);
        const double a = schedule.alpha(s.t);
        for (std::size_t i = 0; i < 64; ++i)
            s.x_t.push_back(std::sqrt(a) * x[i] + std::sqrt(1 - a) * s.noise[i]);
        batch.push_back(s);
    }
    const auto lg = loss_and_gradient(UNet(w), batch);
    CHECK(lg.loss == doctest::Approx(batch_loss(UNet(w), batch)).epsilon(1e-12));

    // With every ReLU fixed the loss is quadratic in any single weight, so
    // central differences are exact up to rounding. Coordinates whose +-h
    // perturbation switches a ReLU sit on a kink and are redrawn.
    const double h = 1e-5;
    auto signs = [&](const Weights &wt) {
        UNet net(wt);
        std::vector<std::uint8_t> trace;
        for (const auto &s : batch)
            net.predict_noise(s.x_t, s.t, &trace);
        return trace;
    };
    const auto base = signs(w);
    double worst = 0.0;
    int skipped = 0;
    for (std::size_t ti = 0; ti < w.tensors.size(); ++ti)
        for (int k = 0; k < 10;) {
            const auto j = rng.index(w.tensors[ti].data.size());
            const double orig = w.tensors[ti].data[j];
            w.tensors[ti].data[j] = orig + h;
            const double up = batch_loss(UNet(w), batch);
            const bool kink_up = signs(w) != base;
            w.tensors[ti].data[j] = orig - h;
            const double down = batch_loss(UNet(w), batch);
            const bool kink_down = signs(w) != base;
            w.tensors[ti].data[j] = orig;
            if (kink_up || kink_down) {
                ++skipped;
                continue;
            }
            ++k;
            const double fd = (up - down) / (2 * h);
            const double g = lg.gradient[ti][j];
            const double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-4});
            worst = std::max(worst, rel);
        }
    MESSAGE("worst relative error ", worst, ", kinks skipped ", skipped);
    CHECK(skipped < 50);
    CHECK(worst < 1e-4);
}

TEST_CASE("training on one image lowers its loss") {
    const auto schedule = ScheduleSpec{}.build();
    Rng rng(10);
    TrainHyperparams h;
    h.steps = 200;
    h.batch_size = 8;
    const auto r = train({rng.normal_vector(64)}, UNetConfig{}, schedule, h);
    CHECK(r.heldout_loss_final < r.heldout_loss_initial);
    CHECK(r.loss_curve.size() == 4);
}

TEST_CASE("zero learning rate leaves the weights unchanged") {
    const auto schedule = ScheduleSpec{}.build();
    Rng rng(11);
    TrainHyperparams h;
    h.steps = 20;
    h.learning_rate = 0.0;
    const auto init = random_weights(UNetConfig{}, 11);
    const auto r = train_from({rng.normal_vector(64), rng.normal_vector(64)}, init, schedule, h);
    for (std::size_t i = 0; i < init.tensors.size(); ++i)
        CHECK(r.weights.tensors[i].data == init.tensors[i].data);
}

TEST_CASE("divergence raises a training error with a finite checkpoint") {
    const auto schedule = ScheduleSpec{}.build();
    Rng rng(12);
    TrainHyperparams h;
    h.steps = 500;
    h.learning_rate = 1e6;
    try {
        train({rng.normal_vector(64), rng.normal_vector(64)}, UNetConfig{}, schedule, h);
        FAIL("expected divergence");
    } catch (const TrainingDiverged &e) {
        for (const auto &t : e.checkpoint().tensors)
            for (double v : t.data)
                REQUIRE(std::isfinite(v));
    }
}

TEST_CASE("weights survive a JSON round trip bit for bit") {
    const auto w = random_weights(UNetConfig{}, 13);
    const auto path = std::filesystem::temp_directory_path() / "dal_weights_roundtrip.json";
    save_weights(w, path);
    const auto back = load_weights(path);
    std::filesystem::remove(path);
    CHECK(back.config == w.config);
    for (std::size_t i = 0; i < w.tensors.size(); ++i)
        CHECK(back.tensors[i].data == w.tensors[i].data);
    CHECK_THROWS_AS(weights_from_json(nlohmann::json{{"config", 1}}), FormatError);
}
