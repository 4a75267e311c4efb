// Command-line front end: training, single tests, simulation studies and the
// grid audit of the parametric search.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dal/experiments.hpp"

namespace {

struct Options {
    std::size_t n = 64;
    std::string cov = "iid";
    double lambda = 0.8;
    int kernel = 3;
    int tprime = 460;
    int steps = 5;
    double eta = 1.0;
    std::vector<double> alphas{0.05, 0.10};
    int trials = 500;
    int valid = 0;
    std::uint64_t seed = 1;
    std::string weights;
    bool untrained = false;
    std::string out;
    int perm = 0;
    int threads = 0;
    // training
    int train_steps = 2000;
    int batch = 16;
    double lr = 0.02;
    std::size_t images = 1000;
};

void add_pipeline_flags(CLI::App *cmd, Options &o) {
    cmd->add_option("--n", o.n, "pixels per image (a square of a multiple of 4)")->capture_default_str();
    cmd->add_option("--cov", o.cov, "noise covariance")->check(CLI::IsMember({"iid", "ar"}))->capture_default_str();
    cmd->add_option("--lambda", o.lambda, "anomaly threshold")->capture_default_str();
    cmd->add_option("--kernel", o.kernel, "averaging filter size")->capture_default_str();
    cmd->add_option("--tprime", o.tprime, "first reverse timestep")->capture_default_str();
    cmd->add_option("--steps", o.steps, "reverse sampling steps")->capture_default_str();
    cmd->add_option("--eta", o.eta, "stochasticity of the reverse process")->capture_default_str();
    cmd->add_option("--seed", o.seed, "master seed")->capture_default_str();
    cmd->add_option("--weights", o.weights, "weights JSON (default: train on fresh normal images)");
    cmd->add_flag("--untrained", o.untrained, "use seeded random weights instead of training");
    cmd->add_option("--train-steps", o.train_steps, "SGD steps when training inline")->capture_default_str();
}

void add_study_flags(CLI::App *cmd, Options &o) {
    add_pipeline_flags(cmd, o);
    cmd->add_option("--alpha", o.alphas, "significance levels")->capture_default_str();
    cmd->add_option("--trials", o.trials, "trials per setting")->capture_default_str();
    cmd->add_option("--valid", o.valid, "keep drawing until this many trials have a non-empty region");
    cmd->add_option("--perm", o.perm, "permutations for the permutation baseline (0 = off)")->capture_default_str();
    cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)")->capture_default_str();
    cmd->add_option("--out", o.out, "output directory")->required();
}

dal::ScheduleSpec schedule_spec() { return {}; }

dal::UNet load_net(const Options &o) {
    const auto config = dal::harness_net_config(o.n);
    if (!o.weights.empty()) {
        auto w = dal::load_weights(o.weights);
        if (!(w.config == config))
            throw dal::ShapeError("weights were trained for a different image size or architecture");
        return dal::UNet(std::move(w));
    }
    if (o.untrained)
        return dal::UNet(dal::random_weights(config, dal::derive_seed(o.seed, 0x77)));
    dal::TrainHyperparams h;
    h.steps = o.train_steps;
    h.batch_size = o.batch;
    h.learning_rate = o.lr;
    h.seed = o.seed;
    std::cerr << "training on " << o.images << " normal images (" << h.steps << " steps)\n";
    auto r = dal::train_normal_model(config, dal::CovarianceModel::parse(o.cov, o.n), o.images, schedule_spec(), h,
                                     o.seed);
    std::cerr << "held-out loss " << r.heldout_loss_initial << " -> " << r.heldout_loss_final << "\n";
    return dal::UNet(std::move(r.weights));
}

dal::StudyConfig study_config(const Options &o) {
    dal::StudyConfig c;
    c.n = o.n;
    c.cov = o.cov;
    c.pipeline.lambda = o.lambda;
    c.pipeline.kernel = o.kernel;
    c.pipeline.t_prime = o.tprime;
    c.pipeline.steps = o.steps;
    c.pipeline.eta = o.eta;
    c.alphas = o.alphas;
    c.trials = o.trials;
    c.valid_target = o.valid;
    c.seed = o.seed;
    c.permutations = o.perm;
    c.threads = o.threads;
    return c;
}

void report(const dal::StudyResult &r, const std::string &dir) {
    dal::write_study(r, dir);
    std::cout << dal::summary_csv(r);
}

std::vector<double> read_vector(const nlohmann::json &j, const char *key) {
    try {
        return j.at(key).get<std::vector<double>>();
    } catch (const nlohmann::json::exception &e) {
        throw dal::FormatError(std::string("input: ") + key + ": " + e.what());
    }
}

int run(int argc, char **argv) {
    CLI::App app{"Selective inference for diffusion-model anomaly localization"};
    app.require_subcommand(1);
    Options o;

    auto *train = app.add_subcommand("train", "train the noise predictor on synthetic normal images");
    train->add_option("--n", o.n, "pixels per image")->capture_default_str();
    train->add_option("--cov", o.cov)->check(CLI::IsMember({"iid", "ar"}))->capture_default_str();
    train->add_option("--seed", o.seed)->capture_default_str();
    train->add_option("--images", o.images, "training images")->capture_default_str();
    train->add_option("--train-steps", o.train_steps)->capture_default_str();
    train->add_option("--batch", o.batch)->capture_default_str();
    train->add_option("--lr", o.lr)->capture_default_str();
    train->add_option("--out", o.out, "output directory (weights.json, training.json)")->required();

    std::string input;
    double delta = 0.0;
    std::uint64_t plan_seed = 0;
    auto *one = app.add_subcommand("test-one", "test one image pair and print the JSON result");
    add_pipeline_flags(one, o);
    one->add_option("--input", input, "JSON {\"x\": [...], \"x_ref\": [...]} (default: a seeded draw)");
    one->add_option("--delta", delta, "signal added to the seeded draw")->capture_default_str();
    one->add_option("--plan-seed", plan_seed, "seed of the frozen diffusion noise (default: from --seed)");
    one->add_option("--perm", o.perm, "permutations for the permutation baseline")->capture_default_str();
    one->add_option("--out", o.out, "write result.json here as well");

    auto *type1 = app.add_subcommand("type1", "type-I error study on null images");
    add_study_flags(type1, o);

    std::vector<double> deltas{1, 2, 3, 4};
    auto *power = app.add_subcommand("power", "power study with a square anomaly patch");
    add_study_flags(power, o);
    power->add_option("--deltas", deltas, "signal strengths")->capture_default_str();

    std::vector<std::string> family_names{"skew-normal", "exp-modified-gaussian", "generalized-normal",
                                          "student-t"};
    std::vector<double> distances{0.01, 0.02, 0.03, 0.04};
    auto *robust = app.add_subcommand("robustness", "type-I error under standardized non-Gaussian noise");
    add_study_flags(robust, o);
    robust->add_option("--families", family_names, "noise families")->capture_default_str();
    robust->add_option("--distances", distances, "W1 distances to N(0, 1)")->capture_default_str();

    int instances = 20;
    double grid = 1e-3;
    auto *oracle = app.add_subcommand("oracle-check", "compare the parametric search with a brute-force z grid");
    add_pipeline_flags(oracle, o);
    oracle->add_option("--instances", instances)->capture_default_str();
    oracle->add_option("--grid", grid, "grid step in z")->capture_default_str();
    oracle->add_option("--out", o.out, "write oracle.json here as well");

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) {
        dal::TrainHyperparams h;
        h.steps = o.train_steps;
        h.batch_size = o.batch;
        h.learning_rate = o.lr;
        h.seed = o.seed;
        const auto r = dal::train_normal_model(dal::harness_net_config(o.n), dal::CovarianceModel::parse(o.cov, o.n),
                                               o.images, schedule_spec(), h, o.seed);
        std::filesystem::create_directories(o.out);
        dal::save_weights(r.weights, std::filesystem::path(o.out) / "weights.json");
        const nlohmann::json log = {{"n", o.n},
                                    {"cov", o.cov},
                                    {"seed", o.seed},
                                    {"images", o.images},
                                    {"steps", h.steps},
                                    {"batch", h.batch_size},
                                    {"lr", h.learning_rate},
                                    {"momentum", h.momentum},
                                    {"heldout_loss_initial", r.heldout_loss_initial},
                                    {"heldout_loss_final", r.heldout_loss_final},
                                    {"loss_curve", r.loss_curve}};
        std::ofstream(std::filesystem::path(o.out) / "training.json") << log.dump(2) << "\n";
        std::cout << "held-out loss " << r.heldout_loss_initial << " -> " << r.heldout_loss_final << "\n";
        return 0;
    }

    const auto net = load_net(o);
    const auto config = study_config(o);

    if (one->parsed()) {
        const auto cov = dal::CovarianceModel::parse(o.cov, o.n);
        dal::TestInstance instance{{}, {}, cov};
        if (!input.empty()) {
            std::ifstream f(input);
            if (!f)
                throw dal::FormatError("cannot open " + input);
            nlohmann::json doc;
            try {
                doc = nlohmann::json::parse(f);
            } catch (const nlohmann::json::exception &e) {
                throw dal::FormatError(std::string("input: ") + e.what());
            }
            instance.x = read_vector(doc, "x");
            instance.x_ref = read_vector(doc, "x_ref");
            instance.covariance = dal::CovarianceModel::parse(o.cov, instance.x.size());
        } else {
            dal::Rng rng(dal::derive_seed(o.seed, 0));
            instance.x = cov.sample(rng);
            instance.x_ref = cov.sample(rng);
            dal::Rng signal_rng(dal::derive_seed(o.seed, 3));
            if (delta != 0.0)
                for (auto i : dal::SignalSpec::random(o.n, delta, signal_rng).pixels)
                    instance.x[i] += delta;
        }
        const auto schedule = config.pipeline.schedule.build();
        const auto plan = dal::make_plan(schedule, instance.pixels(), o.tprime, o.steps, o.eta,
                                         plan_seed ? plan_seed : dal::derive_seed(o.seed, 1));
        const dal::Pipeline pipeline{&schedule, &plan, &net, {o.kernel}, o.lambda};
        dal::TestOptions options;
        options.permutations = o.perm;
        options.permutation_seed = dal::derive_seed(o.seed, 2);
        auto j = dal::to_json(dal::run_test(instance, pipeline, options));
        j["plan"] = dal::plan_to_json(plan, config.pipeline.schedule);
        std::cout << j.dump(2) << "\n";
        if (!o.out.empty()) {
            std::filesystem::create_directories(o.out);
            std::ofstream(std::filesystem::path(o.out) / "result.json") << j.dump(2) << "\n";
        }
        return 0;
    }
    if (type1->parsed()) {
        report(dal::run_type1(config, net), o.out);
        return 0;
    }
    if (power->parsed()) {
        report(dal::run_power(config, net, deltas), o.out);
        return 0;
    }
    if (robust->parsed()) {
        std::vector<dal::Family> families;
        for (const auto &name : family_names)
            families.push_back(dal::parse_family(name));
        report(dal::run_robustness(config, net, families, distances), o.out);
        return 0;
    }
    if (oracle->parsed()) {
        const auto schedule = config.pipeline.schedule.build();
        const auto cov = dal::CovarianceModel::parse(o.cov, o.n);
        nlohmann::json reports = nlohmann::json::array();
        int failures = 0;
        for (std::size_t k = 0, done = 0; done < static_cast<std::size_t>(instances); ++k) {
            const auto seed = dal::derive_seed(o.seed, k);
            dal::Rng rng(dal::derive_seed(seed, 0));
            dal::TestInstance instance{cov.sample(rng), cov.sample(rng), cov};
            const auto plan = dal::make_plan(schedule, o.n, o.tprime, o.steps, o.eta, dal::derive_seed(seed, 1));
            const dal::Pipeline pipeline{&schedule, &plan, &net, {o.kernel}, o.lambda};
            if (pipeline.region(instance.x).empty())
                continue;
            ++done;
            auto rep = dal::oracle_check(instance, pipeline, {}, grid);
            const bool ok = rep.agreement() >= 0.999 && rep.disagreements_far == 0 && rep.z_obs_inside;
            failures += !ok;
            auto j = rep.to_json();
            j["trial"] = k;
            j["pass"] = ok;
            reports.push_back(j);
            std::printf("instance %zu: %zu/%zu grid points agree, %zu far disagreements, z_obs %s -> %s\n", k,
                        rep.agreements, rep.grid_points, rep.disagreements_far,
                        rep.z_obs_inside ? "inside" : "OUTSIDE", ok ? "ok" : "FAIL");
        }
        if (!o.out.empty()) {
            std::filesystem::create_directories(o.out);
            std::ofstream(std::filesystem::path(o.out) / "oracle.json") << reports.dump(2) << "\n";
        }
        return failures ? 1 : 0;
    }
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    try {
        return run(argc, argv);
    } catch (const dal::Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
