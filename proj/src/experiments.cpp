#include "dal/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "dal/stats.hpp"

namespace dal {

std::vector<std::vector<double>> sample_noise(const CovarianceModel &cov, std::size_t count,
                                              std::uint64_t seed) {
    cov.validate();
    Rng rng(seed);
    std::vector<std::vector<double>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(cov.sample(rng));
    return out;
}

TrainResult train_normal_model(const UNetConfig &config, const CovarianceModel &cov, std::size_t images,
                               const ScheduleSpec &schedule, const TrainHyperparams &hyper, std::uint64_t seed) {
    const auto data = sample_noise(cov, images, derive_seed(~seed, images));
    return train(data, config, schedule.build(), hyper);
}

UNetConfig harness_net_config(std::size_t n) {
    UNetConfig c;
    c.image_side = image_side_for(n);
    c.validate();
    return c;
}

int SignalSpec::patch_side(std::size_t n) {
    return static_cast<int>(std::ceil(std::sqrt(0.1 * static_cast<double>(n)) - 1e-12));
}

SignalSpec SignalSpec::random(std::size_t n, double delta, Rng &rng) {
    const int side = image_side_for(n);
    const int p = std::min(patch_side(n), side);
    const auto y0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(side - p + 1)));
    const auto x0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(side - p + 1)));
    SignalSpec s{delta, {}};
    for (int y = y0; y < y0 + p; ++y)
        for (int x = x0; x < x0 + p; ++x)
            s.pixels.push_back(static_cast<std::size_t>(y * side + x));
    return s;
}

bool SignalSpec::overlaps(const AnomalyRegion &region) const {
    for (auto i : pixels)
        if (region.contains(i))
            return true;
    return false;
}

nlohmann::json PipelineSettings::to_json() const {
    return {{"T", schedule.steps},          {"beta_start", schedule.beta_start},
            {"beta_end", schedule.beta_end}, {"lambda", lambda},
            {"kernel", kernel},              {"tprime", t_prime},
            {"steps", steps},                {"eta", eta}};
}

nlohmann::json StudyConfig::to_json() const {
    return {{"n", n},
            {"cov", cov},
            {"pipeline", pipeline.to_json()},
            {"alphas", alphas},
            {"trials", trials},
            {"valid_target", valid_target},
            {"seed", seed},
            {"permutations", permutations},
            {"search", {{"range_sigmas", search.range_sigmas}, {"step_sigmas", search.step_sigmas}}}};
}

namespace {

std::vector<double> draw_noise(const StudyConfig &config, const NoiseSource &source, Rng &rng) {
    if (!source.family)
        return CovarianceModel::parse(config.cov, config.n).sample(rng);
    std::vector<double> v(config.n);
    for (auto &x : v)
        x = source.family->sample(rng);
    return v;
}

} // namespace

TrialRecord run_trial(const StudyConfig &config, const UNet &net, const NoiseSource &noise, double delta,
                      std::size_t index) {
    TrialRecord rec;
    rec.index = index;
    rec.seed = derive_seed(config.seed, index);
    try {
        Rng noise_rng(derive_seed(rec.seed, 0));
        Rng signal_rng(derive_seed(rec.seed, 3));
        TestInstance instance{draw_noise(config, noise, noise_rng), draw_noise(config, noise, noise_rng),
                              CovarianceModel::parse(config.cov, config.n)};
        const auto signal = SignalSpec::random(config.n, delta, signal_rng);
        if (delta != 0.0)
            for (auto i : signal.pixels)
                instance.x[i] += delta;

        const auto schedule = config.pipeline.schedule.build();
        const auto plan = make_plan(schedule, config.n, config.pipeline.t_prime, config.pipeline.steps,
                                    config.pipeline.eta, derive_seed(rec.seed, 1));
        const Pipeline pipeline{&schedule, &plan, &net, {config.pipeline.kernel}, config.pipeline.lambda};
        TestOptions options;
        options.search = config.search;
        options.permutations = config.permutations;
        options.permutation_seed = derive_seed(rec.seed, 2);

        const auto r = run_test(instance, pipeline, options);
        rec.region_size = r.region.size();
        rec.overlap = signal.overlaps(r.region);
        rec.z_obs = r.z_obs;
        rec.sigma2 = r.sigma2;
        rec.p_selective = r.p_selective;
        rec.p_oc = r.p_oc;
        rec.p_naive = r.p_naive;
        rec.p_bonferroni = r.p_bonferroni;
        rec.p_permutation = r.p_permutation;
        rec.intervals = r.truncation.size();
        rec.pieces = r.pieces;
    } catch (const UndefinedTestError &e) {
        rec.status = TrialStatus::empty;
        rec.message = e.what();
    } catch (const Error &e) {
        rec.status = TrialStatus::error;
        rec.message = e.what();
    }
    return rec;
}

namespace {

std::vector<TrialRecord> run_indices(const StudyConfig &config, const UNet &net, const NoiseSource &noise,
                                     double delta, std::size_t first, std::size_t count) {
    std::vector<TrialRecord> out(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;)
            out[i] = run_trial(config, net, noise, delta, first + i);
    };
    unsigned threads = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                          : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1)));
    if (threads <= 1) {
        worker();
        return out;
    }
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back(worker);
    for (auto &t : pool)
        t.join();
    return out;
}

} // namespace

Cell run_cell(const StudyConfig &config, const UNet &net, const NoiseSource &noise, const std::string &group,
              double setting, double delta, bool has_signal) {
    if (config.trials < 0 || config.valid_target < 0)
        throw Error("trial counts must be non-negative");
    Cell cell;
    cell.group = group;
    cell.setting = setting;
    cell.has_signal = has_signal;
    const auto target = static_cast<std::size_t>(config.valid_target);
    auto batch = static_cast<std::size_t>(config.trials);
    while (true) {
        for (auto &rec : run_indices(config, net, noise, delta, cell.drawn, batch)) {
            if (target > 0 && cell.trials.size() >= target)
                break;
            ++cell.drawn;
            if (rec.status == TrialStatus::empty)
                ++cell.excluded_empty;
            else if (rec.status == TrialStatus::error)
                ++cell.excluded_error;
            else
                cell.trials.push_back(std::move(rec));
        }
        if (target == 0 || cell.trials.size() >= target)
            break;
        if (cell.drawn >= static_cast<std::size_t>(config.max_draws))
            throw Error("study cell " + group + ": only " + std::to_string(cell.trials.size()) + " valid trials in " +
                        std::to_string(cell.drawn) + " draws");
        // Size the next batch from the valid fraction seen so far.
        const double valid = std::max<double>(1.0, static_cast<double>(cell.trials.size()));
        const double need = static_cast<double>(target - cell.trials.size());
        batch = static_cast<std::size_t>(std::ceil(need * static_cast<double>(cell.drawn) / valid));
        batch = std::clamp<std::size_t>(batch, 1, static_cast<std::size_t>(config.max_draws) - cell.drawn);
    }
    return cell;
}

StudyResult run_type1(const StudyConfig &config, const UNet &net) {
    StudyResult r{"type1", config, {}, nlohmann::json::object()};
    r.cells.push_back(run_cell(config, net, {}, config.cov, static_cast<double>(config.n), 0.0, false));
    return r;
}

StudyResult run_power(const StudyConfig &config, const UNet &net, const std::vector<double> &deltas) {
    StudyResult r{"power", config, {}, nlohmann::json::object()};
    for (double d : deltas)
        r.cells.push_back(run_cell(config, net, {}, config.cov, d, d, true));
    return r;
}

StudyResult run_robustness(const StudyConfig &config, const UNet &net, const std::vector<Family> &families,
                           const std::vector<double> &distances) {
    StudyResult r{"robustness", config, {}, nlohmann::json::object()};
    nlohmann::json calibration = nlohmann::json::array();
    for (auto f : families)
        for (double d : distances) {
            const double param = calibrate_family(f, d);
            calibration.push_back({{"family", family_name(f)},
                                   {"target_w1", d},
                                   {"param", param},
                                   {"w1", wasserstein1_to_std_normal(f, param)}});
            NoiseSource source{StandardizedFamily(f, param)};
            r.cells.push_back(run_cell(config, net, source, family_name(f), d, 0.0, false));
        }
    r.extra["calibration"] = calibration;
    return r;
}

std::vector<std::string> study_methods(const StudyConfig &config) {
    std::vector<std::string> m{"selective", "oc", "naive", "bonferroni"};
    if (config.permutations > 0)
        m.push_back("permutation");
    return m;
}

double method_p(const TrialRecord &record, const std::string &method) {
    if (method == "selective")
        return record.p_selective;
    if (method == "oc")
        return record.p_oc;
    if (method == "naive")
        return record.p_naive;
    if (method == "bonferroni")
        return record.p_bonferroni;
    if (method == "permutation") {
        if (!record.p_permutation)
            throw Error("trial has no permutation p-value");
        return *record.p_permutation;
    }
    throw Error("unknown method '" + method + "'");
}

std::vector<RateRow> summarize(const StudyResult &result) {
    std::vector<RateRow> rows;
    const auto methods = study_methods(result.config);
    for (const auto &cell : result.cells) {
        std::vector<std::string> bases{"all"};
        if (cell.has_signal)
            bases.push_back("overlap");
        for (const auto &basis : bases)
            for (const auto &method : methods)
                for (double alpha : result.config.alphas) {
                    RateRow row{cell.group, cell.setting, method, alpha, basis};
                    for (const auto &t : cell.trials) {
                        if (basis == "overlap" && !t.overlap)
                            continue;
                        ++row.count;
                        if (method_p(t, method) <= alpha)
                            ++row.rejections;
                    }
                    row.rate = row.count ? static_cast<double>(row.rejections) / static_cast<double>(row.count) : 0.0;
                    const auto ci = stats::clopper_pearson(row.rejections, row.count, 0.95);
                    row.ci_lo = ci.lo;
                    row.ci_hi = ci.hi;
                    rows.push_back(row);
                }
    }
    return rows;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string label(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string rate(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

std::string summary_csv(const StudyResult &result) {
    std::ostringstream out;
    out << "group,setting,method,alpha,basis,count,rejections,rejection_rate,ci_lo,ci_hi\n";
    for (const auto &r : summarize(result))
        out << r.group << ',' << label(r.setting) << ',' << r.method << ',' << label(r.alpha) << ',' << r.basis << ','
            << r.count << ',' << r.rejections << ',' << rate(r.rate) << ',' << rate(r.ci_lo) << ','
            << rate(r.ci_hi) << '\n';
    for (const auto &c : result.cells)
        out << "# group=" << c.group << " setting=" << label(c.setting) << " drawn=" << c.drawn
            << " valid=" << c.trials.size() << " excluded_empty=" << c.excluded_empty
            << " excluded_error=" << c.excluded_error << '\n';
    return out.str();
}

std::string trials_csv(const StudyResult &result, const std::vector<const Cell *> &cells) {
    std::ostringstream out;
    const bool perm = result.config.permutations > 0;
    out << "group,setting,index,seed,region_size,overlap,z_obs,sigma2,p_selective,p_oc,p_naive,p_bonferroni";
    if (perm)
        out << ",p_permutation";
    out << ",intervals,pieces\n";
    for (const auto *c : cells)
        for (const auto &t : c->trials) {
            out << c->group << ',' << label(c->setting) << ',' << t.index << ',' << t.seed << ',' << t.region_size
                << ',' << (c->has_signal ? (t.overlap ? "1" : "0") : "") << ',' << num(t.z_obs) << ','
                << num(t.sigma2) << ',' << num(t.p_selective) << ',' << num(t.p_oc) << ',' << num(t.p_naive) << ','
                << num(t.p_bonferroni);
            if (perm)
                out << ',' << num(t.p_permutation.value_or(1.0));
            out << ',' << t.intervals << ',' << t.pieces << '\n';
        }
    return out.str();
}

namespace {

void write_file(const std::filesystem::path &path, const std::string &text) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot write " + path.string());
    f << text;
}

} // namespace

void write_study(const StudyResult &result, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    std::vector<const Cell *> all;
    for (const auto &c : result.cells)
        all.push_back(&c);
    write_file(dir / "summary.csv", summary_csv(result));
    write_file(dir / "trials.csv", trials_csv(result, all));

    nlohmann::json cells = nlohmann::json::array();
    for (const auto &c : result.cells)
        cells.push_back({{"group", c.group},
                         {"setting", c.setting},
                         {"drawn", c.drawn},
                         {"valid", c.trials.size()},
                         {"excluded_empty", c.excluded_empty},
                         {"excluded_error", c.excluded_error}});
    nlohmann::json doc = {{"kind", result.kind}, {"config", result.config.to_json()}, {"cells", cells}};
    for (const auto &[k, v] : result.extra.items())
        doc[k] = v;
    write_file(dir / "config.json", doc.dump(2) + "\n");

    if (result.kind == "robustness") {
        std::vector<std::string> groups;
        for (const auto &c : result.cells)
            if (std::find(groups.begin(), groups.end(), c.group) == groups.end())
                groups.push_back(c.group);
        for (const auto &g : groups) {
            std::vector<const Cell *> mine;
            for (const auto &c : result.cells)
                if (c.group == g)
                    mine.push_back(&c);
            std::filesystem::create_directories(dir / g);
            write_file(dir / g / "trials.csv", trials_csv(result, mine));
        }
    }
}

double OracleReport::agreement() const {
    return grid_points ? static_cast<double>(agreements) / static_cast<double>(grid_points) : 0.0;
}

nlohmann::json OracleReport::to_json() const {
    return {{"grid_points", grid_points},
            {"agreements", agreements},
            {"agreement", agreement()},
            {"disagreements_far", disagreements_far},
            {"max_endpoint_distance", max_endpoint_distance},
            {"z_obs_inside", z_obs_inside},
            {"gamma", gamma},
            {"pieces", pieces},
            {"intervals", intervals}};
}

OracleReport oracle_check(const TestInstance &instance, const Pipeline &pipeline, const SearchConfig &search,
                          double grid_step) {
    if (!(grid_step > 0.0))
        throw Error("oracle grid step must be positive");
    const auto observed = pipeline.region(instance.x);
    const auto d = decompose(instance, observed);
    const auto result = parametric_search(pipeline, observed, d, search);

    OracleReport rep;
    rep.gamma = result.gamma;
    rep.pieces = result.pieces;
    rep.intervals = result.truncation.size();
    rep.z_obs_inside = result.truncation.contains(d.z_obs);

    std::vector<double> endpoints;
    for (const auto &iv : result.truncation.intervals()) {
        endpoints.push_back(iv.lo);
        endpoints.push_back(iv.hi);
    }
    const std::size_t n = instance.pixels();
    const auto count = static_cast<std::size_t>(std::floor(result.range.width() / grid_step)) + 1;
    std::vector<double> x(n);
    for (std::size_t g = 0; g < count; ++g) {
        const double z = result.range.lo + static_cast<double>(g) * grid_step;
        for (std::size_t i = 0; i < n; ++i)
            x[i] = d.a[i] + d.b[i] * z;
        const bool grid_in = pipeline.region(x) == observed;
        ++rep.grid_points;
        if (grid_in == result.truncation.contains(z)) {
            ++rep.agreements;
            continue;
        }
        double nearest = kInf;
        for (double e : endpoints)
            nearest = std::min(nearest, std::abs(z - e));
        rep.max_endpoint_distance = std::max(rep.max_endpoint_distance, nearest);
        if (nearest > 2.0 * result.gamma)
            ++rep.disagreements_far;
    }
    return rep;
}

} // namespace dal
