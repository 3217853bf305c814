#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "aotomo/common.hpp"
#include "aotomo/evaluation.hpp"
#include "aotomo/geometry.hpp"
#include "aotomo/solvers.hpp"
#include "aotomo/tomography.hpp"
#include "aotomo/turbulence.hpp"

namespace aotomo {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
    Aperture aperture;
    int n_ap = 21;
    double spacing_override = 0.0;  // layer grid spacing, 0 = aperture spacing
    int dense_cap = 4096;

    std::vector<GuideStar> stars;
    AtmosphereProfile profile;
    ClusterPartition partition;

    std::string solver_name;
    SolverConfig solver;

    double noise_sigma = 0.0;
    std::uint64_t noise_seed = 0;

    int eval_grid_k = 5;
    double eval_fov_arcmin = 3.0;

    std::vector<std::uint64_t> seeds;
    std::string out_dir = "results";

    // command-specific blocks
    std::vector<double> sweep_alphas;
    std::vector<std::pair<std::string, SolverConfig>> compare_solvers;
    std::vector<int> candidate_layers;
    SolverConfig baseline_solver;
    bool has_baseline = false;
    long long cost_G = 6, cost_L_full = 40, cost_L_reduced = 5, cost_n = 1;

    std::uint64_t config_hash = 0;
    json raw;
};

namespace detail {

template <class T>
T get_or(const json& j, const std::string& key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw config_error("bad value for '" + key + "': " + e.what());
    }
}

template <class T>
T require(const json& j, const std::string& key) {
    if (!j.contains(key)) throw config_error("missing required config key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw config_error("bad value for '" + key + "': " + e.what());
    }
}

inline SolverVariant parse_variant(const std::string& name) {
    if (name == "am") return SolverVariant::AM;
    if (name == "am-direct") return SolverVariant::AMDirect;
    if (name == "ista") return SolverVariant::ISTA;
    if (name == "fista") return SolverVariant::FISTA;
    throw config_error("unknown solver variant '" + name + "'");
}

inline SolverConfig parse_solver_block(const json& j, int layer_count, std::string* name_out) {
    SolverConfig cfg;
    const std::string variant = get_or<std::string>(j, "variant", "am");
    cfg.variant = parse_variant(variant);
    if (name_out) *name_out = get_or<std::string>(j, "name", variant);
    cfg.alpha = get_or(j, "alpha", cfg.alpha);
    cfg.epsilon = get_or(j, "epsilon",
                         cfg.variant == SolverVariant::AMDirect ? 1e-10 : cfg.epsilon);
    cfg.inner = get_or(j, "inner", cfg.inner);
    cfg.outer = get_or(j, "outer", cfg.outer);
    cfg.rel_tol = get_or(j, "rel_tol", cfg.rel_tol);
    cfg.freeze_rho = get_or(j, "freeze_rho", cfg.freeze_rho);
    if (j.contains("lambda")) {
        const auto& l = j.at("lambda");
        if (l.is_string()) {
            if (l.get<std::string>() != "auto")
                throw config_error("lambda must be a number or \"auto\"");
            cfg.lambda = 0.0;
        } else {
            cfg.lambda = l.get<double>();
            if (!(cfg.lambda > 0.0)) throw config_error("lambda must be positive");
        }
    }
    const std::string rule = get_or<std::string>(j, "stepsize_rule", "constant");
    if (rule == "constant")
        cfg.stepsize_rule = StepsizeRule::Constant;
    else if (rule == "steepest-descent")
        cfg.stepsize_rule = StepsizeRule::SteepestDescent;
    else
        throw config_error("unknown stepsize_rule '" + rule + "'");
    if (j.contains("rho_init")) {
        const auto& r = j.at("rho_init");
        if (r.is_string()) {
            const std::string preset = r.get<std::string>();
            if (preset == "ground-heavy")
                cfg.rho_init = rho_init_ground_heavy(layer_count);
            else if (preset == "uniform")
                cfg.rho_init = rho_init_uniform(layer_count);
            else
                throw config_error("unknown rho_init preset '" + preset + "'");
        } else {
            cfg.rho_init = r.get<std::vector<double>>();
        }
    }
    cfg.validate();
    return cfg;
}

inline AtmosphereProfile parse_profile(const json& node, const std::filesystem::path& base) {
    json j = node;
    if (node.is_object() && node.contains("path")) {
        const std::filesystem::path p = base / node.at("path").get<std::string>();
        std::ifstream in(p);
        if (!in) throw io_error("cannot open profile file " + p.string());
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw config_error("profile file " + p.string() + ": " + e.what());
        }
    }
    const auto altitudes = require<std::vector<double>>(j, "altitudes");
    const auto rho = require<std::vector<double>>(j, "rho");
    double sum = 0.0;
    for (double r : rho) sum += r;
    if (std::abs(sum - 1.0) > 1e-9)
        std::cerr << "warning: profile weights sum to " << sum << ", renormalizing\n";
    const TurbulenceStatistics stats(get_or(j, "r0", 0.15), get_or(j, "L0", 25.0));
    return AtmosphereProfile(altitudes, rho, stats);
}

inline std::vector<GuideStar> parse_asterism(const json& j) {
    if (j.contains("preset")) {
        const std::string preset = j.at("preset").get<std::string>();
        if (preset != "circular") throw config_error("unknown asterism preset '" + preset + "'");
        return circular_asterism(require<int>(j, "count"), require<double>(j, "radius_arcmin"));
    }
    std::vector<GuideStar> stars;
    for (const auto& s : require<json>(j, "stars")) {
        const auto dir = require<std::vector<double>>(s, "direction_arcmin");
        if (dir.size() != 2) throw config_error("star direction needs two components");
        const Vec2 d(arcmin_to_rad(dir[0]), arcmin_to_rad(dir[1]));
        const std::string kind = get_or<std::string>(s, "kind", "ngs");
        if (kind == "ngs")
            stars.push_back(GuideStar::ngs(d));
        else if (kind == "lgs")
            stars.push_back(GuideStar::lgs(d, require<double>(s, "beacon_altitude")));
        else
            throw config_error("unknown star kind '" + kind + "'");
    }
    if (stars.empty()) throw config_error("asterism has no stars");
    return stars;
}

inline ClusterPartition parse_clusters(const json& j, int layer_count) {
    if (j.is_string()) {
        if (j.get<std::string>() != "single")
            throw config_error("clusters must be \"single\" or an explicit list");
        return ClusterPartition::single(layer_count);
    }
    std::vector<std::vector<int>> clusters;
    std::vector<double> d;
    for (const auto& c : j) {
        clusters.push_back(require<std::vector<int>>(c, "layers"));
        d.push_back(require<double>(c, "d"));
    }
    try {
        return ClusterPartition(std::move(clusters), std::move(d), layer_count);
    } catch (const constraint_violation_error& e) {
        throw config_error(std::string("invalid cluster block: ") + e.what());
    }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j,
                                                const std::filesystem::path& base = ".") {
    ExperimentConfig cfg;
    cfg.raw = j;
    cfg.config_hash = fnv1a_hash(j.dump());

    const json ap = detail::require<json>(j, "aperture");
    const double D = detail::require<double>(ap, "D");
    const double d = detail::get_or(ap, "d", 0.0);
    cfg.aperture = Aperture(d / 2.0, D / 2.0);  // config uses diameters
    cfg.n_ap = detail::get_or(ap, "n_ap", cfg.n_ap);
    if (cfg.n_ap < 2) throw config_error("aperture n_ap must be >= 2");
    cfg.spacing_override = detail::get_or(ap, "layer_spacing", 0.0);
    cfg.dense_cap = detail::get_or(j, "dense_cap", cfg.dense_cap);

    cfg.stars = detail::parse_asterism(detail::require<json>(j, "asterism"));
    cfg.profile = detail::parse_profile(detail::require<json>(j, "profile"), base);
    const int L = cfg.profile.layer_count();

    cfg.partition = j.contains("clusters")
                        ? detail::parse_clusters(j.at("clusters"), L)
                        : ClusterPartition::single(L);
    cfg.solver = detail::parse_solver_block(detail::get_or<json>(j, "solver", json::object()), L,
                                            &cfg.solver_name);

    const json noise = detail::get_or<json>(j, "noise", json::object());
    cfg.noise_sigma = detail::get_or(noise, "sigma", 0.0);
    if (cfg.noise_sigma < 0.0) throw config_error("noise sigma must be nonnegative");
    cfg.noise_seed = detail::get_or<std::uint64_t>(noise, "seed", 0);

    const json eval = detail::get_or<json>(j, "evaluation", json::object());
    cfg.eval_grid_k = detail::get_or(eval, "grid", cfg.eval_grid_k);
    cfg.eval_fov_arcmin = detail::get_or(eval, "fov_arcmin", cfg.eval_fov_arcmin);
    if (cfg.eval_grid_k < 1) throw config_error("evaluation grid must be >= 1");

    const json run = detail::get_or<json>(j, "run", json::object());
    cfg.seeds = detail::get_or<std::vector<std::uint64_t>>(run, "seeds", {1});
    if (cfg.seeds.empty()) throw config_error("run.seeds must be nonempty");
    cfg.out_dir = detail::get_or<std::string>(run, "out", cfg.out_dir);

    if (j.contains("sweep"))
        cfg.sweep_alphas = detail::require<std::vector<double>>(j.at("sweep"), "alphas");
    if (j.contains("compare")) {
        for (const auto& s : detail::require<json>(j.at("compare"), "solvers")) {
            std::string name;
            SolverConfig sc = detail::parse_solver_block(s, L, &name);
            cfg.compare_solvers.emplace_back(name, sc);
        }
    }
    if (j.contains("layer_select")) {
        const json& ls = j.at("layer_select");
        cfg.candidate_layers = detail::require<std::vector<int>>(ls, "candidates");
        for (int c : cfg.candidate_layers)
            if (c < 0 || c >= L) throw config_error("layer_select candidate out of range");
        if (ls.contains("baseline")) {
            cfg.baseline_solver = detail::parse_solver_block(ls.at("baseline"), 3, nullptr);
            cfg.has_baseline = true;
        }
    }
    if (j.contains("cost")) {
        const json& c = j.at("cost");
        cfg.cost_G = detail::get_or<long long>(c, "G", cfg.cost_G);
        cfg.cost_L_full = detail::get_or<long long>(c, "L_full", cfg.cost_L_full);
        cfg.cost_L_reduced = detail::get_or<long long>(c, "L_reduced", cfg.cost_L_reduced);
        cfg.cost_n = detail::get_or<long long>(c, "n", cfg.cost_n);
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw config_error(std::string("config parse failure: ") + e.what());
    }
    return parse_experiment_config(j, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Experiment context: geometry, covariances and operators built once per
// config and shared (read-only) across all trials.

struct ExperimentContext {
    ExperimentConfig cfg;
    EvaluationGrid eval_grid;
    std::vector<LayerGrid> grids;
    std::vector<LayerCovariance> covs;
    TomographyOperator science_op;
    TomographyOperator eval_op;
    TomographyOperator center_op;
};

inline ExperimentContext build_context(ExperimentConfig cfg, bool with_covariances = true) {
    ExperimentContext ctx;
    ctx.cfg = std::move(cfg);
    const ExperimentConfig& c = ctx.cfg;
    ctx.eval_grid = EvaluationGrid::square(c.eval_grid_k, c.eval_fov_arcmin);

    std::vector<Vec2> extra = ctx.eval_grid.directions;
    extra.emplace_back(0.0, 0.0);
    ctx.grids = default_layer_grids(c.aperture, c.n_ap, c.stars, c.profile.altitudes, extra,
                                    c.spacing_override);
    ctx.science_op = build_operator(c.aperture, c.n_ap, c.stars, ctx.grids);

    std::vector<GuideStar> eval_stars;
    for (const auto& d : ctx.eval_grid.directions) eval_stars.push_back(GuideStar::ngs(d));
    ctx.eval_op = build_operator(c.aperture, c.n_ap, eval_stars, ctx.grids);
    ctx.center_op = build_operator(c.aperture, c.n_ap, {GuideStar::ngs({0.0, 0.0})}, ctx.grids);

    if (with_covariances)
        for (const auto& g : ctx.grids)
            ctx.covs.push_back(build_layer_covariance(g, c.profile.stats, c.dense_cap));
    return ctx;
}

// ---------------------------------------------------------------------------
// Single trial

struct RunRecord {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::string solver;
    double final_objective = 0.0;
    int iterations = 0;
    bool converged = false;
    bool diverged = false;
    int nnz_rho = 0;
    std::vector<double> rho;
    double center_strehl = 0.0;
    double mean_strehl = 0.0;
    std::vector<double> epsilon;
    std::vector<double> residual_epsilon;
    std::vector<double> objective_trace;
    QualityReport quality;
    double wall_seconds = 0.0;  // excluded from reproducible outputs
};

inline NoiseModel trial_noise(const ExperimentConfig& cfg, std::uint64_t seed) {
    // decorrelate the measurement noise stream from the atmosphere stream
    return NoiseModel(cfg.noise_sigma, cfg.noise_seed ^ (seed * 0x9e3779b97f4a7c15ULL + 1));
}

inline RunRecord run_single(const ExperimentContext& ctx, const SolverConfig& solver,
                            const std::string& solver_name, std::uint64_t seed) {
    const ExperimentConfig& cfg = ctx.cfg;
    const LayerStack phi_true = sample_atmosphere(cfg.profile, ctx.covs, seed);
    const NoiseModel noise = trial_noise(cfg, seed);
    const WavefrontSet data = add_noise(ctx.science_op.forward(phi_true), noise);

    const auto t0 = std::chrono::steady_clock::now();
    ReconstructionResult res;
    try {
        res = reconstruct(data, ctx.science_op, ctx.covs, cfg.partition, solver, noise);
    } catch (const std::runtime_error& e) {
        throw numerical_error("seed " + std::to_string(seed) + ", solver " + solver_name + ": " +
                              e.what());
    }
    const auto t1 = std::chrono::steady_clock::now();

    RunRecord rec;
    rec.config_hash = cfg.config_hash;
    rec.seed = seed;
    rec.solver = solver_name;
    rec.final_objective = res.objective_trace.empty() ? 0.0 : res.objective_trace.back();
    rec.iterations = res.iterations;
    rec.converged = res.converged;
    rec.diverged = res.diverged;
    rec.nnz_rho = nnz(res.rho);
    rec.rho = res.rho;
    rec.objective_trace = res.objective_trace;
    rec.quality = evaluate_quality(phi_true, res.phi, ctx.science_op, ctx.eval_op, ctx.center_op);
    rec.center_strehl = rec.quality.center_strehl;
    rec.mean_strehl = rec.quality.mean_strehl;
    rec.epsilon = rec.quality.epsilon_per_star;
    rec.residual_epsilon = rec.quality.residual_epsilon_per_star;
    rec.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    return rec;
}

// ---------------------------------------------------------------------------
// Parallel trial execution with deterministic, ordered collection

template <class Fn>
void parallel_for(int count, int threads, const Fn& fn) {
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    const int workers = std::min(threads, count);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// CSV / plot-data emission. All floating-point values carry 17 significant
// digits; every table is stamped with the config hash and seed list so
// identical inputs reproduce identical files.

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class TableWriter {
  public:
    TableWriter(const std::filesystem::path& path, const ExperimentConfig& cfg,
                const std::vector<std::string>& columns, char sep = ',')
        : sep_(sep) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        out_.open(path);
        if (!out_) throw io_error("cannot open output file " + path.string());
        out_ << "# config_hash=" << cfg.config_hash << "\n# seeds=";
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
            out_ << (i ? " " : "") << cfg.seeds[i];
        out_ << "\n";
        row(columns);
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << sep_;
            out_ << cells[i];
        }
        out_ << "\n";
        if (!out_) throw io_error("write failure on output table");
    }

  private:
    std::ofstream out_;
    char sep_;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
}

inline double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

/// `run`: one full pipeline per seed with the configured solver.
inline std::vector<RunRecord> command_run(const ExperimentContext& ctx, int threads = 1) {
    const ExperimentConfig& cfg = ctx.cfg;
    std::vector<RunRecord> records(cfg.seeds.size());
    parallel_for(static_cast<int>(cfg.seeds.size()), threads, [&](int i) {
        records[i] = run_single(ctx, cfg.solver, cfg.solver_name, cfg.seeds[i]);
    });

    const std::filesystem::path out(cfg.out_dir);
    TableWriter runs(out / "runs.csv", cfg,
                     {"seed", "solver", "final_objective", "iterations", "converged", "diverged",
                      "nnz_rho", "center_strehl", "mean_strehl", "mean_epsilon"});
    TableWriter rho(out / "rho.csv", cfg, {"seed", "layer", "altitude", "rho"});
    TableWriter trace(out / "trace.csv", cfg, {"seed", "iteration", "objective"});
    TableWriter quality(out / "quality.csv", cfg,
                        {"seed", "dir_x_arcmin", "dir_y_arcmin", "strehl"});
    TableWriter epsilon(out / "epsilon.csv", cfg,
                        {"seed", "star", "epsilon", "residual_epsilon"});
    TableWriter radial(out / "radial.csv", cfg, {"seed", "radius_arcmin", "strehl"});
    TableWriter radial_dat(out / "radial.dat", cfg, {"seed", "radius_arcmin", "strehl"}, ' ');
    TableWriter timings(out / "timings.csv", cfg, {"seed", "wall_seconds"});

    for (const auto& r : records) {
        const std::string seed = std::to_string(r.seed);
        runs.row({seed, r.solver, fmt17(r.final_objective), std::to_string(r.iterations),
                  r.converged ? "1" : "0", r.diverged ? "1" : "0", std::to_string(r.nnz_rho),
                  fmt17(r.center_strehl), fmt17(r.mean_strehl),
                  fmt17(detail::mean_of(r.epsilon))});
        for (std::size_t l = 0; l < r.rho.size(); ++l)
            rho.row({seed, std::to_string(l), fmt17(cfg.profile.altitudes[l]), fmt17(r.rho[l])});
        for (std::size_t k = 0; k < r.objective_trace.size(); ++k)
            trace.row({seed, std::to_string(k + 1), fmt17(r.objective_trace[k])});
        for (std::size_t q = 0; q < r.quality.directions.size(); ++q)
            quality.row({seed, fmt17(rad_to_arcmin(r.quality.directions[q].x())),
                         fmt17(rad_to_arcmin(r.quality.directions[q].y())),
                         fmt17(r.quality.strehl_values[q])});
        for (std::size_t g = 0; g < r.epsilon.size(); ++g)
            epsilon.row({seed, std::to_string(g), fmt17(r.epsilon[g]),
                         fmt17(r.residual_epsilon[g])});
        for (const auto& [radius, s] :
             radial_average(r.quality.directions, r.quality.strehl_values)) {
            radial.row({seed, fmt17(radius), fmt17(s)});
            radial_dat.row({seed, fmt17(radius), fmt17(s)});
        }
        timings.row({seed, fmt17(r.wall_seconds)});
    }
    return records;
}

/// `sweep-alpha`: cross product of the configured alphas and seeds.
inline std::vector<RunRecord> command_sweep_alpha(const ExperimentContext& ctx, int threads = 1) {
    const ExperimentConfig& cfg = ctx.cfg;
    if (cfg.sweep_alphas.empty())
        throw config_error("sweep-alpha needs a nonempty sweep.alphas block");
    const int n_alpha = static_cast<int>(cfg.sweep_alphas.size());
    const int n_seed = static_cast<int>(cfg.seeds.size());
    std::vector<RunRecord> records(static_cast<std::size_t>(n_alpha) * n_seed);
    parallel_for(n_alpha * n_seed, threads, [&](int i) {
        const int a = i / n_seed;
        const int s = i % n_seed;
        SolverConfig solver = cfg.solver;
        solver.alpha = cfg.sweep_alphas[a];
        records[i] = run_single(ctx, solver, cfg.solver_name, cfg.seeds[s]);
    });

    const std::filesystem::path out(cfg.out_dir);
    TableWriter all(out / "sweep_runs.csv", cfg,
                    {"alpha", "seed", "final_objective", "nnz_rho", "center_strehl",
                     "mean_strehl", "mean_epsilon"});
    TableWriter summary(out / "sweep_summary.csv", cfg,
                        {"alpha", "mean_center_strehl", "std_center_strehl", "mean_field_strehl",
                         "std_field_strehl", "mean_epsilon", "std_epsilon", "mean_nnz"});
    TableWriter summary_dat(out / "sweep_summary.dat", cfg,
                            {"alpha", "mean_center_strehl", "std_center_strehl",
                             "mean_field_strehl", "std_field_strehl", "mean_epsilon",
                             "std_epsilon", "mean_nnz"},
                            ' ');
    TableWriter rho_table(out / "sweep_rho.csv", cfg, {"alpha", "layer", "altitude", "mean_rho"});

    for (int a = 0; a < n_alpha; ++a) {
        std::vector<double> center, field, eps, nnzs;
        std::vector<double> rho_mean(cfg.profile.layer_count(), 0.0);
        for (int s = 0; s < n_seed; ++s) {
            const RunRecord& r = records[static_cast<std::size_t>(a) * n_seed + s];
            all.row({fmt17(cfg.sweep_alphas[a]), std::to_string(r.seed),
                     fmt17(r.final_objective), std::to_string(r.nnz_rho), fmt17(r.center_strehl),
                     fmt17(r.mean_strehl), fmt17(detail::mean_of(r.epsilon))});
            center.push_back(r.center_strehl);
            field.push_back(r.mean_strehl);
            eps.push_back(detail::mean_of(r.epsilon));
            nnzs.push_back(r.nnz_rho);
            for (std::size_t l = 0; l < r.rho.size(); ++l) rho_mean[l] += r.rho[l] / n_seed;
        }
        const std::vector<std::string> row = {
            fmt17(cfg.sweep_alphas[a]),   fmt17(detail::mean_of(center)),
            fmt17(detail::stddev_of(center)), fmt17(detail::mean_of(field)),
            fmt17(detail::stddev_of(field)),  fmt17(detail::mean_of(eps)),
            fmt17(detail::stddev_of(eps)),    fmt17(detail::mean_of(nnzs))};
        summary.row(row);
        summary_dat.row(row);
        for (std::size_t l = 0; l < rho_mean.size(); ++l)
            rho_table.row({fmt17(cfg.sweep_alphas[a]), std::to_string(l),
                           fmt17(cfg.profile.altitudes[l]), fmt17(rho_mean[l])});
    }
    return records;
}

/// `compare`: each configured solver on identical sampled atmospheres.
inline std::vector<RunRecord> command_compare(const ExperimentContext& ctx, int threads = 1) {
    const ExperimentConfig& cfg = ctx.cfg;
    if (cfg.compare_solvers.size() < 2)
        throw config_error("compare needs at least two solver blocks in compare.solvers");
    const int n_solver = static_cast<int>(cfg.compare_solvers.size());
    const int n_seed = static_cast<int>(cfg.seeds.size());
    std::vector<RunRecord> records(static_cast<std::size_t>(n_solver) * n_seed);
    parallel_for(n_solver * n_seed, threads, [&](int i) {
        const int v = i / n_seed;
        const int s = i % n_seed;
        records[i] = run_single(ctx, cfg.compare_solvers[v].second,
                                cfg.compare_solvers[v].first, cfg.seeds[s]);
    });

    const std::filesystem::path out(cfg.out_dir);
    TableWriter all(out / "compare_runs.csv", cfg,
                    {"solver", "seed", "final_objective", "nnz_rho", "center_strehl",
                     "mean_strehl", "mean_epsilon"});
    TableWriter radial(out / "compare_radial.csv", cfg,
                       {"solver", "radius_arcmin", "mean_strehl"});
    TableWriter radial_dat(out / "compare_radial.dat", cfg,
                           {"solver", "radius_arcmin", "mean_strehl"}, ' ');

    for (int v = 0; v < n_solver; ++v) {
        // average radial Strehl curves over seeds
        std::vector<std::pair<double, double>> acc;
        for (int s = 0; s < n_seed; ++s) {
            const RunRecord& r = records[static_cast<std::size_t>(v) * n_seed + s];
            all.row({r.solver, std::to_string(r.seed), fmt17(r.final_objective),
                     std::to_string(r.nnz_rho), fmt17(r.center_strehl), fmt17(r.mean_strehl),
                     fmt17(detail::mean_of(r.epsilon))});
            const auto curve = radial_average(r.quality.directions, r.quality.strehl_values);
            if (acc.empty()) acc.assign(curve.begin(), curve.end());
            else
                for (std::size_t k = 0; k < curve.size(); ++k) acc[k].second += curve[k].second;
        }
        for (auto& [radius, sum] : acc) {
            const double mean = sum / n_seed;
            radial.row({cfg.compare_solvers[v].first, fmt17(radius), fmt17(mean)});
            radial_dat.row({cfg.compare_solvers[v].first, fmt17(radius), fmt17(mean)});
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// Layer selection study

struct LayerSelectTrial {
    std::uint64_t seed = 0;
    int survivor = -1;                    // surviving middle-cluster layer
    std::vector<double> candidate_strehl; // baseline field Strehl per candidate
    bool survivor_is_best = false;
};

struct LayerSelectReport {
    std::vector<LayerSelectTrial> trials;
    double hit_fraction = 0.0;
};

inline LayerSelectReport command_layer_select(const ExperimentContext& ctx, int threads = 1) {
    const ExperimentConfig& cfg = ctx.cfg;
    if (cfg.partition.cluster_count() != 3)
        throw config_error("layer-select needs a 3-cluster partition");
    if (cfg.candidate_layers.empty())
        throw config_error("layer-select needs layer_select.candidates");
    const auto& middle = cfg.partition.clusters[1];
    for (int c : cfg.candidate_layers)
        if (std::find(middle.begin(), middle.end(), c) == middle.end())
            throw config_error("layer_select candidate " + std::to_string(c) +
                               " is not in the middle cluster");

    SolverConfig baseline = cfg.has_baseline ? cfg.baseline_solver : SolverConfig{};
    baseline.freeze_rho = true;
    if (baseline.rho_init.empty() || baseline.rho_init.size() != 3)
        baseline.rho_init = {cfg.partition.d[0], cfg.partition.d[1], cfg.partition.d[2]};

    const int first_layer = cfg.partition.clusters[0].front();
    const int last_layer = cfg.partition.clusters[2].back();

    // reduced three-layer operators per candidate, reusing the full grids/covs
    struct Reduced {
        std::vector<int> layers;
        TomographyOperator op;
        TomographyOperator center_op;
        std::vector<LayerCovariance> covs;
        ClusterPartition partition;
    };
    std::vector<Reduced> reduced(cfg.candidate_layers.size());
    for (std::size_t c = 0; c < cfg.candidate_layers.size(); ++c) {
        Reduced& r = reduced[c];
        r.layers = {first_layer, cfg.candidate_layers[c], last_layer};
        std::vector<LayerGrid> grids;
        for (int l : r.layers) {
            grids.push_back(ctx.grids[l]);
            r.covs.push_back(ctx.covs[l]);
        }
        r.op = build_operator(cfg.aperture, cfg.n_ap, cfg.stars, grids);
        r.center_op = build_operator(cfg.aperture, cfg.n_ap, {GuideStar::ngs({0.0, 0.0})}, grids);
        r.partition = ClusterPartition({{0}, {1}, {2}},
                                       {cfg.partition.d[0], cfg.partition.d[1],
                                        cfg.partition.d[2]},
                                       3);
    }

    LayerSelectReport report;
    report.trials.resize(cfg.seeds.size());
    parallel_for(static_cast<int>(cfg.seeds.size()), threads, [&](int i) {
        LayerSelectTrial trial;
        trial.seed = cfg.seeds[i];
        const LayerStack phi_true = sample_atmosphere(cfg.profile, ctx.covs, trial.seed);
        const NoiseModel noise = trial_noise(cfg, trial.seed);
        const WavefrontSet data = add_noise(ctx.science_op.forward(phi_true), noise);
        const WavefrontSet truth_eval = ctx.eval_op.forward(phi_true);

        // stage 1: sparsifying run on the full stack
        const ReconstructionResult sparse =
            reconstruct(data, ctx.science_op, ctx.covs, cfg.partition, cfg.solver, noise);
        double best_rho = -1.0;
        for (int l : middle)
            if (sparse.rho[l] > best_rho) {
                best_rho = sparse.rho[l];
                trial.survivor = l;
            }

        // stage 2: frozen-weight baseline per candidate three-layer model
        trial.candidate_strehl.resize(reduced.size());
        for (std::size_t c = 0; c < reduced.size(); ++c) {
            const Reduced& r = reduced[c];
            const ReconstructionResult res =
                am_reconstruct(data, r.op, r.covs, r.partition, baseline, noise);
            const Eigen::VectorXd dm = r.center_op.forward(res.phi).star_data[0];
            double mean = 0.0;
            for (int q = 0; q < ctx.eval_op.star_count(); ++q)
                mean += strehl(truth_eval.star_data[q] - dm);
            trial.candidate_strehl[c] = mean / ctx.eval_op.star_count();
        }
        double best = -1.0;
        int best_candidate = -1;
        for (std::size_t c = 0; c < reduced.size(); ++c)
            if (trial.candidate_strehl[c] > best) {
                best = trial.candidate_strehl[c];
                best_candidate = cfg.candidate_layers[c];
            }
        trial.survivor_is_best = (trial.survivor == best_candidate);
        report.trials[i] = trial;
    });

    int hits = 0;
    for (const auto& t : report.trials) hits += t.survivor_is_best ? 1 : 0;
    report.hit_fraction = static_cast<double>(hits) / report.trials.size();

    const std::filesystem::path out(cfg.out_dir);
    TableWriter survivors(out / "layer_select_survivors.csv", cfg,
                          {"seed", "survivor_layer", "survivor_altitude", "survivor_is_best"});
    TableWriter table(out / "layer_select.csv", cfg,
                      {"seed", "candidate_layer", "candidate_altitude", "baseline_strehl"});
    TableWriter summary(out / "layer_select_summary.csv", cfg,
                        {"candidate_layer", "candidate_altitude", "mean_baseline_strehl",
                         "hit_fraction"});
    for (const auto& t : report.trials) {
        survivors.row({std::to_string(t.seed), std::to_string(t.survivor),
                       fmt17(cfg.profile.altitudes[t.survivor]), t.survivor_is_best ? "1" : "0"});
        for (std::size_t c = 0; c < cfg.candidate_layers.size(); ++c)
            table.row({std::to_string(t.seed), std::to_string(cfg.candidate_layers[c]),
                       fmt17(cfg.profile.altitudes[cfg.candidate_layers[c]]),
                       fmt17(t.candidate_strehl[c])});
    }
    for (std::size_t c = 0; c < cfg.candidate_layers.size(); ++c) {
        std::vector<double> vals;
        for (const auto& t : report.trials) vals.push_back(t.candidate_strehl[c]);
        summary.row({std::to_string(cfg.candidate_layers[c]),
                     fmt17(cfg.profile.altitudes[cfg.candidate_layers[c]]),
                     fmt17(detail::mean_of(vals)), fmt17(report.hit_fraction)});
    }
    return report;
}

/// `cost`: per-iteration flop counts for the full and reduced models.
inline void command_cost(const ExperimentConfig& cfg) {
    const long long full = flop_cost(cfg.cost_G, cfg.cost_L_full, cfg.cost_n);
    const long long red = flop_cost(cfg.cost_G, cfg.cost_L_reduced, cfg.cost_n);
    const std::filesystem::path out(cfg.out_dir);
    TableWriter table(out / "cost.csv", cfg,
                      {"G", "L", "n", "flops", "speedup_vs_full"});
    table.row({std::to_string(cfg.cost_G), std::to_string(cfg.cost_L_full),
               std::to_string(cfg.cost_n), std::to_string(full), fmt17(1.0)});
    table.row({std::to_string(cfg.cost_G), std::to_string(cfg.cost_L_reduced),
               std::to_string(cfg.cost_n), std::to_string(red),
               fmt17(static_cast<double>(full) / static_cast<double>(red))});
}

}  // namespace aotomo
