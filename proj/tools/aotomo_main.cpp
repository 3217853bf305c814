// Batch experiment driver for the tomography library.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aotomo/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::vector<std::uint64_t> seeds;
    int threads = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_seeds = true) {
    cmd->add_option("--config", args.config_path, "experiment config file (JSON)")
        ->required();
    cmd->add_option("--out", args.out_dir, "output directory (overrides run.out)");
    cmd->add_option("--threads", args.threads, "worker threads for independent trials")
        ->check(CLI::PositiveNumber);
    if (with_seeds) {
        cmd->add_option_function<std::uint64_t>(
            "--seed", [&args](std::uint64_t s) { args.seeds = {s}; }, "single seed override");
        cmd->add_option_function<std::string>(
            "--seeds",
            [&args](const std::string& spec) {
                const auto dots = spec.find("..");
                if (dots == std::string::npos)
                    throw CLI::ValidationError("--seeds", "expected a..b");
                const std::uint64_t a = std::stoull(spec.substr(0, dots));
                const std::uint64_t b = std::stoull(spec.substr(dots + 2));
                if (b < a) throw CLI::ValidationError("--seeds", "range is empty");
                args.seeds.clear();
                for (std::uint64_t s = a; s <= b; ++s) args.seeds.push_back(s);
            },
            "inclusive seed range a..b override");
    }
}

aotomo::ExperimentConfig load_with_overrides(const CommonArgs& args) {
    aotomo::ExperimentConfig cfg = aotomo::load_experiment_config(args.config_path);
    if (!args.seeds.empty()) cfg.seeds = args.seeds;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

// returns true if any record diverged so the caller can exit with the
// numerical-failure code
bool print_records(const std::vector<aotomo::RunRecord>& records) {
    bool diverged = false;
    for (const auto& r : records) {
        std::cout << "seed " << r.seed << " solver " << r.solver << " objective "
                  << aotomo::fmt17(r.final_objective) << " nnz " << r.nnz_rho << " strehl(center) "
                  << aotomo::fmt17(r.center_strehl) << " strehl(mean) "
                  << aotomo::fmt17(r.mean_strehl) << (r.diverged ? " DIVERGED" : "") << "\n";
        diverged = diverged || r.diverged;
    }
    return diverged;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"atmospheric tomography batch experiments"};
    app.require_subcommand(1);

    CommonArgs run_args, sweep_args, compare_args, select_args, cost_args, validate_args;
    auto* cmd_run = app.add_subcommand("run", "single-solver pipeline over the configured seeds");
    add_common(cmd_run, run_args);
    auto* cmd_sweep = app.add_subcommand("sweep-alpha", "alpha x seed cross product");
    add_common(cmd_sweep, sweep_args);
    auto* cmd_compare = app.add_subcommand("compare", "solver comparison on shared atmospheres");
    add_common(cmd_compare, compare_args);
    auto* cmd_select = app.add_subcommand("layer-select", "sparsifier vs. candidate baselines");
    add_common(cmd_select, select_args);
    auto* cmd_cost = app.add_subcommand("cost", "per-iteration flop counts");
    add_common(cmd_cost, cost_args, false);
    auto* cmd_validate = app.add_subcommand("validate-config", "parse and check a config");
    add_common(cmd_validate, validate_args, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (cmd_run->parsed()) {
            const auto ctx = aotomo::build_context(load_with_overrides(run_args));
            if (print_records(aotomo::command_run(ctx, run_args.threads))) {
                std::cerr << "numerical error: at least one run diverged\n";
                return kExitNumerical;
            }
        } else if (cmd_sweep->parsed()) {
            const auto ctx = aotomo::build_context(load_with_overrides(sweep_args));
            aotomo::command_sweep_alpha(ctx, sweep_args.threads);
            std::cout << "sweep complete: " << ctx.cfg.sweep_alphas.size() << " alphas x "
                      << ctx.cfg.seeds.size() << " seeds\n";
        } else if (cmd_compare->parsed()) {
            const auto ctx = aotomo::build_context(load_with_overrides(compare_args));
            if (print_records(aotomo::command_compare(ctx, compare_args.threads))) {
                std::cerr << "numerical error: at least one run diverged\n";
                return kExitNumerical;
            }
        } else if (cmd_select->parsed()) {
            const auto ctx = aotomo::build_context(load_with_overrides(select_args));
            const auto report = aotomo::command_layer_select(ctx, select_args.threads);
            std::cout << "layer-select: survivor matched the best candidate in "
                      << aotomo::fmt17(100.0 * report.hit_fraction) << "% of "
                      << report.trials.size() << " seeds\n";
        } else if (cmd_cost->parsed()) {
            aotomo::command_cost(load_with_overrides(cost_args));
            std::cout << "cost table written\n";
        } else if (cmd_validate->parsed()) {
            const auto cfg = load_with_overrides(validate_args);
            aotomo::build_context(cfg, /*with_covariances=*/false);
            std::cout << "config ok, hash " << cfg.config_hash << ", " << cfg.seeds.size()
                      << " seeds, " << cfg.profile.layer_count() << " layers\n";
        }
    } catch (const aotomo::io_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const aotomo::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const aotomo::invalid_geometry_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const aotomo::invalid_profile_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const aotomo::grid_coverage_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const aotomo::ill_conditioned_covariance_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const aotomo::numerical_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
