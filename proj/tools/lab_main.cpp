// Command line front end.
// Exit codes: 0 run passed, 1 run completed but failed its acceptance rule,
// 2 invalid config or arguments, 3 runtime failure.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lab/lab.hpp"

namespace {

int resolve_jobs(int cli_jobs) {
    if (cli_jobs > 0) return cli_jobs;
    if (const char* env = std::getenv("LAB_JOBS")) {
        const int j = std::atoi(env);
        if (j > 0) return j;
    }
    return 0;  // defer to config, then hardware
}

void print_summary(const lab::RunReport& rep) {
    std::cout << "kind: " << rep.config["kind"].get<std::string>() << "\n";
    std::cout << "rows: " << rep.rows.size() << "\n";
    std::cout << "wall_seconds: " << rep.wall_seconds << "\n";
    std::cout << "summary: " << rep.summary.dump(2) << "\n";
    std::cout << (rep.pass ? "PASS" : "FAIL") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"numerical laboratory for deterministic diffusion samplers"};
    app.require_subcommand(1);

    std::string run_config, run_out;
    int run_jobs = 0;
    std::uint64_t run_seed = 0;
    bool run_has_seed = false;
    auto* run = app.add_subcommand("run", "run an experiment config, write artifacts");
    run->add_option("config", run_config, "JSON config file")->required();
    run->add_option("--out", run_out, "output directory (overrides config)");
    run->add_option("--jobs", run_jobs, "worker threads (or env LAB_JOBS)");
    run->add_option("--seed", run_seed, "seed override")->each([&](const std::string&) {
        run_has_seed = true;
    });

    std::string val_config;
    auto* val = app.add_subcommand("validate", "check a config without running it");
    val->add_option("config", val_config, "JSON config file")->required();

    std::string plot_csv, plot_x, plot_y, plot_group, plot_out = "plot.svg";
    bool plot_logx = false, plot_logy = false;
    auto* plot = app.add_subcommand("plot", "render an SVG plot from a metrics CSV");
    plot->add_option("csv", plot_csv, "metrics.csv produced by run")->required();
    plot->add_option("--x", plot_x, "x column name")->required();
    plot->add_option("--y", plot_y, "y column name")->required();
    plot->add_option("--group", plot_group, "optional series column");
    plot->add_option("--out", plot_out, "output SVG path");
    plot->add_flag("--log-x", plot_logx, "log scale on x");
    plot->add_flag("--log-y", plot_logy, "log scale on y");
    plot->add_flag("--log-log", [&](std::int64_t) { plot_logx = plot_logy = true; },
                   "log scale on both axes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) {
            nlohmann::json cfg;
            try {
                cfg = lab::load_config(run_config);
            } catch (const std::exception& e) {
                std::cerr << e.what() << "\n";
                return 2;
            }
            const auto errs = lab::validate_config(cfg);
            if (!errs.empty()) {
                for (const auto& e : errs) std::cerr << "config error: " << e << "\n";
                return 2;
            }
            const lab::RunReport rep = lab::run_experiment(
                cfg, run_out, resolve_jobs(run_jobs), run_seed, run_has_seed);
            print_summary(rep);
            return rep.pass ? 0 : 1;
        }
        if (val->parsed()) {
            nlohmann::json cfg;
            try {
                cfg = lab::load_config(val_config);
            } catch (const std::exception& e) {
                std::cerr << e.what() << "\n";
                return 2;
            }
            const auto errs = lab::validate_config(cfg);
            if (errs.empty()) {
                std::cout << "valid\n";
                return 0;
            }
            for (const auto& e : errs) std::cerr << "config error: " << e << "\n";
            return 2;
        }
        // plot
        lab::PlotSpec spec;
        spec.title = plot_y + " vs " + plot_x;
        spec.xlabel = plot_x;
        spec.ylabel = plot_y;
        spec.log_x = plot_logx;
        spec.log_y = plot_logy;
        lab::emit_plot_from_csv(plot_csv, plot_x, plot_y, plot_group, spec, plot_out);
        std::cout << "wrote " << plot_out << "\n";
        return 0;
    } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 3;
    }
}
