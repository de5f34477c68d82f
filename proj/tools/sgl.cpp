// Command-line front end: loads a recipe, applies overrides, runs it.
//
// Exit codes: 0 on success, 2 for configuration or input errors detected
// before any cell runs, 3 when at least one cell failed.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <sgl/experiment.hpp>

int main(int argc, char** argv) {
    CLI::App app{"Split-depth generalization experiments"};
    app.set_version_flag("--version", std::string("sgl ") + sgl::kVersion);

    std::string config_name;
    std::string scale = "desk";
    std::string out_dir;
    std::vector<std::uint64_t> seeds;
    std::vector<int> depths;
    int threads = 1;
    bool list = false;

    app.add_option("-c,--config", config_name,
                   "Config file path or built-in recipe name");
    app.add_option("--scale", scale, "Parameter scale: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("-o,--out", out_dir, "Output directory override");
    app.add_option("--seeds", seeds, "Seed list override")->delimiter(',');
    app.add_option("--depths", depths, "Shared-depth list override")->delimiter(',');
    app.add_option("--threads", threads, "Worker threads for independent cells")
        ->check(CLI::PositiveNumber);
    app.add_flag("--list", list, "List built-in recipes and exit");

    CLI11_PARSE(app, argc, argv);

    if (list) {
        for (const auto& [name, _] : sgl::embedded_recipes()) std::cout << name << "\n";
        return 0;
    }
    if (config_name.empty()) {
        std::cerr << "error: --config is required (try --list)\n";
        return 2;
    }

    sgl::pin_blas_single_thread();
    try {
        sgl::ExperimentConfig cfg = sgl::load_config(config_name, scale);
        sgl::apply_overrides(cfg, seeds, depths, out_dir);
        sgl::validate_config(cfg);
        return sgl::run_experiment(cfg, threads, std::cout);
    } catch (const sgl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
}
