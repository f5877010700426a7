// adaptix: predict / run / replicate / validate for the accelerated Kesten recursion.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "adaptix/harness.hpp"

namespace {

int resolve_workers(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("ADAPTIX_WORKERS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
        }
        std::cerr << "adaptix: ignoring invalid ADAPTIX_WORKERS=" << env << "\n";
    }
    return adaptix::default_workers();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Accelerated stochastic approximation with Kesten-style step control"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int workers = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
        sub->add_option("--seed", seed, "master seed override");
        sub->add_option("--workers", workers, "worker threads (fallback: ADAPTIX_WORKERS)")->check(CLI::PositiveNumber);
    };
    auto* predict = app.add_subcommand("predict", "E0, stability matrix and limiting covariance");
    auto* run = app.add_subcommand("run", "single trajectory to trajectory.csv");
    auto* replicate = app.add_subcommand("replicate", "replicate experiment to summary.json and checkpoints.csv");
    auto* validate = app.add_subcommand("validate", "assumption checks to validation.json");
    for (auto* sub : {predict, run, replicate, validate}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : adaptix::kExitConfigError;
    }

    adaptix::RunConfig cfg;
    const auto parsed = adaptix::guarded([&]() -> adaptix::CommandResult {
        cfg = adaptix::parse_config(adaptix::read_text_file(config_path));
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (seed) cfg.master_seed = *seed;
        return {};
    });
    if (parsed.exit_code != adaptix::kExitOk) {
        std::cerr << "adaptix: " << parsed.message << "\n";
        // Anything wrong with the document itself is a config error.
        return adaptix::kExitConfigError;
    }

    const adaptix::CommandResult result = adaptix::guarded([&]() -> adaptix::CommandResult {
        if (*predict) return adaptix::cmd_predict(cfg);
        if (*run) return adaptix::cmd_run(cfg);
        if (*replicate) return adaptix::cmd_replicate(cfg, resolve_workers(workers));
        return adaptix::cmd_validate(cfg);
    });
    if (result.exit_code != adaptix::kExitOk) std::cerr << "adaptix: " << result.message << "\n";
    return result.exit_code;
}
