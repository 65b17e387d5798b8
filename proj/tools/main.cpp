#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

#include "cohortforge/error.hpp"
#include "cohortforge/log.hpp"
#include "cohortforge/pipeline.hpp"

using cohortforge::pipeline::PipelineConfig;

int main(int argc, char** argv) {
    CLI::App app{"cohortforge: QA, harmonization, and normative modeling for "
                 "multi-site imaging metric cohorts"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed_override = 0;
    bool seed_given = false;
    int threads_override = 0;
    std::string output_override;

    app.add_option("--config", config_path, "pipeline config JSON")->required();
    app.add_option("--seed", seed_override, "override the config seed")
        ->each([&](const std::string&) { seed_given = true; });
    app.add_option("--threads", threads_override, "worker threads")
        ->check(CLI::PositiveNumber);
    app.add_option("--output", output_override, "override paths.output_dir");

    const char* subcommands[] = {"synth", "ingest", "dti",  "qa",
                                 "harmonize", "fit", "test", "report"};
    const char* descriptions[] = {
        "generate a synthetic cohort",          "parse participants and metrics tables",
        "compute tensor metrics from DWI",      "apply inclusion criteria",
        "ComBat harmonization and outlier rejection",
        "fit normative models and centiles",    "hypothesis tests, FDR, bootstrap bands",
        "render SVG centile plots"};
    for (size_t i = 0; i < 8; ++i) app.add_subcommand(subcommands[i], descriptions[i]);

    CLI11_PARSE(app, argc, argv);

    PipelineConfig config;
    try {
        config = PipelineConfig::load_file(config_path);
    } catch (const cohortforge::Error& e) {
        cohortforge::logging::error("config: ", e.what());
        return 1;
    }
    if (seed_given) {
        config.seed = seed_override;
        config.synth_spec.seed = seed_override;
    }
    if (threads_override > 0) config.threads = threads_override;
    if (!output_override.empty()) config.output_dir = output_override;

    return cohortforge::pipeline::run_command(app.get_subcommands()[0]->get_name(),
                                              config);
}
