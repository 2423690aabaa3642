// Command-line front end: train, compare and sysid subcommands.
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "insgd/harness.hpp"

namespace h = insgd::harness;

int main(int argc, char** argv) {
    CLI::App app{"Input-normalized SGD experiments"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", h::build_version());

    std::string out_dir;
    bool quiet = false;
    std::size_t jobs = 0;
    app.add_option("--out-dir", out_dir, "Output directory (overrides the config)");
    app.add_flag("--quiet,-q", quiet, "Suppress progress output");
    app.add_option("--jobs,-j", jobs, "Parallel runs for compare")->check(CLI::PositiveNumber);

    std::string train_config;
    auto* train = app.add_subcommand("train", "Train one model from a JSON config");
    train->add_option("--config,-c", train_config, "Run config")->required()->check(CLI::ExistingFile);

    std::string compare_config;
    auto* compare = app.add_subcommand("compare", "Run an optimizer x lr x seed grid");
    compare->add_option("--config,-c", compare_config, "Grid config")->required()->check(CLI::ExistingFile);

    h::SysIdArgs sys;
    std::string algo = "nlms";
    auto* sysid = app.add_subcommand("sysid", "Adaptive-filter system identification");
    sysid->add_option("--algo", algo, "lms | nlms | nlms-l1")->check(CLI::IsMember({"lms", "nlms", "nlms-l1"}));
    sysid->add_option("--mu", sys.mu, "Step size");
    sysid->add_option("--rho", sys.rho, "AR(1) input correlation")->check(CLI::Range(-0.999999, 0.999999));
    sysid->add_option("--noise", sys.noise, "Measurement noise variance")->check(CLI::NonNegativeNumber);
    sysid->add_option("--taps", sys.taps, "Filter length")->check(CLI::PositiveNumber);
    sysid->add_option("--steps", sys.steps, "Iterations")->check(CLI::PositiveNumber);
    sysid->add_option("--seed", sys.seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : h::kConfigError;
    }

    std::optional<std::string> out;
    if (!out_dir.empty()) out = out_dir;
    try {
        if (*train) return h::cmd_train(train_config, out, quiet);
        if (*compare)
            return h::cmd_compare(compare_config, out, quiet, jobs ? std::optional<std::size_t>(jobs) : std::nullopt);
        sys.algo = insgd::filter::parse_algo(algo);
        if (out) sys.out_dir = *out;
        sys.quiet = quiet;
        return h::cmd_sysid(sys);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
