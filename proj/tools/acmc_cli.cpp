#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "acmc/harness.hpp"

namespace {

// Exit codes: 0 success, 1 check failure, 2 config/usage error.
constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kConfigError = 2;

struct CommonArgs {
    std::string config_path;
    std::int64_t seed = -1;
    std::string out;
    int workers = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Experiment config JSON file")->required();
    cmd->add_option("--seed", args.seed, "Override the config seed");
    cmd->add_option("--out", args.out, "Override the config output path");
    cmd->add_option("--workers", args.workers, "Override the config worker count");
}

acmc::harness::ExperimentConfig resolve(const CommonArgs& args) {
    acmc::harness::ExperimentConfig config = acmc::harness::load_config(args.config_path);
    if (args.seed >= 0) config.seed = static_cast<std::uint64_t>(args.seed);
    if (!args.out.empty()) config.out = args.out;
    if (args.workers > 0) config.workers = args.workers;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive correlated Monte Carlo estimator experiment driver"};
    app.require_subcommand(1);

    CommonArgs train_args, variance_args, oracle_args, tree_args;
    CLI::App* train = app.add_subcommand("train", "MLE pretraining + RL fine-tuning loop");
    add_common(train, train_args);
    CLI::App* variance = app.add_subcommand("variance", "Gradient variance study");
    add_common(variance, variance_args);
    CLI::App* oracle = app.add_subcommand("oracle-check", "Unbiasedness and oracle suites");
    add_common(oracle, oracle_args);
    CLI::App* tree = app.add_subcommand("tree-build", "Build a binary-tree codebook");
    add_common(tree, tree_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (train->parsed()) {
            const auto result = acmc::harness::run_train(resolve(train_args));
            std::cout << "pre_rl_mean_reward=" << result.pre_rl_mean_reward
                      << " final_mean_reward=" << result.final_mean_reward << "\n";
            return kOk;
        }
        if (variance->parsed()) {
            const std::string csv = acmc::harness::run_variance(resolve(variance_args));
            std::cout << csv;
            return kOk;
        }
        if (oracle->parsed()) {
            const auto report = acmc::harness::run_oracle_check(resolve(oracle_args));
            std::cout << report.json;
            if (!report.all_pass) {
                std::cerr << "oracle-check: at least one suite failed\n";
                return kCheckFailed;
            }
            return kOk;
        }
        if (tree->parsed()) {
            const auto result = acmc::harness::run_tree_build(resolve(tree_args));
            std::cout << "depth=" << result.depth
                      << " mean_path_length=" << result.mean_path_length << "\n";
            return kOk;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
    return kConfigError;
}
