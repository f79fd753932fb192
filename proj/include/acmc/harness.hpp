#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "acmc/bintree.hpp"
#include "acmc/common.hpp"
#include "acmc/estimators.hpp"
#include "acmc/policy.hpp"
#include "acmc/tasks.hpp"

namespace acmc::harness {

struct TaskSpec {
    int vocab = 0;
    int length = 0;
    tasks::RewardKind reward = tasks::RewardKind::hamming;
    // Fixed target; when absent each draw samples a fresh copy-task target.
    std::optional<std::vector<int>> target;
};

struct ModelSpec {
    int embed = 4;
    int hidden = 8;
    policy::HeadKind head = policy::HeadKind::softmax;
};

struct TrainSpec {
    int iterations = 0;
    int batch_size = 1;
    double learning_rate = 0.1;
    int mle_pretrain_iters = 0;
    double mle_learning_rate = 0.1;
};

// Named estimator rows for the variance and oracle-check studies.
using EstimatorRow = std::pair<std::string, estimators::EstimatorConfig>;

struct VarianceSpec {
    int samples = 1000;
    std::vector<EstimatorRow> rows;
};

struct OracleSpec {
    int samples = 20000;
    bool corrupt_estimator = false;  // test hook: sign-flips gradients
    std::vector<EstimatorRow> rows;
};

struct TreeSpec {
    std::string embeddings;  // path; empty = integer-line embeddings 0..V-1
    bintree::Linkage linkage = bintree::Linkage::average;
    bool permute = false;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    TaskSpec task;
    ModelSpec model;
    estimators::EstimatorConfig estimator;
    TrainSpec train;
    VarianceSpec variance;
    OracleSpec oracle;
    TreeSpec tree;
    std::string codebook_path;  // load instead of building the default tree
    std::string out;
    int workers = 1;
    bool record_wall_time = false;  // off by default so outputs are byte-stable
};

// Throws std::invalid_argument naming the offending field.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Balanced deterministic codebook over 0..V-1 from scalar embeddings, or the
// file named by the config (codebook JSON, else embeddings + clustering).
bintree::BinaryTreeCodebook resolve_codebook(const ExperimentConfig& config);

struct TrainResult {
    double pre_rl_mean_reward = 0.0;   // after MLE pretraining, before RL
    double final_mean_reward = 0.0;    // mean over the last <=100 iterations
    policy::Params params;
    std::string metrics_csv;
};

TrainResult run_train(const ExperimentConfig& config);  // writes config.out when set

std::string run_variance(const ExperimentConfig& config);

struct OracleReport {
    std::string json;
    bool all_pass = false;
};

OracleReport run_oracle_check(const ExperimentConfig& config);

struct TreeBuildResult {
    std::string json;
    int depth = 0;
    double mean_path_length = 0.0;
};

TreeBuildResult run_tree_build(const ExperimentConfig& config);

void write_file(const std::string& path, const std::string& text);
std::string read_file(const std::string& path);

}  // namespace acmc::harness
