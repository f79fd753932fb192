#pragma once

#include <cstdint>
#include <vector>

#include "acmc/bintree.hpp"
#include "acmc/common.hpp"
#include "acmc/policy.hpp"
#include "acmc/sampling.hpp"
#include "acmc/tasks.hpp"

namespace acmc::estimators {

enum class Kind { reinforce, self_critic, mc_k, ars_k, arsm, bt_arsm };
enum class SampleMode { stochastic, greedy };

struct EstimatorConfig {
    Kind kind = Kind::arsm;
    int K = 1;  // reference count for ars_k (== V for arsm); rollout count for mc_k
    SampleMode main_traj_mode = SampleMode::stochastic;
    SampleMode pseudo_rollout_mode = SampleMode::stochastic;
    int reinforce_batch = 4;  // baseline pool size for the reinforce kind
};

// One sampled (or greedy) sequence under the softmax head, with everything
// needed to rebuild rollouts and backprop: per-step Dirichlet draws, logits,
// the state chain, and the forward tape.
struct Trajectory {
    std::vector<int> actions;
    std::vector<sampling::SimplexVector> pis;
    std::vector<Vec> logits;
    std::vector<policy::PolicyState> states;  // states[s+1] emitted logits[s]
    policy::Tape tape;
    double reward = 0.0;
};

struct GradientEstimate {
    std::vector<Vec> step_logit_grads;    // per step, head-rows wide
    long rollout_count = 0;               // full-sequence completions consumed
    std::vector<int> unique_pseudo_counts;
    std::vector<int> depth_flip_counts;   // tree head only: flips per depth
};

Vec logprob_grad(const Vec& phi, int z);  // onehot(z) - softmax(phi)

Trajectory sample_trajectory(const policy::Params& params, const tasks::TaskInstance& task,
                             SampleMode mode, std::uint64_t seed);

// Sentence reward with mini-batch leave-one-out mean as the baseline (exactly
// the batch-mean form rescaled by B/(B-1), which keeps the estimator unbiased).
std::vector<GradientEstimate> reinforce_grad(const std::vector<Trajectory>& batch);

GradientEstimate self_critic_grad(const Trajectory& traj, double greedy_reward);

// Token-level rewards from K independent MC rollouts per step, with one
// greedy continuation per step as the baseline.
GradientEstimate mc_k_grad(const Trajectory& traj, int K, const policy::Params& params,
                           const tasks::TaskInstance& task, std::uint64_t seed);

// g_v = [rewards[v] - mean(rewards)] * (1 - V * pi[ref]).
Vec ars_step_grad(const sampling::SimplexVector& pi, int ref, const Vec& pseudo_rewards);

struct SequenceEstimate {
    Trajectory traj;
    GradientEstimate grad;
};

SequenceEstimate arsm_sequence_grad(const policy::Params& params,
                                    const tasks::TaskInstance& task,
                                    const EstimatorConfig& config, std::uint64_t seed);

// Tree-head trajectory: per-step bit records instead of Dirichlet draws.
struct TreeTrajectory {
    std::vector<int> actions;
    std::vector<bintree::BinaryStepRecord> records;
    std::vector<policy::PolicyState> states;
    policy::Tape tape;
    double reward = 0.0;
};

struct TreeSequenceEstimate {
    TreeTrajectory traj;
    GradientEstimate grad;
};

TreeSequenceEstimate bt_arsm_sequence_grad(const policy::Params& params,
                                           const bintree::BinaryTreeCodebook& codebook,
                                           const tasks::TaskInstance& task,
                                           const EstimatorConfig& config, std::uint64_t seed);

// Uniform driver over all estimator kinds: main tape + per-step upstream
// gradients, ready to chain into parameter space.
struct EstimateOutcome {
    policy::Tape tape;
    std::vector<Vec> step_grads;
    std::vector<int> actions;
    double reward = 0.0;
    long rollout_count = 0;
    std::vector<int> unique_pseudo_counts;
    std::vector<int> depth_flip_counts;
};

EstimateOutcome run_estimator(const policy::Params& params, const tasks::TaskInstance& task,
                              const EstimatorConfig& config,
                              const bintree::BinaryTreeCodebook* codebook, std::uint64_t seed);

struct VarianceReport {
    double log10_variance = 0.0;  // log10(coordinate-mean variance + 1e-30)
    double mean_rollouts = 0.0;
    double mean_unique_pseudo = 0.0;
};

// Report over a set of parameter-space gradient samples (rows: one flat
// gradient per estimate).
VarianceReport variance_from_grads(const std::vector<Vec>& param_grads);

VarianceReport measure_variance(const policy::Params& params, const tasks::TaskInstance& task,
                                const EstimatorConfig& config,
                                const bintree::BinaryTreeCodebook* codebook, int num_estimates,
                                std::uint64_t seed);

}  // namespace acmc::estimators
