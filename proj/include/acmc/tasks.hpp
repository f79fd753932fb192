#pragma once

#include <map>
#include <vector>

#include "acmc/bintree.hpp"
#include "acmc/common.hpp"
#include "acmc/policy.hpp"

namespace acmc::tasks {

enum class RewardKind { hamming, exact_match };

struct TaskInstance {
    std::vector<int> context;  // the conditioning input x
    std::vector<int> target;   // reference sequence y
    RewardKind reward_kind = RewardKind::hamming;
    int vocab = 0;
    int length = 0;  // T
};

// Copy task: context equals the target.
TaskInstance make_copy_task(int vocab, int length, RewardKind kind, rng::Stream& stream);

// Fraction of matching positions, in [0, 1].
double hamming_reward(const std::vector<int>& z, const std::vector<int>& y);

// +1 on an exact elementwise match, else -1.
double exact_match_reward(const std::vector<int>& z, const std::vector<int>& y);

double sequence_reward(const TaskInstance& task, const std::vector<int>& z);

// Exhaustive enumeration of all V^T sequences.
struct OracleResult {
    double expected_reward = 0.0;
    // prefix z_{1:t-1} -> unconditional gradient contribution for the step-t
    // logits: p(prefix) * d E[r | prefix] / d phi_t. One length-V (softmax) or
    // length-(V-1) (tree) vector per reachable prefix.
    std::map<std::vector<int>, Vec> prefix_grads;
    policy::Params param_grad;
    double prob_sum = 0.0;  // normalization check; must be 1 within 1e-10
};

// Enumeration budget: refuses when V^T exceeds 1e5 sequences.
OracleResult exact_er_and_grads(const policy::Params& params, const TaskInstance& task,
                                const bintree::BinaryTreeCodebook* codebook);

}  // namespace acmc::tasks
