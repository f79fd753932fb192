#include <cmath>

#include "acmc/tasks.hpp"
#include "doctest.h"

using namespace acmc;

namespace {

policy::Params zero_params(int vocab, policy::HeadKind head) {
    policy::Dims dims{vocab, 2, 3, head};
    rng::Stream stream = rng::make_stream(1);
    policy::Params params = policy::init_params(dims, stream);
    params.assign_from_flat(Vec(params.param_count(), 0.0));
    return params;
}

tasks::TaskInstance fixed_task(std::vector<int> target, int vocab, tasks::RewardKind kind) {
    tasks::TaskInstance task;
    task.vocab = vocab;
    task.length = static_cast<int>(target.size());
    task.reward_kind = kind;
    task.context = target;
    task.target = std::move(target);
    return task;
}

}  // namespace

TEST_CASE("hamming reward examples") {
    CHECK(tasks::hamming_reward({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(tasks::hamming_reward({0, 0, 0}, {1, 2, 3}) == 0.0);
    CHECK(tasks::hamming_reward({1, 2, 0, 0}, {1, 2, 3, 4}) == 0.5);
    CHECK_THROWS_AS(tasks::hamming_reward({1}, {1, 2}), std::invalid_argument);
}

TEST_CASE("exact match reward examples") {
    CHECK(tasks::exact_match_reward({2, 1}, {2, 1}) == 1.0);
    CHECK(tasks::exact_match_reward({2, 0}, {2, 1}) == -1.0);
    CHECK_THROWS_AS(tasks::exact_match_reward({1}, {1, 2}), std::invalid_argument);
}

TEST_CASE("make_copy_task mirrors the target into the context") {
    rng::Stream stream = rng::make_stream(2);
    const auto task = tasks::make_copy_task(6, 5, tasks::RewardKind::hamming, stream);
    CHECK(task.context == task.target);
    CHECK(task.target.size() == 5);
    for (int t : task.target) {
        CHECK(t >= 0);
        CHECK(t < 6);
    }
}

TEST_CASE("oracle analytic example: V=2, T=1, uniform policy") {
    // Rewards (0, 1) under hamming with target {1}: ER = 0.5 and the logit
    // gradient is sigma_v (r_v - ER) = (-0.25, +0.25).
    const auto params = zero_params(2, policy::HeadKind::softmax);
    const auto task = fixed_task({1}, 2, tasks::RewardKind::hamming);
    const auto oracle = tasks::exact_er_and_grads(params, task, nullptr);
    CHECK(oracle.expected_reward == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(oracle.prob_sum == doctest::Approx(1.0).epsilon(1e-12));
    const auto it = oracle.prefix_grads.find({});
    REQUIRE(it != oracle.prefix_grads.end());
    CHECK(it->second[0] == doctest::Approx(-0.25).epsilon(1e-12));
    CHECK(it->second[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("oracle uniform exact-match expected reward at V=4, T=3") {
    // 2/64 - 1 = -0.96875 under the +/-1 convention.
    const auto params = zero_params(4, policy::HeadKind::softmax);
    const auto task = fixed_task({0, 1, 2}, 4, tasks::RewardKind::exact_match);
    const auto oracle = tasks::exact_er_and_grads(params, task, nullptr);
    CHECK(oracle.expected_reward == doctest::Approx(-0.96875).epsilon(1e-12));
}

TEST_CASE("oracle probabilities normalize for random parameters, both heads") {
    bintree::EmbeddingTable table;
    for (int v = 0; v < 4; ++v) {
        table.labels.push_back("w" + std::to_string(v));
        table.vectors.push_back(Vec{static_cast<double>(v)});
    }
    rng::Stream tree_stream = rng::make_stream(3);
    const auto codebook = bintree::build_tree(table, bintree::Linkage::average, false,
                                              tree_stream);
    for (auto head : {policy::HeadKind::softmax, policy::HeadKind::tree}) {
        policy::Dims dims{4, 3, 4, head};
        rng::Stream stream = rng::make_stream(4);
        const policy::Params params = policy::init_params(dims, stream);
        const auto task = fixed_task({1, 0, 3}, 4, tasks::RewardKind::hamming);
        const auto oracle = tasks::exact_er_and_grads(
            params, task, head == policy::HeadKind::tree ? &codebook : nullptr);
        CHECK(std::abs(oracle.prob_sum - 1.0) < 1e-10);
        CHECK(oracle.expected_reward >= 0.0);
        CHECK(oracle.expected_reward <= 1.0);
    }
}

TEST_CASE("oracle parameter gradient matches finite differences of ER") {
    policy::Dims dims{3, 2, 3, policy::HeadKind::softmax};
    rng::Stream stream = rng::make_stream(5);
    const policy::Params params = policy::init_params(dims, stream);
    const auto task = fixed_task({2, 0}, 3, tasks::RewardKind::hamming);
    const auto oracle = tasks::exact_er_and_grads(params, task, nullptr);
    const Vec grad = oracle.param_grad.flatten();

    Vec flat = params.flatten();
    policy::Params probe = params;
    const double h = 1e-5;
    for (std::size_t k = 0; k < flat.size(); ++k) {
        const double saved = flat[k];
        flat[k] = saved + h;
        probe.assign_from_flat(flat);
        const double up = tasks::exact_er_and_grads(probe, task, nullptr).expected_reward;
        flat[k] = saved - h;
        probe.assign_from_flat(flat);
        const double down = tasks::exact_er_and_grads(probe, task, nullptr).expected_reward;
        flat[k] = saved;
        const double fd = (up - down) / (2.0 * h);
        CHECK(std::abs(grad[k] - fd) / std::max({1.0, std::abs(grad[k]), std::abs(fd)}) < 1e-6);
    }
}

TEST_CASE("oracle refuses when V^T exceeds the enumeration budget") {
    const auto params = zero_params(64, policy::HeadKind::softmax);
    const auto task = fixed_task({0, 1, 2}, 64, tasks::RewardKind::hamming);
    CHECK_THROWS_AS(tasks::exact_er_and_grads(params, task, nullptr), std::invalid_argument);
}
