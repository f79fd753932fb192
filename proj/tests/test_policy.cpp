#include <cmath>
#include <limits>

#include "acmc/bintree.hpp"
#include "acmc/policy.hpp"
#include "doctest.h"

using namespace acmc;

namespace {

policy::Params random_params(policy::Dims dims, std::uint64_t seed) {
    rng::Stream stream = rng::make_stream(seed);
    return policy::init_params(dims, stream);
}

bintree::BinaryTreeCodebook scalar_codebook(int vocab) {
    bintree::EmbeddingTable table;
    for (int v = 0; v < vocab; ++v) {
        table.labels.push_back("w" + std::to_string(v));
        table.vectors.push_back(Vec{static_cast<double>(v)});
    }
    rng::Stream stream = rng::make_stream(99);
    return bintree::build_tree(table, bintree::Linkage::average, false, stream);
}

// Scalar objective sum_t <upstream[t], logits_t> for finite differencing.
double rollout_objective(const policy::Params& params, const std::vector<int>& context,
                         const std::vector<int>& actions, const std::vector<Vec>& upstream) {
    const Vec ctx_enc = policy::encode_context(params, context);
    policy::PolicyState state = policy::initial_state(params);
    double total = 0.0;
    for (std::size_t s = 0; s < actions.size(); ++s) {
        const int prev = s == 0 ? policy::kStartToken : actions[s - 1];
        state = policy::forward_step(params, state, prev, ctx_enc, nullptr);
        const Vec logits = policy::step_logits(params, state.hidden);
        for (std::size_t v = 0; v < logits.size(); ++v) total += upstream[s][v] * logits[v];
    }
    return total;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("flatten and assign_from_flat are inverse") {
    policy::Dims dims{5, 3, 4, policy::HeadKind::softmax};
    policy::Params params = random_params(dims, 1);
    const Vec flat = params.flatten();
    CHECK(flat.size() == params.param_count());
    policy::Params other = policy::zeros_like(params);
    other.assign_from_flat(flat);
    CHECK(other.flatten() == flat);
}

TEST_CASE("tree head has V-1 logit rows") {
    policy::Dims dims{8, 3, 4, policy::HeadKind::tree};
    policy::Params params = random_params(dims, 2);
    const policy::PolicyState state =
        policy::forward_step(params, policy::initial_state(params), policy::kStartToken,
                             policy::encode_context(params, {0, 1}), nullptr);
    const Vec logits = policy::step_logits(params, state.hidden);
    CHECK(logits.size() == 7);
    for (int n = 0; n < 7; ++n) {
        CHECK(policy::node_logit(params, state.hidden, n) == doctest::Approx(logits[n]));
    }
}

TEST_CASE("backward_accumulate matches central finite differences") {
    for (auto head : {policy::HeadKind::softmax, policy::HeadKind::tree}) {
        policy::Dims dims{4, 3, 4, head};
        policy::Params params = random_params(dims, head == policy::HeadKind::softmax ? 3 : 4);
        const std::vector<int> context = {1, 3, 0};
        const std::vector<int> actions = {2, 0, 1};
        rng::Stream stream = rng::make_stream(5);
        std::vector<Vec> upstream(actions.size(), Vec(dims.head_rows()));
        for (auto& u : upstream) {
            for (double& x : u) x = 2.0 * (stream.uniform() - 0.5);
        }

        policy::Tape tape;
        tape.context = context;
        tape.ctx_enc = policy::encode_context(params, context);
        policy::PolicyState state = policy::initial_state(params);
        for (std::size_t s = 0; s < actions.size(); ++s) {
            const int prev = s == 0 ? policy::kStartToken : actions[s - 1];
            state = policy::forward_step(params, state, prev, tape.ctx_enc, &tape);
        }
        const Vec grad = policy::backward_accumulate(params, tape, upstream).flatten();

        Vec flat = params.flatten();
        policy::Params probe = params;
        const double h = 1e-5;
        for (std::size_t k = 0; k < flat.size(); ++k) {
            const double saved = flat[k];
            flat[k] = saved + h;
            probe.assign_from_flat(flat);
            const double up = rollout_objective(probe, context, actions, upstream);
            flat[k] = saved - h;
            probe.assign_from_flat(flat);
            const double down = rollout_objective(probe, context, actions, upstream);
            flat[k] = saved;
            CHECK(rel_err(grad[k], (up - down) / (2.0 * h)) < 1e-6);
        }
    }
}

TEST_CASE("mle_gradient matches finite differences of the NLL") {
    const auto codebook = scalar_codebook(4);
    const bintree::CodebookPaths paths(codebook);
    for (auto head : {policy::HeadKind::softmax, policy::HeadKind::tree}) {
        policy::Dims dims{4, 2, 3, head};
        policy::Params params = random_params(dims, head == policy::HeadKind::softmax ? 6 : 7);
        const std::vector<int> context = {0, 2};
        const std::vector<int> target = {3, 1};
        const policy::TreePathSource* tree =
            head == policy::HeadKind::tree ? &paths : nullptr;
        const policy::MleResult result = policy::mle_gradient(params, context, target, tree);
        CHECK(result.nll > 0.0);

        Vec flat = params.flatten();
        policy::Params probe = params;
        const Vec grad = result.grad.flatten();
        const double h = 1e-5;
        for (std::size_t k = 0; k < flat.size(); ++k) {
            const double saved = flat[k];
            flat[k] = saved + h;
            probe.assign_from_flat(flat);
            const double up = policy::mle_gradient(probe, context, target, tree).nll;
            flat[k] = saved - h;
            probe.assign_from_flat(flat);
            const double down = policy::mle_gradient(probe, context, target, tree).nll;
            flat[k] = saved;
            CHECK(rel_err(grad[k], (up - down) / (2.0 * h)) < 1e-6);
        }
    }
}

TEST_CASE("zero upstream gradient yields a zero parameter gradient") {
    policy::Dims dims{3, 2, 3, policy::HeadKind::softmax};
    policy::Params params = random_params(dims, 8);
    policy::Tape tape;
    tape.context = {0};
    tape.ctx_enc = policy::encode_context(params, tape.context);
    policy::PolicyState state = policy::initial_state(params);
    state = policy::forward_step(params, state, policy::kStartToken, tape.ctx_enc, &tape);
    state = policy::forward_step(params, state, 1, tape.ctx_enc, &tape);
    const std::vector<Vec> upstream(2, Vec(3, 0.0));
    for (double g : policy::backward_accumulate(params, tape, upstream).flatten()) {
        CHECK(g == 0.0);
    }
}

TEST_CASE("sgd_update moves parameters in the requested direction") {
    policy::Dims dims{3, 2, 2, policy::HeadKind::softmax};
    policy::Params params = random_params(dims, 9);
    policy::Params grad = policy::zeros_like(params);
    Vec gflat = grad.flatten();
    gflat[0] = 2.0;
    grad.assign_from_flat(gflat);
    const double before = params.flatten()[0];
    policy::sgd_update(params, grad, 0.5, policy::Direction::ascend);
    CHECK(params.flatten()[0] == doctest::Approx(before + 1.0));
    policy::sgd_update(params, grad, 0.5, policy::Direction::descend);
    CHECK(params.flatten()[0] == doctest::Approx(before));
}

TEST_CASE("sgd_update rejects non-finite gradients") {
    policy::Dims dims{3, 2, 2, policy::HeadKind::softmax};
    policy::Params params = random_params(dims, 10);
    policy::Params grad = policy::zeros_like(params);
    Vec gflat = grad.flatten();
    gflat[1] = std::numeric_limits<double>::quiet_NaN();
    grad.assign_from_flat(gflat);
    CHECK_THROWS_AS(policy::sgd_update(params, grad, 0.1, policy::Direction::ascend),
                    std::invalid_argument);
}

TEST_CASE("checkpoint round trip restores parameters exactly") {
    policy::Dims dims{6, 3, 5, policy::HeadKind::tree};
    policy::Params params = random_params(dims, 11);
    const std::string text = policy::save_checkpoint(params);
    const policy::Params reloaded = policy::load_checkpoint(text);
    CHECK(reloaded.dims.vocab == 6);
    CHECK(reloaded.dims.head == policy::HeadKind::tree);
    CHECK(reloaded.flatten() == params.flatten());
    // Serialization is bit-exact, so a second save is byte-identical.
    CHECK(policy::save_checkpoint(reloaded) == text);
}

TEST_CASE("softmax head at V=2 matches the sigmoid parameterization") {
    // p(1) = sigmoid(phi_1 - phi_0) — the bridge between the categorical and
    // binary views used by the V=2 estimator equivalence.
    const Vec phi = {0.7, -0.4};
    const Vec probs = softmax(phi);
    CHECK(probs[1] == doctest::Approx(sigmoid(phi[1] - phi[0])).epsilon(1e-12));
}
