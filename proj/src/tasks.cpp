#include "acmc/tasks.hpp"

#include <cmath>

namespace acmc::tasks {

TaskInstance make_copy_task(int vocab, int length, RewardKind kind, rng::Stream& stream) {
    TaskInstance task;
    task.vocab = vocab;
    task.length = length;
    task.reward_kind = kind;
    task.target.resize(length);
    for (int t = 0; t < length; ++t) task.target[t] = stream.uniform_int(vocab);
    task.context = task.target;
    return task;
}

double hamming_reward(const std::vector<int>& z, const std::vector<int>& y) {
    require(z.size() == y.size(), "hamming_reward: length mismatch");
    int matches = 0;
    for (std::size_t i = 0; i < z.size(); ++i) matches += z[i] == y[i];
    return static_cast<double>(matches) / static_cast<double>(z.size());
}

double exact_match_reward(const std::vector<int>& z, const std::vector<int>& y) {
    require(z.size() == y.size(), "exact_match_reward: length mismatch");
    return z == y ? 1.0 : -1.0;
}

double sequence_reward(const TaskInstance& task, const std::vector<int>& z) {
    return task.reward_kind == RewardKind::hamming ? hamming_reward(z, task.target)
                                                   : exact_match_reward(z, task.target);
}

namespace {

struct Enumerator {
    const policy::Params& params;
    const TaskInstance& task;
    const bintree::BinaryTreeCodebook* codebook;
    Vec ctx_enc;
    OracleResult result;
    std::vector<int> prefix;

    // Per-word probabilities and (for the tree head) per-word score vectors.
    Vec word_probs(const Vec& logits, std::vector<Vec>* scores) const {
        const int vocab = task.vocab;
        if (params.dims.head == policy::HeadKind::softmax) {
            Vec probs = softmax(logits);
            if (scores != nullptr) {
                scores->assign(vocab, Vec());
                for (int a = 0; a < vocab; ++a) {
                    Vec s(vocab, 0.0);
                    for (int v = 0; v < vocab; ++v) s[v] = -probs[v];
                    s[a] += 1.0;
                    (*scores)[a] = std::move(s);
                }
            }
            return probs;
        }
        Vec probs(vocab, 0.0);
        if (scores != nullptr) scores->assign(vocab, Vec());
        for (int a = 0; a < vocab; ++a) {
            double p = 1.0;
            Vec s(codebook->node_count(), 0.0);
            bintree::BitPath path_prefix;
            for (std::uint8_t b : codebook->word_to_path(a)) {
                const int node = codebook->node_id(path_prefix);
                const double q = sigmoid(logits[node]);
                p *= b ? q : 1.0 - q;
                s[node] = static_cast<double>(b) - q;
                path_prefix.push_back(b);
            }
            probs[a] = p;
            if (scores != nullptr) (*scores)[a] = std::move(s);
        }
        return probs;
    }

    // Expected reward given the current prefix; fills prefix_grads on the way.
    double walk(const policy::PolicyState& state, double p_prefix) {
        const int t = static_cast<int>(prefix.size());
        if (t == task.length) {
            result.prob_sum += p_prefix;
            return sequence_reward(task, prefix);
        }
        const int prev = prefix.empty() ? policy::kStartToken : prefix.back();
        const policy::PolicyState next = policy::forward_step(params, state, prev, ctx_enc, nullptr);
        const Vec logits = policy::step_logits(params, next.hidden);
        std::vector<Vec> scores;
        const Vec probs = word_probs(logits, &scores);

        Vec child_values(task.vocab, 0.0);
        double value = 0.0;
        for (int a = 0; a < task.vocab; ++a) {
            prefix.push_back(a);
            child_values[a] = walk(next, p_prefix * probs[a]);
            prefix.pop_back();
            value += probs[a] * child_values[a];
        }

        // d E[r | prefix] / d phi = sum_a p(a) score_a (value_a - value); the
        // -value term sums to zero against the score but keeps coordinates
        // centered, matching the analytic softmax identity exactly.
        Vec grad(scores[0].size(), 0.0);
        for (int a = 0; a < task.vocab; ++a) {
            const double w = p_prefix * probs[a] * (child_values[a] - value);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += w * scores[a][i];
        }
        result.prefix_grads[prefix] = std::move(grad);
        return value;
    }

    // Exact parameter gradient: sum_z p(z) r(z) grad_theta log p(z).
    void accumulate_param_grad() {
        std::vector<int> z(task.length, 0);
        while (true) {
            policy::Tape tape;
            tape.context = task.context;
            tape.ctx_enc = ctx_enc;
            policy::PolicyState state = policy::initial_state(params);
            std::vector<Vec> upstream;
            double logp = 0.0;
            int prev = policy::kStartToken;
            for (int word : z) {
                state = policy::forward_step(params, state, prev, ctx_enc, &tape);
                const Vec logits = policy::step_logits(params, state.hidden);
                std::vector<Vec> scores;
                const Vec probs = word_probs(logits, &scores);
                logp += std::log(probs[word]);
                upstream.push_back(scores[word]);
                prev = word;
            }
            const double weight = std::exp(logp) * sequence_reward(task, z);
            if (weight != 0.0) {
                const policy::Params g = policy::backward_accumulate(params, tape, upstream);
                const Vec flat = g.flatten();
                Vec acc = result.param_grad.flatten();
                for (std::size_t i = 0; i < flat.size(); ++i) acc[i] += weight * flat[i];
                result.param_grad.assign_from_flat(acc);
            }
            int pos = task.length - 1;
            while (pos >= 0 && ++z[pos] == task.vocab) {
                z[pos] = 0;
                --pos;
            }
            if (pos < 0) break;
        }
    }
};

}  // namespace

OracleResult exact_er_and_grads(const policy::Params& params, const TaskInstance& task,
                                const bintree::BinaryTreeCodebook* codebook) {
    require(params.dims.head == policy::HeadKind::softmax || codebook != nullptr,
            "exact_er_and_grads: tree head needs a codebook");
    const double count = std::pow(static_cast<double>(task.vocab), task.length);
    require(count <= 1e5, "exact_er_and_grads: enumeration budget exceeded");

    Enumerator e{params, task, codebook, policy::encode_context(params, task.context),
                 OracleResult{}, {}};
    e.result.param_grad = policy::zeros_like(params);
    e.result.expected_reward = e.walk(policy::initial_state(params), 1.0);
    e.accumulate_param_grad();
    return e.result;
}

}  // namespace acmc::tasks
