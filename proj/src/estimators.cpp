#include "acmc/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace acmc::estimators {

namespace {

// Stream-path tags; keep values stable so runs are reproducible across builds.
enum StreamTag : std::uint64_t {
    kTagPi = 1,
    kTagRefs = 2,
    kTagRollout = 3,
    kTagMc = 4,
    kTagBitCompletion = 6,
    kTagBitPi = 7,
    kTagReinforce = 8,
    kTagEstimate = 9,
};

int argmax_lowest(const Vec& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

int sample_categorical(const Vec& probs, rng::Stream& stream) {
    const double u = stream.uniform();
    double acc = 0.0;
    for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return static_cast<int>(probs.size()) - 1;
}

// Full-sequence reward after forcing `forced` at slot s of the main
// trajectory and completing s+1..T-1 from the policy.
double rollout_reward(const policy::Params& params, const tasks::TaskInstance& task,
                      const Trajectory& main, int s, int forced, SampleMode mode,
                      rng::Stream stream) {
    std::vector<int> z = main.actions;
    z[s] = forced;
    policy::PolicyState state = main.states[s + 1];
    for (int u = s + 1; u < task.length; ++u) {
        state = policy::forward_step(params, state, z[u - 1], main.tape.ctx_enc, nullptr);
        const Vec logits = policy::step_logits(params, state.hidden);
        z[u] = mode == SampleMode::greedy ? argmax_lowest(logits)
                                          : sample_categorical(softmax(logits), stream);
    }
    return tasks::sequence_reward(task, z);
}

// Tree-head walker: one token, recording visited nodes, uniforms, and logits.
std::pair<int, bintree::BinaryStepRecord> walk_token(const policy::Params& params,
                                                     const bintree::BinaryTreeCodebook& codebook,
                                                     const Vec& hidden, SampleMode mode,
                                                     rng::Stream& stream) {
    bintree::BinaryStepRecord rec;
    bintree::BitPath bits;
    while (!codebook.is_leaf(bits)) {
        const int node = codebook.node_id(bits);
        const double phi = policy::node_logit(params, hidden, node);
        const double pi = stream.uniform();
        const std::uint8_t b = mode == SampleMode::greedy ? (phi >= 0.0 ? 1 : 0)
                                                          : (pi < sigmoid(phi) ? 1 : 0);
        rec.node_ids.push_back(node);
        rec.pis.push_back(pi);
        rec.logits.push_back(phi);
        bits.push_back(b);
    }
    rec.bits = bits;
    return {codebook.path_to_word(bits), std::move(rec)};
}

double tree_rollout_reward(const policy::Params& params,
                           const bintree::BinaryTreeCodebook& codebook,
                           const tasks::TaskInstance& task, const TreeTrajectory& main, int s,
                           int forced, SampleMode mode, rng::Stream stream) {
    std::vector<int> z = main.actions;
    z[s] = forced;
    policy::PolicyState state = main.states[s + 1];
    for (int u = s + 1; u < task.length; ++u) {
        state = policy::forward_step(params, state, z[u - 1], main.tape.ctx_enc, nullptr);
        z[u] = walk_token(params, codebook, state.hidden, mode, stream).first;
    }
    return tasks::sequence_reward(task, z);
}

}  // namespace

Vec logprob_grad(const Vec& phi, int z) {
    require(z >= 0 && z < static_cast<int>(phi.size()), "logprob_grad: action out of range");
    Vec g = softmax(phi);
    for (double& x : g) x = -x;
    g[z] += 1.0;
    return g;
}

Trajectory sample_trajectory(const policy::Params& params, const tasks::TaskInstance& task,
                             SampleMode mode, std::uint64_t seed) {
    Trajectory traj;
    traj.tape.context = task.context;
    traj.tape.ctx_enc = policy::encode_context(params, task.context);
    traj.states.push_back(policy::initial_state(params));
    for (int s = 0; s < task.length; ++s) {
        const int prev = s == 0 ? policy::kStartToken : traj.actions[s - 1];
        traj.states.push_back(policy::forward_step(params, traj.states.back(), prev,
                                                   traj.tape.ctx_enc, &traj.tape));
        Vec logits = policy::step_logits(params, traj.states.back().hidden);
        rng::Stream pi_stream = rng::derive_stream(seed, {kTagPi, static_cast<std::uint64_t>(s)});
        sampling::SimplexVector pi = sampling::sample_pi(pi_stream, task.vocab);
        const int action = mode == SampleMode::greedy ? argmax_lowest(logits)
                                                      : sampling::true_action(pi, logits);
        traj.pis.push_back(std::move(pi));
        traj.logits.push_back(std::move(logits));
        traj.actions.push_back(action);
    }
    traj.reward = tasks::sequence_reward(task, traj.actions);
    return traj;
}

std::vector<GradientEstimate> reinforce_grad(const std::vector<Trajectory>& batch) {
    require(!batch.empty(), "reinforce_grad: empty batch");
    const int B = static_cast<int>(batch.size());
    double sum = 0.0;
    for (const auto& traj : batch) sum += traj.reward;
    std::vector<GradientEstimate> out;
    for (const auto& traj : batch) {
        const double baseline = B == 1 ? traj.reward : (sum - traj.reward) / (B - 1);
        const double adv = traj.reward - baseline;
        GradientEstimate est;
        est.rollout_count = 1;
        est.unique_pseudo_counts.assign(traj.actions.size(), 0);
        for (std::size_t s = 0; s < traj.actions.size(); ++s) {
            Vec g = logprob_grad(traj.logits[s], traj.actions[s]);
            for (double& x : g) x *= adv;
            est.step_logit_grads.push_back(std::move(g));
        }
        out.push_back(std::move(est));
    }
    return out;
}

GradientEstimate self_critic_grad(const Trajectory& traj, double greedy_reward) {
    GradientEstimate est;
    est.rollout_count = 2;  // sample + greedy
    est.unique_pseudo_counts.assign(traj.actions.size(), 0);
    const double adv = traj.reward - greedy_reward;
    for (std::size_t s = 0; s < traj.actions.size(); ++s) {
        Vec g = logprob_grad(traj.logits[s], traj.actions[s]);
        for (double& x : g) x *= adv;
        est.step_logit_grads.push_back(std::move(g));
    }
    return est;
}

GradientEstimate mc_k_grad(const Trajectory& traj, int K, const policy::Params& params,
                           const tasks::TaskInstance& task, std::uint64_t seed) {
    require(K >= 1, "mc_k_grad: K must be >= 1");
    const int T = task.length;
    GradientEstimate est;
    est.rollout_count = 1 + static_cast<long>(T) * (K + 1);
    est.unique_pseudo_counts.assign(T, 0);
    for (int s = 0; s < T; ++s) {
        double r_hat = 0.0;
        for (int k = 0; k < K; ++k) {
            r_hat += rollout_reward(
                params, task, traj, s, traj.actions[s], SampleMode::stochastic,
                rng::derive_stream(seed, {kTagMc, static_cast<std::uint64_t>(s),
                                          static_cast<std::uint64_t>(k)}));
        }
        r_hat /= K;
        const double baseline =
            rollout_reward(params, task, traj, s, argmax_lowest(traj.logits[s]),
                           SampleMode::greedy, rng::Stream{});
        Vec g = logprob_grad(traj.logits[s], traj.actions[s]);
        for (double& x : g) x *= r_hat - baseline;
        est.step_logit_grads.push_back(std::move(g));
    }
    return est;
}

Vec ars_step_grad(const sampling::SimplexVector& pi, int ref, const Vec& pseudo_rewards) {
    const int vocab = pi.size();
    double mean = 0.0;
    for (double r : pseudo_rewards) mean += r;
    mean /= vocab;
    const double coeff = 1.0 - vocab * pi.values[ref];
    Vec g(vocab);
    for (int v = 0; v < vocab; ++v) g[v] = (pseudo_rewards[v] - mean) * coeff;
    return g;
}

SequenceEstimate arsm_sequence_grad(const policy::Params& params,
                                    const tasks::TaskInstance& task,
                                    const EstimatorConfig& config, std::uint64_t seed) {
    const int vocab = task.vocab;
    require(vocab >= 2, "arsm_sequence_grad: vocab must be >= 2");
    const int K = config.kind == Kind::arsm ? vocab : config.K;
    require(K >= 1 && K <= vocab, "arsm_sequence_grad: K must be in [1, V]");

    SequenceEstimate out;
    out.traj = sample_trajectory(params, task, config.main_traj_mode, seed);
    const Trajectory& traj = out.traj;
    GradientEstimate& est = out.grad;
    est.rollout_count = 1;

    for (int s = 0; s < task.length; ++s) {
        std::vector<int> refs;
        if (K == vocab) {
            refs.resize(vocab);
            for (int i = 0; i < vocab; ++i) refs[i] = i;
        } else {
            std::vector<int> perm(vocab);
            for (int i = 0; i < vocab; ++i) perm[i] = i;
            rng::Stream rs = rng::derive_stream(seed, {kTagRefs, static_cast<std::uint64_t>(s)});
            for (int i = 0; i < K; ++i) {
                std::swap(perm[i], perm[i + rs.uniform_int(vocab - i)]);
            }
            refs.assign(perm.begin(), perm.begin() + K);
        }

        const auto matrix = sampling::pseudo_action_matrix_fast(traj.pis[s], traj.logits[s], refs);

        // Unique pseudo actions needing a rollout: entries differing from the
        // main trajectory's token. The token's own column reuses the main
        // trajectory reward.
        std::vector<int> need;
        for (const auto& row : matrix.entries) {
            for (int a : row) {
                if (a != traj.actions[s]) need.push_back(a);
            }
        }
        std::sort(need.begin(), need.end());
        need.erase(std::unique(need.begin(), need.end()), need.end());

        std::map<int, double> reward_of;
        reward_of[traj.actions[s]] = traj.reward;
        for (int a : need) {
            reward_of[a] = rollout_reward(
                params, task, traj, s, a, config.pseudo_rollout_mode,
                rng::derive_stream(seed, {kTagRollout, static_cast<std::uint64_t>(s),
                                          static_cast<std::uint64_t>(a)}));
        }

        Vec g(vocab, 0.0);
        Vec row_rewards(vocab);
        for (int k = 0; k < K; ++k) {
            for (int v = 0; v < vocab; ++v) row_rewards[v] = reward_of[matrix.entries[k][v]];
            const Vec gk = ars_step_grad(traj.pis[s], refs[k], row_rewards);
            for (int v = 0; v < vocab; ++v) g[v] += gk[v] / K;
        }
        est.step_logit_grads.push_back(std::move(g));
        est.unique_pseudo_counts.push_back(static_cast<int>(need.size()));
        est.rollout_count += static_cast<long>(need.size());
    }
    return out;
}

TreeSequenceEstimate bt_arsm_sequence_grad(const policy::Params& params,
                                           const bintree::BinaryTreeCodebook& codebook,
                                           const tasks::TaskInstance& task,
                                           const EstimatorConfig& config, std::uint64_t seed) {
    TreeSequenceEstimate out;
    TreeTrajectory& traj = out.traj;
    traj.tape.context = task.context;
    traj.tape.ctx_enc = policy::encode_context(params, task.context);
    traj.states.push_back(policy::initial_state(params));
    for (int s = 0; s < task.length; ++s) {
        const int prev = s == 0 ? policy::kStartToken : traj.actions[s - 1];
        traj.states.push_back(policy::forward_step(params, traj.states.back(), prev,
                                                   traj.tape.ctx_enc, &traj.tape));
        rng::Stream bit_stream =
            rng::derive_stream(seed, {kTagBitPi, static_cast<std::uint64_t>(s)});
        auto [word, rec] = walk_token(params, codebook, traj.states.back().hidden,
                                      config.main_traj_mode, bit_stream);
        traj.actions.push_back(word);
        traj.records.push_back(std::move(rec));
    }
    traj.reward = tasks::sequence_reward(task, traj.actions);

    GradientEstimate& est = out.grad;
    est.rollout_count = 1;
    est.depth_flip_counts.assign(codebook.depth, 0);

    for (int s = 0; s < task.length; ++s) {
        const auto& rec = traj.records[s];
        const Vec& hidden = traj.states[s + 1].hidden;
        Vec g(codebook.node_count(), 0.0);

        // Flip positions: antithetic bit differs from the true bit.
        struct Flip {
            int depth;
            int node;
            double pi;
            double phi;
            int pseudo_word;
        };
        std::vector<Flip> flips;
        for (int l = 0; l < static_cast<int>(rec.bits.size()); ++l) {
            const double pi = rec.pis[l];
            const double phi = rec.logits[l];
            const int b_true = pi < sigmoid(phi) ? 1 : 0;
            const int b_pseudo = pi > sigmoid(-phi) ? 1 : 0;
            if (b_true == b_pseudo) continue;
            // Complete the flipped bit to a leaf.
            bintree::BitPath bits(rec.bits.begin(), rec.bits.begin() + l);
            bits.push_back(static_cast<std::uint8_t>(b_pseudo));
            rng::Stream comp = rng::derive_stream(
                seed, {kTagBitCompletion, static_cast<std::uint64_t>(s),
                       static_cast<std::uint64_t>(l)});
            while (!codebook.is_leaf(bits)) {
                const int node = codebook.node_id(bits);
                const double node_phi = policy::node_logit(params, hidden, node);
                const std::uint8_t b =
                    config.pseudo_rollout_mode == SampleMode::greedy
                        ? (node_phi >= 0.0 ? 1 : 0)
                        : (comp.uniform() < sigmoid(node_phi) ? 1 : 0);
                bits.push_back(b);
            }
            flips.push_back(Flip{l, rec.node_ids[l], pi, phi, codebook.path_to_word(bits)});
            est.depth_flip_counts[l] += 1;
        }

        std::map<int, double> reward_of;
        reward_of[traj.actions[s]] = traj.reward;
        std::vector<int> need;
        for (const auto& f : flips) {
            if (f.pseudo_word != traj.actions[s]) need.push_back(f.pseudo_word);
        }
        std::sort(need.begin(), need.end());
        need.erase(std::unique(need.begin(), need.end()), need.end());
        for (int w : need) {
            reward_of[w] = tree_rollout_reward(
                params, codebook, task, traj, s, w, config.pseudo_rollout_mode,
                rng::derive_stream(seed, {kTagRollout, static_cast<std::uint64_t>(s),
                                          static_cast<std::uint64_t>(w)}));
        }
        for (const auto& f : flips) {
            g[f.node] = bintree::arm_node_grad(f.pi, f.phi, traj.reward, reward_of[f.pseudo_word]);
        }
        est.step_logit_grads.push_back(std::move(g));
        est.unique_pseudo_counts.push_back(static_cast<int>(need.size()));
        est.rollout_count += static_cast<long>(need.size());
    }
    return out;
}

EstimateOutcome run_estimator(const policy::Params& params, const tasks::TaskInstance& task,
                              const EstimatorConfig& config,
                              const bintree::BinaryTreeCodebook* codebook, std::uint64_t seed) {
    EstimateOutcome out;
    switch (config.kind) {
        case Kind::reinforce: {
            std::vector<Trajectory> batch;
            for (int i = 0; i < std::max(1, config.reinforce_batch); ++i) {
                batch.push_back(sample_trajectory(
                    params, task, config.main_traj_mode,
                    rng::derive_stream(seed, {kTagReinforce, static_cast<std::uint64_t>(i)})
                        .state));
            }
            auto estimates = reinforce_grad(batch);
            out.tape = std::move(batch[0].tape);
            out.step_grads = std::move(estimates[0].step_logit_grads);
            out.actions = std::move(batch[0].actions);
            out.reward = batch[0].reward;
            out.rollout_count = estimates[0].rollout_count;
            out.unique_pseudo_counts = std::move(estimates[0].unique_pseudo_counts);
            break;
        }
        case Kind::self_critic: {
            Trajectory traj = sample_trajectory(params, task, config.main_traj_mode, seed);
            const Trajectory greedy = sample_trajectory(params, task, SampleMode::greedy, seed);
            GradientEstimate est = self_critic_grad(traj, greedy.reward);
            out.tape = std::move(traj.tape);
            out.step_grads = std::move(est.step_logit_grads);
            out.actions = std::move(traj.actions);
            out.reward = traj.reward;
            out.rollout_count = est.rollout_count;
            out.unique_pseudo_counts = std::move(est.unique_pseudo_counts);
            break;
        }
        case Kind::mc_k: {
            Trajectory traj = sample_trajectory(params, task, config.main_traj_mode, seed);
            GradientEstimate est = mc_k_grad(traj, config.K, params, task, seed);
            out.tape = std::move(traj.tape);
            out.step_grads = std::move(est.step_logit_grads);
            out.actions = std::move(traj.actions);
            out.reward = traj.reward;
            out.rollout_count = est.rollout_count;
            out.unique_pseudo_counts = std::move(est.unique_pseudo_counts);
            break;
        }
        case Kind::ars_k:
        case Kind::arsm: {
            SequenceEstimate est = arsm_sequence_grad(params, task, config, seed);
            out.tape = std::move(est.traj.tape);
            out.step_grads = std::move(est.grad.step_logit_grads);
            out.actions = std::move(est.traj.actions);
            out.reward = est.traj.reward;
            out.rollout_count = est.grad.rollout_count;
            out.unique_pseudo_counts = std::move(est.grad.unique_pseudo_counts);
            break;
        }
        case Kind::bt_arsm: {
            require(codebook != nullptr, "run_estimator: bt_arsm needs a codebook");
            TreeSequenceEstimate est = bt_arsm_sequence_grad(params, *codebook, task, config, seed);
            out.tape = std::move(est.traj.tape);
            out.step_grads = std::move(est.grad.step_logit_grads);
            out.actions = std::move(est.traj.actions);
            out.reward = est.traj.reward;
            out.rollout_count = est.grad.rollout_count;
            out.unique_pseudo_counts = std::move(est.grad.unique_pseudo_counts);
            out.depth_flip_counts = std::move(est.grad.depth_flip_counts);
            break;
        }
    }
    return out;
}

VarianceReport variance_from_grads(const std::vector<Vec>& param_grads) {
    require(param_grads.size() >= 2, "variance_from_grads: need M >= 2");
    const std::size_t n = param_grads[0].size();
    const double M = static_cast<double>(param_grads.size());
    Vec sum(n, 0.0), sumsq(n, 0.0);
    for (const Vec& g : param_grads) {
        for (std::size_t i = 0; i < n; ++i) {
            sum[i] += g[i];
            sumsq[i] += g[i] * g[i];
        }
    }
    double mean_var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double var = std::max(0.0, (sumsq[i] - sum[i] * sum[i] / M) / (M - 1.0));
        mean_var += var;
    }
    mean_var /= static_cast<double>(n);
    VarianceReport report;
    report.log10_variance = std::log10(mean_var + 1e-30);
    return report;
}

VarianceReport measure_variance(const policy::Params& params, const tasks::TaskInstance& task,
                                const EstimatorConfig& config,
                                const bintree::BinaryTreeCodebook* codebook, int num_estimates,
                                std::uint64_t seed) {
    require(num_estimates >= 2, "measure_variance: need M >= 2");
    std::vector<Vec> grads;
    double rollouts = 0.0;
    double unique = 0.0;
    long unique_steps = 0;
    for (int i = 0; i < num_estimates; ++i) {
        const std::uint64_t est_seed =
            rng::derive_stream(seed, {kTagEstimate, static_cast<std::uint64_t>(i)}).state;
        EstimateOutcome outcome = run_estimator(params, task, config, codebook, est_seed);
        grads.push_back(
            policy::backward_accumulate(params, outcome.tape, outcome.step_grads).flatten());
        rollouts += static_cast<double>(outcome.rollout_count);
        for (int c : outcome.unique_pseudo_counts) {
            unique += c;
            ++unique_steps;
        }
    }
    VarianceReport report = variance_from_grads(grads);
    report.mean_rollouts = rollouts / num_estimates;
    report.mean_unique_pseudo = unique_steps > 0 ? unique / unique_steps : 0.0;
    return report;
}

}  // namespace acmc::estimators
