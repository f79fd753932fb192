#include "acmc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <thread>

#include "acmc/rng.hpp"
#include "json.hpp"

namespace acmc::harness {

namespace {

using nlohmann::json;

enum StreamTag : std::uint64_t {
    kTagTask = 101,
    kTagMle = 102,
    kTagInit = 103,
    kTagEval = 104,
    kTagRl = 105,
    kTagVar = 106,
    kTagOracle = 107,
    kTagTreePermute = 108,
    kTagDecode = 109,
};

// Schedule-independent parallel loop: work items are claimed by index, and
// every reduction over results happens in index order afterward.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    workers = std::min(std::max(1, workers), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", x);
    return buf;
}

const json* find(const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

long get_integer(const json& j, const char* key, long def, const std::string& where) {
    const json* v = find(j, key);
    if (!v) return def;
    require(v->is_number_integer(), "config field '" + where + key + "' must be an integer");
    return v->get<long>();
}

double get_real(const json& j, const char* key, double def, const std::string& where) {
    const json* v = find(j, key);
    if (!v) return def;
    require(v->is_number(), "config field '" + where + key + "' must be a number");
    return v->get<double>();
}

bool get_bool(const json& j, const char* key, bool def, const std::string& where) {
    const json* v = find(j, key);
    if (!v) return def;
    require(v->is_boolean(), "config field '" + where + key + "' must be a boolean");
    return v->get<bool>();
}

std::string get_string(const json& j, const char* key, const std::string& def,
                       const std::string& where) {
    const json* v = find(j, key);
    if (!v) return def;
    require(v->is_string(), "config field '" + where + key + "' must be a string");
    return v->get<std::string>();
}

estimators::SampleMode parse_mode(const std::string& s, const std::string& where) {
    if (s == "stochastic") return estimators::SampleMode::stochastic;
    if (s == "greedy") return estimators::SampleMode::greedy;
    throw std::invalid_argument("config field '" + where + "' must be stochastic or greedy");
}

estimators::Kind parse_kind(const std::string& s, const std::string& where) {
    if (s == "reinforce") return estimators::Kind::reinforce;
    if (s == "self_critic") return estimators::Kind::self_critic;
    if (s == "mc_k") return estimators::Kind::mc_k;
    if (s == "ars_k") return estimators::Kind::ars_k;
    if (s == "arsm") return estimators::Kind::arsm;
    if (s == "bt_arsm") return estimators::Kind::bt_arsm;
    throw std::invalid_argument("config field '" + where +
                                "' must be one of reinforce, self_critic, mc_k, ars_k, arsm, "
                                "bt_arsm");
}

std::string kind_name(estimators::Kind kind) {
    switch (kind) {
        case estimators::Kind::reinforce: return "reinforce";
        case estimators::Kind::self_critic: return "self_critic";
        case estimators::Kind::mc_k: return "mc_k";
        case estimators::Kind::ars_k: return "ars_k";
        case estimators::Kind::arsm: return "arsm";
        case estimators::Kind::bt_arsm: return "bt_arsm";
    }
    return "?";
}

estimators::EstimatorConfig parse_estimator(const json& j, const std::string& where) {
    require(j.is_object(), "config field '" + where + "' must be an object");
    estimators::EstimatorConfig est;
    est.kind = parse_kind(get_string(j, "kind", "arsm", where + "."), where + ".kind");
    est.K = static_cast<int>(get_integer(j, "K", 1, where + "."));
    est.main_traj_mode =
        parse_mode(get_string(j, "main_traj_mode", "stochastic", where + "."),
                   where + ".main_traj_mode");
    est.pseudo_rollout_mode =
        parse_mode(get_string(j, "pseudo_rollout_mode", "stochastic", where + "."),
                   where + ".pseudo_rollout_mode");
    est.reinforce_batch =
        static_cast<int>(get_integer(j, "reinforce_batch", 4, where + "."));
    require(est.K >= 1, "config field '" + where + ".K' must be >= 1");
    require(est.reinforce_batch >= 1,
            "config field '" + where + ".reinforce_batch' must be >= 1");
    return est;
}

std::vector<EstimatorRow> parse_rows(const json& j, const char* key, const std::string& where) {
    std::vector<EstimatorRow> rows;
    const json* v = find(j, key);
    if (!v) return rows;
    require(v->is_array(), "config field '" + where + key + "' must be an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
        const std::string slot = where + key + "[" + std::to_string(i) + "]";
        estimators::EstimatorConfig est = parse_estimator((*v)[i], slot);
        std::string name = get_string((*v)[i], "name", kind_name(est.kind), slot + ".");
        rows.emplace_back(std::move(name), est);
    }
    return rows;
}

bool head_compatible(policy::HeadKind head, estimators::Kind kind) {
    const bool tree = kind == estimators::Kind::bt_arsm;
    return tree == (head == policy::HeadKind::tree);
}

tasks::TaskInstance draw_task(const ExperimentConfig& config, std::uint64_t a, std::uint64_t b) {
    if (config.task.target) {
        tasks::TaskInstance task;
        task.context = *config.task.target;
        task.target = *config.task.target;
        task.reward_kind = config.task.reward;
        task.vocab = config.task.vocab;
        task.length = config.task.length;
        return task;
    }
    rng::Stream stream = rng::derive_stream(config.seed, {kTagTask, a, b});
    return tasks::make_copy_task(config.task.vocab, config.task.length, config.task.reward,
                                 stream);
}

policy::Params initial_params(const ExperimentConfig& config) {
    policy::Dims dims;
    dims.vocab = config.task.vocab;
    dims.embed = config.model.embed;
    dims.hidden = config.model.hidden;
    dims.head = config.model.head;
    rng::Stream stream = rng::derive_stream(config.seed, {kTagInit});
    return policy::init_params(dims, stream);
}

double decode_reward(const policy::Params& params, const tasks::TaskInstance& task,
                     const bintree::BinaryTreeCodebook* codebook, std::uint64_t seed) {
    if (params.dims.head == policy::HeadKind::softmax) {
        return estimators::sample_trajectory(params, task, estimators::SampleMode::stochastic,
                                             seed)
            .reward;
    }
    const Vec ctx_enc = policy::encode_context(params, task.context);
    policy::PolicyState state = policy::initial_state(params);
    rng::Stream stream = rng::derive_stream(seed, {kTagDecode});
    std::vector<int> z;
    for (int s = 0; s < task.length; ++s) {
        const int prev = s == 0 ? policy::kStartToken : z.back();
        state = policy::forward_step(params, state, prev, ctx_enc, nullptr);
        const Vec& hidden = state.hidden;
        auto logit_fn = [&](int node) { return policy::node_logit(params, hidden, node); };
        z.push_back(bintree::bt_sample_token(*codebook, logit_fn, stream).first);
    }
    return tasks::sequence_reward(task, z);
}

void mle_pretrain(policy::Params& params, const ExperimentConfig& config,
                  const bintree::BinaryTreeCodebook* codebook) {
    std::unique_ptr<bintree::CodebookPaths> paths;
    if (codebook) paths = std::make_unique<bintree::CodebookPaths>(*codebook);
    const int B = std::max(1, config.train.batch_size);
    for (int it = 0; it < config.train.mle_pretrain_iters; ++it) {
        std::vector<policy::MleResult> results(B);
        parallel_for(B, config.workers, [&](int b) {
            const tasks::TaskInstance task =
                draw_task(config, kTagMle * 1000003ULL + it, static_cast<std::uint64_t>(b));
            results[b] = policy::mle_gradient(params, task.context, task.target, paths.get());
        });
        policy::Params grad = policy::zeros_like(params);
        Vec flat = grad.flatten();
        for (const auto& res : results) {
            const Vec g = res.grad.flatten();
            for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += g[i] / B;
        }
        grad.assign_from_flat(flat);
        policy::sgd_update(params, grad, config.train.mle_learning_rate,
                           policy::Direction::descend);
    }
}

double eval_mean_reward(const policy::Params& params, const ExperimentConfig& config,
                        const bintree::BinaryTreeCodebook* codebook, int n) {
    std::vector<double> rewards(n);
    parallel_for(n, config.workers, [&](int i) {
        const tasks::TaskInstance task = draw_task(config, kTagEval, static_cast<std::uint64_t>(i));
        rewards[i] = decode_reward(
            params, task, codebook,
            rng::derive_stream(config.seed, {kTagEval, static_cast<std::uint64_t>(i)}).state);
    });
    double sum = 0.0;
    for (double r : rewards) sum += r;
    return n > 0 ? sum / n : 0.0;
}

// Chunked first/second moments of flat parameter gradients: deterministic for
// any worker count because chunks are reduced in order.
struct GradMoments {
    Vec sum, sumsq;
    double rollouts = 0.0;
    double unique_sum = 0.0;
    long unique_steps = 0;
    long count = 0;
};

GradMoments accumulate_grads(const policy::Params& params, const tasks::TaskInstance& task,
                             const estimators::EstimatorConfig& est,
                             const bintree::BinaryTreeCodebook* codebook, int n,
                             std::uint64_t tag, const ExperimentConfig& config, bool corrupt) {
    constexpr int kChunk = 64;
    const int chunks = (n + kChunk - 1) / kChunk;
    std::vector<GradMoments> partial(chunks);
    const std::size_t dim = params.param_count();
    parallel_for(chunks, config.workers, [&](int c) {
        GradMoments& m = partial[c];
        m.sum.assign(dim, 0.0);
        m.sumsq.assign(dim, 0.0);
        const int lo = c * kChunk;
        const int hi = std::min(n, lo + kChunk);
        for (int i = lo; i < hi; ++i) {
            const std::uint64_t est_seed =
                rng::derive_stream(config.seed, {tag, static_cast<std::uint64_t>(i)}).state;
            estimators::EstimateOutcome out =
                estimators::run_estimator(params, task, est, codebook, est_seed);
            if (corrupt) {
                for (Vec& g : out.step_grads) {
                    for (double& x : g) x = -x;
                }
            }
            const Vec flat =
                policy::backward_accumulate(params, out.tape, out.step_grads).flatten();
            for (std::size_t k = 0; k < dim; ++k) {
                m.sum[k] += flat[k];
                m.sumsq[k] += flat[k] * flat[k];
            }
            m.rollouts += static_cast<double>(out.rollout_count);
            for (int u : out.unique_pseudo_counts) {
                m.unique_sum += u;
                ++m.unique_steps;
            }
            ++m.count;
        }
    });
    GradMoments total;
    total.sum.assign(dim, 0.0);
    total.sumsq.assign(dim, 0.0);
    for (const auto& m : partial) {
        for (std::size_t k = 0; k < dim; ++k) {
            total.sum[k] += m.sum[k];
            total.sumsq[k] += m.sumsq[k];
        }
        total.rollouts += m.rollouts;
        total.unique_sum += m.unique_sum;
        total.unique_steps += m.unique_steps;
        total.count += m.count;
    }
    return total;
}

void validate_common(const ExperimentConfig& config) {
    require(config.task.vocab >= 2, "config field 'task.vocab' must be >= 2");
    require(config.task.length >= 1, "config field 'task.length' must be >= 1");
    require(config.model.embed >= 1, "config field 'model.embed' must be >= 1");
    require(config.model.hidden >= 1, "config field 'model.hidden' must be >= 1");
    require(config.workers >= 1, "config field 'workers' must be >= 1");
    if (config.task.target) {
        require(static_cast<int>(config.task.target->size()) == config.task.length,
                "config field 'task.target' must have task.length entries");
        for (int t : *config.task.target) {
            require(t >= 0 && t < config.task.vocab,
                    "config field 'task.target' entries must lie in [0, vocab)");
        }
    }
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    require(j.is_object(), "config root must be a JSON object");

    ExperimentConfig config;
    config.seed = static_cast<std::uint64_t>(get_integer(j, "seed", 0, ""));
    config.out = get_string(j, "out", "", "");
    config.workers = static_cast<int>(get_integer(j, "workers", 1, ""));
    config.record_wall_time = get_bool(j, "record_wall_time", false, "");
    config.codebook_path = get_string(j, "codebook", "", "");

    const json* task = find(j, "task");
    require(task != nullptr && task->is_object(), "config field 'task' must be an object");
    config.task.vocab = static_cast<int>(get_integer(*task, "vocab", 0, "task."));
    config.task.length = static_cast<int>(get_integer(*task, "length", 0, "task."));
    const std::string reward = get_string(*task, "reward", "hamming", "task.");
    if (reward == "hamming") {
        config.task.reward = tasks::RewardKind::hamming;
    } else if (reward == "exact_match") {
        config.task.reward = tasks::RewardKind::exact_match;
    } else {
        throw std::invalid_argument("config field 'task.reward' must be hamming or exact_match");
    }
    if (const json* target = find(*task, "target")) {
        require(target->is_array(), "config field 'task.target' must be an array");
        std::vector<int> y;
        for (const auto& v : *target) {
            require(v.is_number_integer(), "config field 'task.target' must hold integers");
            y.push_back(v.get<int>());
        }
        config.task.target = std::move(y);
    }

    if (const json* model = find(j, "model")) {
        require(model->is_object(), "config field 'model' must be an object");
        config.model.embed = static_cast<int>(get_integer(*model, "embed", 4, "model."));
        config.model.hidden = static_cast<int>(get_integer(*model, "hidden", 8, "model."));
        const std::string head = get_string(*model, "head", "softmax", "model.");
        if (head == "softmax") {
            config.model.head = policy::HeadKind::softmax;
        } else if (head == "tree") {
            config.model.head = policy::HeadKind::tree;
        } else {
            throw std::invalid_argument("config field 'model.head' must be softmax or tree");
        }
    }

    if (const json* est = find(j, "estimator")) {
        config.estimator = parse_estimator(*est, "estimator");
    }

    if (const json* train = find(j, "train")) {
        require(train->is_object(), "config field 'train' must be an object");
        config.train.iterations =
            static_cast<int>(get_integer(*train, "iterations", 0, "train."));
        config.train.batch_size =
            static_cast<int>(get_integer(*train, "batch_size", 1, "train."));
        config.train.learning_rate = get_real(*train, "learning_rate", 0.1, "train.");
        config.train.mle_pretrain_iters =
            static_cast<int>(get_integer(*train, "mle_pretrain_iters", 0, "train."));
        config.train.mle_learning_rate =
            get_real(*train, "mle_learning_rate", 0.1, "train.");
        require(config.train.iterations >= 0,
                "config field 'train.iterations' must be >= 0");
        require(config.train.batch_size >= 1, "config field 'train.batch_size' must be >= 1");
        require(config.train.mle_pretrain_iters >= 0,
                "config field 'train.mle_pretrain_iters' must be >= 0");
        require(config.train.iterations == 0 || config.train.learning_rate > 0.0,
                "config field 'train.learning_rate' must be > 0 when iterations > 0");
    }

    if (const json* variance = find(j, "variance")) {
        require(variance->is_object(), "config field 'variance' must be an object");
        config.variance.samples =
            static_cast<int>(get_integer(*variance, "samples", 1000, "variance."));
        config.variance.rows = parse_rows(*variance, "estimators", "variance.");
    }

    if (const json* oracle = find(j, "oracle")) {
        require(oracle->is_object(), "config field 'oracle' must be an object");
        config.oracle.samples =
            static_cast<int>(get_integer(*oracle, "samples", 20000, "oracle."));
        config.oracle.corrupt_estimator =
            get_bool(*oracle, "corrupt_estimator", false, "oracle.");
        config.oracle.rows = parse_rows(*oracle, "estimators", "oracle.");
    }

    if (const json* tree = find(j, "tree")) {
        require(tree->is_object(), "config field 'tree' must be an object");
        config.tree.embeddings = get_string(*tree, "embeddings", "", "tree.");
        const std::string linkage = get_string(*tree, "linkage", "average", "tree.");
        if (linkage == "average") {
            config.tree.linkage = bintree::Linkage::average;
        } else if (linkage == "single") {
            config.tree.linkage = bintree::Linkage::single;
        } else if (linkage == "complete") {
            config.tree.linkage = bintree::Linkage::complete;
        } else {
            throw std::invalid_argument(
                "config field 'tree.linkage' must be average, single, or complete");
        }
        config.tree.permute = get_bool(*tree, "permute", false, "tree.");
    }

    validate_common(config);
    return config;
}

ExperimentConfig load_config(const std::string& path) {
    return parse_config(read_file(path));
}

bintree::BinaryTreeCodebook resolve_codebook(const ExperimentConfig& config) {
    if (!config.codebook_path.empty()) {
        return bintree::codebook_from_json(read_file(config.codebook_path));
    }
    bintree::EmbeddingTable table;
    if (!config.tree.embeddings.empty()) {
        table = bintree::load_embeddings(config.tree.embeddings);
    } else {
        for (int v = 0; v < config.task.vocab; ++v) {
            table.labels.push_back("w" + std::to_string(v));
            table.vectors.push_back(Vec{static_cast<double>(v)});
        }
    }
    rng::Stream stream = rng::derive_stream(config.seed, {kTagTreePermute});
    return bintree::build_tree(table, config.tree.linkage, config.tree.permute, stream);
}

TrainResult run_train(const ExperimentConfig& config) {
    require(head_compatible(config.model.head, config.estimator.kind),
            "config field 'estimator.kind' is incompatible with 'model.head'");

    std::optional<bintree::BinaryTreeCodebook> codebook;
    if (config.model.head == policy::HeadKind::tree) codebook = resolve_codebook(config);
    const bintree::BinaryTreeCodebook* cb = codebook ? &*codebook : nullptr;
    if (cb) {
        require(cb->vocab == config.task.vocab,
                "config field 'codebook' vocabulary does not match 'task.vocab'");
    }

    TrainResult result;
    result.params = initial_params(config);
    mle_pretrain(result.params, config, cb);
    result.pre_rl_mean_reward = eval_mean_reward(result.params, config, cb, 100);

    const int T = config.task.length;
    const int D = cb ? cb->depth : 0;
    std::ostringstream csv;
    csv << "iteration,mean_reward,rollout_count,mean_unique_pseudo";
    for (int t = 0; t < T; ++t) csv << ",t" << t;
    for (int d = 0; d < D; ++d) csv << ",d" << d;
    csv << ",wall_time\n";

    const int B = std::max(1, config.train.batch_size);
    std::vector<double> recent;
    const Vec zero_flat(result.params.param_count(), 0.0);
    for (int it = 0; it < config.train.iterations; ++it) {
        const auto started = std::chrono::steady_clock::now();
        std::vector<estimators::EstimateOutcome> outcomes(B);
        std::vector<tasks::TaskInstance> batch(B);
        for (int b = 0; b < B; ++b) {
            batch[b] = draw_task(config, static_cast<std::uint64_t>(it),
                                 static_cast<std::uint64_t>(b));
        }
        parallel_for(B, config.workers, [&](int b) {
            const std::uint64_t est_seed =
                rng::derive_stream(config.seed, {kTagRl, static_cast<std::uint64_t>(it),
                                                 static_cast<std::uint64_t>(b)})
                    .state;
            outcomes[b] =
                estimators::run_estimator(result.params, batch[b], config.estimator, cb, est_seed);
        });

        Vec flat = zero_flat;
        double reward_sum = 0.0;
        long rollouts = 0;
        double unique_sum = 0.0;
        long unique_steps = 0;
        std::vector<long> t_hist(T, 0);
        std::vector<long> d_hist(D, 0);
        for (const auto& out : outcomes) {
            const Vec g =
                policy::backward_accumulate(result.params, out.tape, out.step_grads).flatten();
            for (std::size_t k = 0; k < flat.size(); ++k) flat[k] += g[k] / B;
            reward_sum += out.reward;
            rollouts += out.rollout_count;
            for (std::size_t s = 0; s < out.unique_pseudo_counts.size(); ++s) {
                t_hist[s] += out.unique_pseudo_counts[s];
                unique_sum += out.unique_pseudo_counts[s];
                ++unique_steps;
            }
            for (std::size_t d = 0; d < out.depth_flip_counts.size(); ++d) {
                d_hist[d] += out.depth_flip_counts[d];
            }
        }
        policy::Params grad = policy::zeros_like(result.params);
        grad.assign_from_flat(flat);
        policy::sgd_update(result.params, grad, config.train.learning_rate,
                           policy::Direction::ascend);

        const double mean_reward = reward_sum / B;
        recent.push_back(mean_reward);
        double wall = 0.0;
        if (config.record_wall_time) {
            wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                       .count();
        }
        csv << it << ',' << fmt(mean_reward) << ',' << rollouts << ','
            << fmt(unique_steps > 0 ? unique_sum / unique_steps : 0.0);
        for (int t = 0; t < T; ++t) csv << ',' << t_hist[t];
        for (int d = 0; d < D; ++d) csv << ',' << d_hist[d];
        csv << ',' << fmt(wall) << '\n';
    }

    const int tail = std::min<int>(100, static_cast<int>(recent.size()));
    double tail_sum = 0.0;
    for (int i = 0; i < tail; ++i) tail_sum += recent[recent.size() - tail + i];
    result.final_mean_reward = tail > 0 ? tail_sum / tail : 0.0;
    result.metrics_csv = csv.str();
    if (!config.out.empty()) write_file(config.out, result.metrics_csv);
    return result;
}

std::string run_variance(const ExperimentConfig& config) {
    require(config.variance.samples >= 2, "config field 'variance.samples' must be >= 2");
    std::vector<EstimatorRow> rows = config.variance.rows;
    if (rows.empty()) rows.emplace_back(kind_name(config.estimator.kind), config.estimator);

    std::optional<bintree::BinaryTreeCodebook> codebook;
    if (config.model.head == policy::HeadKind::tree) codebook = resolve_codebook(config);
    const bintree::BinaryTreeCodebook* cb = codebook ? &*codebook : nullptr;

    policy::Params params = initial_params(config);
    mle_pretrain(params, config, cb);
    const tasks::TaskInstance task = draw_task(config, 0, 0);

    std::ostringstream csv;
    csv << "estimator,log10_variance,mean_rollouts,mean_unique_pseudo\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(head_compatible(config.model.head, rows[r].second.kind),
                "config field 'variance.estimators' kind is incompatible with 'model.head'");
        const GradMoments m =
            accumulate_grads(params, task, rows[r].second, cb, config.variance.samples,
                             kTagVar * 1000003ULL + r, config, false);
        const double M = static_cast<double>(m.count);
        double mean_var = 0.0;
        for (std::size_t k = 0; k < m.sum.size(); ++k) {
            mean_var += std::max(0.0, (m.sumsq[k] - m.sum[k] * m.sum[k] / M) / (M - 1.0));
        }
        mean_var /= static_cast<double>(m.sum.size());
        csv << rows[r].first << ',' << fmt(std::log10(mean_var + 1e-30)) << ','
            << fmt(m.rollouts / M) << ','
            << fmt(m.unique_steps > 0 ? m.unique_sum / m.unique_steps : 0.0) << '\n';
    }
    const std::string out = csv.str();
    if (!config.out.empty()) write_file(config.out, out);
    return out;
}

OracleReport run_oracle_check(const ExperimentConfig& config) {
    const double budget =
        std::pow(static_cast<double>(config.task.vocab), config.task.length);
    require(budget <= 1e5 + 0.5,
            "oracle-check refused: V^T exceeds the enumeration budget of 1e5 sequences");
    require(config.oracle.samples >= 2, "config field 'oracle.samples' must be >= 2");

    std::optional<bintree::BinaryTreeCodebook> codebook;
    if (config.model.head == policy::HeadKind::tree) codebook = resolve_codebook(config);
    const bintree::BinaryTreeCodebook* cb = codebook ? &*codebook : nullptr;

    policy::Params params = initial_params(config);
    const tasks::TaskInstance task = draw_task(config, 0, 0);
    const tasks::OracleResult oracle = tasks::exact_er_and_grads(params, task, cb);
    const Vec exact = oracle.param_grad.flatten();

    json suites = json::array();
    bool all_pass = true;
    auto add = [&](const std::string& name, double statistic, double bound) {
        const bool pass = statistic <= bound;
        all_pass = all_pass && pass;
        suites.push_back(
            {{"suite", name}, {"statistic", statistic}, {"bound", bound}, {"pass", pass}});
    };

    add("normalization", std::abs(oracle.prob_sum - 1.0), 1e-10);

    // Fast pseudo-action matrix vs. the O(KV^2) oracle on random instances.
    {
        long mismatches = 0;
        rng::Stream stream = rng::derive_stream(config.seed, {kTagOracle, 1});
        const int vocabs[] = {2, 3, 4, 8};
        for (int i = 0; i < 2000; ++i) {
            const int V = vocabs[i % 4];
            sampling::SimplexVector pi = sampling::sample_pi(stream, V);
            Vec phi(V);
            for (double& x : phi) x = 4.0 * (stream.uniform() - 0.5);
            const int K = 1 + stream.uniform_int(std::min(V, 8));
            std::vector<int> perm(V);
            for (int v = 0; v < V; ++v) perm[v] = v;
            for (int v = 0; v < K; ++v) std::swap(perm[v], perm[v + stream.uniform_int(V - v)]);
            const std::vector<int> refs(perm.begin(), perm.begin() + K);
            const auto fast = sampling::pseudo_action_matrix_fast(pi, phi, refs);
            const auto naive = sampling::pseudo_action_matrix_naive(pi, phi, refs);
            if (fast.entries != naive.entries || fast.true_action != naive.true_action) {
                ++mismatches;
            }
        }
        add("fast_naive_equivalence", static_cast<double>(mismatches), 0.0);
    }

    // Oracle parameter gradient vs. central finite differences of exact ER.
    {
        const double h = 1e-5;
        double max_rel = 0.0;
        Vec flat = params.flatten();
        policy::Params probe = params;
        for (std::size_t k = 0; k < flat.size(); ++k) {
            const double saved = flat[k];
            flat[k] = saved + h;
            probe.assign_from_flat(flat);
            const double up = tasks::exact_er_and_grads(probe, task, cb).expected_reward;
            flat[k] = saved - h;
            probe.assign_from_flat(flat);
            const double down = tasks::exact_er_and_grads(probe, task, cb).expected_reward;
            flat[k] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double rel =
                std::abs(exact[k] - fd) / std::max({1.0, std::abs(exact[k]), std::abs(fd)});
            max_rel = std::max(max_rel, rel);
        }
        add("finite_difference", max_rel, 1e-6);
    }

    std::vector<EstimatorRow> rows = config.oracle.rows;
    if (rows.empty()) {
        if (config.model.head == policy::HeadKind::tree) {
            estimators::EstimatorConfig est;
            est.kind = estimators::Kind::bt_arsm;
            rows.emplace_back("bt_arsm", est);
        } else {
            auto mk = [](estimators::Kind kind, int K) {
                estimators::EstimatorConfig est;
                est.kind = kind;
                est.K = K;
                return est;
            };
            rows.emplace_back("reinforce", mk(estimators::Kind::reinforce, 1));
            rows.emplace_back("self_critic", mk(estimators::Kind::self_critic, 1));
            rows.emplace_back("mc_2", mk(estimators::Kind::mc_k, 2));
            rows.emplace_back("ars_1", mk(estimators::Kind::ars_k, 1));
            rows.emplace_back("ars_2", mk(estimators::Kind::ars_k, 2));
            rows.emplace_back("arsm", mk(estimators::Kind::arsm, 1));
        }
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(head_compatible(config.model.head, rows[r].second.kind),
                "config field 'oracle.estimators' kind is incompatible with 'model.head'");
        const GradMoments m = accumulate_grads(params, task, rows[r].second, cb,
                                               config.oracle.samples, kTagOracle * 131ULL + r,
                                               config, config.oracle.corrupt_estimator);
        const double N = static_cast<double>(m.count);
        double max_z = 0.0;
        for (std::size_t k = 0; k < m.sum.size(); ++k) {
            const double mean = m.sum[k] / N;
            const double var =
                std::max(0.0, (m.sumsq[k] - m.sum[k] * m.sum[k] / N) / (N - 1.0));
            const double se = std::sqrt(var / N);
            const double diff = std::abs(mean - exact[k]);
            if (se > 0.0) {
                max_z = std::max(max_z, diff / se);
            } else if (diff > 1e-12) {
                max_z = 1e300;
            }
        }
        add("unbiasedness_" + rows[r].first, max_z, 5.0);
    }

    json report = {{"suites", suites}, {"all_pass", all_pass}};
    OracleReport result;
    result.json = report.dump(2) + "\n";
    result.all_pass = all_pass;
    if (!config.out.empty()) write_file(config.out, result.json);
    return result;
}

TreeBuildResult run_tree_build(const ExperimentConfig& config) {
    bintree::EmbeddingTable table;
    if (!config.tree.embeddings.empty()) {
        table = bintree::load_embeddings(config.tree.embeddings);
    } else {
        require(config.task.vocab >= 2,
                "config field 'task.vocab' must be >= 2 when 'tree.embeddings' is absent");
        for (int v = 0; v < config.task.vocab; ++v) {
            table.labels.push_back("w" + std::to_string(v));
            table.vectors.push_back(Vec{static_cast<double>(v)});
        }
    }
    rng::Stream stream = rng::derive_stream(config.seed, {kTagTreePermute});
    const bintree::BinaryTreeCodebook codebook =
        bintree::build_tree(table, config.tree.linkage, config.tree.permute, stream);

    TreeBuildResult result;
    result.json = bintree::codebook_to_json(codebook);
    result.depth = codebook.depth;
    double total = 0.0;
    for (const auto& path : codebook.paths) total += static_cast<double>(path.size());
    result.mean_path_length = codebook.vocab > 0 ? total / codebook.vocab : 0.0;
    if (!config.out.empty()) write_file(config.out, result.json);
    return result;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open output file: " + path);
    out << text;
    require(out.good(), "failed writing output file: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace acmc::harness
