#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acmc/common.hpp"
#include "acmc/rng.hpp"

namespace acmc::policy {

enum class HeadKind { softmax, tree };

// Previous-token marker for the first step; embeds as the zero vector.
inline constexpr int kStartToken = -1;

struct Dims {
    int vocab = 0;
    int embed = 0;
    int hidden = 0;
    HeadKind head = HeadKind::softmax;

    int head_rows() const { return head == HeadKind::softmax ? vocab : vocab - 1; }
};

// Single-layer tanh recurrence with additive context injection:
//   h' = tanh(recur h + input_proj^T e(prev) + context_embed^T enc(x) + bias_h)
//   logits = head_w h' + head_b
// The context encoding enc(x) is the mean token embedding of the context.
struct Params {
    Dims dims;
    Matrix token_embed;    // V x E
    Matrix context_embed;  // E x H
    Matrix recur;          // H x H
    Matrix input_proj;     // E x H
    Vec bias_h;            // H
    Matrix head_w;         // head_rows x H
    Vec head_b;            // head_rows

    std::size_t param_count() const;
    Vec flatten() const;
    void assign_from_flat(const Vec& flat);
};

Params init_params(const Dims& dims, rng::Stream& stream);  // uniform in [-0.1, 0.1]
Params zeros_like(const Params& params);

struct PolicyState {
    Vec hidden;
    int step_index = 0;
};

struct TapeRecord {
    int prev_token = kStartToken;
    Vec h_prev;
    Vec h_new;
};

// Forward record for one sequence; sufficient for exact backprop.
struct Tape {
    std::vector<int> context;
    Vec ctx_enc;
    std::vector<TapeRecord> steps;
};

Vec encode_context(const Params& params, const std::vector<int>& context);
PolicyState initial_state(const Params& params);

// One recurrence step. Appends a record when tape is non-null.
PolicyState forward_step(const Params& params, const PolicyState& state, int prev_token,
                         const Vec& ctx_enc, Tape* tape);

// Full head output for a hidden state (V logits, or V-1 node logits).
Vec step_logits(const Params& params, const Vec& hidden);
// Single tree-head node logit; O(H).
double node_logit(const Params& params, const Vec& hidden, int node);

// Exact backpropagation-through-time of sum_t <upstream[t], logits_t>.
Params backward_accumulate(const Params& params, const Tape& tape,
                           const std::vector<Vec>& upstream);

// Teacher-forced NLL and its parameter gradient. For the tree head the
// codebook paths of the targets define the per-node Bernoulli factors.
struct MleResult {
    double nll = 0.0;
    Params grad;
};

class TreePathSource {
  public:
    virtual ~TreePathSource() = default;
    virtual const std::vector<std::uint8_t>& path_of(int word) const = 0;
    virtual int node_at(const std::vector<std::uint8_t>& prefix) const = 0;
};

MleResult mle_gradient(const Params& params, const std::vector<int>& context,
                       const std::vector<int>& target, const TreePathSource* tree);

enum class Direction { ascend, descend };

void sgd_update(Params& params, const Params& grad, double learning_rate, Direction direction);

// JSON checkpoint: base64 little-endian f64 arrays keyed by field name plus a
// dimensions header.
std::string save_checkpoint(const Params& params);
Params load_checkpoint(const std::string& text);

}  // namespace acmc::policy
