#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "acmc/common.hpp"
#include "acmc/rng.hpp"

namespace acmc::bintree {

using BitPath = std::vector<std::uint8_t>;

struct EmbeddingTable {
    std::vector<std::string> labels;
    std::vector<Vec> vectors;

    int size() const { return static_cast<int>(labels.size()); }
    int dim() const { return vectors.empty() ? 0 : static_cast<int>(vectors[0].size()); }
};

// Plain text, one word per line: `<label> <f1> <f2> ... <fd>`.
EmbeddingTable load_embeddings(const std::string& path);

enum class Linkage { average, single, complete };

// Bijection between V words and root-to-leaf binary paths. Internal nodes are
// numbered in DFS preorder; there are exactly V-1 of them.
struct BinaryTreeCodebook {
    int vocab = 0;
    int depth = 0;
    std::vector<std::string> labels;   // by word index
    std::vector<BitPath> paths;        // word index -> root-to-leaf bits
    std::map<std::string, int> node_index;  // bit-prefix -> internal node id
    std::map<std::string, int> leaf_index;  // complete path -> word index

    int node_count() const { return vocab - 1; }
    const BitPath& word_to_path(int word) const;
    int path_to_word(const BitPath& bits) const;
    // Internal node id at the end of a (possibly empty) prefix.
    int node_id(const BitPath& prefix) const;
    bool is_leaf(const BitPath& bits) const;
};

std::string path_key(const BitPath& bits);

// Agglomerative clustering with Euclidean distance under the chosen linkage.
// Left child = cluster holding the smaller minimum word id; distance ties are
// broken by the smallest cluster-id pair. permute_leaves shuffles word ids
// across leaves after construction (random-tree ablation).
BinaryTreeCodebook build_tree(const EmbeddingTable& embeddings, Linkage linkage,
                              bool permute_leaves, rng::Stream& stream);

std::string codebook_to_json(const BinaryTreeCodebook& codebook);
BinaryTreeCodebook codebook_from_json(const std::string& text);

struct BinaryStepRecord {
    BitPath bits;
    std::vector<int> node_ids;
    Vec pis;
    Vec logits;
};

// Walk root to leaf sampling each bit by its node's sigmoid. node_logit is
// called exactly once per visited node, so the caller's call count equals the
// emitted path length.
std::pair<int, BinaryStepRecord> bt_sample_token(const BinaryTreeCodebook& codebook,
                                                 const std::function<double(int)>& node_logit,
                                                 rng::Stream& stream);

// log p of a complete leaf path under per-node Bernoullis, plus the gradient
// b_l - sigmoid(phi_l) at each visited node (dense over V-1 nodes, zero off
// the path).
std::pair<double, Vec> bt_logprob_and_mle_grad(const BinaryTreeCodebook& codebook,
                                               const BitPath& bits, const Vec& node_logits);

// Single-binary-variable estimator: (r_true - r_pseudo)(1/2 - pi), exactly
// zero when the antithetic bits agree.
double arm_node_grad(double pi, double phi, double r_true, double r_pseudo);

}  // namespace acmc::bintree

#include "acmc/policy.hpp"

namespace acmc::bintree {

// Adapts a codebook to the policy's tree-head path interface.
class CodebookPaths final : public policy::TreePathSource {
  public:
    explicit CodebookPaths(const BinaryTreeCodebook& codebook) : codebook_(codebook) {}
    const BitPath& path_of(int word) const override { return codebook_.word_to_path(word); }
    int node_at(const BitPath& prefix) const override { return codebook_.node_id(prefix); }

  private:
    const BinaryTreeCodebook& codebook_;
};

}  // namespace acmc::bintree
