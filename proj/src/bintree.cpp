#include "acmc/bintree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace acmc::bintree {

namespace {

double point_dist(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

struct Cluster {
    std::vector<int> members;  // word indices
    int tree = -1;             // index into nodes, or ~word for leaves
    bool active = true;
    int min_word = 0;
};

struct TreeNode {
    int left = 0;   // >= 0: internal node index; < 0: leaf word ~w
    int right = 0;
};

}  // namespace

EmbeddingTable load_embeddings(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open embedding file: " + path);
    EmbeddingTable table;
    std::string line;
    int line_no = 0;
    int dim = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ss(line);
        std::string label;
        ss >> label;
        Vec v;
        double x;
        while (ss >> x) v.push_back(x);
        if (!ss.eof()) {
            throw std::invalid_argument("malformed embedding line " + std::to_string(line_no));
        }
        if (v.empty() || (dim >= 0 && static_cast<int>(v.size()) != dim)) {
            throw std::invalid_argument("malformed embedding line " + std::to_string(line_no));
        }
        for (const auto& existing : table.labels) {
            if (existing == label) {
                throw std::invalid_argument("duplicate word at embedding line " + std::to_string(line_no));
            }
        }
        dim = static_cast<int>(v.size());
        table.labels.push_back(label);
        table.vectors.push_back(std::move(v));
    }
    return table;
}

const BitPath& BinaryTreeCodebook::word_to_path(int word) const {
    require(word >= 0 && word < vocab, "word id out of range");
    return paths[word];
}

int BinaryTreeCodebook::path_to_word(const BitPath& bits) const {
    auto it = leaf_index.find(path_key(bits));
    require(it != leaf_index.end(), "path is not a leaf");
    return it->second;
}

int BinaryTreeCodebook::node_id(const BitPath& prefix) const {
    auto it = node_index.find(path_key(prefix));
    require(it != node_index.end(), "prefix is not an internal node");
    return it->second;
}

bool BinaryTreeCodebook::is_leaf(const BitPath& bits) const {
    return leaf_index.count(path_key(bits)) > 0;
}

std::string path_key(const BitPath& bits) {
    std::string s;
    s.reserve(bits.size());
    for (auto b : bits) s.push_back(b ? '1' : '0');
    return s;
}

BinaryTreeCodebook build_tree(const EmbeddingTable& embeddings, Linkage linkage,
                              bool permute_leaves, rng::Stream& stream) {
    const int vocab = embeddings.size();
    require(vocab >= 2, "build_tree: need at least 2 words");

    // Pairwise point distances.
    std::vector<Vec> dist(vocab, Vec(vocab, 0.0));
    for (int i = 0; i < vocab; ++i) {
        for (int j = i + 1; j < vocab; ++j) {
            dist[i][j] = dist[j][i] = point_dist(embeddings.vectors[i], embeddings.vectors[j]);
        }
    }

    std::vector<Cluster> clusters;
    std::vector<TreeNode> nodes;
    for (int v = 0; v < vocab; ++v) {
        clusters.push_back(Cluster{{v}, ~v, true, v});
    }

    auto cluster_dist = [&](const Cluster& a, const Cluster& b) {
        double best = (linkage == Linkage::average) ? 0.0
                      : (linkage == Linkage::single) ? std::numeric_limits<double>::infinity()
                                                     : 0.0;
        for (int i : a.members) {
            for (int j : b.members) {
                const double d = dist[i][j];
                switch (linkage) {
                    case Linkage::average: best += d; break;
                    case Linkage::single: best = std::min(best, d); break;
                    case Linkage::complete: best = std::max(best, d); break;
                }
            }
        }
        if (linkage == Linkage::average) {
            best /= static_cast<double>(a.members.size()) * b.members.size();
        }
        return best;
    };

    for (int round = 0; round < vocab - 1; ++round) {
        int best_a = -1, best_b = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < clusters.size(); ++a) {
            if (!clusters[a].active) continue;
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                if (!clusters[b].active) continue;
                const double d = cluster_dist(clusters[a], clusters[b]);
                if (d < best_d) {
                    best_d = d;
                    best_a = static_cast<int>(a);
                    best_b = static_cast<int>(b);
                }
            }
        }
        Cluster& ca = clusters[best_a];
        Cluster& cb = clusters[best_b];
        const bool a_left = ca.min_word < cb.min_word;
        TreeNode node;
        node.left = a_left ? ca.tree : cb.tree;
        node.right = a_left ? cb.tree : ca.tree;
        nodes.push_back(node);

        Cluster merged;
        merged.members = ca.members;
        merged.members.insert(merged.members.end(), cb.members.begin(), cb.members.end());
        std::sort(merged.members.begin(), merged.members.end());
        merged.tree = static_cast<int>(nodes.size()) - 1;
        merged.min_word = std::min(ca.min_word, cb.min_word);
        ca.active = cb.active = false;
        clusters.push_back(std::move(merged));
    }

    BinaryTreeCodebook codebook;
    codebook.vocab = vocab;
    codebook.labels = embeddings.labels;
    codebook.paths.resize(vocab);

    // DFS preorder: assign internal node ids and leaf paths.
    int next_id = 0;
    BitPath prefix;
    const int root = static_cast<int>(nodes.size()) - 1;
    std::function<void(int)> walk = [&](int tree) {
        if (tree < 0) {
            codebook.paths[~tree] = prefix;
            codebook.depth = std::max(codebook.depth, static_cast<int>(prefix.size()));
            return;
        }
        codebook.node_index[path_key(prefix)] = next_id++;
        prefix.push_back(0);
        walk(nodes[tree].left);
        prefix.back() = 1;
        walk(nodes[tree].right);
        prefix.pop_back();
    };
    walk(root);

    if (permute_leaves) {
        std::vector<int> perm(vocab);
        for (int i = 0; i < vocab; ++i) perm[i] = i;
        for (int i = vocab - 1; i > 0; --i) {
            std::swap(perm[i], perm[stream.uniform_int(i + 1)]);
        }
        std::vector<BitPath> shuffled(vocab);
        for (int i = 0; i < vocab; ++i) shuffled[perm[i]] = codebook.paths[i];
        codebook.paths = std::move(shuffled);
    }

    for (int v = 0; v < vocab; ++v) {
        codebook.leaf_index[path_key(codebook.paths[v])] = v;
    }
    return codebook;
}

std::string codebook_to_json(const BinaryTreeCodebook& codebook) {
    nlohmann::json j;
    j["depth"] = codebook.depth;
    nlohmann::json paths = nlohmann::json::object();
    for (int v = 0; v < codebook.vocab; ++v) {
        paths[codebook.labels[v]] = path_key(codebook.paths[v]);
    }
    j["paths"] = std::move(paths);
    nlohmann::json nodes = nlohmann::json::object();
    for (const auto& [prefix, id] : codebook.node_index) {
        nodes[prefix] = id;
    }
    j["node_index"] = std::move(nodes);
    return j.dump(2) + "\n";
}

BinaryTreeCodebook codebook_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    BinaryTreeCodebook codebook;
    codebook.depth = j.at("depth").get<int>();
    for (const auto& [label, value] : j.at("paths").items()) {
        BitPath bits;
        for (char c : value.get<std::string>()) bits.push_back(c == '1');
        codebook.labels.push_back(label);
        codebook.paths.push_back(std::move(bits));
    }
    codebook.vocab = static_cast<int>(codebook.labels.size());
    for (int v = 0; v < codebook.vocab; ++v) {
        codebook.leaf_index[path_key(codebook.paths[v])] = v;
    }
    for (const auto& [prefix, id] : j.at("node_index").items()) {
        codebook.node_index[prefix] = id.get<int>();
    }
    return codebook;
}

std::pair<int, BinaryStepRecord> bt_sample_token(const BinaryTreeCodebook& codebook,
                                                 const std::function<double(int)>& node_logit,
                                                 rng::Stream& stream) {
    BinaryStepRecord record;
    BitPath bits;
    while (!codebook.is_leaf(bits)) {
        const int node = codebook.node_id(bits);
        const double phi = node_logit(node);
        const double pi = stream.uniform();
        const std::uint8_t b = pi < sigmoid(phi) ? 1 : 0;
        record.node_ids.push_back(node);
        record.pis.push_back(pi);
        record.logits.push_back(phi);
        bits.push_back(b);
    }
    record.bits = bits;
    return {codebook.path_to_word(bits), std::move(record)};
}

std::pair<double, Vec> bt_logprob_and_mle_grad(const BinaryTreeCodebook& codebook,
                                               const BitPath& bits, const Vec& node_logits) {
    require(codebook.is_leaf(bits), "bt_logprob: path is not a leaf");
    double logp = 0.0;
    Vec grad(codebook.node_count(), 0.0);
    BitPath prefix;
    for (std::uint8_t b : bits) {
        const int node = codebook.node_id(prefix);
        const double p = sigmoid(node_logits[node]);
        logp += b ? std::log(p) : std::log1p(-p);
        grad[node] = static_cast<double>(b) - p;
        prefix.push_back(b);
    }
    return {logp, std::move(grad)};
}

double arm_node_grad(double pi, double phi, double r_true, double r_pseudo) {
    const int b_true = pi < sigmoid(phi) ? 1 : 0;
    const int b_pseudo = pi > sigmoid(-phi) ? 1 : 0;
    if (b_true == b_pseudo) return 0.0;
    return (r_true - r_pseudo) * (0.5 - pi);
}

}  // namespace acmc::bintree
