#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "acmc/bintree.hpp"
#include "doctest.h"

using namespace acmc;

namespace {

bintree::EmbeddingTable scalar_table(const std::vector<double>& xs) {
    bintree::EmbeddingTable table;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        table.labels.push_back("w" + std::to_string(i));
        table.vectors.push_back(Vec{xs[i]});
    }
    return table;
}

}  // namespace

TEST_CASE("two separated pairs cluster into a depth-2 tree") {
    // {0, 1} and {10, 11} merge internally before the two pairs join at the
    // root, giving each word a 2-bit code.
    rng::Stream stream = rng::make_stream(1);
    const auto codebook =
        bintree::build_tree(scalar_table({0.0, 1.0, 10.0, 11.0}), bintree::Linkage::average,
                            false, stream);
    CHECK(codebook.vocab == 4);
    CHECK(codebook.depth == 2);
    std::set<std::string> codes;
    for (int w = 0; w < 4; ++w) {
        const auto& path = codebook.word_to_path(w);
        REQUIRE(path.size() == 2);
        codes.insert(bintree::path_key(path));
    }
    CHECK(codes == std::set<std::string>{"00", "01", "10", "11"});
    // 0 and 1 share their first bit, and differ from 10's and 11's.
    CHECK(codebook.word_to_path(0)[0] == codebook.word_to_path(1)[0]);
    CHECK(codebook.word_to_path(2)[0] == codebook.word_to_path(3)[0]);
    CHECK(codebook.word_to_path(0)[0] != codebook.word_to_path(2)[0]);
}

TEST_CASE("two words give a depth-1 tree with a single internal node") {
    rng::Stream stream = rng::make_stream(2);
    const auto codebook =
        bintree::build_tree(scalar_table({0.0, 5.0}), bintree::Linkage::single, false, stream);
    CHECK(codebook.depth == 1);
    CHECK(codebook.node_count() == 1);
    CHECK(codebook.word_to_path(0) != codebook.word_to_path(1));
}

TEST_CASE("codebook path round trip is the identity for every word") {
    rng::Stream stream = rng::make_stream(3);
    std::vector<double> xs;
    for (int i = 0; i < 13; ++i) xs.push_back(std::sin(3.7 * i));
    const auto codebook =
        bintree::build_tree(scalar_table(xs), bintree::Linkage::complete, false, stream);
    CHECK(codebook.node_count() == 12);
    for (int w = 0; w < codebook.vocab; ++w) {
        CHECK(codebook.path_to_word(codebook.word_to_path(w)) == w);
    }
}

TEST_CASE("leaf permutation keeps the shape but reassigns words") {
    rng::Stream stream_a = rng::make_stream(4);
    rng::Stream stream_b = rng::make_stream(4);
    const auto table = scalar_table({0.0, 1.0, 10.0, 11.0, 20.0, 21.0, 30.0, 31.0});
    const auto plain = bintree::build_tree(table, bintree::Linkage::average, false, stream_a);
    const auto permuted = bintree::build_tree(table, bintree::Linkage::average, true, stream_b);
    CHECK(plain.depth == permuted.depth);
    std::multiset<std::size_t> lengths_a, lengths_b;
    for (int w = 0; w < plain.vocab; ++w) {
        lengths_a.insert(plain.word_to_path(w).size());
        lengths_b.insert(permuted.word_to_path(w).size());
    }
    CHECK(lengths_a == lengths_b);
    for (int w = 0; w < permuted.vocab; ++w) {
        CHECK(permuted.path_to_word(permuted.word_to_path(w)) == w);
    }
}

TEST_CASE("codebook JSON round trip is byte-identical") {
    rng::Stream stream = rng::make_stream(5);
    const auto codebook = bintree::build_tree(scalar_table({0.0, 1.0, 4.0, 9.0, 16.0}),
                                              bintree::Linkage::average, false, stream);
    const std::string json = bintree::codebook_to_json(codebook);
    const auto reloaded = bintree::codebook_from_json(json);
    CHECK(bintree::codebook_to_json(reloaded) == json);
    CHECK(reloaded.paths == codebook.paths);
    CHECK(reloaded.labels == codebook.labels);
}

TEST_CASE("leaf probabilities sum to one under random node logits") {
    rng::Stream stream = rng::make_stream(6);
    std::vector<double> xs;
    for (int i = 0; i < 17; ++i) xs.push_back(std::cos(2.1 * i) * 5.0);
    const auto codebook =
        bintree::build_tree(scalar_table(xs), bintree::Linkage::average, false, stream);
    Vec logits(codebook.node_count());
    for (double& x : logits) x = 3.0 * (stream.uniform() - 0.5);
    double total = 0.0;
    for (int w = 0; w < codebook.vocab; ++w) {
        double p = 1.0;
        bintree::BitPath prefix;
        for (std::uint8_t b : codebook.word_to_path(w)) {
            const double q = sigmoid(logits[codebook.node_id(prefix)]);
            p *= b ? q : 1.0 - q;
            prefix.push_back(b);
        }
        total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bt_sample_token calls node_logit exactly once per path bit") {
    rng::Stream build_stream = rng::make_stream(7);
    const auto codebook = bintree::build_tree(scalar_table({0.0, 1.0, 2.0, 10.0, 11.0}),
                                              bintree::Linkage::average, false, build_stream);
    rng::Stream stream = rng::make_stream(8);
    for (int trial = 0; trial < 50; ++trial) {
        int calls = 0;
        auto logit_fn = [&](int node) {
            ++calls;
            return std::sin(static_cast<double>(node));
        };
        const auto [word, rec] = bintree::bt_sample_token(codebook, logit_fn, stream);
        CHECK(calls == static_cast<int>(rec.bits.size()));
        CHECK(rec.bits.size() == codebook.word_to_path(word).size());
        CHECK(codebook.path_to_word(rec.bits) == word);
    }
}

TEST_CASE("bt_logprob gradient matches finite differences") {
    rng::Stream stream = rng::make_stream(9);
    const auto codebook = bintree::build_tree(scalar_table({0.0, 1.0, 5.0, 6.0, 12.0, 13.0}),
                                              bintree::Linkage::average, false, stream);
    Vec logits(codebook.node_count());
    for (double& x : logits) x = 2.0 * (stream.uniform() - 0.5);
    const double h = 1e-6;
    for (int w = 0; w < codebook.vocab; ++w) {
        const auto& path = codebook.word_to_path(w);
        const auto [logp, grad] = bintree::bt_logprob_and_mle_grad(codebook, path, logits);
        CHECK(logp <= 0.0);
        for (int n = 0; n < codebook.node_count(); ++n) {
            Vec up = logits, down = logits;
            up[n] += h;
            down[n] -= h;
            const double fd = (bintree::bt_logprob_and_mle_grad(codebook, path, up).first -
                               bintree::bt_logprob_and_mle_grad(codebook, path, down).first) /
                              (2.0 * h);
            CHECK(grad[n] == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("arm_node_grad is zero when the antithetic bits agree") {
    // With phi = 2 and pi = 0.5, pi sits between sigmoid(-2) and sigmoid(2),
    // so both antithetic bits are 1: no flip, no gradient.
    CHECK(bintree::arm_node_grad(0.5, 2.0, 1.0, 0.0) == 0.0);
    // A genuine flip: (r_true - r_pseudo) * (1/2 - pi).
    CHECK(bintree::arm_node_grad(0.4, 0.0, 1.0, 0.0) == doctest::Approx(0.1));
}

TEST_CASE("load_embeddings reports the offending line") {
    const std::string path = "/tmp/acmc_bad_embeddings.txt";
    {
        std::ofstream out(path);
        out << "alpha 1.0 2.0\n";
        out << "beta 3.0 oops\n";
    }
    try {
        bintree::load_embeddings(path);
        FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("build_tree rejects degenerate vocabularies") {
    rng::Stream stream = rng::make_stream(10);
    CHECK_THROWS_AS(bintree::build_tree(scalar_table({1.0}), bintree::Linkage::average, false,
                                        stream),
                    std::invalid_argument);
}
