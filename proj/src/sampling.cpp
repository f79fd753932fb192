#include "acmc/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace acmc::sampling {

namespace {

void check_refs(const std::vector<int>& refs, int vocab) {
    std::vector<char> seen(vocab, 0);
    for (int j : refs) {
        require(j >= 0 && j < vocab, "reference category out of range");
        require(!seen[j], "duplicate reference category");
        seen[j] = 1;
    }
}

}  // namespace

SimplexVector sample_pi(rng::Stream& stream, int vocab) {
    require(vocab >= 1, "sample_pi: vocab must be >= 1");
    Vec e(vocab);
    double sum = 0.0;
    for (int i = 0; i < vocab; ++i) {
        e[i] = -std::log(stream.uniform());
        sum += e[i];
    }
    for (double& v : e) v /= sum;
    return SimplexVector{std::move(e)};
}

int true_action(const SimplexVector& pi, const Vec& phi) {
    require(pi.size() == static_cast<int>(phi.size()), "true_action: length mismatch");
    int best = 0;
    double best_val = std::log(pi.values[0]) - phi[0];
    for (int i = 1; i < pi.size(); ++i) {
        const double v = std::log(pi.values[i]) - phi[i];
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }
    return best;
}

SimplexVector swap(const SimplexVector& pi, int m, int j) {
    require(m >= 0 && m < pi.size() && j >= 0 && j < pi.size(), "swap: index out of range");
    SimplexVector out = pi;
    std::swap(out.values[m], out.values[j]);
    return out;
}

PseudoActionMatrix pseudo_action_matrix_naive(const SimplexVector& pi, const Vec& phi,
                                              const std::vector<int>& refs) {
    require(pi.size() == static_cast<int>(phi.size()), "pseudo_action_matrix: length mismatch");
    check_refs(refs, pi.size());
    PseudoActionMatrix out;
    out.refs = refs;
    out.true_action = true_action(pi, phi);
    out.entries.resize(refs.size());
    for (std::size_t k = 0; k < refs.size(); ++k) {
        out.entries[k].resize(pi.size());
        for (int m = 0; m < pi.size(); ++m) {
            out.entries[k][m] = true_action(swap(pi, m, refs[k]), phi);
        }
    }
    return out;
}

PseudoActionMatrix pseudo_action_matrix_fast(const SimplexVector& pi, const Vec& phi,
                                             const std::vector<int>& refs) {
    const int vocab = pi.size();
    require(vocab >= 2, "pseudo_action_matrix_fast: vocab must be >= 2");
    require(vocab == static_cast<int>(phi.size()), "pseudo_action_matrix: length mismatch");
    check_refs(refs, vocab);

    Vec diag(vocab);
    for (int i = 0; i < vocab; ++i) diag[i] = std::log(pi.values[i]) - phi[i];

    // Top-3 diagonal minima (lowest index on ties). The third is needed only
    // when both swapped positions are the top-2, where exact ties among the
    // candidates would otherwise pick an index absent from the swapped vector.
    int m1 = -1, m2 = -1, m3 = -1;
    for (int i = 0; i < vocab; ++i) {
        if (m1 < 0 || diag[i] < diag[m1]) {
            m3 = m2; m2 = m1; m1 = i;
        } else if (m2 < 0 || diag[i] < diag[m2]) {
            m3 = m2; m2 = i;
        } else if (m3 < 0 || diag[i] < diag[m3]) {
            m3 = i;
        }
    }

    PseudoActionMatrix out;
    out.refs = refs;
    out.true_action = m1;
    out.entries.resize(refs.size());
    const Vec log_pi = [&] {
        Vec lp(vocab);
        for (int i = 0; i < vocab; ++i) lp[i] = std::log(pi.values[i]);
        return lp;
    }();

    for (std::size_t k = 0; k < refs.size(); ++k) {
        const int j = refs[k];
        auto& row = out.entries[k];
        row.resize(vocab);
        for (int m = 0; m < vocab; ++m) {
            if (m == j) {
                row[m] = m1;
                continue;
            }
            // Swapped vector holds (ln pi_j - phi_m) at position m and
            // (ln pi_m - phi_j) at position j; all other positions keep the
            // diagonal. The surviving diagonal minimum is m1, m2, or m3.
            int rest;
            if (m1 != m && m1 != j) {
                rest = m1;
            } else if (m2 != m && m2 != j) {
                rest = m2;
            } else {
                rest = m3;  // only reachable when {m, j} == {m1, m2}, so V >= 3 here
            }
            double best_val = log_pi[j] - phi[m];
            int best = m;
            const double at_j = log_pi[m] - phi[j];
            if (at_j < best_val || (at_j == best_val && j < best)) {
                best_val = at_j;
                best = j;
            }
            if (rest >= 0 && (diag[rest] < best_val || (diag[rest] == best_val && rest < best))) {
                best = rest;
            }
            row[m] = best;
        }
    }
    return out;
}

UniquePseudoSet unique_pseudo_set(const PseudoActionMatrix& matrix) {
    std::vector<int> actions;
    for (const auto& row : matrix.entries) {
        for (int a : row) {
            if (a != matrix.true_action) actions.push_back(a);
        }
    }
    std::sort(actions.begin(), actions.end());
    actions.erase(std::unique(actions.begin(), actions.end()), actions.end());
    return UniquePseudoSet{std::move(actions)};
}

}  // namespace acmc::sampling
