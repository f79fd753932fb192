#pragma once

#include <vector>

#include "acmc/common.hpp"
#include "acmc/rng.hpp"

namespace acmc::sampling {

// Probability vector from the Dirichlet(1_V) augmentation. Entries are
// strictly positive and sum to 1 (1e-12 absolute).
struct SimplexVector {
    Vec values;

    int size() const { return static_cast<int>(values.size()); }
};

// K x V matrix of pseudo actions z^{v<->j_k}. Action ids are 0-based.
struct PseudoActionMatrix {
    std::vector<int> refs;                 // K distinct reference categories
    std::vector<std::vector<int>> entries; // entries[k][m] = pseudo action for swap m<->refs[k]
    int true_action = 0;                   // argmin of the unswapped race
};

// Distinct pseudo actions differing from the true action, sorted ascending.
struct UniquePseudoSet {
    std::vector<int> actions;

    int cardinality() const { return static_cast<int>(actions.size()); }
};

// Draw pi ~ Dirichlet(1_V) via normalized exponentials of -ln(Unif(0,1)).
SimplexVector sample_pi(rng::Stream& stream, int vocab);

// argmin_i (ln pi_i - phi_i), ties to the lowest index. Distributed as
// Cat(softmax(phi)) when pi ~ Dirichlet(1_V).
int true_action(const SimplexVector& pi, const Vec& phi);

// Exchange entries m and j of pi.
SimplexVector swap(const SimplexVector& pi, int m, int j);

// O(K*V^2) reference implementation: one full argmin per swapped vector.
// Serves as the oracle for the fast algorithm.
PseudoActionMatrix pseudo_action_matrix_naive(const SimplexVector& pi, const Vec& phi,
                                              const std::vector<int>& refs);

// O(V + K*V) algorithm: one top-3 pass over the diagonal ln pi_i - phi_i,
// then each entry as the min of three candidates. Bit-identical to the naive
// version for every input under the lowest-index tie rule.
PseudoActionMatrix pseudo_action_matrix_fast(const SimplexVector& pi, const Vec& phi,
                                             const std::vector<int>& refs);

UniquePseudoSet unique_pseudo_set(const PseudoActionMatrix& matrix);

}  // namespace acmc::sampling
