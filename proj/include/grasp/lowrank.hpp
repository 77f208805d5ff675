#pragma once

#include <utility>
#include <vector>

#include "grasp/numerics.hpp"

namespace grasp {

// Low-rank replacement for one weight matrix: a = U_S diag(sigma_S) (m x k),
// b = V_S^T (k x n), so a * b reproduces the retained singular groups.
struct LowRankFactor {
    Matrix a;  // m x k
    Matrix b;  // k x n
    std::vector<Index> retained_indices;  // original group indices, ascending
    std::pair<Index, Index> original_shape{0, 0};

    Index rank() const { return a.cols(); }
    Matrix dense() const {
        if (rank() == 0) {
            return Matrix::Zero(original_shape.first, original_shape.second);
        }
        return a * b;
    }
};

}  // namespace grasp
