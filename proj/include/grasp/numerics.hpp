#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "grasp/errors.hpp"

namespace grasp {

// All linear algebra runs in 64-bit reals on dense Eigen types.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline std::string shape_str(Index rows, Index cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
    if (!m.allFinite()) {
        throw NumericError(std::string(what) + ": non-finite entries");
    }
}

// Matrix product with explicit shape checking. The arguments may be any
// Eigen expressions; the result is materialized.
template <typename A, typename B>
Matrix matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " +
                         shape_str(a.rows(), a.cols()) + " * " +
                         shape_str(b.rows(), b.cols()));
    }
    return a * b;
}

// a.b / (|a||b|), clamped to [-1, 1] against rounding.
template <typename A, typename B>
double cosine_similarity(const Eigen::MatrixBase<A>& a,
                         const Eigen::MatrixBase<B>& b) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine_similarity: length mismatch " +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        throw ValidationError("cosine_similarity: zero-norm vector");
    }
    const double c = a.reshaped().dot(b.reshaped()) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

// Thin SVD W = U diag(sigma) V^T with l = min(m, n) columns.
// Columns of u and v are orthonormal; sigma is non-negative and
// non-increasing; the sign of each (u_k, v_k) pair is fixed so that the
// largest-magnitude entry of u_k is positive.
struct SvdFactors {
    Matrix u;      // m x l
    Vector sigma;  // l, non-increasing
    Matrix v;      // n x l

    Index rank_dim() const { return sigma.size(); }
    Matrix reconstruct() const { return u * sigma.asDiagonal() * v.transpose(); }
};

// One rank-one component (u_k, sigma_k, v_k) of a factorization.
struct SingularGroup {
    Index index = 0;
    Vector u;
    double sigma = 0.0;
    Vector v;
};

struct SvdOptions {
    // A sweep that produces no rotation ends the iteration; pairs count as
    // orthogonal when |<a_p, a_q>| <= tol * |a_p| * |a_q|.
    double tol = 1e-12;
    int max_sweeps = 100;
};

// One-sided (Hestenes) Jacobi SVD. Accurate for the dense sizes used here
// (up to a few hundred rows/columns); throws ConvergenceError with the
// worst remaining off-diagonal residual if the sweep cap is reached.
SvdFactors svd(const Matrix& w, const SvdOptions& options = {});

std::vector<SingularGroup> split_into_groups(const SvdFactors& factors);

// Sum of u_k sigma_k v_k^T over the given groups; the empty sum is the
// m x n zero matrix.
Matrix reconstruct_from_groups(const std::vector<SingularGroup>& groups,
                               Index m, Index n);

}  // namespace grasp
