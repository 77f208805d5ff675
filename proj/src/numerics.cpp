#include "grasp/numerics.hpp"

#include <cmath>
#include <numeric>

namespace grasp {

namespace {

// Orthogonalize columns p and q of a by a right Jacobi rotation, applying
// the same rotation to v. Returns false when the pair is already orthogonal
// at the given relative tolerance.
bool rotate_pair(Matrix& a, Matrix& v, Index p, Index q, double tol) {
    const double alpha = a.col(p).squaredNorm();
    const double beta = a.col(q).squaredNorm();
    const double gamma = a.col(p).dot(a.col(q));

    if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) {
        return false;
    }

    const double zeta = (beta - alpha) / (2.0 * gamma);
    const double t = std::copysign(1.0, zeta) /
                     (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
    const double c = 1.0 / std::sqrt(1.0 + t * t);
    const double s = c * t;

    // [a_p, a_q] <- [c*a_p - s*a_q, s*a_p + c*a_q]
    for (Index i = 0; i < a.rows(); ++i) {
        const double x = a(i, p);
        const double y = a(i, q);
        a(i, p) = c * x - s * y;
        a(i, q) = s * x + c * y;
    }
    for (Index i = 0; i < v.rows(); ++i) {
        const double x = v(i, p);
        const double y = v(i, q);
        v(i, p) = c * x - s * y;
        v(i, q) = s * x + c * y;
    }
    return true;
}

double worst_offdiagonal(const Matrix& a) {
    double worst = 0.0;
    for (Index p = 0; p + 1 < a.cols(); ++p) {
        for (Index q = p + 1; q < a.cols(); ++q) {
            const double denom =
                std::sqrt(a.col(p).squaredNorm() * a.col(q).squaredNorm());
            if (denom > 0.0) {
                worst = std::max(worst, std::abs(a.col(p).dot(a.col(q))) / denom);
            }
        }
    }
    return worst;
}

// Extend u (m x l, first `known` columns orthonormal) with unit columns for
// the zero singular values, Gram-Schmidt against everything already placed.
void complete_basis(Matrix& u, Index known) {
    const Index m = u.rows();
    Index next_candidate = 0;
    for (Index j = known; j < u.cols(); ++j) {
        while (true) {
            if (next_candidate >= m) {
                throw NumericError("svd: failed to complete orthonormal basis");
            }
            Vector cand = Vector::Zero(m);
            cand(next_candidate++) = 1.0;
            for (Index k = 0; k < j; ++k) {
                cand -= u.col(k).dot(cand) * u.col(k);
            }
            const double n = cand.norm();
            if (n > 0.5) {  // candidate was not (nearly) in the span
                u.col(j) = cand / n;
                break;
            }
        }
    }
}

SvdFactors svd_tall(const Matrix& w, const SvdOptions& options) {
    const Index m = w.rows();
    const Index n = w.cols();  // m >= n

    Matrix a = w;
    Matrix v = Matrix::Identity(n, n);

    bool converged = false;
    for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
        bool rotated = false;
        for (Index p = 0; p + 1 < n; ++p) {
            for (Index q = p + 1; q < n; ++q) {
                rotated |= rotate_pair(a, v, p, q, options.tol);
            }
        }
        if (!rotated) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw ConvergenceError(
            "svd: one-sided Jacobi did not converge within " +
                std::to_string(options.max_sweeps) + " sweeps",
            worst_offdiagonal(a));
    }

    Vector norms(n);
    for (Index j = 0; j < n; ++j) {
        norms(j) = a.col(j).norm();
    }

    // Non-increasing sigma; equal values keep their original column order.
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index i, Index j) { return norms(i) > norms(j); });

    SvdFactors f;
    f.u.resize(m, n);
    f.sigma.resize(n);
    f.v.resize(n, n);

    Index nonzero = 0;
    for (Index j = 0; j < n; ++j) {
        const Index src = order[static_cast<std::size_t>(j)];
        const double s = norms(src);
        f.sigma(j) = s;
        f.v.col(j) = v.col(src);
        if (s > 0.0) {
            f.u.col(j) = a.col(src) / s;
            nonzero = j + 1;
        } else {
            f.u.col(j).setZero();
        }
    }
    complete_basis(f.u, nonzero);

    // Sign convention: largest-magnitude entry of each u_k is positive.
    for (Index j = 0; j < n; ++j) {
        Index imax = 0;
        f.u.col(j).cwiseAbs().maxCoeff(&imax);
        if (f.u(imax, j) < 0.0) {
            f.u.col(j) = -f.u.col(j);
            f.v.col(j) = -f.v.col(j);
        }
    }
    return f;
}

}  // namespace

SvdFactors svd(const Matrix& w, const SvdOptions& options) {
    if (w.rows() < 1 || w.cols() < 1) {
        throw ValidationError("svd: empty matrix");
    }
    require_finite(w, "svd input");

    if (w.rows() >= w.cols()) {
        return svd_tall(w, options);
    }
    SvdFactors t = svd_tall(w.transpose(), options);
    SvdFactors f;
    f.u = std::move(t.v);
    f.sigma = std::move(t.sigma);
    f.v = std::move(t.u);
    // Re-fix signs: the convention is tied to u, which was v of the transpose.
    for (Index j = 0; j < f.sigma.size(); ++j) {
        Index imax = 0;
        f.u.col(j).cwiseAbs().maxCoeff(&imax);
        if (f.u(imax, j) < 0.0) {
            f.u.col(j) = -f.u.col(j);
            f.v.col(j) = -f.v.col(j);
        }
    }
    return f;
}

std::vector<SingularGroup> split_into_groups(const SvdFactors& factors) {
    std::vector<SingularGroup> groups;
    groups.reserve(static_cast<std::size_t>(factors.sigma.size()));
    for (Index k = 0; k < factors.sigma.size(); ++k) {
        groups.push_back(SingularGroup{k, factors.u.col(k), factors.sigma(k),
                                       factors.v.col(k)});
    }
    return groups;
}

Matrix reconstruct_from_groups(const std::vector<SingularGroup>& groups,
                               Index m, Index n) {
    Matrix w = Matrix::Zero(m, n);
    for (const auto& g : groups) {
        if (g.u.size() != m || g.v.size() != n) {
            throw ShapeError("reconstruct_from_groups: group " +
                             std::to_string(g.index) + " has vectors " +
                             std::to_string(g.u.size()) + "/" +
                             std::to_string(g.v.size()) + ", expected " +
                             std::to_string(m) + "/" + std::to_string(n));
        }
        w.noalias() += g.sigma * g.u * g.v.transpose();
    }
    return w;
}

}  // namespace grasp
