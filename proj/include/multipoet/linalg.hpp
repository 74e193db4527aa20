#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "multipoet/errors.hpp"

namespace multipoet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Relative symmetry tolerance accepted before a matrix is rejected.
inline constexpr double kSymmetryTol = 1e-10;

inline void require_finite(const Matrix& m, const char* who) {
    if (!all_finite(m)) throw InvalidMatrix(std::string(who) + ": non-finite entries");
}

inline void require_symmetric(const Matrix& m, const char* who) {
    if (m.rows() != m.cols()) throw InvalidMatrix(std::string(who) + ": matrix is not square");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    const double gap = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (gap > kSymmetryTol * scale) {
        throw InvalidMatrix(std::string(who) + ": asymmetry " + std::to_string(gap) +
                            " exceeds tolerance");
    }
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Eigenvalues sorted descending with eigenvectors as matching columns.
struct EigenDecomposition {
    Vector eigenvalues;
    Matrix eigenvectors;
};

/**
 * Symmetric eigendecomposition with a reproducible convention: eigenvalues
 * descending (stable on ties) and each eigenvector flipped so that its
 * largest-magnitude component is positive (lowest index wins ties).
 * Input is symmetrized before decomposition to absorb floating-point drift.
 */
inline EigenDecomposition sym_eigen(const Matrix& m) {
    require_finite(m, "sym_eigen");
    require_symmetric(m, "sym_eigen");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrized(m));
    if (solver.info() != Eigen::Success) throw InvalidMatrix("sym_eigen: decomposition failed");

    const auto n = m.rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const Vector& raw = solver.eigenvalues();  // ascending from Eigen
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return raw[a] > raw[b]; });

    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.eigenvalues[i] = raw[order[static_cast<std::size_t>(i)]];
        Vector v = solver.eigenvectors().col(order[static_cast<std::size_t>(i)]);
        Eigen::Index pivot = 0;
        double best = -1.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double a = std::abs(v[j]);
            if (a > best) {
                best = a;
                pivot = j;
            }
        }
        if (v[pivot] < 0.0) v = -v;
        out.eigenvectors.col(i) = v;
    }
    return out;
}

enum class NormKind { frobenius, op, max, linf };

/// Matrix norms: Frobenius, operator (largest singular value), elementwise
/// max, and the maximum absolute row sum.
inline double matrix_norm(const Matrix& a, NormKind kind) {
    require_finite(a, "matrix_norm");
    switch (kind) {
        case NormKind::frobenius:
            return a.norm();
        case NormKind::op: {
            if (a.rows() == 0 || a.cols() == 0) return 0.0;
            Eigen::BDCSVD<Matrix> svd(a);
            return svd.singularValues()(0);
        }
        case NormKind::max:
            return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
        case NormKind::linf:
            return a.size() == 0 ? 0.0 : a.cwiseAbs().rowwise().sum().maxCoeff();
    }
    return 0.0;
}

inline double min_eigenvalue(const Matrix& m) {
    const auto eig = sym_eigen(m);
    return eig.eigenvalues[eig.eigenvalues.size() - 1];
}

inline bool is_psd(const Matrix& m) { return min_eigenvalue(m) >= -1e-10; }

/// Sigma^{-1/2} through the symmetric eigendecomposition; requires the
/// smallest eigenvalue to exceed `floor`.
inline Matrix sym_inverse_sqrt(const Matrix& sigma, double floor = 1e-12) {
    const auto eig = sym_eigen(sigma);
    const auto n = sigma.rows();
    if (eig.eigenvalues[n - 1] <= floor) {
        throw NotPositiveDefinite("sym_inverse_sqrt: min eigenvalue " +
                                  std::to_string(eig.eigenvalues[n - 1]));
    }
    Vector inv_sqrt = eig.eigenvalues.cwiseSqrt().cwiseInverse();
    return eig.eigenvectors * inv_sqrt.asDiagonal() * eig.eigenvectors.transpose();
}

/// Relative Frobenius metric with a precomputed Sigma^{-1/2} (reused when
/// many estimates are scored against one reference).
inline double relative_frobenius_with_isqrt(const Matrix& estimate, const Matrix& sigma,
                                            const Matrix& isqrt) {
    const double p = static_cast<double>(sigma.rows());
    return (isqrt * (estimate - sigma) * isqrt).norm() / std::sqrt(p);
}

/**
 * Relative Frobenius distance between an estimate and a positive definite
 * reference: p^{-1/2} ||Sigma^{-1/2} (estimate - Sigma) Sigma^{-1/2}||_F.
 * Scaled so that the distance from 2*Sigma to Sigma is exactly 1.
 */
inline double relative_frobenius(const Matrix& estimate, const Matrix& sigma) {
    require_finite(estimate, "relative_frobenius");
    require_symmetric(estimate, "relative_frobenius");
    const Matrix isqrt = sym_inverse_sqrt(sigma);
    return relative_frobenius_with_isqrt(estimate, sigma, isqrt);
}

}  // namespace multipoet
