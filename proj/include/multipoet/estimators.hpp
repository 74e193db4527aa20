#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "multipoet/errors.hpp"
#include "multipoet/linalg.hpp"
#include "multipoet/panel.hpp"

namespace multipoet {

enum class ThresholdRule { soft, hard, sector_block };

/// Threshold constant plus shrinkage rule. The sector rule keeps an entry
/// iff both assets share a sector label and ignores tau.
struct ThresholdSpec {
    double tau = 0.0;
    ThresholdRule rule = ThresholdRule::soft;
    std::optional<std::vector<std::string>> sector_labels;
};

inline ThresholdSpec make_threshold(double tau, ThresholdRule rule = ThresholdRule::soft,
                                    std::optional<std::vector<std::string>> sectors = {}) {
    if (tau < 0.0) throw InvalidConfig("threshold constant must be nonnegative");
    if (rule == ThresholdRule::sector_block && !sectors) {
        throw InvalidConfig("sector_block rule requires sector labels");
    }
    return ThresholdSpec{tau, rule, std::move(sectors)};
}

/// Threshold scale for single-level residuals (POET, POET2).
inline constexpr double kSingleLevelTauScale = 0.5;

/// Threshold scale for the two-stage residual. Removing the leading
/// components group by group leaves structural leakage of order
/// p^{-(1-c)} in every entry, which the threshold must dominate, so the
/// constant is larger than in the single-level case.
inline constexpr double kDoubleTauScale = 3.0;

/// Rate-based default threshold constant,
/// tau = scale * (sqrt(log p / T) + p^{-c/2}) with c = log(min_j p_j) / log p.
inline double default_tau(int p, int num_obs, int min_group_size,
                          double scale = kSingleLevelTauScale) {
    if (p < 2 || num_obs < 2 || min_group_size < 1) {
        throw InvalidConfig("default_tau needs p >= 2, T >= 2, group size >= 1");
    }
    const double c = std::log(static_cast<double>(min_group_size)) / std::log(static_cast<double>(p));
    return scale * (std::sqrt(std::log(static_cast<double>(p)) / num_obs) +
                    1.0 / std::sqrt(std::pow(static_cast<double>(p), c)));
}

inline Matrix adaptive_threshold(const Matrix& residual, const ThresholdSpec& spec);

/// Smallest constant (up to bisection tolerance) whose thresholded residual
/// is positive definite with a small spectral margin. Thresholding towards
/// the diagonal always reaches positive definiteness, so the search is well
/// posed whenever the diagonal is strictly positive.
inline double min_pd_tau(const Matrix& residual, ThresholdRule rule = ThresholdRule::soft,
                         double start = 0.0) {
    const double margin = 1e-3 * residual.diagonal().mean();
    auto pd_at = [&](double tau) {
        const Matrix out = adaptive_threshold(residual, ThresholdSpec{tau, rule, std::nullopt});
        return min_eigenvalue(out) > margin;
    };
    if (residual.diagonal().minCoeff() <= margin) {
        throw InvalidResidualDiagonal("diagonal too small for a positive definite threshold");
    }
    double lo = std::max(start, 0.0);
    if (pd_at(lo)) return lo;
    double hi = std::max(1.0, 2.0 * lo);
    int guard = 0;
    while (!pd_at(hi)) {
        lo = hi;
        hi *= 2.0;
        if (++guard > 40) throw NumericError("ThresholdSearch", "no positive definite threshold");
    }
    for (int iter = 0; iter < 40; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (pd_at(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

/// Demeaned covariance with divisor T (not T-1).
inline Matrix sample_covariance(const ReturnsPanel& panel) {
    const auto num_obs = panel.rows();
    if (num_obs < 2) throw InsufficientData("sample_covariance needs T >= 2");
    const Matrix centered = panel.values.rowwise() - panel.values.colwise().mean();
    return symmetrized(centered.transpose() * centered / static_cast<double>(num_obs));
}

/// Splits a symmetric matrix into its leading-k spectral part and the
/// orthogonal complement; the remainder is constructed as the difference.
inline std::pair<Matrix, Matrix> principal_truncation(const Matrix& sigma_hat, int k);

namespace detail {

/// Square submatrix on a user-order index set.
inline Matrix group_block(const Matrix& m, const std::vector<int>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t a = 0; a < idx.size(); ++a) {
        for (std::size_t b = 0; b < idx.size(); ++b) {
            out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = m(idx[a], idx[b]);
        }
    }
    return out;
}

inline double shrink_entry(double x, double tau_ij, ThresholdRule rule) {
    switch (rule) {
        case ThresholdRule::soft: {
            const double mag = std::abs(x) - tau_ij;
            return mag > 0.0 ? (x > 0.0 ? mag : -mag) : 0.0;
        }
        case ThresholdRule::hard:
            return std::abs(x) >= tau_ij ? x : 0.0;
        case ThresholdRule::sector_block:
            return x;  // handled by the caller
    }
    return x;
}

}  // namespace detail

/**
 * Entry-adaptive thresholding of a residual covariance. Off-diagonal entry
 * (i, j) is shrunk against tau_ij = tau * sqrt(sigma_ii * sigma_jj); the
 * diagonal is never touched. The sector rule instead zeroes entries across
 * different sectors. A strictly positive diagonal is required whenever the
 * entry-dependent threshold is actually evaluated (tau > 0, soft/hard).
 */
inline Matrix adaptive_threshold(const Matrix& residual, const ThresholdSpec& spec) {
    require_finite(residual, "adaptive_threshold");
    require_symmetric(residual, "adaptive_threshold");
    const auto p = residual.rows();
    if (spec.rule == ThresholdRule::sector_block) {
        const auto& sectors = spec.sector_labels;
        if (!sectors) throw InvalidConfig("sector_block rule requires sector labels");
        if (static_cast<Eigen::Index>(sectors->size()) != p) {
            throw InvalidInput("sector label count does not match matrix dimension");
        }
        Matrix out = residual;
        for (Eigen::Index i = 0; i < p; ++i) {
            for (Eigen::Index j = i + 1; j < p; ++j) {
                if ((*sectors)[static_cast<std::size_t>(i)] !=
                    (*sectors)[static_cast<std::size_t>(j)]) {
                    out(i, j) = 0.0;
                    out(j, i) = 0.0;
                }
            }
        }
        return out;
    }
    if (spec.tau == 0.0) return residual;

    for (Eigen::Index i = 0; i < p; ++i) {
        if (!(residual(i, i) > 0.0)) {
            throw InvalidResidualDiagonal("entry " + std::to_string(i) +
                                          " of the residual diagonal is not positive");
        }
    }
    const Vector root_diag = residual.diagonal().cwiseSqrt();
    Matrix out = residual;
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = i + 1; j < p; ++j) {
            const double tau_ij = spec.tau * root_diag[i] * root_diag[j];
            const double v = detail::shrink_entry(residual(i, j), tau_ij, spec.rule);
            out(i, j) = v;
            out(j, i) = v;
        }
    }
    return out;
}

/// Least-squares factor estimates under the normalization G'G/T = I and
/// B'B diagonal, together with the residual panel.
struct GlobalFactorFit {
    Matrix factors;   // T x k, G_hat
    Matrix loadings;  // p x k, B_hat
    Matrix residual;  // T x p, E_hat
};

struct LocalFactorFit {
    Matrix factors;   // T x r, F_hat (group blocks concatenated)
    Matrix loadings;  // p x r, Lambda_hat, block diagonal in canonical order
    Matrix residual;  // T x p, U_hat
};

/// Joint result of the two least-squares stages.
struct FactorEstimate {
    Matrix global_loadings;   // B_hat
    Matrix global_factors;    // G_hat
    Matrix local_loadings;    // Lambda_hat
    Matrix local_factors;     // F_hat
    Matrix residuals;         // U_hat
};

/**
 * Global factor fit: columns of G_hat/sqrt(T) are the leading k
 * eigenvectors of Y Y'/T on the demeaned panel, B_hat = Y'G_hat/T.
 */
inline GlobalFactorFit fit_global_factors(const ReturnsPanel& panel, int k) {
    const auto num_obs = panel.rows();
    const auto p = panel.cols();
    if (k < 1 || k > std::min(num_obs, p)) {
        throw InvalidFactorCount("k must lie in [1, min(T, p)]");
    }
    const Matrix centered = panel.values.rowwise() - panel.values.colwise().mean();
    const Matrix gram = symmetrized(centered * centered.transpose() / static_cast<double>(num_obs));
    const auto eig = sym_eigen(gram);
    GlobalFactorFit fit;
    fit.factors = std::sqrt(static_cast<double>(num_obs)) * eig.eigenvectors.leftCols(k);
    fit.loadings = centered.transpose() * fit.factors / static_cast<double>(num_obs);
    fit.residual = centered - fit.factors * fit.loadings.transpose();
    return fit;
}

/**
 * Per-group factor fit on the residual panel; loadings are exactly zero
 * outside each group's own block.
 */
inline LocalFactorFit fit_local_factors(const Matrix& residual_panel, const GroupStructure& groups,
                                        const std::vector<int>& factors_per_group) {
    const auto num_obs = residual_panel.rows();
    const auto p = residual_panel.cols();
    if (p != groups.size()) throw InvalidInput("group structure does not cover the panel");
    if (static_cast<int>(factors_per_group.size()) != groups.num_groups) {
        throw InvalidFactorCount("need one factor count per group");
    }
    int total = 0;
    for (int j = 0; j < groups.num_groups; ++j) {
        const int r_j = factors_per_group[static_cast<std::size_t>(j)];
        const int p_j = groups.group_sizes[static_cast<std::size_t>(j)];
        if (r_j < 0 || r_j > std::min<Eigen::Index>(num_obs, p_j)) {
            throw InvalidFactorCount("group " + std::to_string(j + 1) + ": invalid factor count");
        }
        total += r_j;
    }

    LocalFactorFit fit;
    fit.factors = Matrix::Zero(num_obs, total);
    fit.loadings = Matrix::Zero(p, total);
    fit.residual = residual_panel;
    int offset = 0;
    for (int j = 0; j < groups.num_groups; ++j) {
        const int r_j = factors_per_group[static_cast<std::size_t>(j)];
        if (r_j == 0) continue;
        const auto& idx = groups.group_indices[static_cast<std::size_t>(j)];
        Matrix block(num_obs, static_cast<Eigen::Index>(idx.size()));
        for (std::size_t c = 0; c < idx.size(); ++c) {
            block.col(static_cast<Eigen::Index>(c)) = residual_panel.col(idx[c]);
        }
        const Matrix gram = symmetrized(block * block.transpose() / static_cast<double>(num_obs));
        const auto eig = sym_eigen(gram);
        const Matrix f_j = std::sqrt(static_cast<double>(num_obs)) * eig.eigenvectors.leftCols(r_j);
        const Matrix lambda_j = block.transpose() * f_j / static_cast<double>(num_obs);
        const Matrix fitted = f_j * lambda_j.transpose();
        fit.factors.middleCols(offset, r_j) = f_j;
        for (std::size_t c = 0; c < idx.size(); ++c) {
            fit.loadings.block(idx[c], offset, 1, r_j) = lambda_j.row(static_cast<Eigen::Index>(c));
            fit.residual.col(idx[c]) -= fitted.col(static_cast<Eigen::Index>(c));
        }
        offset += r_j;
    }
    return fit;
}

/// Runs both least-squares stages and bundles the result.
inline FactorEstimate fit_factors(const ReturnsPanel& panel, int k, const GroupStructure& groups,
                                  const std::vector<int>& factors_per_group) {
    const auto global = fit_global_factors(panel, k);
    const auto local = fit_local_factors(global.residual, groups, factors_per_group);
    return FactorEstimate{global.loadings, global.factors, local.loadings, local.factors,
                          local.residual};
}

enum class Method { samcov, poet, poet2, double_poet };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::samcov: return "samcov";
        case Method::poet: return "poet";
        case Method::poet2: return "poet2";
        case Method::double_poet: return "double_poet";
    }
    return "?";
}

/// One low-rank component kept in factored form for Woodbury inversion
/// and block extraction: vectors * diag(values) * vectors'.
struct LowRankPart {
    Matrix vectors;          // p x r (rows follow user asset order)
    Vector values;           // r
    std::vector<int> index;  // user-order asset indices the block lives on
};

/**
 * Structured covariance estimate: rank-k global part, block-diagonal local
 * part, thresholded sparse residual, and their sum. `assembled` is
 * constructed as the literal sum of the three parts.
 */
struct CovEstimate {
    Method method = Method::samcov;
    int k_used = 0;
    std::vector<int> r_used;  // per group; empty when no local stage ran
    Matrix global_part;
    Matrix local_part;
    Matrix residual_part;
    Matrix assembled;
    LowRankPart global_factors;               // empty vectors when k_used == 0
    std::vector<LowRankPart> local_factors;   // one per group with r_j > 0
    std::optional<GroupStructure> groups;
};

namespace detail {

struct Truncation {
    Matrix low_rank;
    Matrix remainder;
    LowRankPart factors;
};

/// Leading-k split that keeps the spectral factors of the kept part.
inline Truncation truncate_keeping_factors(const Matrix& sigma_hat, int k) {
    const auto p = sigma_hat.rows();
    if (k < 0 || k > p) throw InvalidFactorCount("k must lie in [0, p]");
    Truncation out;
    out.factors.index.resize(static_cast<std::size_t>(p));
    std::iota(out.factors.index.begin(), out.factors.index.end(), 0);
    if (k == 0) {
        out.factors.vectors = Matrix::Zero(p, 0);
        out.factors.values = Vector::Zero(0);
        out.low_rank = Matrix::Zero(p, p);
        out.remainder = sigma_hat;
        return out;
    }
    const auto eig = sym_eigen(sigma_hat);
    out.factors.vectors = eig.eigenvectors.leftCols(k);
    out.factors.values = eig.eigenvalues.head(k);
    out.low_rank = symmetrized(out.factors.vectors * out.factors.values.asDiagonal() *
                               out.factors.vectors.transpose());
    out.remainder = sigma_hat - out.low_rank;
    return out;
}

inline CovEstimate assemble_estimate(Method method, int k_used, std::vector<int> r_used,
                                     Matrix global_part, Matrix local_part, Matrix residual_part,
                                     LowRankPart global_factors,
                                     std::vector<LowRankPart> local_factors,
                                     std::optional<GroupStructure> groups) {
    CovEstimate est;
    est.method = method;
    est.k_used = k_used;
    est.r_used = std::move(r_used);
    est.assembled = global_part + local_part + residual_part;
    est.global_part = std::move(global_part);
    est.local_part = std::move(local_part);
    est.residual_part = std::move(residual_part);
    est.global_factors = std::move(global_factors);
    est.local_factors = std::move(local_factors);
    est.groups = std::move(groups);
    return est;
}

}  // namespace detail

inline std::pair<Matrix, Matrix> principal_truncation(const Matrix& sigma_hat, int k) {
    auto truncation = detail::truncate_keeping_factors(sigma_hat, k);
    return {std::move(truncation.low_rank), std::move(truncation.remainder)};
}

/// Sample covariance wrapped as a structured estimate (everything in the
/// residual slot).
inline CovEstimate samcov_estimate(const Matrix& sigma_hat) {
    const auto p = sigma_hat.rows();
    return detail::assemble_estimate(Method::samcov, 0, {}, Matrix::Zero(p, p), Matrix::Zero(p, p),
                                     sigma_hat,
                                     detail::truncate_keeping_factors(sigma_hat, 0).factors, {},
                                     std::nullopt);
}

inline CovEstimate samcov(const ReturnsPanel& panel) {
    return samcov_estimate(sample_covariance(panel));
}

/// Single-level estimator: leading-k spectral part plus the thresholded
/// orthogonal complement.
inline CovEstimate poet_from_cov(const Matrix& sigma_hat, int k, const ThresholdSpec& spec,
                                 Method tag = Method::poet) {
    const auto p = sigma_hat.rows();
    auto truncation = detail::truncate_keeping_factors(sigma_hat, k);
    Matrix thresholded = adaptive_threshold(truncation.remainder, spec);
    return detail::assemble_estimate(tag, k, {}, std::move(truncation.low_rank),
                                     Matrix::Zero(p, p), std::move(thresholded),
                                     std::move(truncation.factors), {}, std::nullopt);
}

inline CovEstimate poet(const ReturnsPanel& panel, int k, const ThresholdSpec& spec) {
    return poet_from_cov(sample_covariance(panel), k, spec);
}

/// POET run with k + r components, treating local factors as weak global
/// factors.
inline CovEstimate poet2_from_cov(const Matrix& sigma_hat, int k, int r_total,
                                  const ThresholdSpec& spec) {
    if (k < 0 || r_total < 0 || k + r_total > sigma_hat.rows()) {
        throw InvalidFactorCount("poet2 needs 0 <= k + r <= p");
    }
    return poet_from_cov(sigma_hat, k + r_total, spec, Method::poet2);
}

inline CovEstimate poet2(const ReturnsPanel& panel, int k, int r_total,
                         const ThresholdSpec& spec) {
    return poet2_from_cov(sample_covariance(panel), k, r_total, spec);
}

/**
 * Two-level estimator. Stage one removes the leading k principal
 * components; stage two removes, within each group's diagonal block of the
 * remainder, that block's leading r_j components; the final residual
 * (including all off-diagonal blocks of the remainder) is adaptively
 * thresholded and the three pieces are summed.
 */
inline CovEstimate double_poet_from_cov(const Matrix& sigma_hat, int k,
                                        const GroupStructure& groups,
                                        const std::vector<int>& factors_per_group,
                                        const ThresholdSpec& spec) {
    const auto p = sigma_hat.rows();
    if (groups.size() != p) throw InvalidInput("group structure does not cover the matrix");
    if (static_cast<int>(factors_per_group.size()) != groups.num_groups) {
        throw InvalidFactorCount("need one factor count per group");
    }
    for (int j = 0; j < groups.num_groups; ++j) {
        const int r_j = factors_per_group[static_cast<std::size_t>(j)];
        const int p_j = groups.group_sizes[static_cast<std::size_t>(j)];
        if (r_j < 0 || p_j < r_j + 1) {
            throw InvalidFactorCount("group " + std::to_string(j + 1) + ": factor count " +
                                     std::to_string(r_j) + " too large for size " +
                                     std::to_string(p_j));
        }
    }

    auto truncation = detail::truncate_keeping_factors(sigma_hat, k);
    const Matrix& remainder = truncation.remainder;
    Matrix local_part = Matrix::Zero(p, p);
    std::vector<LowRankPart> local_factors;
    for (int j = 0; j < groups.num_groups; ++j) {
        const int r_j = factors_per_group[static_cast<std::size_t>(j)];
        if (r_j == 0) continue;
        const auto& idx = groups.group_indices[static_cast<std::size_t>(j)];
        const auto p_j = static_cast<Eigen::Index>(idx.size());
        const auto eig = sym_eigen(detail::group_block(remainder, idx));
        LowRankPart part;
        part.vectors = eig.eigenvectors.leftCols(r_j);
        part.values = eig.eigenvalues.head(r_j);
        part.index = idx;
        const Matrix fitted =
            symmetrized(part.vectors * part.values.asDiagonal() * part.vectors.transpose());
        for (Eigen::Index a = 0; a < p_j; ++a) {
            for (Eigen::Index b = 0; b < p_j; ++b) {
                local_part(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]) =
                    fitted(a, b);
            }
        }
        local_factors.push_back(std::move(part));
    }
    Matrix residual = remainder - local_part;
    Matrix thresholded = adaptive_threshold(residual, spec);
    return detail::assemble_estimate(Method::double_poet, k, factors_per_group,
                                     std::move(truncation.low_rank), std::move(local_part),
                                     std::move(thresholded), std::move(truncation.factors),
                                     std::move(local_factors), groups);
}

inline CovEstimate double_poet(const ReturnsPanel& panel, int k, const GroupStructure& groups,
                               const std::vector<int>& factors_per_group,
                               const ThresholdSpec& spec) {
    return double_poet_from_cov(sample_covariance(panel), k, groups, factors_per_group, spec);
}

namespace detail {

/// One Woodbury fold: (A + U diag(d) U')^{-1} given A^{-1}. Components with
/// negligible |d| contribute nothing and are skipped.
inline Matrix woodbury_fold(const Matrix& a_inv, const Matrix& u_full, const Vector& d_full) {
    std::vector<Eigen::Index> keep;
    const double scale = d_full.size() > 0 ? d_full.cwiseAbs().maxCoeff() : 0.0;
    for (Eigen::Index i = 0; i < d_full.size(); ++i) {
        if (std::abs(d_full[i]) > 1e-14 * std::max(1.0, scale)) keep.push_back(i);
    }
    if (keep.empty()) return a_inv;
    Matrix u(u_full.rows(), static_cast<Eigen::Index>(keep.size()));
    Vector d(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
        u.col(static_cast<Eigen::Index>(i)) = u_full.col(keep[i]);
        d[static_cast<Eigen::Index>(i)] = d_full[keep[i]];
    }
    const Matrix au = a_inv * u;
    Matrix core = d.cwiseInverse().asDiagonal();
    core += u.transpose() * au;
    return symmetrized(a_inv - au * core.ldlt().solve(au.transpose()));
}

}  // namespace detail

/**
 * Inverse of a structured estimate by two nested Woodbury applications:
 * invert the residual, fold in the block-diagonal local part, fold in the
 * global part. With `repair`, residual eigenvalues are first lifted to
 * 1e-6 * trace / p; otherwise a non-PD residual is an error.
 */
inline Matrix precision_matrix(const CovEstimate& est, bool repair = false) {
    const auto p = est.residual_part.rows();
    Matrix residual = est.residual_part;
    auto eig = sym_eigen(residual);
    const double min_eig = eig.eigenvalues[p - 1];
    if (min_eig <= 1e-10) {
        if (!repair) {
            throw NotPositiveDefinite("residual part min eigenvalue " + std::to_string(min_eig));
        }
        const double floor = 1e-6 * residual.trace() / static_cast<double>(p);
        Vector lifted = eig.eigenvalues.cwiseMax(floor);
        residual = symmetrized(eig.eigenvectors * lifted.asDiagonal() * eig.eigenvectors.transpose());
        eig = sym_eigen(residual);
    }
    Matrix inv = eig.eigenvectors * eig.eigenvalues.cwiseInverse().asDiagonal() *
                 eig.eigenvectors.transpose();
    inv = symmetrized(inv);

    // local blocks as one p x r factor
    Eigen::Index r_total = 0;
    for (const auto& part : est.local_factors) r_total += part.values.size();
    if (r_total > 0) {
        Matrix u = Matrix::Zero(p, r_total);
        Vector d(r_total);
        Eigen::Index offset = 0;
        for (const auto& part : est.local_factors) {
            for (Eigen::Index c = 0; c < part.vectors.cols(); ++c) {
                for (std::size_t a = 0; a < part.index.size(); ++a) {
                    u(part.index[a], offset + c) = part.vectors(static_cast<Eigen::Index>(a), c);
                }
                d[offset + c] = part.values[c];
            }
            offset += part.values.size();
        }
        inv = detail::woodbury_fold(inv, u, d);
    }
    if (est.global_factors.values.size() > 0) {
        inv = detail::woodbury_fold(inv, est.global_factors.vectors, est.global_factors.values);
    }
    return inv;
}

/**
 * Structured estimate for group j alone: every component is the
 * corresponding diagonal block of the parent's, so the assembled block
 * reproduces the parent's assembled block bit for bit.
 */
inline CovEstimate extract_local_block(const CovEstimate& est, const GroupStructure& groups,
                                       int group_id) {
    if (group_id < 1 || group_id > groups.num_groups) {
        throw UnknownGroup("group id " + std::to_string(group_id) + " outside 1.." +
                           std::to_string(groups.num_groups));
    }
    if (groups.size() != est.assembled.rows()) {
        throw InvalidInput("group structure does not cover the estimate");
    }
    const auto& idx = groups.group_indices[static_cast<std::size_t>(group_id - 1)];
    const auto p_j = static_cast<Eigen::Index>(idx.size());
    auto slice = [&](const Matrix& m) { return detail::group_block(m, idx); };

    LowRankPart global;
    global.values = est.global_factors.values;
    global.vectors = Matrix::Zero(p_j, est.global_factors.vectors.cols());
    for (Eigen::Index a = 0; a < p_j; ++a) {
        global.vectors.row(a) = est.global_factors.vectors.row(idx[static_cast<std::size_t>(a)]);
    }
    global.index.resize(static_cast<std::size_t>(p_j));
    std::iota(global.index.begin(), global.index.end(), 0);

    std::vector<LowRankPart> locals;
    std::vector<int> r_used;
    for (const auto& part : est.local_factors) {
        if (part.index == idx) {
            LowRankPart own = part;
            own.index.resize(static_cast<std::size_t>(p_j));
            std::iota(own.index.begin(), own.index.end(), 0);
            locals.push_back(std::move(own));
            r_used.push_back(static_cast<int>(part.values.size()));
        }
    }

    std::vector<int> membership(static_cast<std::size_t>(p_j), 1);
    return detail::assemble_estimate(est.method, est.k_used, std::move(r_used),
                                     slice(est.global_part), slice(est.local_part),
                                     slice(est.residual_part), std::move(global),
                                     std::move(locals), make_groups(std::move(membership)));
}

}  // namespace multipoet
