#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "multipoet/errors.hpp"
#include "multipoet/linalg.hpp"
#include "multipoet/rng.hpp"

namespace multipoet {

/// Result of k-means / spectral clustering; labels are 1-based.
struct ClusterAssignment {
    std::vector<int> labels;
    int num_clusters = 0;
    double inertia = 0.0;
};

/// Absolute-correlation adjacency of a covariance: |sigma_ij| normalized by
/// the diagonal, clipped to [0, 1], unit diagonal.
inline Matrix abs_correlation_adjacency(const Matrix& sigma_e) {
    require_finite(sigma_e, "abs_correlation_adjacency");
    require_symmetric(sigma_e, "abs_correlation_adjacency");
    const auto p = sigma_e.rows();
    for (Eigen::Index i = 0; i < p; ++i) {
        if (!(sigma_e(i, i) > 0.0)) {
            throw InvalidResidualDiagonal("diagonal entry " + std::to_string(i) +
                                          " is not positive");
        }
    }
    const Vector root_diag = sigma_e.diagonal().cwiseSqrt();
    Matrix adj(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        adj(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < p; ++j) {
            const double corr = std::abs(sigma_e(i, j)) / (root_diag[i] * root_diag[j]);
            const double clipped = std::min(1.0, corr);
            adj(i, j) = clipped;
            adj(j, i) = clipped;
        }
    }
    return adj;
}

/// Degree-regularized normalization D_a^{-1/2} L D_a^{-1/2} with
/// D_a = D + aI; omitting `a` uses the average node degree.
inline Matrix regularized_laplacian(const Matrix& adjacency,
                                    std::optional<double> a = std::nullopt) {
    require_finite(adjacency, "regularized_laplacian");
    require_symmetric(adjacency, "regularized_laplacian");
    if (a && *a < 0.0) throw InvalidInput("regularization parameter must be nonnegative");
    const Vector degrees = adjacency.rowwise().sum();
    const double reg = a ? *a : degrees.mean();
    const Vector scale = (degrees.array() + reg).rsqrt();
    return scale.asDiagonal() * adjacency * scale.asDiagonal();
}

namespace detail {

inline double squared_distance(const Matrix& rows, Eigen::Index i, const Matrix& centers,
                               Eigen::Index c) {
    return (rows.row(i) - centers.row(c)).squaredNorm();
}

struct LloydResult {
    std::vector<int> labels;  // 0-based here
    double inertia = 0.0;
    bool has_empty = false;
};

inline LloydResult lloyd_once(const Matrix& rows, int k, Philox& rng, int max_iter) {
    const auto n = rows.rows();
    const auto dim = rows.cols();

    // k-means++ seeding
    Matrix centers(k, dim);
    std::vector<double> dist2(static_cast<std::size_t>(n),
                              std::numeric_limits<double>::infinity());
    centers.row(0) = rows.row(static_cast<Eigen::Index>(rng.next_below(
        static_cast<std::uint64_t>(n))));
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = squared_distance(rows, i, centers, c - 1);
            auto& best = dist2[static_cast<std::size_t>(i)];
            if (d < best) best = d;
            total += best;
        }
        Eigen::Index pick = 0;
        if (total > 0.0) {
            const double target = rng.next_double() * total;
            double cum = 0.0;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                cum += dist2[static_cast<std::size_t>(i)];
                if (cum >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(n)));
        }
        centers.row(c) = rows.row(pick);
    }

    LloydResult result;
    result.labels.assign(static_cast<std::size_t>(n), 0);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = squared_distance(rows, i, centers, 0);
            for (int c = 1; c < k; ++c) {
                const double d = squared_distance(rows, i, centers, c);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (result.labels[static_cast<std::size_t>(i)] != best) {
                result.labels[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        centers.setZero();
        std::fill(counts.begin(), counts.end(), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = result.labels[static_cast<std::size_t>(i)];
            centers.row(c) += rows.row(i);
            ++counts[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centers.row(c) /= counts[static_cast<std::size_t>(c)];
            }
        }
    }

    std::fill(counts.begin(), counts.end(), 0);
    result.inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int c = result.labels[static_cast<std::size_t>(i)];
        ++counts[static_cast<std::size_t>(c)];
        result.inertia += squared_distance(rows, i, centers, c);
    }
    result.has_empty = std::any_of(counts.begin(), counts.end(), [](int c) { return c == 0; });
    return result;
}

}  // namespace detail

/**
 * Best-of-restarts Lloyd's algorithm with k-means++ seeding. Deterministic
 * given the seed; restarts that converge with an empty cluster are
 * discarded, and if every restart does, the clustering fails.
 */
inline ClusterAssignment kmeans(const Matrix& rows, int k, std::uint64_t seed, int restarts,
                                int max_iter = 300) {
    if (k < 1 || k > rows.rows()) throw InvalidInput("need 1 <= K <= number of rows");
    if (restarts < 1) throw InvalidInput("need at least one restart");
    require_finite(rows, "kmeans");

    std::optional<detail::LloydResult> best;
    for (int attempt = 0; attempt < restarts; ++attempt) {
        Philox rng = make_stream(seed, Stream::kmeans, static_cast<std::uint64_t>(attempt));
        auto run = detail::lloyd_once(rows, k, rng, max_iter);
        if (run.has_empty) continue;
        if (!best || run.inertia < best->inertia) best = std::move(run);
    }
    if (!best) throw ClusteringFailed("every restart converged with an empty cluster");

    ClusterAssignment out;
    out.num_clusters = k;
    out.inertia = best->inertia;
    out.labels.reserve(best->labels.size());
    for (int label : best->labels) out.labels.push_back(label + 1);
    return out;
}

/**
 * Regularized spectral clustering of a covariance remainder: absolute
 * correlation adjacency, average-degree regularized normalization, k-means
 * on the rows of the leading-K eigenvector matrix (10 restarts).
 */
inline ClusterAssignment rsc_cluster(const Matrix& sigma_e_hat, int k, std::uint64_t seed) {
    if (k < 2) throw InvalidInput("spectral clustering needs K >= 2");
    const Matrix adjacency = abs_correlation_adjacency(sigma_e_hat);
    const Matrix laplacian = regularized_laplacian(adjacency);
    const auto eig = sym_eigen(laplacian);
    const Matrix embedding = eig.eigenvectors.leftCols(k);
    return kmeans(embedding, k, seed, 10);
}

namespace detail {

/// Max-weight assignment on a square cost matrix (Hungarian algorithm with
/// potentials); returns the chosen column for each row.
inline std::vector<int> max_assignment(const std::vector<std::vector<double>>& weight) {
    const int n = static_cast<int>(weight.size());
    // shortest augmenting paths on negated weights, 1-based potentials
    std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<double> v(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<int> match(static_cast<std::size_t>(n + 1), 0);  // column -> row
    std::vector<int> way(static_cast<std::size_t>(n + 1), 0);
    constexpr double kInf = std::numeric_limits<double>::infinity();
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n + 1), kInf);
        std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = match[static_cast<std::size_t>(j0)];
            double delta = kInf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cost = -weight[static_cast<std::size_t>(i0 - 1)]
                                           [static_cast<std::size_t>(j - 1)] -
                                    u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cost < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cost;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(static_cast<std::size_t>(n), 0);
    for (int j = 1; j <= n; ++j) {
        if (match[static_cast<std::size_t>(j)] > 0) {
            row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
        }
    }
    return row_to_col;
}

}  // namespace detail

/**
 * Fraction of mismatched labels minimized over all relabelings of the
 * estimated clusters: exhaustive permutation search up to 12 clusters,
 * assignment algorithm beyond.
 */
inline double misclassification_rate(const std::vector<int>& estimated,
                                     const std::vector<int>& truth) {
    if (estimated.size() != truth.size()) throw InvalidInput("label vectors differ in length");
    if (estimated.empty()) throw InvalidInput("empty label vectors");
    int num_labels = 0;
    for (std::size_t i = 0; i < estimated.size(); ++i) {
        if (estimated[i] < 1 || truth[i] < 1) throw InvalidInput("labels must be positive");
        num_labels = std::max({num_labels, estimated[i], truth[i]});
    }
    const auto n = static_cast<double>(estimated.size());
    std::vector<std::vector<double>> agree(
        static_cast<std::size_t>(num_labels),
        std::vector<double>(static_cast<std::size_t>(num_labels), 0.0));
    for (std::size_t i = 0; i < estimated.size(); ++i) {
        agree[static_cast<std::size_t>(estimated[i] - 1)][static_cast<std::size_t>(truth[i] - 1)] +=
            1.0;
    }

    double best = 0.0;
    if (num_labels <= 12) {
        std::vector<int> perm(static_cast<std::size_t>(num_labels));
        std::iota(perm.begin(), perm.end(), 0);
        do {
            double hits = 0.0;
            for (int t = 0; t < num_labels; ++t) {
                hits += agree[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])]
                             [static_cast<std::size_t>(t)];
            }
            best = std::max(best, hits);
        } while (std::next_permutation(perm.begin(), perm.end()));
    } else {
        const auto row_to_col = detail::max_assignment(agree);
        for (int e = 0; e < num_labels; ++e) {
            best += agree[static_cast<std::size_t>(e)]
                         [static_cast<std::size_t>(row_to_col[static_cast<std::size_t>(e)])];
        }
    }
    return 1.0 - best / n;
}

/// Same metric against a ClusterAssignment.
inline double misclassification_rate(const ClusterAssignment& estimated,
                                     const std::vector<int>& truth) {
    return misclassification_rate(estimated.labels, truth);
}

}  // namespace multipoet
