#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "multipoet/clustering.hpp"
#include "multipoet/errors.hpp"
#include "multipoet/estimators.hpp"
#include "multipoet/panel.hpp"
#include "multipoet/parallel.hpp"
#include "multipoet/rng.hpp"
#include "multipoet/selection.hpp"

namespace multipoet {

/**
 * Data-generating process: k global factors with loadings N(mu_B, I_k),
 * mu_B ~ U(-0.5, 0.5); per group j, r_j local factors with loadings
 * N(mu_lambda_j, I_{r_j}), mu_lambda_j ~ U(-0.3, 0.3); sparse error
 * covariance D + ss' - diag(s^2). Fully determined by the seed.
 */
struct DGPParams {
    int p = 0, T = 0, J = 0, k = 0;
    std::vector<int> r;  // local factor counts per group
    double m = 0.3;
    std::uint64_t seed = 0;
    Vector mu_global;
    std::vector<Vector> mu_local;
    Matrix global_loadings;  // p x k
    Matrix local_loadings;   // p x r, block diagonal
    Matrix error_cov;
    Matrix sigma;  // population covariance BB' + LL' + Sigma_u
    GroupStructure groups;

    int total_local_factors() const {
        int total = 0;
        for (int r_j : r) total += r_j;
        return total;
    }
};

namespace detail {

struct ErrorCovDraw {
    Vector diag;   // d_i^2
    Vector spike;  // s
    Matrix cov;    // D + ss' - diag(s^2)
};

inline ErrorCovDraw draw_error_cov(int p, double m, std::uint64_t seed, int attempt) {
    const double prob = m / (std::sqrt(static_cast<double>(p)) * std::log(static_cast<double>(p)));
    Philox rng = make_stream(seed, Stream::error_cov, static_cast<std::uint64_t>(attempt));
    ErrorCovDraw draw;
    draw.diag.resize(p);
    for (int i = 0; i < p; ++i) {
        const double d = rng.gamma(100.0, 100.0);
        draw.diag[i] = d * d;
    }
    draw.spike = Vector::Zero(p);
    for (int i = 0; i < p; ++i) {
        if (rng.next_double() < prob) draw.spike[i] = rng.normal();
    }
    draw.cov = draw.spike * draw.spike.transpose();
    draw.cov.diagonal() = draw.diag;  // D + ss' - diag(s^2) in one step
    return draw;
}

}  // namespace detail

/**
 * Sparse error covariance D + ss' - diag(s^2) with d_i ~ Gamma(100, 100)
 * squared on the diagonal and s sparse N(0,1) entries appearing with
 * probability m / (sqrt(p) log p). Redrawn until positive definite.
 */
inline Matrix sparse_error_cov(int p, double m, std::uint64_t seed) {
    if (p < 2) throw InvalidConfig("sparse_error_cov needs p >= 2");
    if (!(m > 0.0)) throw InvalidConfig("sparsity control m must be positive");
    for (int attempt = 0; attempt < 1000; ++attempt) {
        auto draw = detail::draw_error_cov(p, m, seed, attempt);
        Eigen::LLT<Matrix> llt(draw.cov);
        if (llt.info() == Eigen::Success) return std::move(draw.cov);
    }
    throw GenerationFailed("no positive definite error covariance in 1000 attempts");
}

/// Draws loadings and the error covariance; groups are contiguous with
/// equal size p / J.
inline DGPParams generate_model(int p, int num_obs, int num_groups, int k, int r_per_group,
                                double m, std::uint64_t seed) {
    if (p < 2 || num_obs < 2) throw InvalidConfig("need p >= 2 and T >= 2");
    if (k < 0 || r_per_group < 0) throw InvalidConfig("factor counts must be nonnegative");
    DGPParams dgp;
    dgp.p = p;
    dgp.T = num_obs;
    dgp.J = num_groups;
    dgp.k = k;
    dgp.m = m;
    dgp.seed = seed;
    dgp.groups = make_contiguous_groups(p, num_groups);
    dgp.r.assign(static_cast<std::size_t>(num_groups), r_per_group);

    Philox mu_rng = make_stream(seed, Stream::mu_global);
    dgp.mu_global.resize(k);
    for (int l = 0; l < k; ++l) dgp.mu_global[l] = mu_rng.uniform(-0.5, 0.5);
    Philox load_rng = make_stream(seed, Stream::global_loadings);
    dgp.global_loadings.resize(p, k);
    for (int i = 0; i < p; ++i) {
        for (int l = 0; l < k; ++l) dgp.global_loadings(i, l) = dgp.mu_global[l] + load_rng.normal();
    }

    const int r_total = dgp.total_local_factors();
    dgp.local_loadings = Matrix::Zero(p, r_total);
    int offset = 0;
    for (int j = 0; j < num_groups; ++j) {
        const int r_j = dgp.r[static_cast<std::size_t>(j)];
        Philox mu_local_rng = make_stream(seed, Stream::mu_local, static_cast<std::uint64_t>(j));
        Vector mu(r_j);
        for (int s = 0; s < r_j; ++s) mu[s] = mu_local_rng.uniform(-0.3, 0.3);
        dgp.mu_local.push_back(mu);
        Philox local_rng = make_stream(seed, Stream::local_loadings, static_cast<std::uint64_t>(j));
        for (int idx : dgp.groups.group_indices[static_cast<std::size_t>(j)]) {
            for (int s = 0; s < r_j; ++s) {
                dgp.local_loadings(idx, offset + s) = mu[s] + local_rng.normal();
            }
        }
        offset += r_j;
    }

    dgp.error_cov = sparse_error_cov(p, m, seed);
    dgp.sigma = dgp.global_loadings * dgp.global_loadings.transpose() +
                dgp.local_loadings * dgp.local_loadings.transpose() + dgp.error_cov;
    dgp.sigma = symmetrized(dgp.sigma);
    return dgp;
}

/// One panel draw: y_t = B G_t + Lambda F_t + u_t with standard normal
/// factors and u_t ~ N(0, Sigma_u).
inline ReturnsPanel simulate_panel(const DGPParams& dgp, std::uint64_t seed) {
    const int num_obs = dgp.T;
    const int r_total = dgp.total_local_factors();
    Matrix global(num_obs, dgp.k);
    Philox g_rng = make_stream(seed, Stream::global_factors);
    for (int t = 0; t < num_obs; ++t) {
        for (int l = 0; l < dgp.k; ++l) global(t, l) = g_rng.normal();
    }
    Matrix local(num_obs, r_total);
    Philox f_rng = make_stream(seed, Stream::local_factors);
    for (int t = 0; t < num_obs; ++t) {
        for (int s = 0; s < r_total; ++s) local(t, s) = f_rng.normal();
    }
    Matrix noise(num_obs, dgp.p);
    Philox u_rng = make_stream(seed, Stream::idiosyncratic);
    for (int t = 0; t < num_obs; ++t) {
        for (int i = 0; i < dgp.p; ++i) noise(t, i) = u_rng.normal();
    }
    const Matrix chol = Eigen::LLT<Matrix>(dgp.error_cov).matrixL();
    Matrix values = global * dgp.global_loadings.transpose() +
                    local * dgp.local_loadings.transpose() + noise * chol.transpose();
    return make_panel(std::move(values));
}

/// Moves ceil(rate * p) uniformly chosen assets to uniformly chosen wrong
/// groups. Deterministic given the seed.
inline GroupStructure perturb_membership(const GroupStructure& groups, double rate,
                                         std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw InvalidConfig("perturbation rate must lie in [0, 1]");
    const int p = groups.size();
    const int moved = static_cast<int>(std::ceil(rate * p));
    if (moved == 0) return groups;
    if (groups.num_groups < 2) throw InvalidConfig("perturbation needs at least two groups");

    Philox rng = make_stream(seed, Stream::perturbation);
    std::vector<int> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < moved; ++i) {  // partial Fisher-Yates
        const int j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(p - i)));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    std::vector<int> membership = groups.membership;
    for (int i = 0; i < moved; ++i) {
        const int asset = order[static_cast<std::size_t>(i)];
        const int old = membership[static_cast<std::size_t>(asset)];
        int pick =
            1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(groups.num_groups - 1)));
        if (pick >= old) ++pick;  // uniform over groups != old
        membership[static_cast<std::size_t>(asset)] = pick;
    }
    return make_groups(std::move(membership));
}

enum class GridAxis { dimension, groups };
enum class SimTarget { global_matrix, local_block };

/**
 * Replication study configuration. With axis == dimension the grid holds
 * p values and J stays fixed; with axis == groups it holds J values and
 * the per-group size stays fixed. Factor counts are either re-estimated
 * per replication (MER for k, per-block eigenvalue ratios for r_j) or
 * pinned to the true values.
 */
struct SimConfig {
    GridAxis axis = GridAxis::dimension;
    std::vector<int> grid;
    int fixed_groups = 10;     // J when axis == dimension
    int fixed_group_size = 30; // p_j when axis == groups
    int num_obs = 300;
    int k = 3;
    int r_per_group = 2;
    double m = 0.3;
    std::vector<std::string> methods{"samcov", "poet", "poet2", "dpoet"};
    int reps = 50;
    std::uint64_t seed = 1;
    bool auto_factors = true;
    int kmax_pad = 10;   // k_max = pad + true total local count
    int rmax = 10;
    double phi_scale = 0.3;
    double tau = -1.0;   // < 0: rate-based default per method
    SimTarget target = SimTarget::global_matrix;
    int poet_group_factors = -1;  // local-block POET factor count; < 0: estimated
    double mix_rate = 0.03;       // membership noise for the dpoet_mix method
};

inline const std::array<const char*, 3>& norm_labels() {
    static const std::array<const char*, 3> labels{"rel_frob", "max", "inv_op"};
    return labels;
}

/// One (grid point, method, norm) cell with its per-replication values.
struct ReportCell {
    int grid_value = 0;
    std::string method;
    std::string norm;
    std::vector<double> values;  // NaN marks a failed replication

    int count_ok() const {
        int n = 0;
        for (double v : values) {
            if (std::isfinite(v)) ++n;
        }
        return n;
    }
    double mean() const {
        double sum = 0.0;
        int n = 0;
        for (double v : values) {
            if (std::isfinite(v)) {
                sum += v;
                ++n;
            }
        }
        return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
    }
    double stderr_mean() const {
        const double mu = mean();
        double ss = 0.0;
        int n = 0;
        for (double v : values) {
            if (std::isfinite(v)) {
                ss += (v - mu) * (v - mu);
                ++n;
            }
        }
        if (n < 2) return std::numeric_limits<double>::quiet_NaN();
        return std::sqrt(ss / (n - 1) / n);
    }
};

struct ReplicationReport {
    SimConfig config;
    std::vector<ReportCell> cells;

    const ReportCell& cell(int grid_value, const std::string& method,
                           const std::string& norm) const {
        for (const auto& c : cells) {
            if (c.grid_value == grid_value && c.method == method && c.norm == norm) return c;
        }
        throw InvalidInput("no cell for grid " + std::to_string(grid_value) + ", " + method +
                           ", " + norm);
    }
};

namespace detail {

struct GridPoint {
    int p = 0;
    int num_groups = 0;
    int grid_value = 0;
};

inline GridPoint resolve_grid_point(const SimConfig& config, std::size_t index) {
    GridPoint point;
    point.grid_value = config.grid[index];
    if (config.axis == GridAxis::dimension) {
        point.p = point.grid_value;
        point.num_groups = config.fixed_groups;
    } else {
        point.num_groups = point.grid_value;
        point.p = point.num_groups * config.fixed_group_size;
    }
    return point;
}

/// Spectral inverse; NaN-signalling empty matrix when near-singular.
inline bool spectral_inverse(const Matrix& m, Matrix& out) {
    const auto eig = sym_eigen(m);
    const double largest = eig.eigenvalues.cwiseAbs().maxCoeff();
    const double smallest = eig.eigenvalues.cwiseAbs().minCoeff();
    if (!(largest > 0.0) || smallest <= 1e-12 * largest) return false;
    out = eig.eigenvectors * eig.eigenvalues.cwiseInverse().asDiagonal() *
          eig.eigenvectors.transpose();
    return true;
}

struct Reference {
    Matrix sigma;
    Matrix isqrt;
    Matrix inverse;
    bool has_inverse = false;
};

inline Reference make_reference(const Matrix& sigma) {
    Reference ref;
    ref.sigma = sigma;
    ref.isqrt = sym_inverse_sqrt(sigma);
    ref.has_inverse = spectral_inverse(sigma, ref.inverse);
    return ref;
}

inline std::array<double, 3> score_estimate(const Matrix& assembled, const Reference& ref) {
    std::array<double, 3> out{};
    out[0] = relative_frobenius_with_isqrt(assembled, ref.sigma, ref.isqrt);
    out[1] = (assembled - ref.sigma).cwiseAbs().maxCoeff();
    Matrix inv;
    if (ref.has_inverse && spectral_inverse(assembled, inv)) {
        const auto diff_eig = sym_eigen(symmetrized(inv - ref.inverse));
        out[2] = std::max(std::abs(diff_eig.eigenvalues[0]),
                          std::abs(diff_eig.eigenvalues[diff_eig.eigenvalues.size() - 1]));
    } else {
        out[2] = std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

/// Per-group local factor counts: eigenvalue-ratio selection on each
/// group's remainder block when auto_mode, otherwise the requested count
/// clamped to what the group can hold.
inline std::vector<int> local_counts(const Matrix& sigma_e, const GroupStructure& groups,
                                     bool auto_mode, int requested, int rmax) {
    std::vector<int> counts(static_cast<std::size_t>(groups.num_groups), 0);
    for (int j = 0; j < groups.num_groups; ++j) {
        const auto& idx = groups.group_indices[static_cast<std::size_t>(j)];
        const int cap = static_cast<int>(idx.size()) - 1;
        if (auto_mode) {
            const int r_max = std::min(rmax, cap);
            counts[static_cast<std::size_t>(j)] =
                r_max < 1 ? 0 : er_local_select(group_block(sigma_e, idx), r_max);
        } else {
            counts[static_cast<std::size_t>(j)] = std::min(requested, std::max(cap, 0));
        }
    }
    return counts;
}

inline ReturnsPanel group_subpanel(const ReturnsPanel& panel, const std::vector<int>& idx) {
    Matrix values(panel.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) {
        values.col(static_cast<Eigen::Index>(c)) = panel.values.col(idx[c]);
    }
    return make_panel(std::move(values));
}

}  // namespace detail

/**
 * Runs the replication study. Each (grid point, replication) owns derived
 * seeds, so cells can be reproduced in isolation and results do not depend
 * on scheduling. Estimator failures surface as NaN values in their cells.
 */
inline ReplicationReport run_replications(const SimConfig& config) {
    if (config.grid.empty()) throw InvalidConfig("empty grid");
    if (config.reps < 1) throw InvalidConfig("need at least one replication");
    for (const auto& m : config.methods) {
        if (m != "samcov" && m != "poet" && m != "poet2" && m != "dpoet" && m != "dpoet_rsc" &&
            m != "dpoet_mix") {
            throw InvalidConfig("unknown method '" + m + "'");
        }
    }

    const std::size_t num_points = config.grid.size();
    const std::size_t num_methods = config.methods.size();
    // values[point][method][norm][rep]
    std::vector<std::vector<std::array<std::vector<double>, 3>>> values(
        num_points,
        std::vector<std::array<std::vector<double>, 3>>(
            num_methods, {std::vector<double>(static_cast<std::size_t>(config.reps),
                                              std::numeric_limits<double>::quiet_NaN()),
                          std::vector<double>(static_cast<std::size_t>(config.reps),
                                              std::numeric_limits<double>::quiet_NaN()),
                          std::vector<double>(static_cast<std::size_t>(config.reps),
                                              std::numeric_limits<double>::quiet_NaN())}));

    const std::size_t total = num_points * static_cast<std::size_t>(config.reps);
    parallel_for(total, [&](std::size_t task) {
        const std::size_t point_index = task / static_cast<std::size_t>(config.reps);
        const std::size_t rep = task % static_cast<std::size_t>(config.reps);
        const auto point = detail::resolve_grid_point(config, point_index);

        const std::uint64_t rep_seed = derive_seed(config.seed, point_index, rep);
        const auto dgp = generate_model(point.p, config.num_obs, point.num_groups, config.k,
                                        config.r_per_group, config.m, derive_seed(rep_seed, 0));
        const auto panel = simulate_panel(dgp, derive_seed(rep_seed, 1));
        const Matrix sigma_hat = sample_covariance(panel);

        // factor counts for this replication
        int k_hat = config.k;
        if (config.auto_factors) {
            const int r_total = dgp.total_local_factors();
            const int k_max = std::min(config.kmax_pad + r_total, point.p - 1);
            if (k_max >= 2) {
                const double phi = config.phi_scale * std::log(static_cast<double>(point.p));
                k_hat = mer_select(sigma_hat, k_max, phi).k_hat;
            }
        }
        const auto truncation = principal_truncation(sigma_hat, k_hat);
        const Matrix& sigma_e = truncation.second;
        std::vector<int> r_hat(static_cast<std::size_t>(point.num_groups), config.r_per_group);
        if (config.auto_factors) {
            r_hat = detail::local_counts(sigma_e, dgp.groups, true, config.r_per_group,
                                         config.rmax);
        }
        int r_hat_total = 0;
        for (int r_j : r_hat) r_hat_total += r_j;

        const int min_group = *std::min_element(dgp.groups.group_sizes.begin(),
                                                dgp.groups.group_sizes.end());
        const double tau_single =
            config.tau >= 0.0 ? config.tau : default_tau(point.p, config.num_obs, point.p);
        const double tau_double =
            config.tau >= 0.0 ? config.tau
                              : default_tau(point.p, config.num_obs, min_group, kDoubleTauScale);

        detail::Reference ref;
        std::vector<int> block_idx;
        if (config.target == SimTarget::global_matrix) {
            ref = detail::make_reference(dgp.sigma);
        } else {
            block_idx = dgp.groups.group_indices[0];
            ref = detail::make_reference(detail::group_block(dgp.sigma, block_idx));
        }

        for (std::size_t mi = 0; mi < num_methods; ++mi) {
            const std::string& name = config.methods[mi];
            try {
                Matrix assembled;
                if (config.target == SimTarget::global_matrix) {
                    if (name == "samcov") {
                        assembled = sigma_hat;
                    } else if (name == "poet") {
                        assembled =
                            poet_from_cov(sigma_hat, k_hat, make_threshold(tau_single)).assembled;
                    } else if (name == "poet2") {
                        assembled = poet2_from_cov(sigma_hat, k_hat, r_hat_total,
                                                   make_threshold(tau_single))
                                        .assembled;
                    } else if (name == "dpoet") {
                        assembled = double_poet_from_cov(sigma_hat, k_hat, dgp.groups, r_hat,
                                                         make_threshold(tau_double))
                                        .assembled;
                    } else {  // dpoet_rsc or dpoet_mix: membership not taken as given
                        const auto groups =
                            name == "dpoet_rsc"
                                ? make_groups(rsc_cluster(sigma_e, point.num_groups,
                                                          derive_seed(rep_seed, 2))
                                                  .labels)
                                : perturb_membership(dgp.groups, config.mix_rate,
                                                     derive_seed(rep_seed, 3));
                        const auto counts = detail::local_counts(
                            sigma_e, groups, config.auto_factors, config.r_per_group,
                            config.rmax);
                        const int min_size = *std::min_element(groups.group_sizes.begin(),
                                                               groups.group_sizes.end());
                        const double tau = config.tau >= 0.0
                                               ? config.tau
                                               : default_tau(point.p, config.num_obs, min_size,
                                                             kDoubleTauScale);
                        assembled = double_poet_from_cov(sigma_hat, k_hat, groups, counts,
                                                         make_threshold(tau))
                                        .assembled;
                    }
                } else {
                    // local-block study: group 1 is the target
                    if (name == "samcov") {
                        assembled =
                            sample_covariance(detail::group_subpanel(panel, block_idx));
                    } else if (name == "poet") {
                        const int p_1 = static_cast<int>(block_idx.size());
                        const int factors = config.poet_group_factors >= 0
                                                ? config.poet_group_factors
                                                : std::min(k_hat + r_hat[0], p_1);
                        const double tau_group =
                            config.tau >= 0.0 ? config.tau
                                              : default_tau(p_1, config.num_obs, p_1);
                        assembled = poet_from_cov(
                                        sample_covariance(detail::group_subpanel(panel, block_idx)),
                                        factors, make_threshold(tau_group))
                                        .assembled;
                    } else if (name == "poet2") {
                        const auto est = poet2_from_cov(sigma_hat, k_hat, r_hat_total,
                                                        make_threshold(tau_single));
                        assembled = extract_local_block(est, dgp.groups, 1).assembled;
                    } else if (name == "dpoet") {
                        const auto est = double_poet_from_cov(sigma_hat, k_hat, dgp.groups, r_hat,
                                                              make_threshold(tau_double));
                        assembled = extract_local_block(est, dgp.groups, 1).assembled;
                    } else {
                        throw InvalidConfig("method '" + name + "' has no local-block variant");
                    }
                }
                const auto scores = detail::score_estimate(assembled, ref);
                for (std::size_t ni = 0; ni < 3; ++ni) {
                    values[point_index][mi][ni][rep] = scores[ni];
                }
            } catch (const Error&) {
                // recorded as NaN; the cell keeps its replication count
            }
        }
    });

    ReplicationReport report;
    report.config = config;
    for (std::size_t pi = 0; pi < num_points; ++pi) {
        const auto point = detail::resolve_grid_point(config, pi);
        for (std::size_t mi = 0; mi < num_methods; ++mi) {
            for (std::size_t ni = 0; ni < 3; ++ni) {
                ReportCell cell;
                cell.grid_value = point.grid_value;
                cell.method = config.methods[mi];
                cell.norm = norm_labels()[ni];
                cell.values = values[pi][mi][ni];
                report.cells.push_back(std::move(cell));
            }
        }
    }
    return report;
}

}  // namespace multipoet
