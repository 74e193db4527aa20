#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "multipoet/estimators.hpp"
#include "multipoet/selection.hpp"

namespace multipoet {

/**
 * One estimator request: which method, fixed or data-driven factor counts
 * (negative means choose via the eigenvalue-ratio machinery), and the
 * thresholding rule. `groups` is required for double_poet.
 */
struct EstimatorSpec {
    std::string method = "samcov";  // samcov | poet | poet2 | dpoet | identity
    int k = -1;                     // global factors; < 0 selects via MER
    int r = -1;                     // local factors per group; < 0 selects via ER
    std::optional<GroupStructure> groups;
    double tau = -1.0;  // < 0 uses the rate-based default
    ThresholdRule rule = ThresholdRule::soft;
    std::optional<std::vector<std::string>> sector_labels;
    int k_max = -1;  // < 0: min(10 + J * r_max, p - 1, T - 1)
    int r_max = 10;
    double phi_scale = 0.3;
    // raise tau until the thresholded residual is positive definite
    // (portfolio-style use; soft/hard rules only)
    bool ensure_pd = false;
};

/// Estimate plus the resolved configuration that produced it.
struct EstimateOutcome {
    CovEstimate estimate;
    int k = 0;
    std::vector<int> r;
    double tau = 0.0;
    std::optional<ModelSelection> selection;
};

/**
 * Runs one estimator on a precomputed sample covariance. Factor counts
 * left open are selected here: MER with phi = phi_scale * log p for the
 * global count, per-block eigenvalue ratios for the local counts.
 */
inline EstimateOutcome resolve_estimate(const Matrix& sigma_hat, Eigen::Index num_obs,
                                        const EstimatorSpec& spec) {
    const auto p = sigma_hat.rows();
    EstimateOutcome out;

    if (spec.method == "samcov") {
        out.estimate = samcov_estimate(sigma_hat);
        return out;
    }
    if (spec.method == "identity") {
        out.estimate = samcov_estimate(Matrix::Identity(p, p));
        return out;
    }
    if (spec.method != "poet" && spec.method != "poet2" && spec.method != "dpoet") {
        throw InvalidConfig("unknown estimator method '" + spec.method + "'");
    }
    if (spec.method == "dpoet" && !spec.groups) {
        throw InvalidConfig("double_poet requires group membership");
    }
    if (spec.groups && spec.groups->size() != p) {
        throw InvalidInput("group membership does not cover all assets");
    }

    const int num_groups = spec.groups ? spec.groups->num_groups : 1;

    // global factor count
    out.k = spec.k;
    if (out.k < 0) {
        int k_max = spec.k_max;
        if (k_max < 0) {
            k_max = std::min<int>({10 + num_groups * spec.r_max, static_cast<int>(p) - 1,
                                   static_cast<int>(num_obs) - 1});
        }
        if (k_max < 2) throw InvalidKMax("panel too small for automatic factor selection");
        const double phi = spec.phi_scale * std::log(static_cast<double>(p));
        out.selection = mer_select(sigma_hat, k_max, phi);
        out.k = out.selection->k_hat;
    }

    // local counts where needed
    std::vector<int> local_counts;
    int r_total = 0;
    if (spec.method == "dpoet" || spec.method == "poet2") {
        const GroupStructure* groups = spec.groups ? &*spec.groups : nullptr;
        if (groups) {
            const auto remainder = principal_truncation(sigma_hat, out.k).second;
            for (int j = 0; j < groups->num_groups; ++j) {
                const auto& idx = groups->group_indices[static_cast<std::size_t>(j)];
                int r_j = spec.r;
                if (r_j < 0) {
                    const int r_max = std::min<int>(spec.r_max, static_cast<int>(idx.size()) - 1);
                    r_j = r_max < 1 ? 0
                                    : er_local_select(detail::group_block(remainder, idx), r_max);
                }
                local_counts.push_back(r_j);
                r_total += r_j;
            }
        } else {
            // poet2 without membership: r is the total extra component count
            if (spec.r < 0) {
                throw InvalidConfig("poet2 needs either group membership or an explicit r");
            }
            r_total = spec.r;
        }
    }
    out.r = local_counts;

    // thresholding
    int min_group = static_cast<int>(p);
    double tau_scale = kSingleLevelTauScale;
    if (spec.method == "dpoet") {
        min_group = *std::min_element(spec.groups->group_sizes.begin(),
                                      spec.groups->group_sizes.end());
        tau_scale = kDoubleTauScale;
    }
    out.tau = spec.tau >= 0.0 ? spec.tau
                              : default_tau(static_cast<int>(p), static_cast<int>(num_obs),
                                            min_group, tau_scale);

    auto build = [&](double tau) {
        const ThresholdSpec threshold = make_threshold(
            tau, spec.rule,
            spec.rule == ThresholdRule::sector_block ? spec.sector_labels : std::nullopt);
        if (spec.method == "poet") return poet_from_cov(sigma_hat, out.k, threshold);
        if (spec.method == "poet2") return poet2_from_cov(sigma_hat, out.k, r_total, threshold);
        return double_poet_from_cov(sigma_hat, out.k, *spec.groups, local_counts, threshold);
    };

    if (spec.ensure_pd && spec.rule != ThresholdRule::sector_block) {
        // search from the rate-based constant upward until the thresholded
        // residual is positive definite
        const CovEstimate raw = build(0.0);
        out.tau = min_pd_tau(raw.residual_part, spec.rule, out.tau);
        const ThresholdSpec threshold{out.tau, spec.rule, std::nullopt};
        out.estimate = detail::assemble_estimate(
            raw.method, raw.k_used, raw.r_used, raw.global_part, raw.local_part,
            adaptive_threshold(raw.residual_part, threshold), raw.global_factors,
            raw.local_factors, raw.groups);
        return out;
    }
    out.estimate = build(out.tau);
    return out;
}

inline EstimateOutcome resolve_estimate(const ReturnsPanel& panel, const EstimatorSpec& spec) {
    return resolve_estimate(sample_covariance(panel), panel.rows(), spec);
}

}  // namespace multipoet
