#pragma once

#include <string>
#include <vector>

#include "multipoet/errors.hpp"
#include "multipoet/linalg.hpp"

namespace multipoet {

enum class ModelVariant { single_level, multi_level, no_factors };

inline const char* variant_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::single_level: return "single_level";
        case ModelVariant::multi_level: return "multi_level";
        case ModelVariant::no_factors: return "no_factors";
    }
    return "?";
}

/// Verdict of the eigenvalue-ratio model selection.
struct ModelSelection {
    ModelVariant variant = ModelVariant::no_factors;
    int k_hat = 0;        // estimated number of global factors
    int k1 = 0, k2 = 0;   // positions of the two largest eigenvalue ratios
    double er1 = 0.0, er2 = 0.0;
    double phi_p = 0.0;
    std::vector<double> ratios;  // ER(1..k_max)
};

/// Consecutive eigenvalue ratios ER(m) = lambda_m / lambda_{m+1} for
/// m = 1..k_max, with eigenvalues floored at 1e-12 first.
inline std::vector<double> eigenvalue_ratios(const Vector& eigenvalues, int k_max) {
    if (k_max < 1) throw InvalidKMax("k_max must be at least 1");
    if (k_max + 1 > eigenvalues.size()) {
        throw InvalidKMax("k_max " + std::to_string(k_max) + " needs at least " +
                          std::to_string(k_max + 1) + " eigenvalues");
    }
    std::vector<double> ratios(static_cast<std::size_t>(k_max));
    auto floored = [&](int i) { return std::max(eigenvalues[i], 1e-12); };
    for (int m = 1; m <= k_max; ++m) {
        ratios[static_cast<std::size_t>(m - 1)] = floored(m - 1) / floored(m);
    }
    return ratios;
}

/**
 * Model selection between single-level and multi-level factor structure.
 * The two largest eigenvalue ratios are located; two ratios above phi_p
 * signal a multi-level model with k_hat = min of the two positions, one
 * ratio above signals a single-level model with k_hat at its position,
 * none above means no factors. Argmax ties resolve to the smaller index.
 */
inline ModelSelection mer_select(const Matrix& sigma_hat, int k_max, double phi_p) {
    if (phi_p <= 0.0) throw InvalidConfig("phi_p must be positive");
    if (k_max < 2) throw InvalidKMax("model selection needs k_max >= 2");
    const auto eig = sym_eigen(sigma_hat);
    ModelSelection sel;
    sel.phi_p = phi_p;
    sel.ratios = eigenvalue_ratios(eig.eigenvalues, k_max);

    int k1 = 1;
    for (int m = 2; m <= k_max; ++m) {
        if (sel.ratios[static_cast<std::size_t>(m - 1)] >
            sel.ratios[static_cast<std::size_t>(k1 - 1)]) {
            k1 = m;
        }
    }
    int k2 = k1 == 1 ? 2 : 1;
    for (int m = 1; m <= k_max; ++m) {
        if (m == k1) continue;
        if (sel.ratios[static_cast<std::size_t>(m - 1)] >
            sel.ratios[static_cast<std::size_t>(k2 - 1)]) {
            k2 = m;
        }
    }
    sel.k1 = k1;
    sel.k2 = k2;
    sel.er1 = sel.ratios[static_cast<std::size_t>(k1 - 1)];
    sel.er2 = sel.ratios[static_cast<std::size_t>(k2 - 1)];

    if (sel.er2 > phi_p) {
        sel.variant = ModelVariant::multi_level;
        sel.k_hat = std::min(k1, k2);
    } else if (sel.er1 > phi_p) {
        sel.variant = ModelVariant::single_level;
        sel.k_hat = k1;
    } else {
        sel.variant = ModelVariant::no_factors;
        sel.k_hat = 0;
    }
    return sel;
}

/// Local factor count for one group block: argmax of the consecutive
/// eigenvalue ratios of the block (smallest index on ties).
inline int er_local_select(const Matrix& sigma_e_block, int r_max) {
    if (r_max + 1 > sigma_e_block.rows()) {
        throw InvalidKMax("r_max " + std::to_string(r_max) + " too large for block size " +
                          std::to_string(sigma_e_block.rows()));
    }
    const auto eig = sym_eigen(sigma_e_block);
    const auto ratios = eigenvalue_ratios(eig.eigenvalues, r_max);
    int best = 1;
    for (int r = 2; r <= r_max; ++r) {
        if (ratios[static_cast<std::size_t>(r - 1)] > ratios[static_cast<std::size_t>(best - 1)]) {
            best = r;
        }
    }
    return best;
}

}  // namespace multipoet
