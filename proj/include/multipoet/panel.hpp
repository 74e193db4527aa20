#pragma once

#include <optional>
#include <string>
#include <vector>

#include "multipoet/errors.hpp"
#include "multipoet/linalg.hpp"

namespace multipoet {

/// T x p observation matrix with asset identifiers and optional time labels.
struct ReturnsPanel {
    Matrix values;  // rows = observations, columns = assets
    std::vector<std::string> asset_ids;
    std::optional<std::vector<std::string>> time_labels;

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }
};

inline ReturnsPanel make_panel(Matrix values, std::vector<std::string> asset_ids = {},
                               std::optional<std::vector<std::string>> time_labels = std::nullopt) {
    if (values.rows() < 2) throw InsufficientData("panel needs at least 2 observations");
    if (values.cols() < 1) throw InvalidInput("panel needs at least 1 asset");
    if (!values.allFinite()) throw InvalidInput("panel contains non-finite values");
    if (asset_ids.empty()) {
        asset_ids.reserve(static_cast<std::size_t>(values.cols()));
        for (Eigen::Index i = 0; i < values.cols(); ++i) {
            asset_ids.push_back("A" + std::to_string(i + 1));
        }
    }
    if (static_cast<Eigen::Index>(asset_ids.size()) != values.cols()) {
        throw InvalidInput("asset id count does not match column count");
    }
    if (time_labels && static_cast<Eigen::Index>(time_labels->size()) != values.rows()) {
        throw InvalidInput("time label count does not match row count");
    }
    return ReturnsPanel{std::move(values), std::move(asset_ids), std::move(time_labels)};
}

/**
 * Group membership g_i in {1..J}. Assets may arrive in any order; the
 * structure records, per group, the ascending list of user-order indices,
 * so concatenating the lists is the canonical contiguous ordering.
 */
struct GroupStructure {
    std::vector<int> membership;  // user order, 1-based group ids
    int num_groups = 0;
    std::vector<int> group_sizes;                 // per group
    std::vector<std::vector<int>> group_indices;  // per group, ascending user indices

    int size() const { return static_cast<int>(membership.size()); }

    /// Permutation from canonical (group-contiguous) position to user index.
    std::vector<int> canonical_to_user() const {
        std::vector<int> perm;
        perm.reserve(membership.size());
        for (const auto& idx : group_indices) perm.insert(perm.end(), idx.begin(), idx.end());
        return perm;
    }
};

inline GroupStructure make_groups(std::vector<int> membership) {
    if (membership.empty()) throw InvalidInput("empty membership vector");
    int num_groups = 0;
    for (int g : membership) {
        if (g < 1) throw InvalidInput("group ids must be positive");
        num_groups = std::max(num_groups, g);
    }
    GroupStructure out;
    out.membership = std::move(membership);
    out.num_groups = num_groups;
    out.group_indices.resize(static_cast<std::size_t>(num_groups));
    for (int i = 0; i < out.size(); ++i) {
        out.group_indices[static_cast<std::size_t>(out.membership[static_cast<std::size_t>(i)] - 1)]
            .push_back(i);
    }
    out.group_sizes.reserve(static_cast<std::size_t>(num_groups));
    for (int j = 0; j < num_groups; ++j) {
        const auto& idx = out.group_indices[static_cast<std::size_t>(j)];
        if (idx.empty()) {
            throw InvalidInput("group " + std::to_string(j + 1) + " is empty");
        }
        out.group_sizes.push_back(static_cast<int>(idx.size()));
    }
    return out;
}

/// Equal-sized contiguous groups 1..J (the simulation layout).
inline GroupStructure make_contiguous_groups(int p, int num_groups) {
    if (num_groups < 1 || p < num_groups || p % num_groups != 0) {
        throw InvalidConfig("p must split into equal non-empty groups");
    }
    std::vector<int> membership(static_cast<std::size_t>(p));
    const int per = p / num_groups;
    for (int i = 0; i < p; ++i) membership[static_cast<std::size_t>(i)] = i / per + 1;
    return make_groups(std::move(membership));
}

}  // namespace multipoet
