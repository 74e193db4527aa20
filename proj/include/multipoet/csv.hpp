#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "multipoet/errors.hpp"
#include "multipoet/panel.hpp"

namespace multipoet {

/// Decimal text with 17 significant digits; round-trips doubles exactly.
inline std::string format_g17(double x) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", x);
    return buffer;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(field);
            field.clear();
        } else if (ch != '\r') {
            field += ch;
        }
    }
    fields.push_back(field);
    return fields;
}

inline std::string trimmed(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t");
    return s.substr(begin, end - begin + 1);
}

inline double parse_cell(const std::string& cell, std::size_t row, std::size_t col) {
    const std::string text = trimmed(cell);
    std::size_t used = 0;
    double value = 0.0;
    bool ok = !text.empty();
    if (ok) {
        try {
            value = std::stod(text, &used);
        } catch (...) {
            ok = false;
        }
    }
    if (!ok || used != text.size()) {
        throw InvalidInput("non-numeric cell at row " + std::to_string(row + 1) + ", column " +
                           std::to_string(col + 1) + ": '" + cell + "'");
    }
    return value;
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

}  // namespace detail

/**
 * Returns CSV: header row of asset ids, one row per time point. A first
 * column named `date` carries time labels.
 */
inline ReturnsPanel read_returns_csv(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.size() < 3) throw InsufficientData("returns CSV needs a header and >= 2 rows");
    auto header = detail::split_csv_line(lines[0]);
    const bool dated = !header.empty() && detail::trimmed(header[0]) == "date";
    const std::size_t first_asset = dated ? 1 : 0;
    if (header.size() <= first_asset) throw InvalidInput("returns CSV has no asset columns");

    std::vector<std::string> ids;
    for (std::size_t c = first_asset; c < header.size(); ++c) {
        ids.push_back(detail::trimmed(header[c]));
        if (ids.back().empty()) throw InvalidInput("empty asset id in header");
    }
    const std::size_t rows = lines.size() - 1;
    Matrix values(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ids.size()));
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto fields = detail::split_csv_line(lines[r + 1]);
        if (fields.size() != header.size()) {
            throw InvalidInput("row " + std::to_string(r + 2) + " has " +
                               std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(header.size()));
        }
        if (dated) labels.push_back(detail::trimmed(fields[0]));
        for (std::size_t c = first_asset; c < fields.size(); ++c) {
            values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - first_asset)) =
                detail::parse_cell(fields[c], r + 1, c);
        }
    }
    return make_panel(std::move(values), std::move(ids),
                      dated ? std::optional<std::vector<std::string>>{labels} : std::nullopt);
}

/**
 * Label CSV with rows `asset_id,<label>` (optional header). Returns the
 * mapping in file order.
 */
inline std::map<std::string, std::string> read_label_csv(const std::string& path,
                                                         const std::string& value_name) {
    const auto lines = detail::read_lines(path);
    if (lines.empty()) throw InvalidInput("empty label CSV '" + path + "'");
    std::map<std::string, std::string> out;
    for (std::size_t r = 0; r < lines.size(); ++r) {
        const auto fields = detail::split_csv_line(lines[r]);
        if (fields.size() != 2) {
            throw InvalidInput("row " + std::to_string(r + 1) + " of '" + path +
                               "' needs exactly 2 fields");
        }
        const std::string id = detail::trimmed(fields[0]);
        const std::string value = detail::trimmed(fields[1]);
        if (r == 0 && (id == "asset_id" || value == value_name)) continue;  // header
        if (id.empty() || value.empty()) {
            throw InvalidInput("empty field at row " + std::to_string(r + 1) + " of '" + path +
                               "'");
        }
        if (!out.emplace(id, value).second) {
            throw InvalidInput("duplicate asset id '" + id + "' in '" + path + "'");
        }
    }
    return out;
}

/// Group membership for the panel's assets, mapped to ids 1..J by sorted
/// label order. Every asset must be covered.
inline std::pair<GroupStructure, std::map<std::string, int>> membership_for_panel(
    const ReturnsPanel& panel, const std::map<std::string, std::string>& labels) {
    std::map<std::string, int> group_id;
    for (const auto& [asset, label] : labels) group_id[label] = 0;
    int next = 1;
    for (auto& [label, id] : group_id) id = next++;

    std::vector<int> membership;
    membership.reserve(panel.asset_ids.size());
    for (const auto& asset : panel.asset_ids) {
        const auto it = labels.find(asset);
        if (it == labels.end()) {
            throw InvalidInput("asset '" + asset + "' missing from membership file");
        }
        membership.push_back(group_id.at(it->second));
    }
    return {make_groups(std::move(membership)), std::move(group_id)};
}

/// Dense matrix CSV: header of column labels, then 17-digit rows.
inline void write_matrix_csv(const std::string& path, const Matrix& m,
                             const std::vector<std::string>& col_labels) {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write '" + path + "'");
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
        if (c > 0) out << ',';
        out << col_labels[c];
    }
    out << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c > 0) out << ',';
            out << format_g17(m(r, c));
        }
        out << '\n';
    }
}

/// Reads back a matrix written by write_matrix_csv.
inline Matrix read_matrix_csv(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.size() < 2) throw InvalidInput("matrix CSV '" + path + "' has no data rows");
    const auto header = detail::split_csv_line(lines[0]);
    const auto cols = header.size();
    Matrix m(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto fields = detail::split_csv_line(lines[r]);
        if (fields.size() != cols) {
            throw InvalidInput("row " + std::to_string(r + 1) + " of '" + path +
                               "' has the wrong field count");
        }
        for (std::size_t c = 0; c < cols; ++c) {
            m(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) =
                detail::parse_cell(fields[c], r, c);
        }
    }
    return m;
}

/// Writes a returns panel in the format read_returns_csv expects.
inline void write_returns_csv(const std::string& path, const ReturnsPanel& panel) {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write '" + path + "'");
    if (panel.time_labels) out << "date,";
    for (std::size_t c = 0; c < panel.asset_ids.size(); ++c) {
        if (c > 0) out << ',';
        out << panel.asset_ids[c];
    }
    out << '\n';
    for (Eigen::Index r = 0; r < panel.rows(); ++r) {
        if (panel.time_labels) out << (*panel.time_labels)[static_cast<std::size_t>(r)] << ',';
        for (Eigen::Index c = 0; c < panel.cols(); ++c) {
            if (c > 0) out << ',';
            out << format_g17(panel.values(r, c));
        }
        out << '\n';
    }
}

}  // namespace multipoet
