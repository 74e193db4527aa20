#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "multipoet/errors.hpp"
#include "multipoet/linalg.hpp"
#include "multipoet/panel.hpp"
#include "multipoet/pipeline.hpp"

namespace multipoet {

/// Minimum-variance weights under a full-investment and gross-exposure
/// constraint, plus solver diagnostics.
struct PortfolioSolution {
    Vector weights;
    double objective = 0.0;       // w' Sigma w
    double gross_exposure = 0.0;  // ||w||_1
    double c = 0.0;
    bool converged = false;
    long iterations = 0;
};

struct SolverOptions {
    bool repair_pd = false;
    double tolerance = 1e-9;
    long max_iterations = 100000;
    const Vector* warm_weights = nullptr;
    const Vector* warm_dual = nullptr;
};

namespace detail {

/// mu such that sum_i soft(v_i - mu, lambda) == 1, solved exactly on the
/// piecewise-linear breakpoint grid.
inline double hyperplane_shift(const Vector& v, double lambda) {
    const auto p = v.size();
    struct Event {
        double at;
        bool upper;  // leaving the positive-part set vs entering the negative-part set
    };
    std::vector<Event> events;
    events.reserve(static_cast<std::size_t>(2 * p));
    double active_sum = 0.0;  // sum over active terms of their constant part
    double active_count = static_cast<double>(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        events.push_back({v[i] - lambda, true});
        events.push_back({v[i] + lambda, false});
        active_sum += v[i] - lambda;
    }
    std::sort(events.begin(), events.end(),
              [](const Event& a, const Event& b) { return a.at < b.at; });

    // h(mu) = active_sum - active_count * mu, decreasing from +inf
    double prev = -std::numeric_limits<double>::infinity();
    for (const auto& event : events) {
        if (active_count > 0.0) {
            const double candidate = (active_sum - 1.0) / active_count;
            if (candidate >= prev && candidate <= event.at) return candidate;
        }
        if (event.upper) {
            active_sum -= event.at;  // event.at == v_i - lambda
            active_count -= 1.0;
        } else {
            active_sum += event.at;  // event.at == v_i + lambda
            active_count += 1.0;
        }
        prev = event.at;
    }
    return (active_sum - 1.0) / active_count;  // final segment has slope -p
}

inline Vector shrink_shift(const Vector& v, double mu, double lambda) {
    Vector z(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double x = v[i] - mu;
        const double mag = std::abs(x) - lambda;
        z[i] = mag > 0.0 ? (x > 0.0 ? mag : -mag) : 0.0;
    }
    return z;
}

/// Euclidean projection onto {z : sum z = 1, ||z||_1 <= c} via bisection on
/// the gross-exposure multiplier; the returned point is always feasible.
inline Vector project_budget_l1(const Vector& v, double c) {
    const auto p = v.size();
    Vector plain = v.array() + (1.0 - v.sum()) / static_cast<double>(p);
    if (plain.cwiseAbs().sum() <= c) return plain;

    double lo = 0.0;
    double hi = 0.5 * (v.maxCoeff() - v.minCoeff()) + 1.0;
    auto excess = [&](double lambda) {
        const double mu = hyperplane_shift(v, lambda);
        return shrink_shift(v, mu, lambda).cwiseAbs().sum() - c;
    };
    // the L1 norm tends to 1 <= c as lambda grows; the cap only guards
    // against a last-ulp excess at c == 1
    for (int doubling = 0; doubling < 200 && excess(hi) > 0.0; ++doubling) {
        lo = hi;
        hi *= 2.0;
    }
    for (int iter = 0; iter < 100; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (excess(mid) > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return shrink_shift(v, hyperplane_shift(v, hi), hi);
}

}  // namespace detail

/**
 * Solves min w' Sigma w subject to sum(w) = 1 and ||w||_1 <= c. When the
 * unconstrained minimum-variance weights already satisfy the exposure
 * bound they are returned in closed form; otherwise an ADMM iteration
 * alternates a ridge solve with projection onto the feasible set, so the
 * returned weights are feasible even on early termination.
 */
inline PortfolioSolution min_variance_weights(const Matrix& sigma_in, double c,
                                              const SolverOptions& opts = {}) {
    require_finite(sigma_in, "min_variance_weights");
    require_symmetric(sigma_in, "min_variance_weights");
    if (c < 1.0) throw InfeasibleConstraint("gross exposure bound below 1 is infeasible");
    const auto p = sigma_in.rows();

    Matrix sigma = symmetrized(sigma_in);
    const double floor = 1e-8 * sigma.trace() / static_cast<double>(p);
    {
        const auto eig = sym_eigen(sigma);
        const double min_eig = eig.eigenvalues[p - 1];
        if (min_eig < std::max(floor, 0.0) || !(sigma.trace() > 0.0)) {
            if (!opts.repair_pd || !(sigma.trace() > 0.0)) {
                throw NotPositiveDefinite("covariance min eigenvalue " + std::to_string(min_eig));
            }
            const Vector lifted = eig.eigenvalues.cwiseMax(floor);
            sigma = symmetrized(eig.eigenvectors * lifted.asDiagonal() *
                                eig.eigenvectors.transpose());
        }
    }

    PortfolioSolution solution;
    solution.c = c;

    // closed form when the exposure constraint is slack
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() == Eigen::Success) {
        Vector raw = llt.solve(Vector::Ones(p));
        const double total = raw.sum();
        if (total > 0.0) {
            Vector gmv = raw / total;
            if (gmv.cwiseAbs().sum() <= c) {
                solution.weights = gmv;
                solution.objective = gmv.dot(sigma * gmv);
                solution.gross_exposure = gmv.cwiseAbs().sum();
                solution.converged = true;
                return solution;
            }
        }
    }

    double rho = std::max(sigma.trace() / static_cast<double>(p), 1e-8);
    Matrix system = 2.0 * sigma + rho * Matrix::Identity(p, p);
    Eigen::LLT<Matrix> solver(system);
    Vector z = opts.warm_weights && opts.warm_weights->size() == p
                   ? *opts.warm_weights
                   : Vector::Constant(p, 1.0 / static_cast<double>(p));
    z = detail::project_budget_l1(z, c);
    Vector dual = opts.warm_dual && opts.warm_dual->size() == p ? *opts.warm_dual
                                                                : Vector::Zero(p);
    Vector x = z;
    long iter = 0;
    bool converged = false;
    for (; iter < opts.max_iterations; ++iter) {
        x = solver.solve(rho * z - dual);
        const Vector z_prev = z;
        z = detail::project_budget_l1(x + dual / rho, c);
        dual += rho * (x - z);
        const double primal = (x - z).cwiseAbs().maxCoeff();
        const double dual_res = rho * (z - z_prev).cwiseAbs().maxCoeff();
        const double scale = std::max({1.0, x.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff()});
        if (primal <= opts.tolerance * scale && dual_res <= opts.tolerance * scale) {
            converged = true;
            ++iter;
            break;
        }
        if ((iter + 1) % 100 == 0) {  // residual balancing
            if (primal > 10.0 * dual_res) {
                rho *= 2.0;
            } else if (dual_res > 10.0 * primal) {
                rho *= 0.5;
            } else {
                continue;
            }
            system = 2.0 * sigma + rho * Matrix::Identity(p, p);
            solver.compute(system);
        }
    }
    solution.weights = z;
    solution.objective = z.dot(sigma * z);
    solution.gross_exposure = z.cwiseAbs().sum();
    solution.converged = converged;
    solution.iterations = iter;
    return solution;
}

/// Root mean square of the portfolio returns w'y_t over the holding rows.
inline double realized_risk(const Vector& weights, const Matrix& returns) {
    if (returns.cols() != weights.size()) {
        throw InvalidInput("weight and return dimensions do not match");
    }
    if (returns.rows() == 0) throw InvalidInput("no holding-period returns");
    const Vector portfolio = returns * weights;
    return std::sqrt(portfolio.squaredNorm() / static_cast<double>(returns.rows()));
}

/// Rolling out-of-sample result for one exposure level.
struct BacktestReport {
    double c = 0.0;
    std::string method;
    std::vector<int> period_start;        // first row of each holding period
    std::vector<std::string> period_label;
    std::vector<int> k_used;              // per period
    std::vector<double> risks;            // per period
    double overall_risk = 0.0;            // mean of period risks
    int skipped_periods = 0;
};

struct BacktestConfig {
    int window = 104;
    int hold = 4;  // rows per holding period when no usable dates
    std::vector<double> c_grid{1.0, 2.0, 3.0, 4.0};
    EstimatorSpec estimator;
    bool repair_pd = true;           // eigenvalue floor inside the solver
    bool ensure_pd_estimates = true; // raise tau until the residual is PD
};

namespace detail {

inline std::optional<std::string> month_key(const std::string& label) {
    // expects an ISO-like prefix YYYY-MM
    if (label.size() < 7 || label[4] != '-') return std::nullopt;
    for (int i : {0, 1, 2, 3, 5, 6}) {
        if (!std::isdigit(static_cast<unsigned char>(label[static_cast<std::size_t>(i)]))) {
            return std::nullopt;
        }
    }
    return label.substr(0, 7);
}

struct Period {
    int start = 0;
    int end = 0;  // exclusive
    std::string label;
};

inline std::vector<Period> holding_periods(const ReturnsPanel& panel, int window, int hold) {
    const int num_obs = static_cast<int>(panel.rows());
    std::vector<Period> periods;
    bool calendar = false;
    if (panel.time_labels) {
        calendar = true;
        for (const auto& label : *panel.time_labels) {
            if (!month_key(label)) {
                calendar = false;
                break;
            }
        }
    }
    if (calendar) {
        int start = 0;
        std::string current = *month_key((*panel.time_labels)[0]);
        for (int t = 1; t <= num_obs; ++t) {
            const std::string key =
                t < num_obs ? *month_key((*panel.time_labels)[static_cast<std::size_t>(t)]) : "";
            if (t == num_obs || key != current) {
                if (start >= window) periods.push_back({start, t, current});
                start = t;
                current = key;
            }
        }
    } else {
        for (int start = window; start < num_obs; start += hold) {
            const int end = std::min(start + hold, num_obs);
            periods.push_back({start, end, "t" + std::to_string(start)});
        }
    }
    return periods;
}

}  // namespace detail

/**
 * Rolling backtest: at each holding-period start, estimate the covariance
 * on the trailing window, solve the constrained minimum-variance problem
 * for every exposure level, hold, and record the realized risk. Periods
 * where the estimator fails are skipped and counted.
 */
inline std::vector<BacktestReport> backtest(const ReturnsPanel& panel,
                                            const BacktestConfig& config) {
    if (config.window < 2) throw InvalidConfig("window must be at least 2");
    if (config.hold < 1) throw InvalidConfig("holding length must be at least 1");
    if (config.c_grid.empty()) throw InvalidConfig("empty exposure grid");
    if (panel.rows() < config.window + 1) {
        throw InsufficientData("panel shorter than one estimation window plus one return");
    }

    const auto periods = detail::holding_periods(panel, config.window, config.hold);
    if (periods.empty()) throw InsufficientData("no holding periods after the first window");

    EstimatorSpec estimator = config.estimator;
    estimator.ensure_pd = estimator.ensure_pd || config.ensure_pd_estimates;

    std::vector<BacktestReport> reports;
    for (double c : config.c_grid) {
        BacktestReport report;
        report.c = c;
        report.method = config.estimator.method;
        reports.push_back(std::move(report));
    }
    std::vector<Vector> warm_weights(config.c_grid.size());

    for (const auto& period : periods) {
        Matrix assembled;
        int k_used = 0;
        try {
            ReturnsPanel window_panel = make_panel(
                panel.values.middleRows(period.start - config.window, config.window),
                panel.asset_ids);
            const auto outcome = resolve_estimate(window_panel, estimator);
            assembled = outcome.estimate.assembled;
            k_used = outcome.k;
        } catch (const Error&) {
            for (auto& report : reports) ++report.skipped_periods;
            continue;
        }
        const Matrix holding =
            panel.values.middleRows(period.start, period.end - period.start);
        for (std::size_t ci = 0; ci < config.c_grid.size(); ++ci) {
            SolverOptions opts;
            opts.repair_pd = config.repair_pd;
            if (warm_weights[ci].size() > 0) opts.warm_weights = &warm_weights[ci];
            const auto solution = min_variance_weights(assembled, config.c_grid[ci], opts);
            warm_weights[ci] = solution.weights;
            auto& report = reports[ci];
            report.period_start.push_back(period.start);
            report.period_label.push_back(period.label);
            report.k_used.push_back(k_used);
            report.risks.push_back(realized_risk(solution.weights, holding));
        }
    }
    for (auto& report : reports) {
        double sum = 0.0;
        for (double r : report.risks) sum += r;
        report.overall_risk = report.risks.empty()
                                  ? std::numeric_limits<double>::quiet_NaN()
                                  : sum / static_cast<double>(report.risks.size());
    }
    return reports;
}

}  // namespace multipoet
