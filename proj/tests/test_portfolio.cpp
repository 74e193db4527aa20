#include <catch2/catch_amalgamated.hpp>

#include <multipoet/portfolio.hpp>
#include <multipoet/rng.hpp>
#include <multipoet/simulation.hpp>

using namespace multipoet;

namespace {

// independent oracle: exhaustive grid over (w1, w2) with w3 = 1 - w1 - w2
double grid_search_objective(const Matrix& sigma, double c, double step) {
    const double lo = -(c - 1.0) / 2.0 - 2.0 * step;
    const double hi = (c + 1.0) / 2.0 + 2.0 * step;
    double best = std::numeric_limits<double>::infinity();
    for (double w1 = lo; w1 <= hi; w1 += step) {
        for (double w2 = lo; w2 <= hi; w2 += step) {
            const double w3 = 1.0 - w1 - w2;
            if (std::abs(w1) + std::abs(w2) + std::abs(w3) > c) continue;
            Vector w(3);
            w << w1, w2, w3;
            best = std::min(best, w.dot(sigma * w));
        }
    }
    return best;
}

Matrix random_correlation3(std::uint64_t seed) {
    Philox rng = make_stream(seed, Stream::generic);
    Matrix z(6, 3);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 3; ++j) z(i, j) = rng.normal();
    }
    Matrix cov = symmetrized(z.transpose() * z / 6.0) + 0.3 * Matrix::Identity(3, 3);
    return cov;
}

}  // namespace

TEST_CASE("minimum variance weights, closed-form cases") {
    SECTION("identity covariance splits evenly") {
        const auto sol = min_variance_weights(Matrix::Identity(2, 2), 1.0);
        CHECK(sol.weights[0] == Catch::Approx(0.5));
        CHECK(sol.weights[1] == Catch::Approx(0.5));
        CHECK(sol.objective == Catch::Approx(0.5));
        CHECK(sol.converged);
    }
    SECTION("diagonal covariance weights by inverse variance") {
        Matrix d = Matrix::Zero(2, 2);
        d(0, 0) = 1.0;
        d(1, 1) = 4.0;
        const auto sol = min_variance_weights(d, 2.0);
        CHECK(sol.weights[0] == Catch::Approx(0.8));
        CHECK(sol.weights[1] == Catch::Approx(0.2));
        CHECK(sol.objective == Catch::Approx(0.8));
    }
    SECTION("slack exposure bound reproduces Sigma^{-1} 1 normalized") {
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            const Matrix sigma = random_correlation3(400 + seed);
            const Vector raw = sigma.llt().solve(Vector::Ones(3));
            const Vector gmv = raw / raw.sum();
            if (gmv.cwiseAbs().sum() > 4.0) continue;
            const auto sol = min_variance_weights(sigma, 4.0);
            CHECK((sol.weights - gmv).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("solver matches the grid-search oracle on the 3-asset example") {
    Matrix sigma(3, 3);
    sigma << 1, 0.5, 0.2, 0.5, 1, 0.3, 0.2, 0.3, 1;
    const auto sol = min_variance_weights(sigma, 1.2);
    const double oracle = grid_search_objective(sigma, 1.2, 1e-3);
    CHECK(sol.objective == Catch::Approx(oracle).margin(1e-3));
    CHECK(sol.weights.sum() == Catch::Approx(1.0).margin(1e-8));
    CHECK(sol.gross_exposure <= 1.2 + 1e-6);
}

TEST_CASE("feasibility and monotonicity across the exposure grid") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Matrix sigma = random_correlation3(500 + seed);
        double previous = std::numeric_limits<double>::infinity();
        for (double c : {1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0}) {
            const auto sol = min_variance_weights(sigma, c);
            CHECK(sol.weights.sum() == Catch::Approx(1.0).margin(1e-8));
            CHECK(sol.gross_exposure <= c + 1e-6);
            CHECK(sol.objective <= previous + 1e-6);  // optimum shrinks as c grows
            previous = sol.objective;
        }
    }
}

TEST_CASE("solver guards") {
    const Matrix id = Matrix::Identity(3, 3);
    CHECK_THROWS_AS(min_variance_weights(id, 0.9), InfeasibleConstraint);

    Matrix indefinite = id;
    indefinite(2, 2) = -0.5;
    CHECK_THROWS_AS(min_variance_weights(indefinite, 2.0), NotPositiveDefinite);
    SolverOptions repair;
    repair.repair_pd = true;
    const auto sol = min_variance_weights(indefinite, 2.0, repair);
    CHECK(sol.weights.sum() == Catch::Approx(1.0).margin(1e-8));
    CHECK(sol.gross_exposure <= 2.0 + 1e-6);
}

TEST_CASE("realized risk") {
    Matrix flat = Matrix::Zero(5, 2);
    CHECK(realized_risk(Vector::Constant(2, 0.5), flat) == 0.0);

    Matrix single(2, 1);
    single << 3, 4;
    CHECK(realized_risk(Vector::Ones(1), single) == Catch::Approx(std::sqrt(12.5)));

    Matrix anti(4, 2);
    anti << 1, -1, -2, 2, 0.5, -0.5, 3, -3;
    CHECK(realized_risk(Vector::Constant(2, 0.5), anti) == Catch::Approx(0.0).margin(1e-15));

    CHECK_THROWS_AS(realized_risk(Vector::Ones(3), anti), InvalidInput);
}

TEST_CASE("backtest on iid returns") {
    const int p = 20;
    Philox rng = make_stream(90, Stream::generic);
    Matrix values(160, p);
    for (int t = 0; t < 160; ++t) {
        for (int i = 0; i < p; ++i) values(t, i) = rng.normal();
    }
    const auto panel = make_panel(values);

    BacktestConfig config;
    config.window = 104;
    config.hold = 4;
    config.c_grid = {1.0};
    config.estimator.method = "samcov";
    const auto samcov_reports = backtest(panel, config);
    REQUIRE(samcov_reports.size() == 1);
    const auto& samcov_report = samcov_reports[0];
    CHECK(samcov_report.risks.size() == 14);

    config.estimator.method = "poet";
    config.estimator.k = 0;
    config.estimator.tau = 0.0;
    const auto poet_reports = backtest(panel, config);
    // POET with k=0 and tau=0 is the sample covariance
    CHECK(poet_reports[0].overall_risk == Catch::Approx(samcov_report.overall_risk));

    // risk of a near-minimum-variance portfolio on unit-variance iid data
    CHECK(samcov_report.overall_risk ==
          Catch::Approx(std::sqrt(1.0 / p)).epsilon(0.5));

    SECTION("identity stub produces the equal-weight portfolio") {
        config.estimator.method = "identity";
        const auto stub_reports = backtest(panel, config);
        const Vector equal = Vector::Constant(p, 1.0 / p);
        for (std::size_t period = 0; period < stub_reports[0].risks.size(); ++period) {
            const int start = stub_reports[0].period_start[period];
            const Matrix holding = values.middleRows(start, 4);
            CHECK(stub_reports[0].risks[period] ==
                  Catch::Approx(realized_risk(equal, holding)));
        }
    }
    SECTION("deterministic rerun") {
        config.estimator.method = "samcov";
        config.estimator.k = -1;
        config.estimator.tau = -1.0;
        const auto again = backtest(panel, config);
        CHECK(again[0].risks == samcov_report.risks);
    }
    SECTION("too short panels are rejected") {
        const auto short_panel = make_panel(values.topRows(60));
        CHECK_THROWS_AS(backtest(short_panel, config), InsufficientData);
    }
}

TEST_CASE("backtest with calendar labels rebalances monthly") {
    Philox rng = make_stream(91, Stream::generic);
    Matrix values(30, 3);
    std::vector<std::string> dates;
    for (int t = 0; t < 30; ++t) {
        for (int i = 0; i < 3; ++i) values(t, i) = rng.normal();
        const int month = 1 + t / 4;  // 4 weekly rows per synthetic month
        char buffer[16];
        std::snprintf(buffer, sizeof(buffer), "2020-%02d-07", month);
        dates.push_back(buffer);
    }
    const auto panel = make_panel(values, {}, dates);
    BacktestConfig config;
    config.window = 12;
    config.c_grid = {2.0};
    config.estimator.method = "samcov";
    const auto reports = backtest(panel, config);
    REQUIRE_FALSE(reports[0].risks.empty());
    CHECK(reports[0].period_label[0] == "2020-04");
    // every holding period is one calendar month
    for (const auto& label : reports[0].period_label) CHECK(label.size() == 7);
}

TEST_CASE("backtest under strong local factor structure") {
    // two-level panel where ignoring the local blocks misprices risk
    const auto dgp = generate_model(60, 170, 6, 3, 2, 0.3, 92);
    const auto panel = simulate_panel(dgp, 93);

    BacktestConfig config;
    config.window = 104;
    config.hold = 4;
    config.c_grid = {2.0};
    config.estimator.method = "dpoet";
    config.estimator.k = 3;
    config.estimator.r = 2;
    config.estimator.groups = dgp.groups;
    const auto dpoet_reports = backtest(panel, config);
    REQUIRE(dpoet_reports[0].risks.size() >= 12);

    config.estimator.method = "poet";
    config.estimator.groups = std::nullopt;
    const auto poet_reports = backtest(panel, config);

    CHECK(dpoet_reports[0].overall_risk <= poet_reports[0].overall_risk);
}
