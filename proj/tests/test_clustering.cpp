#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <multipoet/clustering.hpp>
#include <multipoet/rng.hpp>
#include <multipoet/simulation.hpp>

using namespace multipoet;

TEST_CASE("absolute correlation adjacency") {
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 4;
    d(1, 1) = 9;
    CHECK(abs_correlation_adjacency(d) == Matrix::Identity(2, 2));

    Matrix negative(2, 2);
    negative << 1, -0.5, -0.5, 1;
    const Matrix adj = abs_correlation_adjacency(negative);
    CHECK(adj(0, 1) == Catch::Approx(0.5));
    CHECK(adj(0, 0) == 1.0);

    Matrix blocks = Matrix::Zero(4, 4);
    blocks.topLeftCorner(2, 2) << 1, .6, .6, 1;
    blocks.bottomRightCorner(2, 2) << 2, .8, .8, 2;
    const Matrix block_adj = abs_correlation_adjacency(blocks);
    CHECK(block_adj(0, 2) == 0.0);
    CHECK(block_adj(1, 3) == 0.0);
    CHECK(block_adj(2, 3) == Catch::Approx(0.4));

    Matrix bad = Matrix::Identity(2, 2);
    bad(1, 1) = 0.0;
    CHECK_THROWS_AS(abs_correlation_adjacency(bad), InvalidResidualDiagonal);
}

TEST_CASE("regularized laplacian") {
    CHECK((regularized_laplacian(Matrix::Identity(3, 3), 0.0) - Matrix::Identity(3, 3))
              .cwiseAbs()
              .maxCoeff() < 1e-14);
    const Matrix ones = Matrix::Ones(2, 2);
    CHECK((regularized_laplacian(ones, 0.0) - Matrix::Constant(2, 2, 0.5))
              .cwiseAbs()
              .maxCoeff() < 1e-14);
    // auto regularization uses the average degree (2 here), so D_a = 4 I
    CHECK((regularized_laplacian(ones) - Matrix::Constant(2, 2, 0.25)).cwiseAbs().maxCoeff() <
          1e-14);
    CHECK_THROWS_AS(regularized_laplacian(ones, -1.0), InvalidInput);
}

TEST_CASE("kmeans on planted clouds") {
    Philox rng = make_stream(70, Stream::generic);
    Matrix rows(40, 2);
    std::vector<int> truth;
    for (int i = 0; i < 40; ++i) {
        const bool second = i >= 20;
        rows(i, 0) = (second ? 10.0 : 0.0) + 0.3 * rng.normal();
        rows(i, 1) = (second ? -4.0 : 0.0) + 0.3 * rng.normal();
        truth.push_back(second ? 2 : 1);
    }
    const auto assignment = kmeans(rows, 2, 1, 10);
    CHECK(misclassification_rate(assignment, truth) == 0.0);
    CHECK(assignment.inertia > 0.0);

    SECTION("fixed seed gives identical labels") {
        const auto again = kmeans(rows, 2, 1, 10);
        CHECK(again.labels == assignment.labels);
        CHECK(again.inertia == assignment.inertia);
    }
    SECTION("n distinct points with K = n get singleton clusters") {
        Matrix pts(3, 1);
        pts << 0.0, 5.0, 9.0;
        const auto singletons = kmeans(pts, 3, 2, 10);
        CHECK(singletons.inertia == Catch::Approx(0.0).margin(1e-12));
        std::vector<int> sorted = singletons.labels;
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == std::vector<int>{1, 2, 3});
    }
    SECTION("duplicated points force an empty cluster failure") {
        Matrix dup(3, 1);
        dup << 1.0, 1.0, 2.0;
        CHECK_THROWS_AS(kmeans(dup, 3, 3, 5), ClusteringFailed);
    }
    SECTION("bounds") {
        CHECK_THROWS_AS(kmeans(rows, 41, 1, 10), InvalidInput);
        CHECK_THROWS_AS(kmeans(rows, 2, 1, 0), InvalidInput);
    }
}

TEST_CASE("rsc_cluster recovers exact block structure") {
    // noiseless two-block covariance remainder
    Matrix sigma = Matrix::Identity(10, 10);
    std::vector<int> truth;
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 10; ++j) {
            const bool same = (i < 4) == (j < 4);
            if (i != j && same) sigma(i, j) = 0.4;
        }
        truth.push_back(i < 4 ? 1 : 2);
    }
    const auto assignment = rsc_cluster(sigma, 2, 5);
    CHECK(misclassification_rate(assignment, truth) == 0.0);

    SECTION("K = p yields singletons") {
        const auto singles = rsc_cluster(sigma, 10, 6);
        std::vector<int> sorted = singles.labels;
        std::sort(sorted.begin(), sorted.end());
        for (int i = 0; i < 10; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i + 1);
    }
    SECTION("K below 2 is rejected") {
        CHECK_THROWS_AS(rsc_cluster(sigma, 1, 5), InvalidInput);
    }
    SECTION("invariant to positive rescaling") {
        const auto scaled = rsc_cluster(1e3 * sigma, 2, 5);
        CHECK(scaled.labels == assignment.labels);
    }
    SECTION("weak but exact blocks still recover perfectly") {
        Matrix faint = Matrix::Identity(12, 12);
        std::vector<int> labels;
        for (int i = 0; i < 12; ++i) {
            labels.push_back(i / 4 + 1);
            for (int j = 0; j < 12; ++j) {
                if (i != j && i / 4 == j / 4) faint(i, j) = 0.1;
            }
        }
        CHECK(misclassification_rate(rsc_cluster(faint, 3, 8), labels) == 0.0);
    }
}

TEST_CASE("rsc_cluster on a simulated remainder") {
    const auto dgp = generate_model(100, 300, 5, 2, 2, 0.3, 71);
    const auto panel = simulate_panel(dgp, 72);
    const auto remainder = principal_truncation(sample_covariance(panel), 2).second;
    const auto assignment = rsc_cluster(remainder, 5, 7);
    CHECK(misclassification_rate(assignment, dgp.groups.membership) <= 0.05);
}

TEST_CASE("misclassification rate") {
    CHECK(misclassification_rate({1, 1, 2, 2}, {1, 1, 2, 2}) == 0.0);
    CHECK(misclassification_rate({2, 2, 1, 1}, {1, 1, 2, 2}) == 0.0);  // label swap
    CHECK(misclassification_rate({1, 1, 2, 2}, {1, 2, 2, 2}) == Catch::Approx(0.25));
    CHECK_THROWS_AS(misclassification_rate({1, 2}, {1, 2, 1}), InvalidInput);
    CHECK_THROWS_AS(misclassification_rate({0, 1}, {1, 1}), InvalidInput);

    SECTION("invariant under relabeling either argument") {
        Philox rng = make_stream(73, Stream::generic);
        std::vector<int> est, truth;
        for (int i = 0; i < 60; ++i) {
            est.push_back(1 + static_cast<int>(rng.next_below(4)));
            truth.push_back(1 + static_cast<int>(rng.next_below(4)));
        }
        const double base = misclassification_rate(est, truth);
        std::vector<int> relabeled = est;
        for (int& label : relabeled) label = label % 4 + 1;  // cyclic permutation
        CHECK(misclassification_rate(relabeled, truth) == Catch::Approx(base));
        std::vector<int> truth_relabeled = truth;
        for (int& label : truth_relabeled) label = 5 - label;  // reversal
        CHECK(misclassification_rate(est, truth_relabeled) == Catch::Approx(base));
    }
    SECTION("assignment path above 12 labels matches a planted flip count") {
        Philox rng = make_stream(74, Stream::generic);
        const int n = 700, labels = 14;
        std::vector<int> truth;
        for (int i = 0; i < n; ++i) truth.push_back(1 + static_cast<int>(i % labels));
        std::vector<int> est = truth;
        for (int& label : est) label = label % labels + 1;  // hide behind a permutation
        // flip 35 entries to a deterministic wrong label
        for (int i = 0; i < 35; ++i) {
            const auto at = static_cast<std::size_t>(rng.next_below(n));
            est[at] = est[at] % labels + 1;
        }
        const double rate = misclassification_rate(est, truth);
        CHECK(rate <= 35.0 / n + 1e-12);
        CHECK(rate > 0.0);
    }
}

TEST_CASE("assignment solver agrees with brute force on small instances") {
    Philox rng = make_stream(75, Stream::generic);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(4));
        std::vector<std::vector<double>> weights(
            static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
        for (auto& row : weights) {
            for (double& w : row) w = std::floor(100.0 * rng.next_double());
        }
        const auto chosen = detail::max_assignment(weights);
        double solver_total = 0.0;
        for (int i = 0; i < n; ++i) {
            solver_total += weights[static_cast<std::size_t>(i)]
                                   [static_cast<std::size_t>(chosen[static_cast<std::size_t>(i)])];
        }
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        double best = 0.0;
        do {
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                total += weights[static_cast<std::size_t>(i)]
                                [static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
            }
            best = std::max(best, total);
        } while (std::next_permutation(perm.begin(), perm.end()));
        CHECK(solver_total == Catch::Approx(best));
    }
}
