#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <multipoet/csv.hpp>
#include <multipoet/estimators.hpp>
#include <multipoet/portfolio.hpp>
#include <multipoet/simulation.hpp>

using namespace multipoet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("multipoet_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MULTIPOET_BIN) + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

}  // namespace

TEST_CASE("estimate samcov matches the library computation") {
    TempDir dir;
    Philox rng = make_stream(201, Stream::generic);
    Matrix values(10, 3);
    for (int t = 0; t < 10; ++t) {
        for (int i = 0; i < 3; ++i) values(t, i) = rng.normal();
    }
    const auto panel = make_panel(values, {"a", "b", "c"});
    write_returns_csv(dir.file("r.csv"), panel);

    REQUIRE(run_cli("estimate --returns " + dir.file("r.csv") + " --method samcov --out " +
                    dir.file("out")) == 0);
    const Matrix written = read_matrix_csv(dir.file("out") + "/covariance.csv");
    CHECK((written - sample_covariance(panel)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("estimate dpoet degenerates to samcov with one group and no factors") {
    TempDir dir;
    Philox rng = make_stream(202, Stream::generic);
    Matrix values(20, 4);
    for (int t = 0; t < 20; ++t) {
        for (int i = 0; i < 4; ++i) values(t, i) = rng.normal();
    }
    write_returns_csv(dir.file("r.csv"), make_panel(values, {"a", "b", "c", "d"}));
    write_file(dir.file("m.csv"), "asset_id,group\na,g1\nb,g1\nc,g1\nd,g1\n");

    REQUIRE(run_cli("estimate --returns " + dir.file("r.csv") + " --membership " +
                    dir.file("m.csv") +
                    " --method dpoet --k 0 --r 0 --tau 0 --out " + dir.file("dp")) == 0);
    REQUIRE(run_cli("estimate --returns " + dir.file("r.csv") + " --method samcov --out " +
                    dir.file("sc")) == 0);
    CHECK(slurp(dir.file("dp") + "/covariance.csv") == slurp(dir.file("sc") + "/covariance.csv"));
}

TEST_CASE("select reports the factor counts of an exported model") {
    TempDir dir;
    const auto dgp = generate_model(200, 300, 10, 3, 2, 0.3, 203);
    write_returns_csv(dir.file("r.csv"), simulate_panel(dgp, 204));
    const std::string out = dir.file("sel.csv");
    REQUIRE(run_cli("select --returns " + dir.file("r.csv") + " --kmax 30 --csv > " + out) == 0);
    const std::string report = slurp(out);
    CHECK(report.find("variant,multi_level") != std::string::npos);
    CHECK(report.find("k_hat,3") != std::string::npos);
}

TEST_CASE("simulate writes the error table deterministically") {
    TempDir dir;
    const std::string base = "simulate --values 30 --J 3 --T 60 --k 1 --rj 1 --reps 2 "
                             "--methods samcov,dpoet --seed 7 --factors true --out ";
    REQUIRE(run_cli(base + dir.file("a")) == 0);
    REQUIRE(run_cli(base + dir.file("b")) == 0);
    const std::string csv = slurp(dir.file("a") + "/errors.csv");
    CHECK(csv == slurp(dir.file("b") + "/errors.csv"));

    // header + 2 methods x 3 norms
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK(csv.find("grid,method,norm,mean,stderr,reps") == 0);
    CHECK(slurp(dir.file("a") + "/manifest.txt").find("seed=7") != std::string::npos);
}

TEST_CASE("backtest with the identity stub gives equal-weight risks") {
    TempDir dir;
    Philox rng = make_stream(205, Stream::generic);
    const int p = 6;
    Matrix values(60, p);
    for (int t = 0; t < 60; ++t) {
        for (int i = 0; i < p; ++i) values(t, i) = rng.normal();
    }
    const auto panel = make_panel(values);
    write_returns_csv(dir.file("r.csv"), panel);

    REQUIRE(run_cli("backtest --returns " + dir.file("r.csv") +
                    " --method identity --window 20 --hold 4 --c-grid 1,2 --out " +
                    dir.file("bt")) == 0);
    const std::string risks = slurp(dir.file("bt") + "/risks.csv");
    CHECK(risks.find("c,method,k,period,label,realized_risk") == 0);

    const Vector equal = Vector::Constant(p, 1.0 / p);
    const double first_risk = realized_risk(equal, values.middleRows(20, 4));
    CHECK(risks.find(format_g17(first_risk)) != std::string::npos);

    REQUIRE(run_cli("backtest --returns " + dir.file("r.csv") +
                    " --method identity --window 20 --hold 4 --c-grid 1,2 --out " +
                    dir.file("bt2")) == 0);
    CHECK(risks == slurp(dir.file("bt2") + "/risks.csv"));
}

TEST_CASE("cluster detection is logged against supplied truth") {
    TempDir dir;
    const auto dgp = generate_model(60, 300, 3, 1, 2, 0.3, 406);
    const auto panel = simulate_panel(dgp, 407);
    write_returns_csv(dir.file("r.csv"), panel);
    std::ostringstream membership;
    membership << "asset_id,group\n";
    for (int i = 0; i < 60; ++i) {
        membership << panel.asset_ids[static_cast<std::size_t>(i)] << ",g"
                   << dgp.groups.membership[static_cast<std::size_t>(i)] << "\n";
    }
    write_file(dir.file("m.csv"), membership.str());

    REQUIRE(run_cli("estimate --returns " + dir.file("r.csv") + " --membership " +
                    dir.file("m.csv") + " --method dpoet --k 1 --cluster 3 --seed 5 --out " +
                    dir.file("out")) == 0);
    const std::string log = slurp(dir.file("out") + "/estimate_log.txt");
    CHECK(log.find("cluster_K=3") != std::string::npos);
    CHECK(log.find("cluster_misclassification=0\n") != std::string::npos);
    CHECK(fs::exists(dir.file("out") + "/clusters.csv"));
}

TEST_CASE("flags can come from a flat key=value config file") {
    TempDir dir;
    Philox rng = make_stream(208, Stream::generic);
    Matrix values(12, 3);
    for (int t = 0; t < 12; ++t) {
        for (int i = 0; i < 3; ++i) values(t, i) = rng.normal();
    }
    write_returns_csv(dir.file("r.csv"), make_panel(values, {"a", "b", "c"}));
    write_file(dir.file("est.conf"),
               "[estimate]\nmethod=poet\nk=1\nout=" + dir.file("out") + "\n");
    REQUIRE(run_cli("--config " + dir.file("est.conf") + " estimate --returns " +
                    dir.file("r.csv")) == 0);
    CHECK(fs::exists(dir.file("out") + "/covariance.csv"));
    CHECK(slurp(dir.file("out") + "/estimate_log.txt").find("method=poet") !=
          std::string::npos);
    // flags override config values
    REQUIRE(run_cli("--config " + dir.file("est.conf") + " estimate --returns " +
                    dir.file("r.csv") + " --method samcov --out " + dir.file("o2")) == 0);
    CHECK(slurp(dir.file("o2") + "/estimate_log.txt").find("method=samcov") !=
          std::string::npos);
    // unknown keys are rejected
    write_file(dir.file("bad.conf"), "[estimate]\ndefinitely_not_a_flag=1\n");
    CHECK(run_cli("--config " + dir.file("bad.conf") + " estimate --returns " +
                  dir.file("r.csv") + " --out " + dir.file("x")) == 2);
}

TEST_CASE("configuration and input errors exit with code 2") {
    TempDir dir;
    CHECK(run_cli("estimate --returns " + dir.file("missing.csv") + " --out " +
                  dir.file("x")) == 2);

    write_file(dir.file("bad.csv"), "A,B\n1,2\n3,oops\n");
    CHECK(run_cli("estimate --returns " + dir.file("bad.csv") + " --out " + dir.file("x")) == 2);

    write_file(dir.file("r.csv"), "A,B\n1,2\n2,1\n0,1\n");
    write_file(dir.file("m.csv"), "asset_id,group\nA,g1\n");
    CHECK(run_cli("estimate --returns " + dir.file("r.csv") + " --membership " +
                  dir.file("m.csv") + " --method dpoet --out " + dir.file("x")) == 2);

    CHECK(run_cli("estimate --returns " + dir.file("r.csv") + " --method nope --out " +
                  dir.file("x")) == 2);
    CHECK(run_cli("estimate") == 2);  // missing required option
    CHECK(run_cli("backtest --returns " + dir.file("r.csv") + " --method identity "
                  "--window 2 --c-grid 0.5 --out " + dir.file("x")) == 2);
}
