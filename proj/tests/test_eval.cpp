#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "plrn/eval.hpp"
#include "plrn/rng.hpp"

using namespace plrn;

namespace {

// Discretized-overlap oracle: counts covered cells on a uniform grid.
// Endpoints aligned to the grid make the count exact.
double tiou_grid(double g_s, double g_e, double p_s, double p_e, int cells) {
    const int gs = static_cast<int>(std::lround(g_s * cells));
    const int ge = static_cast<int>(std::lround(g_e * cells));
    const int ps = static_cast<int>(std::lround(p_s * cells));
    const int pe = static_cast<int>(std::lround(p_e * cells));
    int inter = 0, uni = 0;
    for (int c = 0; c < cells; ++c) {
        const bool a = c >= gs && c < ge;
        const bool b = c >= ps && c < pe;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

}  // namespace

TEST_CASE("tiou on identical, overlapping and disjoint intervals", "[eval]") {
    CHECK(tiou(0.2, 0.6, 0.2, 0.6) == Catch::Approx(1.0));
    CHECK(tiou(0.0, 0.5, 0.25, 0.75) == Catch::Approx(1.0 / 3));
    CHECK(tiou(0.0, 0.2, 0.5, 0.7) == 0.0);  // raw formula would be negative
    CHECK_THROWS_AS(tiou(0.5, 0.5, 0.1, 0.2), DataError);
}

TEST_CASE("tiou matches the discretized-overlap oracle", "[eval]") {
    const int cells = 10000;
    Rng rng(1);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        // grid-aligned endpoints keep the cell count exact
        const int gs = rng.uniform_int(0, cells - 100);
        const int ge = gs + rng.uniform_int(50, cells - gs);
        const int ps = rng.uniform_int(0, cells - 1);
        const int pe = ps + rng.uniform_int(0, cells - ps);
        const double g_s = gs / double(cells), g_e = ge / double(cells);
        const double p_s = ps / double(cells), p_e = pe / double(cells);
        const double direct = tiou(g_s, g_e, p_s, p_e);
        const double grid = tiou_grid(g_s, g_e, p_s, p_e, cells);
        worst = std::max(worst, std::fabs(direct - grid));
    }
    CHECK(worst < 5e-4);
}

TEST_CASE("tiou symmetry shift-invariance and range", "[eval]") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const double a_s = rng.uniform(0.0, 0.6), a_e = a_s + rng.uniform(0.05, 0.3);
        const double b_s = rng.uniform(0.0, 0.6), b_e = b_s + rng.uniform(0.05, 0.3);
        const double v = tiou(a_s, a_e, b_s, b_e);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(v == Catch::Approx(tiou(b_s, b_e, a_s, a_e)));
        const double shift = rng.uniform(0.0, 1.0 - std::max(a_e, b_e));
        CHECK(tiou(a_s + shift, a_e + shift, b_s + shift, b_e + shift) ==
              Catch::Approx(v).margin(1e-12));
        if (v == 1.0) {
            CHECK(a_s == Catch::Approx(b_s));
            CHECK(a_e == Catch::Approx(b_e));
        }
    }
}

TEST_CASE("recall uses a strict threshold", "[eval]") {
    CHECK(recall_at({1.0, 1.0}, 0.5) == 100.0);
    CHECK(recall_at({0.5}, 0.5) == 0.0);
    CHECK(recall_at({0.31, 0.49, 0.71, 0.05}, 0.3) == 75.0);
    CHECK_THROWS_AS(recall_at({}, 0.5), DataError);
}

TEST_CASE("miou is the mean as a percentage", "[eval]") {
    CHECK(miou({1.0}) == 100.0);
    CHECK(miou({0.0, 1.0}) == 50.0);
    CHECK_THROWS_AS(miou({}), DataError);
}

TEST_CASE("recall is monotone nonincreasing in the threshold", "[eval]") {
    Rng rng(3);
    std::vector<double> tious;
    for (int i = 0; i < 300; ++i) tious.push_back(rng.uniform());
    auto rep = evaluate_tious(tious);
    CHECK(rep.recall(0.3) >= rep.recall(0.5));
    CHECK(rep.recall(0.5) >= rep.recall(0.7));
    CHECK(rep.miou >= 0.0);
    CHECK(rep.miou <= 100.0);
}

TEST_CASE("report formatting contains the metric columns", "[eval]") {
    auto rep = evaluate_tious({0.2, 0.6, 0.9});
    const auto table = format_report_table(rep);
    CHECK(table.find("R@0.30") != std::string::npos);
    CHECK(table.find("mIoU") != std::string::npos);
    const auto csv = format_report_csv(rep);
    CHECK(csv.find("R@0.30,R@0.50,R@0.70,mIoU,samples") != std::string::npos);
}
