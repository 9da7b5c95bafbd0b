#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sdparse/bench.hpp"

using namespace sdparse;

TEST_CASE("loglog slope recovers exact power laws") {
    std::vector<double> xs = {10, 20, 40, 80};
    std::vector<double> quad, cubic;
    for (double x : xs) {
        quad.push_back(3.0 * x * x);
        cubic.push_back(0.5 * x * x * x);
    }
    CHECK(fit_loglog_slope(xs, quad) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(fit_loglog_slope(xs, cubic) == doctest::Approx(3.0).epsilon(1e-9));
    CHECK_THROWS_AS((void)fit_loglog_slope({1.0}, {1.0}), std::invalid_argument);
}

TEST_CASE("densify: shared tensors alias, unshared ones do not") {
    ScoreSet cpd = random_cpd_scores(4, 3, 4, 9);
    ScoreSet shared = densify(cpd, kDefaultElementBudget, true);
    ScoreSet plain = densify(cpd, kDefaultElementBudget, false);
    CHECK(shared.dense().sib.get() == shared.dense().cop.get());
    CHECK(plain.dense().sib.get() != plain.dense().cop.get());
    CHECK_THROWS_AS((void)densify(cpd, 10, false), BudgetError);
}

TEST_CASE("timing returns sane positive medians") {
    ScoreSet cpd = random_cpd_scores(6, 2, 3, 4);
    double t = time_inference(cpd, 2, 3);
    CHECK(t > 0.0);
    CHECK(t < 1.0);
}

TEST_CASE("equivalence harness passes clean and flags a corrupted contraction") {
    EquivalenceOptions opts;
    opts.trials = 20;
    opts.seed = 7;
    auto clean = run_equivalence_check(opts);
    CHECK(clean.pass);
    CHECK(clean.max_deviation < 1e-8);

    opts.inject_fault = true;
    auto corrupted = run_equivalence_check(opts);
    CHECK(!corrupted.pass);
    CHECK(corrupted.max_deviation > 1e-6);
}

TEST_CASE("gradient harness passes on random tiny models") {
    GradientCheckOptions opts;
    opts.instances = 2;
    opts.coords_per_group = 4;
    opts.seed = 3;
    auto rep = run_gradient_check(opts);
    CHECK(rep.pass);
    CHECK(rep.coords_checked > 0);
}

TEST_CASE("label bench: dense grows about quadratically, factored about linearly") {
    LabelBenchOptions opts;
    opts.n = 16;
    opts.label_sizes = {20, 40};
    opts.rank = 8;
    opts.iters = 2;
    opts.repeats = 7;
    opts.seed = 2;
    auto rows = run_label_bench(opts);
    REQUIRE(rows.size() == 2);
    const double dense_ratio = rows[1].dense_seconds / rows[0].dense_seconds;
    const double cpd_ratio = rows[1].cpd_seconds / rows[0].cpd_seconds;
    // doubling L: quadratic growth lands near 4x, linear growth near 2x
    CHECK(dense_ratio >= 3.0);
    CHECK(cpd_ratio <= 2.5);
    CHECK(cpd_ratio >= 1.0);
}

TEST_CASE("label bench skips dense rows over the element budget") {
    LabelBenchOptions opts;
    opts.n = 16;
    opts.label_sizes = {4};
    opts.rank = 4;
    opts.iters = 1;
    opts.repeats = 2;
    opts.element_budget = 100;
    auto rows = run_label_bench(opts);
    CHECK(rows[0].dense_skipped);
    CHECK(rows[0].cpd_seconds > 0.0);
}
