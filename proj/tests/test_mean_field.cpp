#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sdparse/mean_field.hpp"

using namespace sdparse;
using namespace sdparse::testing;

namespace {

ScoreSet zero_second_order(Tensor3 arc, std::size_t R = 2) {
    const std::size_t n = arc.d0 - 1;
    const std::size_t L = arc.d2;
    CpdScores c;
    c.sib = random_factors(n, L, R, 0.0, 1, Relation::Sibling);
    c.cop = random_factors(n, L, R, 0.0, 2, Relation::CoParent);
    c.grd = random_factors(n, L, R, 0.0, 3, Relation::Grandparent);
    ScoreSet s;
    s.arc = std::move(arc);
    s.second_order = std::move(c);
    return s;
}

}  // namespace

TEST_CASE("energy: zero scores give zero energy for every graph") {
    ScoreSet s = zero_second_order(Tensor3(4, 4, 3, 0.0));
    for (std::uint64_t seed = 0; seed < 5; ++seed)
        CHECK(energy(s, random_posterior(3, 3, seed)) == 0.0);
}

TEST_CASE("energy: with zero second-order scores only arc scores count") {
    Tensor3 arc = random_tensor3(3, 3, 2, 1.0, 17);
    ScoreSet s = zero_second_order(arc);
    LabeledGraph g(3, 2);
    g.set_label(1, 2, 1);
    // E = -(sum of the arc score at every cell's assigned label)
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) expect += arc(i, j, g.label(i, j));
    CHECK(energy(s, g) == doctest::Approx(-expect).epsilon(1e-12));
}

TEST_CASE("energy matches the brute-force formula on dense scores") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        auto pair = random_paired_scores(3, 2, 4, seed * 100);
        const DenseScores& d = pair.dense.dense();

        // random indicator y
        Rng rng(seed);
        LabeledGraph g(4, 2);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 1; j < 4; ++j) {
                if (i == j) continue;
                if (rng.next_unit() < 0.5) g.set_label(i, j, 1);
            }
        Tensor3 y = posterior_from_graph(g).q;
        double expect = brute_neg_energy(pair.dense.arc, *d.sib, *d.cop, *d.grd, y);
        CHECK(energy(pair.dense, y) == doctest::Approx(-expect).epsilon(1e-10));
    }
}

TEST_CASE("energy: factored and dense paths agree") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        auto pair = random_paired_scores(4, 3, 5, seed * 7);
        auto q = random_posterior(4, 3, seed);
        double ec = energy(pair.cpd, q);
        double ed = energy(pair.dense, q);
        CHECK(std::fabs(ec - ed) <= 1e-8 * std::max({1.0, std::fabs(ec), std::fabs(ed)}));
    }
}

TEST_CASE("naive_update: zero second-order scores reduce to arc scores") {
    auto pair = random_paired_scores(3, 2, 2, 5, /*scale=*/0.0);
    auto q = random_posterior(3, 2, 9);
    auto f = naive_update(pair.dense, q);
    CHECK(max_rel_dev(f.negF, pair.dense.arc, 1.0) == 0.0);
}

TEST_CASE("naive_update: all-NULL posterior with NULL-silent factors reduces to arc") {
    // Factors whose B row for NULL is zero contribute nothing when every
    // cell puts its mass on NULL.
    auto make = [](Relation rel, std::uint64_t seed) {
        auto f = random_factors(3, 3, 2, 0.6, seed, rel);
        for (std::size_t r = 0; r < f.rank(); ++r) f.B(0, r) = 0.0;
        return std::make_shared<DenseFactor>(materialize(f));
    };
    ScoreSet s;
    s.arc = random_tensor3(4, 4, 3, 1.0, 3);
    DenseScores d;
    d.sib = make(Relation::Sibling, 21);
    d.cop = make(Relation::CoParent, 22);
    d.grd = make(Relation::Grandparent, 23);
    s.second_order = std::move(d);

    Posterior null_q;
    null_q.q = Tensor3(4, 4, 3, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) null_q.q(i, j, 0) = 1.0;

    auto f = naive_update(s, null_q);
    CHECK(max_rel_dev(f.negF, s.arc, 1.0) <= 1e-15);
}

TEST_CASE("naive_update matches the brute-force aggregation") {
    auto pair = random_paired_scores(4, 3, 5, 1234);
    auto q = random_posterior(4, 3, 55);
    const DenseScores& d = pair.dense.dense();
    Tensor3 expect = brute_update(pair.dense.arc, *d.sib, *d.cop, *d.grd, q.q);
    auto got = naive_update(pair.dense, q);
    CHECK(max_rel_dev(got.negF, expect, 1.0) <= 1e-10);
}

TEST_CASE("cpd_update: zero factors give the zero message") {
    auto f = random_factors(4, 3, 4, 0.0, 1, Relation::Sibling);
    auto q = random_posterior(4, 3, 2);
    Tensor3 t = cpd_update_sib(f, q);
    for (double v : t.data) CHECK(v == 0.0);
}

TEST_CASE("cpd_update_sib: rank-1 all-ones factors sum the posterior mass") {
    const std::size_t n = 3, L = 2;
    CpdFactors f;
    f.relation = Relation::Sibling;
    f.I = Mat(n + 1, 1, 1.0);
    f.J = Mat(n + 1, 1, 1.0);
    f.K = Mat(n + 1, 1, 1.0);
    f.A = Mat(L, 1, 1.0);
    f.B = Mat(L, 1, 1.0);
    auto q = random_posterior(n, L, 31);
    Tensor3 t = cpd_update_sib(f, q);
    // every row of q sums to one, so the message is n+1 everywhere
    for (double v : t.data) CHECK(v == doctest::Approx(double(n + 1)).epsilon(1e-12));
}

TEST_CASE("factored updates match the materialize-then-contract oracle") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto q = random_posterior(5, 3, seed);
        for (Relation rel :
             {Relation::Sibling, Relation::CoParent, Relation::Grandparent}) {
            auto f = random_factors(5, 3, 4, 0.7, seed * 31 + std::uint64_t(rel), rel);
            Tensor3 fast = cpd_update(f, q);
            Tensor3 slow = brute_relation_message(materialize(f), q.q);
            CHECK(max_rel_dev(fast, slow, 1.0) <= 1e-8);
        }
    }
}

TEST_CASE("cpd_update_cop: n = 1 matches the two-term hand sum") {
    auto f = random_factors(1, 2, 3, 0.9, 77, Relation::CoParent);
    auto q = random_posterior(1, 2, 7);
    Tensor3 t = cpd_update_cop(f, q);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t a = 0; a < 2; ++a) {
                double expect = 0.0;
                for (std::size_t k = 0; k < 2; ++k)
                    for (std::size_t b = 0; b < 2; ++b) {
                        double s = 0.0;
                        for (std::size_t r = 0; r < 3; ++r)
                            s += f.I(i, r) * f.J(j, r) * f.K(k, r) * f.A(a, r) * f.B(b, r);
                        expect += s * q.q(k, j, b);
                    }
                CHECK(t(i, j, a) == doctest::Approx(expect).epsilon(1e-10));
            }
}

TEST_CASE("cpd_update_grd: one-hot posterior selects one tensor slice") {
    const std::size_t n = 3, L = 3;
    auto f = random_factors(n, L, 4, 0.8, 13, Relation::Grandparent);
    for (std::size_t r = 0; r < f.rank(); ++r) f.B(0, r) = 0.0;  // NULL-silent

    Posterior q;
    q.q = Tensor3(n + 1, n + 1, L, 0.0);
    for (std::size_t x = 0; x < n + 1; ++x)
        for (std::size_t k = 0; k < n + 1; ++k) q.q(x, k, 0) = 1.0;
    const std::size_t j0 = 2, k0 = 1, b0 = 2;
    q.q(j0, k0, 0) = 0.0;
    q.q(j0, k0, b0) = 1.0;

    Tensor3 t = cpd_update_grd(f, q);
    auto d = materialize(f);
    for (std::size_t i = 0; i < n + 1; ++i)
        for (std::size_t a = 0; a < L; ++a)
            CHECK(t(i, j0, a) == doctest::Approx(d.at(i, j0, k0, a, b0)).epsilon(1e-10));
}

TEST_CASE("softmax rows: equal scores give the uniform row") {
    Tensor3 negF(3, 3, 2, 0.0);
    auto p = softmax_rows(negF);
    CHECK(p.q(1, 2, 0) == doctest::Approx(0.5));
    CHECK(p.q(1, 2, 1) == doctest::Approx(0.5));
    CHECK(p.q(1, 0, 0) == 1.0);  // clamped
}

TEST_CASE("softmax rows: stable under huge scores") {
    Tensor3 negF(2, 2, 3, 0.0);
    negF(0, 1, 0) = 1e4;
    negF(0, 1, 1) = 1e4 - 2;
    negF(0, 1, 2) = -1e4;
    auto p = softmax_rows(negF);
    check_posterior(p);
    CHECK(p.q(0, 1, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
}

TEST_CASE("mf_step: zero second-order scores reach a fixed point immediately") {
    Tensor3 arc = random_tensor3(4, 4, 3, 1.0, 8);
    ScoreSet s = zero_second_order(arc);
    Posterior q0 = softmax_rows(arc);
    Posterior q1 = mf_step(s, q0);
    Posterior q2 = mf_step(s, q1);
    CHECK(max_rel_dev(q0.q, q1.q) == 0.0);
    CHECK(max_rel_dev(q1.q, q2.q) == 0.0);
    CHECK(max_rel_dev(infer(s, 10).q, infer(s, 11).q) == 0.0);
}

TEST_CASE("mf_step: dense and factored paths agree on equivalent scores") {
    auto pair = random_paired_scores(4, 3, 4, 77);
    auto q = random_posterior(4, 3, 6);
    Posterior pc = mf_step(pair.cpd, q);
    Posterior pd = mf_step(pair.dense, q);
    CHECK(max_rel_dev(pc.q, pd.q) <= 1e-8);
}

TEST_CASE("infer: one iteration with zero second-order scores is softmax(arc)") {
    Tensor3 arc = random_tensor3(3, 3, 2, 1.0, 4);
    ScoreSet s = zero_second_order(arc);
    auto q = infer(s, 1);
    CHECK(max_rel_dev(q.q, softmax_rows(arc).q) == 0.0);
}

TEST_CASE("oracle equivalence: factored trajectory equals dense trajectory") {
    Rng rng(20240);
    for (int trial = 0; trial < 12; ++trial) {
        std::size_t n = 2 + rng.next_below(7);   // 2..8
        std::size_t L = 1 + rng.next_below(5);   // 1..5
        std::size_t R = 1 + rng.next_below(8);   // 1..8
        std::size_t iters = 1 + rng.next_below(5);
        auto pair = random_paired_scores(n, L, R, rng.next_u64());
        auto tc = infer_trace(pair.cpd, iters);
        auto td = infer_trace(pair.dense, iters);
        for (std::size_t m = 0; m <= iters; ++m) {
            CHECK(max_rel_dev(tc.posteriors[m].q, td.posteriors[m].q) <= 1e-8);
            check_posterior(tc.posteriors[m]);
            check_posterior(td.posteriors[m]);
        }
    }
}

TEST_CASE("gradient identity: field matches the symmetrized energy gradient") {
    // The displayed update contracts each pair tensor from one side only;
    // the true gradient of the half-weighted pair energy symmetrizes over
    // both arcs of the factor. Verify both facts against central finite
    // differences of energy().
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const std::size_t n = 3, L = 2;
        auto pair = random_paired_scores(n, L, 3, seed * 13);
        const DenseScores& d = pair.dense.dense();
        auto q = random_posterior(n, L, seed);
        const std::size_t np = n + 1;

        // one-sided messages per the update rule
        Tensor3 one_sided = brute_update(pair.dense.arc, *d.sib, *d.cop, *d.grd, q.q);
        auto agg = naive_update(pair.dense, q);
        CHECK(max_rel_dev(agg.negF, one_sided, 1.0) <= 1e-12);

        // symmetrized gradient of -E at q
        Tensor3 grad(np, np, L, 0.0);
        for (std::size_t i = 0; i < np; ++i)
            for (std::size_t j = 0; j < np; ++j)
                for (std::size_t a = 0; a < L; ++a) {
                    double g = pair.dense.arc(i, j, a);
                    for (std::size_t k = 0; k < np; ++k)
                        for (std::size_t b = 0; b < L; ++b) {
                            g += 0.5 * (d.sib->at(i, j, k, a, b) * q.q(i, k, b) +
                                        d.sib->at(i, k, j, b, a) * q.q(i, k, b));
                            g += 0.5 * (d.cop->at(i, j, k, a, b) * q.q(k, j, b) +
                                        d.cop->at(k, j, i, b, a) * q.q(k, j, b));
                            g += 0.5 * (d.grd->at(i, j, k, a, b) * q.q(j, k, b) +
                                        d.grd->at(k, i, j, b, a) * q.q(k, i, b));
                        }
                    grad(i, j, a) = g;
                }

        // central differences of -energy
        const double h = 1e-5;
        double worst = 0.0;
        for (std::size_t idx = 0; idx < q.q.size(); ++idx) {
            Tensor3 plus = q.q, minus = q.q;
            plus.data[idx] += h;
            minus.data[idx] -= h;
            double fd = -(energy(pair.dense, plus) - energy(pair.dense, minus)) / (2 * h);
            double an = grad.data[idx];
            worst = std::max(worst,
                             std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)}));
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("posterior rows stay normalized through every step") {
    auto pair = random_paired_scores(5, 4, 4, 99);
    auto traj = infer_trace(pair.cpd, 6);
    for (const auto& p : traj.posteriors) check_posterior(p, 1e-9);
}

TEST_CASE("decode is invariant to per-row constant shifts of the field") {
    Tensor3 negF = random_tensor3(5, 5, 4, 2.0, 123);
    Tensor3 shifted = negF;
    Rng rng(5);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double c = rng.next_sym(7.0);
            double* row = shifted.cell(i, j);
            for (std::size_t l = 0; l < 4; ++l) row[l] += c;
        }
    CHECK(decode(softmax_rows(negF)) == decode(softmax_rows(shifted)));
}

TEST_CASE("single-label degenerate case runs end to end") {
    auto pair = random_paired_scores(3, 1, 2, 2024);
    auto q = infer(pair.cpd, 3);
    check_posterior(q);
    for (double v : q.q.data) CHECK(v == 1.0);
    CHECK(decode(q).arc_count() == 0);
    CHECK(max_rel_dev(infer(pair.dense, 3).q, q.q) == 0.0);
}

TEST_CASE("representation kinds are enforced") {
    auto pair = random_paired_scores(2, 2, 2, 6);
    auto q = random_posterior(2, 2, 1);
    CHECK_THROWS_AS((void)naive_update(pair.cpd, q), std::invalid_argument);
    auto sib = random_factors(2, 2, 2, 0.5, 1, Relation::CoParent);
    CHECK_THROWS_AS((void)cpd_update_sib(sib, q), std::invalid_argument);
}
