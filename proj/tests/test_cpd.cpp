#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "sdparse/cpd.hpp"

using namespace sdparse;
using namespace sdparse::testing;

namespace {

CpdFactors ones_factors(std::size_t n, std::size_t L, std::size_t R) {
    CpdFactors f;
    f.I = Mat(n + 1, R, 1.0);
    f.J = Mat(n + 1, R, 1.0);
    f.K = Mat(n + 1, R, 1.0);
    f.A = Mat(L, R, 1.0);
    f.B = Mat(L, R, 1.0);
    return f;
}

}  // namespace

TEST_CASE("materialize: rank-1 all-ones factors give the all-ones tensor") {
    auto d = materialize(ones_factors(2, 2, 1));
    for (double v : d.s) CHECK(v == 1.0);
    CHECK(d.s.size() == dense_element_count(3, 2));
}

TEST_CASE("materialize: one-hot I selects the i = 0 slab") {
    auto f = ones_factors(2, 2, 1);
    f.I.fill(0.0);
    f.I(0, 0) = 1.0;
    auto d = materialize(f);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 3; ++k)
                for (std::size_t a = 0; a < 2; ++a)
                    for (std::size_t b = 0; b < 2; ++b)
                        CHECK(d.at(i, j, k, a, b) == (i == 0 ? 1.0 : 0.0));
}

TEST_CASE("materialize matches the per-cell brute-force sum") {
    auto f = random_factors(3, 2, 4, 0.8, 42);
    auto fast = materialize(f);
    auto slow = brute_materialize(f);
    for (std::size_t idx = 0; idx < fast.s.size(); ++idx)
        CHECK(fast.s[idx] == doctest::Approx(slow.s[idx]).epsilon(1e-12));
}

TEST_CASE("materialize enforces the element budget") {
    auto f = random_factors(20, 10, 2, 1.0, 7);
    CHECK_THROWS_AS((void)materialize(f, 1000), BudgetError);
    CHECK_NOTHROW((void)materialize(f));  // default budget is ample here
}

TEST_CASE("random_factors is reproducible and seed-sensitive") {
    auto a = random_factors(4, 3, 5, 0.5, 99);
    auto b = random_factors(4, 3, 5, 0.5, 99);
    CHECK(a.I.data == b.I.data);
    CHECK(a.B.data == b.B.data);
    auto c = random_factors(4, 3, 5, 0.5, 100);
    CHECK(a.I.data != c.I.data);
}

TEST_CASE("random_factors with scale zero materializes to the zero tensor") {
    auto d = materialize(random_factors(3, 2, 3, 0.0, 5));
    for (double v : d.s) CHECK(v == 0.0);
}

TEST_CASE("rank concatenation is materialization-linear") {
    auto f = random_factors(2, 2, 3, 0.7, 1);
    auto g = random_factors(2, 2, 2, 0.7, 2);
    auto sum = materialize(concat_rank(f, g));
    auto df = materialize(f);
    auto dg = materialize(g);
    CHECK(sum.s.size() == df.s.size());
    for (std::size_t i = 0; i < sum.s.size(); ++i)
        CHECK(sum.s[i] == doctest::Approx(df.s[i] + dg.s[i]).epsilon(1e-12));
}

TEST_CASE("factor blob round-trips") {
    auto f = random_factors(5, 4, 6, 0.9, 321, Relation::Grandparent);
    std::stringstream buf;
    save_factors(buf, f);
    auto g = load_factors(buf);
    CHECK(g.relation == Relation::Grandparent);
    CHECK(g.positions() == 6);
    CHECK(g.num_labels() == 4);
    CHECK(g.rank() == 6);
    CHECK(g.I.data == f.I.data);
    CHECK(g.J.data == f.J.data);
    CHECK(g.K.data == f.K.data);
    CHECK(g.A.data == f.A.data);
    CHECK(g.B.data == f.B.data);
}

TEST_CASE("factor blob rejects truncated input") {
    auto f = random_factors(2, 2, 2, 0.5, 8);
    std::stringstream buf;
    save_factors(buf, f);
    std::string bytes = buf.str();
    std::stringstream cut(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS((void)load_factors(cut), FormatError);
}

TEST_CASE("non-finite factors are rejected") {
    auto f = random_factors(2, 2, 2, 0.5, 8);
    f.K(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(f.validate(), NumericError);
}
