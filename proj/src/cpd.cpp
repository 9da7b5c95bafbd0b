#include "sdparse/cpd.hpp"

#include <cmath>
#include <limits>
#include <istream>
#include <ostream>

namespace sdparse {

const char* relation_name(Relation r) {
    switch (r) {
        case Relation::Sibling: return "sib";
        case Relation::CoParent: return "cop";
        case Relation::Grandparent: return "grd";
    }
    return "?";
}

void CpdFactors::validate() const {
    const std::size_t np = positions();
    const std::size_t r = rank();
    if (J.rows != np || K.rows != np)
        throw std::invalid_argument("I/J/K row counts disagree");
    if (B.rows != A.rows) throw std::invalid_argument("A/B row counts disagree");
    if (J.cols != r || K.cols != r || A.cols != r || B.cols != r)
        throw std::invalid_argument("factor matrices disagree on rank");
    for (const Mat* m : {&I, &J, &K, &A, &B})
        for (double v : m->data)
            if (!std::isfinite(v)) throw NumericError("non-finite factor entry");
}

std::size_t dense_element_count(std::size_t positions, std::size_t num_labels) {
    unsigned __int128 count = positions;
    count *= positions;
    count *= positions;
    count *= num_labels;
    count *= num_labels;
    constexpr std::size_t cap = std::numeric_limits<std::size_t>::max();
    return count > cap ? cap : static_cast<std::size_t>(count);  // saturate
}

DenseFactor materialize(const CpdFactors& f, std::size_t element_budget) {
    f.validate();
    const std::size_t np = f.positions();
    const std::size_t L = f.num_labels();
    const std::size_t R = f.rank();
    const std::size_t elems = dense_element_count(np, L);
    if (elems > element_budget)
        throw BudgetError("dense tensor of " + std::to_string(elems) +
                          " elements exceeds the budget of " +
                          std::to_string(element_budget));

    DenseFactor d;
    d.relation = f.relation;
    d.positions = np;
    d.num_labels = L;
    d.s.assign(elems, 0.0);

    // Rank-outer accumulation; the label block at fixed (i, j, k) is the
    // contiguous innermost L x L slab.
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t i = 0; i < np; ++i) {
            const double vi = f.I(i, r);
            if (vi == 0.0) continue;
            for (std::size_t j = 0; j < np; ++j) {
                const double vij = vi * f.J(j, r);
                if (vij == 0.0) continue;
                for (std::size_t k = 0; k < np; ++k) {
                    const double vijk = vij * f.K(k, r);
                    double* blk =
                        d.s.data() + ((i * np + j) * np + k) * L * L;
                    for (std::size_t a = 0; a < L; ++a) {
                        const double vijka = vijk * f.A(a, r);
                        const double* brow = f.B.row(0) + r;  // stride = R
                        double* out = blk + a * L;
                        for (std::size_t b = 0; b < L; ++b)
                            out[b] += vijka * brow[b * R];
                    }
                }
            }
        }
    }
    return d;
}

CpdFactors random_factors(std::size_t n, std::size_t num_labels, std::size_t rank,
                          double scale, std::uint64_t seed, Relation rel) {
    if (num_labels < 1 || rank < 1)
        throw std::invalid_argument("need num_labels >= 1 and rank >= 1");
    Rng rng(seed);
    CpdFactors f;
    f.relation = rel;
    const std::size_t np = n + 1;
    f.I = Mat(np, rank);
    f.J = Mat(np, rank);
    f.K = Mat(np, rank);
    f.A = Mat(num_labels, rank);
    f.B = Mat(num_labels, rank);
    for (Mat* m : {&f.I, &f.J, &f.K, &f.A, &f.B})
        for (double& v : m->data) v = rng.next_sym(scale);
    return f;
}

CpdFactors concat_rank(const CpdFactors& f, const CpdFactors& g) {
    if (f.positions() != g.positions() || f.num_labels() != g.num_labels())
        throw std::invalid_argument("rank concat requires matching shapes");
    auto cat = [](const Mat& x, const Mat& y) {
        Mat out(x.rows, x.cols + y.cols);
        for (std::size_t r = 0; r < x.rows; ++r) {
            for (std::size_t c = 0; c < x.cols; ++c) out(r, c) = x(r, c);
            for (std::size_t c = 0; c < y.cols; ++c) out(r, x.cols + c) = y(r, c);
        }
        return out;
    };
    CpdFactors out;
    out.relation = f.relation;
    out.I = cat(f.I, g.I);
    out.J = cat(f.J, g.J);
    out.K = cat(f.K, g.K);
    out.A = cat(f.A, g.A);
    out.B = cat(f.B, g.B);
    return out;
}

namespace {

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw FormatError("truncated factor blob header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_mat(std::ostream& out, const Mat& m) {
    // f64 payloads are stored as raw little-endian bytes; this targets
    // little-endian IEEE-754 hosts, which is everything we build on.
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

Mat read_mat(std::istream& in, std::size_t rows, std::size_t cols) {
    Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!in) throw FormatError("truncated factor blob payload");
    return m;
}

}  // namespace

void save_factors(std::ostream& out, const CpdFactors& f) {
    f.validate();
    write_u64(out, static_cast<std::uint64_t>(f.relation));
    write_u64(out, f.positions() - 1);  // n
    write_u64(out, f.num_labels());
    write_u64(out, f.rank());
    for (const Mat* m : {&f.I, &f.J, &f.K, &f.A, &f.B}) write_mat(out, *m);
}

CpdFactors load_factors(std::istream& in) {
    const std::uint64_t rel = read_u64(in);
    if (rel > 2) throw FormatError("bad relation tag in factor blob");
    const std::size_t n = static_cast<std::size_t>(read_u64(in));
    const std::size_t L = static_cast<std::size_t>(read_u64(in));
    const std::size_t R = static_cast<std::size_t>(read_u64(in));
    if (L < 1 || R < 1) throw FormatError("bad shape in factor blob");
    CpdFactors f;
    f.relation = static_cast<Relation>(rel);
    f.I = read_mat(in, n + 1, R);
    f.J = read_mat(in, n + 1, R);
    f.K = read_mat(in, n + 1, R);
    f.A = read_mat(in, L, R);
    f.B = read_mat(in, L, R);
    f.validate();
    return f;
}

}  // namespace sdparse
