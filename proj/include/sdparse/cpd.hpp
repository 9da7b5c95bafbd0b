#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>

#include "sdparse/core.hpp"
#include "sdparse/tensor.hpp"

namespace sdparse {

/// The three second-order relation types: two arcs sharing a head (sibling),
/// sharing a dependent (co-parent), or chained head-of-head (grandparent).
enum class Relation : std::uint64_t { Sibling = 0, CoParent = 1, Grandparent = 2 };

const char* relation_name(Relation r);

/// Rank-R factored form of an order-5 score tensor over
/// (head, dependent, other-endpoint, label, other-label):
///
///   s[i,j,k,a,b] = sum_r I[i,r] * J[j,r] * K[k,r] * A[a,r] * B[b,r]
///
/// This is the native parameterization: the scorer emits these matrices
/// directly and the full tensor exists only when an oracle materializes it.
struct CpdFactors {
    Relation relation = Relation::Sibling;
    Mat I;  // (n+1) x R
    Mat J;  // (n+1) x R
    Mat K;  // (n+1) x R
    Mat A;  // L x R
    Mat B;  // L x R

    std::size_t positions() const { return I.rows; }
    std::size_t num_labels() const { return A.rows; }
    std::size_t rank() const { return I.cols; }

    /// Shape and finiteness invariants.
    void validate() const;
};

/// Fully materialized order-5 score tensor. Exists as an oracle and as the
/// baseline for the speed comparison; guarded by an element budget so the
/// cubic-in-n, quadratic-in-L blowup fails fast instead of exhausting memory.
struct DenseFactor {
    Relation relation = Relation::Sibling;
    std::size_t positions = 0;   // n+1
    std::size_t num_labels = 0;  // L
    std::vector<double> s;       // row-major [i][j][k][a][b]

    double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t a, std::size_t b) {
        return s[(((i * positions + j) * positions + k) * num_labels + a) * num_labels + b];
    }
    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t a,
              std::size_t b) const {
        return s[(((i * positions + j) * positions + k) * num_labels + a) * num_labels + b];
    }

    /// Pointer to the contiguous L x L label block at (i, j, k).
    const double* block(std::size_t i, std::size_t j, std::size_t k) const {
        return s.data() + ((i * positions + j) * positions + k) * num_labels * num_labels;
    }
};

/// Default cap on (n+1)^3 * L^2 for any materialization.
inline constexpr std::size_t kDefaultElementBudget = std::size_t{1} << 28;

/// Number of elements a dense tensor over these shapes would hold.
std::size_t dense_element_count(std::size_t positions, std::size_t num_labels);

/// Expands factors into the dense order-5 tensor. Throws BudgetError when the
/// element count exceeds `element_budget`.
DenseFactor materialize(const CpdFactors& f,
                        std::size_t element_budget = kDefaultElementBudget);

/// I.i.d. uniform factors in [-scale, scale], reproducible from the seed.
CpdFactors random_factors(std::size_t n, std::size_t num_labels, std::size_t rank,
                          double scale, std::uint64_t seed,
                          Relation rel = Relation::Sibling);

/// Concatenation along the rank axis; materializes to the sum of the parts.
CpdFactors concat_rank(const CpdFactors& f, const CpdFactors& g);

/// Flat binary checkpoint blob: little-endian u64 header
/// (relation tag, n, L, R) followed by the row-major f64 payloads of
/// I, J, K, A, B in that order.
void save_factors(std::ostream& out, const CpdFactors& f);
CpdFactors load_factors(std::istream& in);

}  // namespace sdparse
