#pragma once

#include <memory>
#include <variant>
#include <vector>

#include "sdparse/core.hpp"
#include "sdparse/cpd.hpp"
#include "sdparse/tensor.hpp"

namespace sdparse {

/// Second-order scores in factored form; the tensors are never expanded.
struct CpdScores {
    CpdFactors sib;
    CpdFactors cop;
    CpdFactors grd;
};

/// Materialized second-order scores. Held by shared_ptr so a benchmark can
/// reuse one large tensor for several relation slots without copying.
struct DenseScores {
    std::shared_ptr<const DenseFactor> sib;
    std::shared_ptr<const DenseFactor> cop;
    std::shared_ptr<const DenseFactor> grd;
};

/// First-order arc scores plus the three second-order score sets. All three
/// relations share one representation kind per inference run.
struct ScoreSet {
    Tensor3 arc;  // (n+1) x (n+1) x L
    std::variant<CpdScores, DenseScores> second_order;

    std::size_t positions() const { return arc.d0; }
    std::size_t num_labels() const { return arc.d2; }
    bool is_cpd() const { return std::holds_alternative<CpdScores>(second_order); }

    const CpdScores& cpd() const { return std::get<CpdScores>(second_order); }
    const DenseScores& dense() const { return std::get<DenseScores>(second_order); }

    void validate() const;
};

/// The aggregated per-cell scores -F of one iteration: the arc score plus
/// the messages each cell receives from its sibling, co-parent and
/// grandparent neighbors under the current posterior.
struct NegEnergyField {
    Tensor3 negF;  // (n+1) x (n+1) x L
};

/// E(y) for a discrete graph or a relaxed posterior. The three second-order
/// sums carry the 1/2 factor. The factored path evaluates the sums through
/// rank-space contractions without materializing any order-5 tensor.
double energy(const ScoreSet& scores, const Tensor3& y);
double energy(const ScoreSet& scores, const Posterior& q);
double energy(const ScoreSet& scores, const LabeledGraph& g);

/// One aggregation step over materialized tensors:
///   -F[i,j,a] = s_arc[i,j,a] + sum_{k,b} ( s_sib[i,j,k,a,b] q[i,k,b]
///             + s_cop[i,j,k,a,b] q[k,j,b] + s_grd[i,j,k,a,b] q[j,k,b] )
/// O((n+1)^3 L^2) time.
NegEnergyField naive_update(const ScoreSet& scores, const Posterior& q);

/// Factored message for one relation, O((n+1)^2 L R) time:
/// equals the corresponding dense contraction of materialize(f) with q.
Tensor3 cpd_update_sib(const CpdFactors& f, const Posterior& q);
Tensor3 cpd_update_cop(const CpdFactors& f, const Posterior& q);
Tensor3 cpd_update_grd(const CpdFactors& f, const Posterior& q);

/// Dispatches on f.relation.
Tensor3 cpd_update(const CpdFactors& f, const Posterior& q);

/// Cached inner contraction of one factored update, needed by the reverse
/// pass: G[x,r] = sum_{k,b} K[k,r] B[b,r] q'[x,k,b] with q' the
/// relation-specific view of q.
struct CpdUpdateTrace {
    Mat inner;  // (n+1) x R
};

/// As cpd_update, optionally capturing the inner contraction.
Tensor3 cpd_update_traced(const CpdFactors& f, const Tensor3& q, CpdUpdateTrace* trace);

/// Reverse pass of cpd_update_traced: given d(loss)/d(output), accumulates
/// gradients into the factor matrices and the posterior.
struct CpdFactorGrads {
    Mat I, J, K, A, B;
};
void cpd_update_backward(const CpdFactors& f, const Tensor3& q,
                         const CpdUpdateTrace& trace, const Tensor3& d_out,
                         CpdFactorGrads& d_f, Tensor3& d_q);

/// Aggregation step for either representation kind.
NegEnergyField aggregate(const ScoreSet& scores, const Posterior& q);

/// Row-wise softmax with max subtraction, then structural clamping.
Posterior softmax_rows(const Tensor3& negF);

/// One mean-field iteration: aggregate, softmax, clamp.
Posterior mf_step(const ScoreSet& scores, const Posterior& q);

/// Fixed-iteration inference. q0 is the row softmax of the arc scores;
/// root-dependent and self-arc rows are pinned to NULL-one-hot throughout.
Posterior infer(const ScoreSet& scores, std::size_t iters);

/// Full unrolled trajectory, for training and for the naive-vs-factored
/// equivalence checks. fields[m] is -F^m with fields[0] = s_arc;
/// posteriors[m] is the clamped softmax of fields[m]. Sizes are iters + 1.
struct Trajectory {
    std::vector<Tensor3> fields;
    std::vector<Posterior> posteriors;
};
Trajectory infer_trace(const ScoreSet& scores, std::size_t iters);

}  // namespace sdparse
