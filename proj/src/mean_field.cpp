#include "sdparse/mean_field.hpp"

#include <cmath>

namespace sdparse {

void ScoreSet::validate() const {
    const std::size_t np = positions();
    const std::size_t L = num_labels();
    if (arc.d1 != np) throw std::invalid_argument("arc score tensor must be square");
    if (is_cpd()) {
        const CpdScores& c = cpd();
        for (const CpdFactors* f : {&c.sib, &c.cop, &c.grd}) {
            f->validate();
            if (f->positions() != np || f->num_labels() != L)
                throw std::invalid_argument("factor shape disagrees with arc scores");
        }
    } else {
        const DenseScores& d = dense();
        for (const auto* p : {&d.sib, &d.cop, &d.grd}) {
            if (!*p) throw std::invalid_argument("missing dense factor");
            if ((*p)->positions != np || (*p)->num_labels != L)
                throw std::invalid_argument("dense factor shape disagrees with arc scores");
        }
    }
}

namespace {

/// out[x,r] = sum_{w,a} pos[w,r] * lab[a,r] * (transpose ? y[w,x,a] : y[x,w,a])
Mat contract_pos_label(const Tensor3& y, const Mat& pos, const Mat& lab,
                       bool transpose) {
    const std::size_t np = y.d0;
    const std::size_t L = y.d2;
    const std::size_t R = pos.cols;
    Mat out(np, R, 0.0);
    std::vector<double> tmp(R);
    for (std::size_t x = 0; x < np; ++x) {
        double* out_row = out.row(x);
        for (std::size_t w = 0; w < np; ++w) {
            const double* cell = transpose ? y.cell(w, x) : y.cell(x, w);
            std::fill(tmp.begin(), tmp.end(), 0.0);
            for (std::size_t a = 0; a < L; ++a) {
                const double v = cell[a];
                if (v == 0.0) continue;
                const double* lrow = lab.row(a);
                for (std::size_t r = 0; r < R; ++r) tmp[r] += v * lrow[r];
            }
            const double* prow = pos.row(w);
            for (std::size_t r = 0; r < R; ++r) out_row[r] += prow[r] * tmp[r];
        }
    }
    return out;
}

double factored_pair_energy(const CpdFactors& f, const Tensor3& y) {
    // sum_{ijkab} s[i,j,k,a,b] y1 y2 for the relation's arc pair, evaluated
    // in rank space.
    const std::size_t np = y.d0;
    const std::size_t R = f.rank();
    Mat left, right;
    const Mat* gate = nullptr;
    switch (f.relation) {
        case Relation::Sibling:
            // sum_r I_i (sum_{ja} J_j A_a y_ija)(sum_{kb} K_k B_b y_ikb)
            left = contract_pos_label(y, f.J, f.A, false);
            right = contract_pos_label(y, f.K, f.B, false);
            gate = &f.I;
            break;
        case Relation::CoParent:
            // sum_r J_j (sum_{ia} I_i A_a y_ija)(sum_{kb} K_k B_b y_kjb)
            left = contract_pos_label(y, f.I, f.A, true);
            right = contract_pos_label(y, f.K, f.B, true);
            gate = &f.J;
            break;
        case Relation::Grandparent:
            // sum_r J_j (sum_{ia} I_i A_a y_ija)(sum_{kb} K_k B_b y_jkb)
            left = contract_pos_label(y, f.I, f.A, true);
            right = contract_pos_label(y, f.K, f.B, false);
            gate = &f.J;
            break;
    }
    double total = 0.0;
    for (std::size_t x = 0; x < np; ++x) {
        const double* g = gate->row(x);
        const double* l = left.row(x);
        const double* r = right.row(x);
        for (std::size_t c = 0; c < R; ++c) total += g[c] * l[c] * r[c];
    }
    return total;
}

double dense_pair_energy(const DenseFactor& d, const Tensor3& y) {
    const std::size_t np = d.positions;
    const std::size_t L = d.num_labels;
    double total = 0.0;
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < np; ++j) {
            const double* y1 = y.cell(i, j);
            for (std::size_t k = 0; k < np; ++k) {
                const double* blk = d.block(i, j, k);
                const double* y2 = nullptr;
                switch (d.relation) {
                    case Relation::Sibling: y2 = y.cell(i, k); break;
                    case Relation::CoParent: y2 = y.cell(k, j); break;
                    case Relation::Grandparent: y2 = y.cell(j, k); break;
                }
                for (std::size_t a = 0; a < L; ++a) {
                    const double w = y1[a];
                    if (w == 0.0) continue;
                    const double* row = blk + a * L;
                    double acc = 0.0;
                    for (std::size_t b = 0; b < L; ++b) acc += row[b] * y2[b];
                    total += w * acc;
                }
            }
        }
    return total;
}

}  // namespace

double energy(const ScoreSet& scores, const Tensor3& y) {
    require_same_shape(scores.arc, y, "energy input");
    double neg_e = 0.0;
    for (std::size_t idx = 0; idx < y.size(); ++idx)
        neg_e += scores.arc.data[idx] * y.data[idx];

    double pair = 0.0;
    if (scores.is_cpd()) {
        const CpdScores& c = scores.cpd();
        pair += factored_pair_energy(c.sib, y);
        pair += factored_pair_energy(c.cop, y);
        pair += factored_pair_energy(c.grd, y);
    } else {
        const DenseScores& d = scores.dense();
        pair += dense_pair_energy(*d.sib, y);
        pair += dense_pair_energy(*d.cop, y);
        pair += dense_pair_energy(*d.grd, y);
    }
    neg_e += 0.5 * pair;
    return -neg_e;
}

double energy(const ScoreSet& scores, const Posterior& q) { return energy(scores, q.q); }

double energy(const ScoreSet& scores, const LabeledGraph& g) {
    return energy(scores, posterior_from_graph(g).q);
}

NegEnergyField naive_update(const ScoreSet& scores, const Posterior& q) {
    if (scores.is_cpd())
        throw std::invalid_argument("naive_update requires materialized scores");
    scores.validate();
    require_same_shape(scores.arc, q.q, "naive_update posterior");
    const DenseScores& d = scores.dense();
    const std::size_t np = scores.positions();
    const std::size_t L = scores.num_labels();

    NegEnergyField out;
    out.negF = scores.arc;  // copy: the s_arc term of the aggregation
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < np; ++j) {
            double* dst = out.negF.cell(i, j);
            for (std::size_t k = 0; k < np; ++k) {
                const double* q_ik = q.q.cell(i, k);
                const double* q_kj = q.q.cell(k, j);
                const double* q_jk = q.q.cell(j, k);
                const double* sib = d.sib->block(i, j, k);
                const double* cop = d.cop->block(i, j, k);
                const double* grd = d.grd->block(i, j, k);
                for (std::size_t a = 0; a < L; ++a) {
                    const double* srow = sib + a * L;
                    const double* crow = cop + a * L;
                    const double* grow = grd + a * L;
                    double acc = 0.0;
                    for (std::size_t b = 0; b < L; ++b)
                        acc += srow[b] * q_ik[b] + crow[b] * q_kj[b] + grow[b] * q_jk[b];
                    dst[a] += acc;
                }
            }
        }
    return out;
}

namespace {

/// All three factored updates share one skeleton:
///   U[x,k,r] = sum_b B[b,r] * qview[x,k,b]
///   G[x,r]   = sum_k K[k,r] * U[x,k,r]
///   out[i,j,a] = sum_r I[i,r] * J[j,r] * G[x(i,j),r] * A[a,r]
/// where x = i for siblings (arcs share the head) and x = j for co-parents
/// and grandparents, and qview transposes the first two axes for co-parents.
struct UpdateLayout {
    bool gate_on_head;   // x == i
    bool transpose_q;    // qview[x,k,b] = q[k,x,b]
};

UpdateLayout layout_for(Relation rel) {
    switch (rel) {
        case Relation::Sibling: return {true, false};
        case Relation::CoParent: return {false, true};
        case Relation::Grandparent: return {false, false};
    }
    return {true, false};
}

Mat inner_contraction(const CpdFactors& f, const Tensor3& q, const UpdateLayout& lay) {
    const std::size_t np = q.d0;
    const std::size_t L = q.d2;
    const std::size_t R = f.rank();
    Mat G(np, R, 0.0);
    std::vector<double> u(R);
    for (std::size_t x = 0; x < np; ++x) {
        double* g_row = G.row(x);
        for (std::size_t k = 0; k < np; ++k) {
            const double* cell = lay.transpose_q ? q.cell(k, x) : q.cell(x, k);
            std::fill(u.begin(), u.end(), 0.0);
            for (std::size_t b = 0; b < L; ++b) {
                const double v = cell[b];
                if (v == 0.0) continue;
                const double* brow = f.B.row(b);
                for (std::size_t r = 0; r < R; ++r) u[r] += v * brow[r];
            }
            const double* krow = f.K.row(k);
            for (std::size_t r = 0; r < R; ++r) g_row[r] += krow[r] * u[r];
        }
    }
    return G;
}

}  // namespace

Tensor3 cpd_update_traced(const CpdFactors& f, const Tensor3& q, CpdUpdateTrace* trace) {
    f.validate();
    if (q.d0 != f.positions() || q.d1 != f.positions() || q.d2 != f.num_labels())
        throw std::invalid_argument("posterior shape disagrees with factors");
    const UpdateLayout lay = layout_for(f.relation);
    const std::size_t np = q.d0;
    const std::size_t L = q.d2;
    const std::size_t R = f.rank();

    Mat G = inner_contraction(f, q, lay);

    Tensor3 out(np, np, L, 0.0);
    std::vector<double> v(R);
    for (std::size_t i = 0; i < np; ++i) {
        const double* irow = f.I.row(i);
        for (std::size_t j = 0; j < np; ++j) {
            const double* jrow = f.J.row(j);
            const double* grow = G.row(lay.gate_on_head ? i : j);
            for (std::size_t r = 0; r < R; ++r) v[r] = irow[r] * jrow[r] * grow[r];
            double* dst = out.cell(i, j);
            for (std::size_t a = 0; a < L; ++a) {
                const double* arow = f.A.row(a);
                double acc = 0.0;
                for (std::size_t r = 0; r < R; ++r) acc += v[r] * arow[r];
                dst[a] = acc;
            }
        }
    }
    if (trace) trace->inner = std::move(G);
    return out;
}

Tensor3 cpd_update(const CpdFactors& f, const Posterior& q) {
    return cpd_update_traced(f, q.q, nullptr);
}

Tensor3 cpd_update_sib(const CpdFactors& f, const Posterior& q) {
    if (f.relation != Relation::Sibling)
        throw std::invalid_argument("factors are not sibling factors");
    return cpd_update(f, q);
}

Tensor3 cpd_update_cop(const CpdFactors& f, const Posterior& q) {
    if (f.relation != Relation::CoParent)
        throw std::invalid_argument("factors are not co-parent factors");
    return cpd_update(f, q);
}

Tensor3 cpd_update_grd(const CpdFactors& f, const Posterior& q) {
    if (f.relation != Relation::Grandparent)
        throw std::invalid_argument("factors are not grandparent factors");
    return cpd_update(f, q);
}

void cpd_update_backward(const CpdFactors& f, const Tensor3& q,
                         const CpdUpdateTrace& trace, const Tensor3& d_out,
                         CpdFactorGrads& d_f, Tensor3& d_q) {
    const UpdateLayout lay = layout_for(f.relation);
    const std::size_t np = q.d0;
    const std::size_t L = q.d2;
    const std::size_t R = f.rank();
    const Mat& G = trace.inner;

    // M[i,j,r] = sum_a d_out[i,j,a] A[a,r]; dA accumulated in the same sweep.
    Mat M(np * np, R, 0.0);
    std::vector<double> v(R);
    for (std::size_t i = 0; i < np; ++i) {
        const double* irow = f.I.row(i);
        for (std::size_t j = 0; j < np; ++j) {
            const double* jrow = f.J.row(j);
            const double* grow = G.row(lay.gate_on_head ? i : j);
            for (std::size_t r = 0; r < R; ++r) v[r] = irow[r] * jrow[r] * grow[r];
            double* mrow = M.row(i * np + j);
            const double* drow = d_out.cell(i, j);
            for (std::size_t a = 0; a < L; ++a) {
                const double w = drow[a];
                if (w == 0.0) continue;
                const double* arow = f.A.row(a);
                double* darow = d_f.A.row(a);
                for (std::size_t r = 0; r < R; ++r) {
                    mrow[r] += w * arow[r];
                    darow[r] += w * v[r];
                }
            }
        }
    }

    // Split M across the gated and ungated position factors.
    Mat dG(np, R, 0.0);
    if (lay.gate_on_head) {
        for (std::size_t i = 0; i < np; ++i) {
            const double* irow = f.I.row(i);
            const double* grow = G.row(i);
            double* dgi = dG.row(i);
            double* di = d_f.I.row(i);
            for (std::size_t j = 0; j < np; ++j) {
                const double* mrow = M.row(i * np + j);
                const double* jrow = f.J.row(j);
                double* dj = d_f.J.row(j);
                for (std::size_t r = 0; r < R; ++r) {
                    const double m = mrow[r];
                    dgi[r] += m * jrow[r] * irow[r];
                    di[r] += m * jrow[r] * grow[r];
                    dj[r] += m * irow[r] * grow[r];
                }
            }
        }
    } else {
        for (std::size_t i = 0; i < np; ++i) {
            const double* irow = f.I.row(i);
            double* di = d_f.I.row(i);
            for (std::size_t j = 0; j < np; ++j) {
                const double* mrow = M.row(i * np + j);
                const double* jrow = f.J.row(j);
                const double* grow = G.row(j);
                double* dj = d_f.J.row(j);
                double* dgj = dG.row(j);
                for (std::size_t r = 0; r < R; ++r) {
                    const double m = mrow[r];
                    dgj[r] += m * irow[r] * jrow[r];
                    di[r] += m * jrow[r] * grow[r];
                    dj[r] += m * irow[r] * grow[r];
                }
            }
        }
    }

    // Through G: dK, dB and the posterior gradient. U is recomputed.
    std::vector<double> u(R), du(R);
    for (std::size_t x = 0; x < np; ++x) {
        const double* dgx = dG.row(x);
        for (std::size_t k = 0; k < np; ++k) {
            const double* cell = lay.transpose_q ? q.cell(k, x) : q.cell(x, k);
            std::fill(u.begin(), u.end(), 0.0);
            for (std::size_t b = 0; b < L; ++b) {
                const double qv = cell[b];
                if (qv == 0.0) continue;
                const double* brow = f.B.row(b);
                for (std::size_t r = 0; r < R; ++r) u[r] += qv * brow[r];
            }
            const double* krow = f.K.row(k);
            double* dkrow = d_f.K.row(k);
            for (std::size_t r = 0; r < R; ++r) {
                dkrow[r] += dgx[r] * u[r];
                du[r] = dgx[r] * krow[r];
            }
            double* dq_cell = lay.transpose_q ? d_q.cell(k, x) : d_q.cell(x, k);
            for (std::size_t b = 0; b < L; ++b) {
                const double* brow = f.B.row(b);
                double* dbrow = d_f.B.row(b);
                const double qv = cell[b];
                double acc = 0.0;
                for (std::size_t r = 0; r < R; ++r) {
                    acc += du[r] * brow[r];
                    dbrow[r] += du[r] * qv;
                }
                dq_cell[b] += acc;
            }
        }
    }
}

NegEnergyField aggregate(const ScoreSet& scores, const Posterior& q) {
    if (!scores.is_cpd()) return naive_update(scores, q);
    scores.validate();
    require_same_shape(scores.arc, q.q, "aggregate posterior");
    const CpdScores& c = scores.cpd();
    NegEnergyField out;
    out.negF = scores.arc;
    for (const CpdFactors* f : {&c.sib, &c.cop, &c.grd}) {
        Tensor3 msg = cpd_update_traced(*f, q.q, nullptr);
        for (std::size_t idx = 0; idx < msg.size(); ++idx)
            out.negF.data[idx] += msg.data[idx];
    }
    return out;
}

Posterior softmax_rows(const Tensor3& negF) {
    Posterior p;
    p.q = Tensor3(negF.d0, negF.d1, negF.d2);
    const std::size_t L = negF.d2;
    for (std::size_t i = 0; i < negF.d0; ++i)
        for (std::size_t j = 0; j < negF.d1; ++j) {
            const double* src = negF.cell(i, j);
            double* dst = p.q.cell(i, j);
            double mx = src[0];
            for (std::size_t l = 1; l < L; ++l) mx = std::max(mx, src[l]);
            double z = 0.0;
            for (std::size_t l = 0; l < L; ++l) {
                dst[l] = std::exp(src[l] - mx);
                z += dst[l];
            }
            const double inv = 1.0 / z;
            for (std::size_t l = 0; l < L; ++l) dst[l] *= inv;
        }
    clamp_structural(p.q);
    return p;
}

Posterior mf_step(const ScoreSet& scores, const Posterior& q) {
    return softmax_rows(aggregate(scores, q).negF);
}

Posterior infer(const ScoreSet& scores, std::size_t iters) {
    Posterior q = softmax_rows(scores.arc);
    for (std::size_t m = 0; m < iters; ++m) q = mf_step(scores, q);
    return q;
}

Trajectory infer_trace(const ScoreSet& scores, std::size_t iters) {
    Trajectory t;
    t.fields.reserve(iters + 1);
    t.posteriors.reserve(iters + 1);
    t.fields.push_back(scores.arc);
    t.posteriors.push_back(softmax_rows(scores.arc));
    for (std::size_t m = 1; m <= iters; ++m) {
        NegEnergyField f = aggregate(scores, t.posteriors.back());
        t.posteriors.push_back(softmax_rows(f.negF));
        t.fields.push_back(std::move(f.negF));
    }
    return t;
}

}  // namespace sdparse
