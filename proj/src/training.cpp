#include "sdparse/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace sdparse {

double loss_from_field(const Tensor3& negF, const LabeledGraph& gold) {
    const std::size_t np = negF.d0;
    const std::size_t L = negF.d2;
    if (gold.positions() != np || gold.num_labels() != L)
        throw std::invalid_argument("gold graph shape disagrees with the field");
    double loss = 0.0;
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < np; ++j) {
            if (is_clamped_cell(i, j)) continue;
            const double* row = negF.cell(i, j);
            double mx = row[0];
            for (std::size_t l = 1; l < L; ++l) mx = std::max(mx, row[l]);
            double z = 0.0;
            for (std::size_t l = 0; l < L; ++l) z += std::exp(row[l] - mx);
            loss += mx + std::log(z) - row[gold.label(i, j)];
        }
    return loss;
}

Tape forward(const ParamStore& params, const ModelConfig& config,
             const std::vector<std::size_t>& word_ids, const LabeledGraph& gold,
             std::size_t iters) {
    Tape tape;
    tape.gold = gold;
    tape.scoring = score_sentence(params, config, word_ids);

    const CpdScores& fac = tape.scoring.factors;
    tape.fields.reserve(iters + 1);
    tape.posteriors.reserve(iters + 1);
    tape.step_traces.resize(iters);

    tape.fields.push_back(tape.scoring.s_arc);
    tape.posteriors.push_back(softmax_rows(tape.fields[0]));
    for (std::size_t m = 1; m <= iters; ++m) {
        Tensor3 field = tape.scoring.s_arc;
        const Tensor3& q_prev = tape.posteriors[m - 1].q;
        const CpdFactors* rels[3] = {&fac.sib, &fac.cop, &fac.grd};
        for (std::size_t rel = 0; rel < 3; ++rel) {
            Tensor3 msg =
                cpd_update_traced(*rels[rel], q_prev, &tape.step_traces[m - 1][rel]);
            for (std::size_t idx = 0; idx < field.size(); ++idx)
                field.data[idx] += msg.data[idx];
        }
        tape.posteriors.push_back(softmax_rows(field));
        tape.fields.push_back(std::move(field));
    }
    tape.loss = loss_from_field(tape.fields.back(), gold);
    return tape;
}

double forward_loss(const ParamStore& params, const ModelConfig& config,
                    const std::vector<std::size_t>& word_ids, const LabeledGraph& gold,
                    std::size_t iters) {
    return forward(params, config, word_ids, gold, iters).loss;
}

namespace {

/// dpre = dact * lrelu'(pre); accumulates dW, db and optionally dinput.
void mlp_backward(const Mat& input, const Mat& pre, const Mat& dact, const Mat& w,
                  Mat& dw, Mat& db, Mat* dinput) {
    const std::size_t rows = input.rows;
    const std::size_t in_dim = input.cols;
    const std::size_t out_dim = w.cols;
    std::vector<double> g(out_dim);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* prer = pre.row(r);
        const double* dar = dact.row(r);
        double* dbr = db.row(0);
        for (std::size_t c = 0; c < out_dim; ++c) {
            g[c] = dar[c] * leaky_relu_grad(prer[c]);
            dbr[c] += g[c];
        }
        const double* x = input.row(r);
        double* dx = dinput ? dinput->row(r) : nullptr;
        for (std::size_t i = 0; i < in_dim; ++i) {
            const double xi = x[i];
            const double* wrow = w.row(i);
            double* dwrow = dw.row(i);
            double acc = 0.0;
            for (std::size_t c = 0; c < out_dim; ++c) {
                dwrow[c] += xi * g[c];
                acc += g[c] * wrow[c];
            }
            if (dx) dx[i] += acc;
        }
    }
}

/// Reverse of affine_rows: out = [act ; 1] * w.
void affine_backward(const Mat& act, const Mat& w, const Mat& dout, Mat& dw,
                     Mat& dact) {
    const std::size_t rows = act.rows;
    const std::size_t k = act.cols;
    const std::size_t cols = w.cols;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* g = dout.row(r);
        const double* a = act.row(r);
        double* da = dact.row(r);
        for (std::size_t i = 0; i < k; ++i) {
            const double ai = a[i];
            const double* wrow = w.row(i);
            double* dwrow = dw.row(i);
            double acc = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                dwrow[c] += ai * g[c];
                acc += g[c] * wrow[c];
            }
            da[i] += acc;
        }
        double* dbias = dw.row(k);
        for (std::size_t c = 0; c < cols; ++c) dbias[c] += g[c];
    }
}

void biaffine_backward(const Mat& head, const Mat& child, const Mat& biaffine,
                       const Tensor3& ds, Mat& dbiaffine, Mat& dhead, Mat& dchild) {
    const std::size_t np = head.rows;
    const std::size_t k = head.cols;
    const std::size_t k1 = k + 1;
    const std::size_t L = ds.d2;

    Mat u(np, k1), du(np, k1), dc1(np, k1);
    for (std::size_t l = 0; l < L; ++l) {
        const double* wl = biaffine.row(l);
        // recompute u = [head ; 1] * W_l
        for (std::size_t i = 0; i < np; ++i) {
            const double* h = head.row(i);
            double* ur = u.row(i);
            for (std::size_t c = 0; c < k1; ++c) {
                double acc = wl[k * k1 + c];
                for (std::size_t r = 0; r < k; ++r) acc += h[r] * wl[r * k1 + c];
                ur[c] = acc;
            }
        }
        du.fill(0.0);
        dc1.fill(0.0);
        for (std::size_t i = 0; i < np; ++i) {
            double* dur = du.row(i);
            const double* ur = u.row(i);
            for (std::size_t j = 0; j < np; ++j) {
                const double g = ds(i, j, l);
                if (g == 0.0) continue;
                const double* c = child.row(j);
                double* dc = dc1.row(j);
                for (std::size_t r = 0; r < k; ++r) {
                    dur[r] += g * c[r];
                    dc[r] += g * ur[r];
                }
                dur[k] += g;
                dc[k] += g * ur[k];
            }
        }
        double* dwl = dbiaffine.row(l);
        for (std::size_t i = 0; i < np; ++i) {
            const double* h = head.row(i);
            const double* dur = du.row(i);
            double* dh = dhead.row(i);
            for (std::size_t r = 0; r < k; ++r) {
                const double hr = h[r];
                const double* wrow = wl + r * k1;
                double* dwrow = dwl + r * k1;
                double acc = 0.0;
                for (std::size_t c = 0; c < k1; ++c) {
                    dwrow[c] += hr * dur[c];
                    acc += dur[c] * wrow[c];
                }
                dh[r] += acc;
            }
            double* dwbias = dwl + k * k1;
            for (std::size_t c = 0; c < k1; ++c) dwbias[c] += dur[c];
        }
        for (std::size_t j = 0; j < np; ++j) {
            const double* dc = dc1.row(j);
            double* dch = dchild.row(j);
            for (std::size_t r = 0; r < k; ++r) dch[r] += dc[r];
        }
    }
}

/// dq through a clamped row softmax: dF = q * (dq - <dq, q>), zero on
/// clamped rows.
Tensor3 softmax_backward(const Posterior& q, const Tensor3& dq) {
    Tensor3 out(dq.d0, dq.d1, dq.d2, 0.0);
    for (std::size_t i = 0; i < dq.d0; ++i)
        for (std::size_t j = 0; j < dq.d1; ++j) {
            if (is_clamped_cell(i, j)) continue;
            const double* qr = q.q.cell(i, j);
            const double* dr = dq.cell(i, j);
            double dot = 0.0;
            for (std::size_t l = 0; l < dq.d2; ++l) dot += dr[l] * qr[l];
            double* o = out.cell(i, j);
            for (std::size_t l = 0; l < dq.d2; ++l) o[l] = qr[l] * (dr[l] - dot);
        }
    return out;
}

void scorer_backward(const ScoreTape& tape, const ParamStore& params,
                     const ModelConfig& config, const Tensor3& ds_arc,
                     std::array<CpdFactorGrads, 3>& dfactors, ParamStore& grads) {
    const std::size_t np = tape.reprs.rows;
    Mat dreprs(np, config.hidden_dim, 0.0);

    // arc head
    {
        Mat dhead(np, config.mlp_dim, 0.0), dchild(np, config.mlp_dim, 0.0);
        biaffine_backward(tape.arc_head, tape.arc_child, params.at("arc.biaffine"),
                          ds_arc, grads.at("arc.biaffine"), dhead, dchild);
        mlp_backward(tape.reprs, tape.arc_head_pre, dhead, params.at("arc.head.W"),
                     grads.at("arc.head.W"), grads.at("arc.head.b"), &dreprs);
        mlp_backward(tape.reprs, tape.arc_child_pre, dchild, params.at("arc.child.W"),
                     grads.at("arc.child.W"), grads.at("arc.child.b"), &dreprs);
    }

    // factor heads
    for (std::size_t rel = 0; rel < 3; ++rel) {
        const CpdFactorGrads& df = dfactors[rel];
        const Mat* role_grads[5] = {&df.I, &df.J, &df.K, &df.A, &df.B};
        for (std::size_t role = 0; role < 5; ++role) {
            const std::string base =
                std::string(kRelationKeys[rel]) + "." + kRoleKeys[role];
            const ScoreTape::RoleTape& rt = tape.roles[rel][role];
            const bool label_side = role >= 3;

            Mat dout;
            if (!label_side || config.labeled_factors) {
                dout = *role_grads[role];
            } else {
                // presence mode: rows 1..L-1 share one output row; NULL row
                // is constant zero and contributes nothing.
                dout = Mat(1, config.rank, 0.0);
                for (std::size_t l = 1; l < config.num_labels; ++l)
                    for (std::size_t r = 0; r < config.rank; ++r)
                        dout(0, r) += (*role_grads[role])(l, r);
            }

            Mat dact(rt.act.rows, rt.act.cols, 0.0);
            affine_backward(rt.act, params.at(base + ".affine"), dout,
                            grads.at(base + ".affine"), dact);

            if (!label_side) {
                mlp_backward(tape.reprs, rt.pre, dact, params.at(base + ".mlp.W"),
                             grads.at(base + ".mlp.W"), grads.at(base + ".mlp.b"),
                             &dreprs);
            } else if (config.labeled_factors) {
                mlp_backward(params.at("labels.embed"), rt.pre, dact,
                             params.at(base + ".mlp.W"), grads.at(base + ".mlp.W"),
                             grads.at(base + ".mlp.b"), &grads.at("labels.embed"));
            } else {
                mlp_backward(params.at("labels.presence"), rt.pre, dact,
                             params.at(base + ".mlp.W"), grads.at(base + ".mlp.W"),
                             grads.at(base + ".mlp.b"), &grads.at("labels.presence"));
            }
        }
    }

    // encoder
    {
        const std::size_t E = config.embed_dim;
        Mat dmixed(np, E, 0.0);
        mlp_backward(tape.mixed, tape.enc_pre, dreprs, params.at("enc.W"),
                     grads.at("enc.W"), grads.at("enc.b"), &dmixed);

        const Mat& gate = params.at("enc.gate");
        Mat& dgate = grads.at("enc.gate");
        Mat dembeds = dmixed;  // direct path e -> mixed
        Mat dctx(np, E, 0.0);
        for (std::size_t e = 0; e < E; ++e) {
            const double s = 1.0 / (1.0 + std::exp(-gate(0, e)));
            const double ds_dg = s * (1.0 - s);
            double acc = 0.0;
            for (std::size_t i = 0; i < np; ++i) {
                dctx(i, e) = dmixed(i, e) * s;
                acc += dmixed(i, e) * tape.ctx(i, e);
            }
            dgate(0, e) += acc * ds_dg;
        }

        const std::size_t w = config.window;
        for (std::size_t i = 0; i < np; ++i) {
            const std::size_t lo = i > w ? i - w : 0;
            const std::size_t hi = std::min(np - 1, i + w);
            std::size_t count = (hi - lo + 1) - 1;
            if (count == 0) continue;
            const double inv = 1.0 / double(count);
            for (std::size_t t = lo; t <= hi; ++t) {
                if (t == i) continue;
                double* dst = dembeds.row(t);
                const double* src = dctx.row(i);
                for (std::size_t e = 0; e < E; ++e) dst[e] += src[e] * inv;
            }
        }

        Mat& dtable = grads.at("embed");
        for (std::size_t i = 0; i < np; ++i) {
            double* dst = dtable.row(tape.word_ids[i]);
            const double* src = dembeds.row(i);
            for (std::size_t e = 0; e < E; ++e) dst[e] += src[e];
        }
    }
}

CpdFactorGrads zero_factor_grads(const CpdFactors& f) {
    CpdFactorGrads g;
    g.I = Mat(f.I.rows, f.I.cols, 0.0);
    g.J = Mat(f.J.rows, f.J.cols, 0.0);
    g.K = Mat(f.K.rows, f.K.cols, 0.0);
    g.A = Mat(f.A.rows, f.A.cols, 0.0);
    g.B = Mat(f.B.rows, f.B.cols, 0.0);
    return g;
}

}  // namespace

void backward(const Tape& tape, const ParamStore& params, const ModelConfig& config,
              ParamStore& grads) {
    const std::size_t iters = tape.step_traces.size();
    const Tensor3& final_field = tape.fields.back();
    const std::size_t np = final_field.d0;
    const std::size_t L = final_field.d2;

    // cross-entropy gradient at the final field; clamped cells carry none
    Tensor3 dfield(np, np, L, 0.0);
    const Posterior& p_final = tape.posteriors.back();
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < np; ++j) {
            if (is_clamped_cell(i, j)) continue;
            const double* pr = p_final.q.cell(i, j);
            double* dr = dfield.cell(i, j);
            for (std::size_t l = 0; l < L; ++l) dr[l] = pr[l];
            dr[tape.gold.label(i, j)] -= 1.0;
        }

    const CpdScores& fac = tape.scoring.factors;
    const CpdFactors* rels[3] = {&fac.sib, &fac.cop, &fac.grd};
    std::array<CpdFactorGrads, 3> dfactors = {
        zero_factor_grads(fac.sib), zero_factor_grads(fac.cop),
        zero_factor_grads(fac.grd)};

    Tensor3 ds_arc(np, np, L, 0.0);
    for (std::size_t m = iters; m >= 1; --m) {
        for (std::size_t idx = 0; idx < dfield.size(); ++idx)
            ds_arc.data[idx] += dfield.data[idx];
        Tensor3 dq(np, np, L, 0.0);
        const Tensor3& q_prev = tape.posteriors[m - 1].q;
        for (std::size_t rel = 0; rel < 3; ++rel)
            cpd_update_backward(*rels[rel], q_prev, tape.step_traces[m - 1][rel],
                                dfield, dfactors[rel], dq);
        dfield = softmax_backward(tape.posteriors[m - 1], dq);
    }
    for (std::size_t idx = 0; idx < dfield.size(); ++idx)
        ds_arc.data[idx] += dfield.data[idx];

    scorer_backward(tape.scoring, params, config, ds_arc, dfactors, grads);

    for (const std::string& name : grads.names)
        for (double v : grads.at(name).data)
            if (!std::isfinite(v))
                throw NumericError("non-finite gradient in parameter " + name);
}

LossReport loss_report(const ParamStore& params, const ModelConfig& config,
                       const std::vector<std::vector<std::size_t>>& word_ids,
                       const std::vector<LabeledGraph>& golds, std::size_t iters) {
    if (word_ids.size() != golds.size())
        throw std::invalid_argument("sentence/gold list lengths differ");
    LossReport rep;
    ParamStore grads = params.zeros_like();
    for (std::size_t s = 0; s < word_ids.size(); ++s) {
        Tape tape = forward(params, config, word_ids[s], golds[s], iters);
        backward(tape, params, config, grads);
        rep.per_sentence.push_back(tape.loss);
        rep.total += tape.loss;
    }
    for (const std::string& name : grads.names) {
        double sq = 0.0;
        for (double v : grads.at(name).data) sq += v * v;
        rep.grad_norms.emplace_back(name, std::sqrt(sq));
    }
    return rep;
}

AdamW::AdamW(const ParamStore& params, double beta1, double beta2, double eps)
    : m_(params.zeros_like()), v_(params.zeros_like()), beta1_(beta1), beta2_(beta2),
      eps_(eps) {}

void AdamW::step(ParamStore& params, const ParamStore& grads, double lr,
                 double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (const std::string& name : params.names) {
        Mat& p = params.at(name);
        const Mat& g = grads.at(name);
        Mat& m = m_.at(name);
        Mat& v = v_.at(name);
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * g.data[i];
            v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) +
                               weight_decay * p.data[i]);
        }
    }
}

double clip_global_norm(ParamStore& grads, double max_norm) {
    double sq = 0.0;
    for (const std::string& name : grads.names)
        for (double v : grads.at(name).data) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (const std::string& name : grads.names)
            for (double& v : grads.at(name).data) v *= scale;
    }
    return norm;
}

namespace {

struct TrainInstance {
    std::vector<std::size_t> word_ids;
    LabeledGraph gold;
    std::size_t tokens = 0;
};

/// Compensated accumulation of parameter-shaped gradients.
struct KahanStore {
    ParamStore sum;
    ParamStore carry;

    explicit KahanStore(const ParamStore& shape)
        : sum(shape.zeros_like()), carry(shape.zeros_like()) {}

    void add(const ParamStore& g) {
        for (const std::string& name : sum.names) {
            Mat& s = sum.at(name);
            Mat& c = carry.at(name);
            const Mat& x = g.at(name);
            for (std::size_t i = 0; i < s.data.size(); ++i) {
                const double y = x.data[i] - c.data[i];
                const double t = s.data[i] + y;
                c.data[i] = (t - s.data[i]) - y;
                s.data[i] = t;
            }
        }
    }

    void merge(const KahanStore& other) {
        add(other.sum);
        add(other.carry);
    }
};

struct BatchOutcome {
    ParamStore grads;
    double loss_sum = 0.0;
    std::vector<double> per_sentence;
};

BatchOutcome compute_batch(const ParamStore& params, const ModelConfig& config,
                           const std::vector<const TrainInstance*>& batch,
                           std::size_t iters, std::size_t threads) {
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, batch.size()));
    std::vector<KahanStore> acc(workers, KahanStore(params));
    std::vector<std::vector<double>> losses(workers);

    auto run_chunk = [&](std::size_t w) {
        const std::size_t lo = batch.size() * w / workers;
        const std::size_t hi = batch.size() * (w + 1) / workers;
        for (std::size_t s = lo; s < hi; ++s) {
            Tape tape = forward(params, config, batch[s]->word_ids, batch[s]->gold, iters);
            ParamStore g = params.zeros_like();
            backward(tape, params, config, g);
            acc[w].add(g);
            losses[w].push_back(tape.loss);
        }
    };

    if (workers == 1) {
        run_chunk(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run_chunk, w);
        for (auto& t : pool) t.join();
    }

    for (std::size_t w = 1; w < workers; ++w) acc[0].merge(acc[w]);
    BatchOutcome out{std::move(acc[0].sum), 0.0, {}};
    for (std::size_t w = 0; w < workers; ++w)
        for (double l : losses[w]) {
            out.per_sentence.push_back(l);
            out.loss_sum += l;
        }
    // mean over sentences
    const double inv = 1.0 / double(batch.size());
    for (const std::string& name : out.grads.names)
        for (double& v : out.grads.at(name).data) v *= inv;
    return out;
}

std::vector<LabeledGraph> parse_instances(const ParamStore& params,
                                          const ModelConfig& config,
                                          const std::vector<TrainInstance>& instances,
                                          std::size_t iters, std::size_t threads) {
    std::vector<LabeledGraph> out(instances.size());
    const std::size_t workers =
        std::max<std::size_t>(1, std::min(threads, instances.size()));
    auto run_chunk = [&](std::size_t w) {
        const std::size_t lo = instances.size() * w / workers;
        const std::size_t hi = instances.size() * (w + 1) / workers;
        for (std::size_t s = lo; s < hi; ++s) {
            ScoreSet scores = score_set_for(params, config, instances[s].word_ids);
            out[s] = decode(infer(scores, iters));
        }
    };
    if (workers == 1) {
        run_chunk(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run_chunk, w);
        for (auto& t : pool) t.join();
    }
    return out;
}

std::vector<TrainInstance> build_instances(const SdpDocument& doc,
                                           const LabelSet& labels, const Vocab& vocab,
                                           std::size_t max_len) {
    std::vector<TrainInstance> out;
    for (const SdpSentence& s : doc.sentences) {
        if (s.length() == 0 || s.length() > max_len) continue;
        TrainInstance inst;
        inst.word_ids = words_to_ids(vocab, s);
        inst.gold = graph_from_gold(s, labels);
        inst.tokens = s.length();
        out.push_back(std::move(inst));
    }
    return out;
}

}  // namespace

TrainResult train(const SdpDocument& train_doc, const SdpDocument* dev_doc,
                  const TrainConfig& cfg, std::ostream* log) {
    cfg.hp.validate();
    Vocab vocab = build_vocab(train_doc);
    const LabelSet& labels = train_doc.labels;

    ModelConfig config;
    config.vocab_size = vocab.size();
    config.num_labels = labels.size();
    config.embed_dim = cfg.hp.embed_dim;
    config.hidden_dim = cfg.hp.hidden_dim;
    config.mlp_dim = cfg.hp.mlp_dim;
    config.rank = cfg.hp.rank;
    config.window = cfg.window;
    config.labeled_factors = cfg.labeled_factors;

    std::vector<TrainInstance> instances =
        build_instances(train_doc, labels, vocab, cfg.max_len);
    if (instances.empty()) throw std::invalid_argument("no usable training sentences");

    std::vector<TrainInstance> dev_instances;
    std::vector<LabeledGraph> dev_gold;
    if (dev_doc) {
        SdpDocument dev = *dev_doc;
        align_labels(dev, labels);  // unseen dev labels are a hard error
        dev_instances = build_instances(dev, labels, vocab, cfg.max_len);
        for (const TrainInstance& inst : dev_instances) dev_gold.push_back(inst.gold);
    }
    std::vector<LabeledGraph> train_gold;
    if (cfg.eval_train)
        for (const TrainInstance& inst : instances) train_gold.push_back(inst.gold);

    ParamStore params = init_params(config, cfg.hp.seed);
    AdamW opt(params);
    Rng shuffle_rng(cfg.hp.seed * 0x9e3779b9ULL + 1);

    TrainResult result;
    auto emit = [&](const std::string& line) {
        result.log_lines.push_back(line);
        if (log) (*log) << line << '\n';
    };

    std::size_t total_steps = 0;  // fixed after the first epoch's batch count
    std::size_t step = 0;
    double best_dev = -1.0;
    bool stop = false;

    for (std::size_t epoch = 1; epoch <= cfg.hp.epochs && !stop; ++epoch) {
        std::vector<std::size_t> order(instances.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        // token-count batches
        std::vector<std::vector<const TrainInstance*>> batches;
        std::vector<const TrainInstance*> current;
        std::size_t current_tokens = 0;
        for (std::size_t idx : order) {
            const TrainInstance& inst = instances[idx];
            if (!current.empty() && current_tokens + inst.tokens > cfg.batch_tokens) {
                batches.push_back(std::move(current));
                current.clear();
                current_tokens = 0;
            }
            current.push_back(&inst);
            current_tokens += inst.tokens;
        }
        if (!current.empty()) batches.push_back(std::move(current));
        if (total_steps == 0) total_steps = cfg.hp.epochs * batches.size();

        double epoch_loss = 0.0;
        std::size_t epoch_sentences = 0;
        for (const auto& batch : batches) {
            BatchOutcome out =
                compute_batch(params, config, batch, cfg.hp.train_iters, cfg.threads);
            if (!std::isfinite(out.loss_sum))
                throw NumericError("training diverged: non-finite loss at step " +
                                   std::to_string(step));
            epoch_loss += out.loss_sum;
            epoch_sentences += batch.size();

            clip_global_norm(out.grads, cfg.clip_norm);
            ++step;
            const double warmup_steps =
                std::max(1.0, cfg.warmup_frac * double(total_steps));
            const double lr =
                cfg.hp.learning_rate * std::min(1.0, double(step) / warmup_steps);
            opt.step(params, out.grads, lr, cfg.weight_decay);
        }

        const double mean_loss = epoch_loss / double(epoch_sentences);
        result.epoch_losses.push_back(mean_loss);
        result.epochs_run = epoch;

        std::ostringstream train_line;
        train_line << "epoch=" << epoch << " split=train loss=" << mean_loss;
        if (cfg.eval_train) {
            std::vector<LabeledGraph> pred = parse_instances(
                params, config, instances, cfg.hp.test_iters, cfg.threads);
            F1Report rep = evaluate(pred, train_gold);
            result.final_train_lf1 = rep.lf1;
            train_line << " lf1=" << rep.lf1;
            if (cfg.stop_train_lf1 >= 0.0 && rep.lf1 >= cfg.stop_train_lf1) stop = true;
        }
        emit(train_line.str());

        double dev_lf1 = -1.0;
        if (!dev_instances.empty()) {
            std::vector<LabeledGraph> pred = parse_instances(
                params, config, dev_instances, cfg.hp.test_iters, cfg.threads);
            F1Report rep = evaluate(pred, dev_gold);
            dev_lf1 = rep.lf1;
            double dev_loss = 0.0;
            for (const TrainInstance& inst : dev_instances)
                dev_loss +=
                    forward_loss(params, config, inst.word_ids, inst.gold,
                                 cfg.hp.test_iters);
            std::ostringstream dev_line;
            dev_line << "epoch=" << epoch << " split=dev loss="
                     << dev_loss / double(dev_instances.size()) << " lf1=" << rep.lf1;
            emit(dev_line.str());
        }

        const bool is_best = dev_instances.empty() || dev_lf1 > best_dev;
        if (is_best) {
            best_dev = dev_lf1;
            result.best_dev_lf1 = std::max(0.0, dev_lf1);
            result.best_epoch = epoch;
            result.best.config = config;
            result.best.hyper = cfg.hp;
            result.best.vocab = vocab;
            result.best.labels = labels;
            result.best.params = params;
        }
    }
    return result;
}

std::vector<LabeledGraph> parse_document(const Checkpoint& ckpt, const SdpDocument& doc,
                                         std::size_t iters, std::size_t threads) {
    std::vector<TrainInstance> instances;
    for (const SdpSentence& s : doc.sentences) {
        TrainInstance inst;
        inst.word_ids = words_to_ids(ckpt.vocab, s);
        inst.gold = LabeledGraph(s.positions(), ckpt.config.num_labels);
        instances.push_back(std::move(inst));
    }
    return parse_instances(ckpt.params, ckpt.config, instances, iters, threads);
}

namespace {

/// Sign pattern of every pre-activation in the tape. Central differences are
/// only valid when the +h and -h evaluations agree on it; a flipped entry
/// means the probe straddled a LeakyReLU kink.
std::vector<std::uint8_t> kink_signature(const Tape& tape) {
    std::vector<std::uint8_t> sig;
    auto push = [&sig](const Mat& m) {
        for (double v : m.data) sig.push_back(v > 0.0 ? 1 : 0);
    };
    push(tape.scoring.enc_pre);
    push(tape.scoring.arc_head_pre);
    push(tape.scoring.arc_child_pre);
    for (const auto& rel : tape.scoring.roles)
        for (const auto& role : rel) push(role.pre);
    return sig;
}

}  // namespace

std::vector<FdGroupReport> finite_diff_check(const ParamStore& params,
                                             const ModelConfig& config,
                                             const std::vector<std::size_t>& word_ids,
                                             const LabeledGraph& gold,
                                             std::size_t iters,
                                             std::size_t coords_per_group, double h,
                                             std::uint64_t seed) {
    ParamStore grads = params.zeros_like();
    Tape tape = forward(params, config, word_ids, gold, iters);
    backward(tape, params, config, grads);

    ParamStore work = params;  // perturbed copy
    Rng rng(seed);
    std::vector<FdGroupReport> reports;
    for (const std::string& name : params.names) {
        const Mat& g = grads.at(name);
        Mat& w = work.at(name);
        FdGroupReport rep;
        rep.group = name;
        const std::size_t total = g.data.size();
        const std::size_t count = std::min(coords_per_group, total);
        for (std::size_t c = 0; c < count; ++c) {
            const std::size_t idx =
                count == total ? c : std::size_t(rng.next_below(total));
            const double saved = w.data[idx];
            w.data[idx] = saved + h;
            Tape up = forward(work, config, word_ids, gold, iters);
            w.data[idx] = saved - h;
            Tape down = forward(work, config, word_ids, gold, iters);
            w.data[idx] = saved;
            if (kink_signature(up) != kink_signature(down)) {
                ++rep.skipped;
                continue;
            }
            const double fd = (up.loss - down.loss) / (2.0 * h);
            const double an = g.data[idx];
            const double dev =
                std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)});
            rep.max_rel_dev = std::max(rep.max_rel_dev, dev);
            ++rep.coords;
        }
        reports.push_back(rep);
    }
    return reports;
}

}  // namespace sdparse
