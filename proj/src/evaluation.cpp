#include "sdparse/evaluation.hpp"

#include <sstream>

namespace sdparse {

namespace {

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double f1(double p, double r) { return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

F1Report evaluate(const std::vector<LabeledGraph>& predicted,
                  const std::vector<LabeledGraph>& gold, bool include_root_arcs) {
    if (predicted.size() != gold.size())
        throw std::invalid_argument("prediction/gold list lengths differ");

    F1Report rep;
    rep.buckets.resize(7);
    for (std::size_t b = 0; b < 7; ++b) {
        rep.buckets[b].lo = 10 * b + 1;
        rep.buckets[b].hi = 10 * b + 10;
    }

    for (std::size_t s = 0; s < predicted.size(); ++s) {
        const LabeledGraph& p = predicted[s];
        const LabeledGraph& g = gold[s];
        if (p.positions() != g.positions())
            throw std::invalid_argument("sentence length mismatch at index " +
                                        std::to_string(s));
        const std::size_t len = p.positions() - 1;
        LengthBucket* bucket = nullptr;
        if (len >= 1 && len <= 70) bucket = &rep.buckets[(len - 1) / 10];

        for (std::size_t i = 0; i < p.positions(); ++i) {
            if (i == 0 && !include_root_arcs) continue;
            for (std::size_t j = 1; j < p.positions(); ++j) {
                const std::size_t pl = p.label(i, j);
                const std::size_t gl = g.label(i, j);
                const bool p_arc = pl != LabelSet::kNull;
                const bool g_arc = gl != LabelSet::kNull;
                rep.predicted += p_arc;
                rep.gold += g_arc;
                if (p_arc && g_arc) {
                    rep.correct_unlabeled += 1;
                    rep.correct_labeled += (pl == gl);
                }
                if (bucket) {
                    bucket->predicted += p_arc;
                    bucket->gold += g_arc;
                    bucket->correct_labeled += (p_arc && g_arc && pl == gl);
                }
            }
        }
    }

    rep.precision = ratio(rep.correct_labeled, rep.predicted);
    rep.recall = ratio(rep.correct_labeled, rep.gold);
    rep.lf1 = f1(rep.precision, rep.recall);
    rep.uf1 = f1(ratio(rep.correct_unlabeled, rep.predicted),
                 ratio(rep.correct_unlabeled, rep.gold));
    for (LengthBucket& b : rep.buckets)
        b.lf1 = f1(ratio(b.correct_labeled, b.predicted), ratio(b.correct_labeled, b.gold));
    return rep;
}

std::string F1Report::to_kv() const {
    std::ostringstream os;
    os << "predicted=" << predicted << '\n'
       << "gold=" << gold << '\n'
       << "correct_labeled=" << correct_labeled << '\n'
       << "correct_unlabeled=" << correct_unlabeled << '\n'
       << "precision=" << precision << '\n'
       << "recall=" << recall << '\n'
       << "lf1=" << lf1 << '\n'
       << "uf1=" << uf1 << '\n';
    for (const LengthBucket& b : buckets)
        os << "lf1_len_" << b.lo << '_' << b.hi << '=' << b.lf1 << '\n';
    return os.str();
}

}  // namespace sdparse
