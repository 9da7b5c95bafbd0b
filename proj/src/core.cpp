#include "sdparse/core.hpp"

#include <cmath>

namespace sdparse {

std::size_t LabelSet::add(const std::string& name) {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return i;
    names_.push_back(name);
    return names_.size() - 1;
}

std::size_t LabelSet::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return i;
    throw VocabError("unknown label: " + name);
}

std::optional<std::size_t> LabelSet::find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return i;
    return std::nullopt;
}

void SdpSentence::validate(std::size_t num_labels) const {
    const std::size_t n = length();
    std::vector<char> seen((n + 1) * (n + 1), 0);
    for (const Arc& a : gold_arcs) {
        if (a.dependent == 0) throw FormatError("arc has the root as dependent");
        if (a.head == a.dependent) throw FormatError("self-arc in gold graph");
        if (a.head > n || a.dependent > n) throw FormatError("arc index out of range");
        if (a.label == LabelSet::kNull || a.label >= num_labels)
            throw VocabError("arc label index out of range");
        char& cell = seen[a.head * (n + 1) + a.dependent];
        if (cell) throw FormatError("duplicate arc for one (head, dependent) pair");
        cell = 1;
    }
}

LabeledGraph::LabeledGraph(std::size_t positions, std::size_t num_labels)
    : positions_(positions), num_labels_(num_labels), cells_(positions * positions, 0) {
    if (num_labels < 1) throw std::invalid_argument("need at least the NULL label");
}

void LabeledGraph::set_label(std::size_t head, std::size_t dep, std::size_t lab) {
    if (head >= positions_ || dep >= positions_)
        throw std::out_of_range("graph cell out of range");
    if (lab >= num_labels_) throw VocabError("label index out of range");
    if (lab != LabelSet::kNull && is_clamped_cell(head, dep))
        throw FormatError("arc into the root or self-arc");
    cells_[head * positions_ + dep] = static_cast<std::uint32_t>(lab);
}

std::vector<Arc> LabeledGraph::arcs() const {
    std::vector<Arc> out;
    for (std::size_t i = 0; i < positions_; ++i)
        for (std::size_t j = 0; j < positions_; ++j) {
            std::size_t l = label(i, j);
            if (l != LabelSet::kNull) out.push_back(Arc{i, j, l});
        }
    return out;
}

std::size_t LabeledGraph::arc_count() const {
    std::size_t c = 0;
    for (std::uint32_t v : cells_) c += (v != LabelSet::kNull);
    return c;
}

void clamp_structural(Tensor3& q) {
    for (std::size_t i = 0; i < q.d0; ++i)
        for (std::size_t j = 0; j < q.d1; ++j) {
            if (!is_clamped_cell(i, j)) continue;
            double* row = q.cell(i, j);
            row[0] = 1.0;
            for (std::size_t l = 1; l < q.d2; ++l) row[l] = 0.0;
        }
}

void check_posterior(const Posterior& p, double tol) {
    for (std::size_t i = 0; i < p.q.d0; ++i)
        for (std::size_t j = 0; j < p.q.d1; ++j) {
            const double* row = p.q.cell(i, j);
            double sum = 0.0;
            for (std::size_t l = 0; l < p.q.d2; ++l) {
                double v = row[l];
                if (!(v >= 0.0 && v <= 1.0 + tol) || !std::isfinite(v))
                    throw NumericError("posterior entry outside [0, 1]");
                sum += v;
            }
            if (std::fabs(sum - 1.0) > tol)
                throw NumericError("posterior row does not sum to 1");
        }
}

LabeledGraph graph_from_gold(const SdpSentence& sentence, const LabelSet& labels) {
    sentence.validate(labels.size());
    LabeledGraph g(sentence.positions(), labels.size());
    for (const Arc& a : sentence.gold_arcs) g.set_label(a.head, a.dependent, a.label);
    return g;
}

Posterior posterior_from_graph(const LabeledGraph& g) {
    Posterior p;
    p.q = Tensor3(g.positions(), g.positions(), g.num_labels(), 0.0);
    for (std::size_t i = 0; i < g.positions(); ++i)
        for (std::size_t j = 0; j < g.positions(); ++j)
            p.q(i, j, g.label(i, j)) = 1.0;
    return p;
}

LabeledGraph decode(const Posterior& q) {
    LabeledGraph g(q.positions(), q.num_labels());
    for (std::size_t i = 0; i < q.positions(); ++i)
        for (std::size_t j = 0; j < q.positions(); ++j) {
            if (is_clamped_cell(i, j)) continue;
            const double* row = q.q.cell(i, j);
            std::size_t best = 0;
            for (std::size_t l = 1; l < q.num_labels(); ++l)
                if (row[l] > row[best]) best = l;  // ties keep the lower index
            if (best != LabelSet::kNull) g.set_label(i, j, best);
        }
    return g;
}

}  // namespace sdparse
