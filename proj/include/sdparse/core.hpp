#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdparse/tensor.hpp"

namespace sdparse {

// Error taxonomy shared by the whole library. The CLI maps these onto exit
// codes: format/vocab -> 2 (data error), budget/numeric -> 3 (numerical failure).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VocabError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BudgetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Index 0 is reserved for the empty label NULL: a cell assigned label 0
/// carries no arc. Decoding and loss targets rely on this being stable.
class LabelSet {
  public:
    static constexpr std::size_t kNull = 0;
    static constexpr const char* kNullName = "<null>";

    LabelSet() { names_.push_back(kNullName); }

    /// Returns the index of `name`, inserting it if new.
    std::size_t add(const std::string& name);

    /// Returns the index of `name` or throws VocabError.
    std::size_t index_of(const std::string& name) const;

    std::optional<std::size_t> find(const std::string& name) const;

    const std::string& name(std::size_t idx) const { return names_.at(idx); }
    std::size_t size() const { return names_.size(); }

    const std::vector<std::string>& names() const { return names_; }

  private:
    std::vector<std::string> names_;
};

struct Token {
    std::string form;
    std::string lemma;
    std::string pos;
    std::string frame;  // kept for round-tripping; "_" when absent
};

/// A labeled arc head -> dependent. Heads may be 0 (the root); dependents
/// never are. `label` indexes into a LabelSet and is never kNull.
struct Arc {
    std::size_t head = 0;
    std::size_t dependent = 0;
    std::size_t label = 0;

    friend bool operator==(const Arc& a, const Arc& b) {
        return a.head == b.head && a.dependent == b.dependent && a.label == b.label;
    }
    friend bool operator<(const Arc& a, const Arc& b) {
        if (a.head != b.head) return a.head < b.head;
        if (a.dependent != b.dependent) return a.dependent < b.dependent;
        return a.label < b.label;
    }
};

/// Tokens are 1-indexed; position 0 is the implicit root, which only ever
/// acts as a head.
struct SdpSentence {
    std::vector<Token> tokens;       // tokens[0] corresponds to position 1
    std::vector<Arc> gold_arcs;      // validated on construction paths
    std::vector<std::string> comments;  // '#' lines preceding the block, verbatim
    std::vector<bool> top_marks;     // per token, the TOP column flag
    std::vector<bool> pred_marks;    // per token, the PRED column flag

    std::size_t length() const { return tokens.size(); }      // n
    std::size_t positions() const { return tokens.size() + 1; }  // n + 1

    /// Checks the arc invariants: no dependent 0, no self arcs, at most one
    /// arc per (head, dependent), indices in range, labels non-NULL.
    void validate(std::size_t num_labels) const;
};

/// Discrete labeled graph: per (head, dependent) cell exactly one label,
/// with NULL meaning "no arc". Stored as a label-index grid, which is the
/// same information as the 0/1 indicator tensor over (i, j, l).
class LabeledGraph {
  public:
    LabeledGraph() = default;
    LabeledGraph(std::size_t positions, std::size_t num_labels);

    std::size_t positions() const { return positions_; }
    std::size_t num_labels() const { return num_labels_; }

    std::size_t label(std::size_t head, std::size_t dep) const {
        return cells_[head * positions_ + dep];
    }
    void set_label(std::size_t head, std::size_t dep, std::size_t lab);

    /// Indicator view: y[i, j, l].
    bool has(std::size_t head, std::size_t dep, std::size_t lab) const {
        return label(head, dep) == lab;
    }

    /// All non-NULL cells as arcs, in row-major order.
    std::vector<Arc> arcs() const;

    std::size_t arc_count() const;

    friend bool operator==(const LabeledGraph& a, const LabeledGraph& b) {
        return a.positions_ == b.positions_ && a.num_labels_ == b.num_labels_ &&
               a.cells_ == b.cells_;
    }

  private:
    std::size_t positions_ = 0;
    std::size_t num_labels_ = 0;
    std::vector<std::uint32_t> cells_;  // label per (head, dependent)
};

/// Relaxed graph in the local polytope: each (i, j) cell holds a
/// distribution over labels.
struct Posterior {
    Tensor3 q;  // (n+1) x (n+1) x L

    std::size_t positions() const { return q.d0; }
    std::size_t num_labels() const { return q.d2; }
};

/// Row-sum tolerance every Posterior in the system must satisfy.
inline constexpr double kRowSumTol = 1e-9;

/// True iff (i, j) is a structurally impossible cell: the root never takes
/// a head, and self-arcs are forbidden. These rows are pinned to the
/// NULL-one-hot distribution rather than excluded from contractions, so the
/// factored updates keep a uniform shape.
inline bool is_clamped_cell(std::size_t head, std::size_t dep) {
    return dep == 0 || head == dep;
}

/// Forces clamped rows of q to the NULL-one-hot distribution.
void clamp_structural(Tensor3& q);

/// Throws NumericError if any row of q fails the simplex invariants.
void check_posterior(const Posterior& p, double tol = kRowSumTol);

/// Builds the indicator graph for a sentence's gold arcs. Unknown labels are
/// impossible here by construction (arcs already carry indices), but the
/// index-range and duplicate checks still run.
LabeledGraph graph_from_gold(const SdpSentence& sentence, const LabelSet& labels);

/// Embeds a discrete graph into the local polytope: one-hot rows.
Posterior posterior_from_graph(const LabeledGraph& g);

/// Per-cell argmax with ties broken toward the lowest label index; a NULL
/// argmax yields no arc.
LabeledGraph decode(const Posterior& q);

struct Hyperparams {
    std::size_t rank = 300;
    std::size_t train_iters = 2;
    std::size_t test_iters = 10;
    std::size_t hidden_dim = 300;
    std::size_t embed_dim = 100;
    std::size_t mlp_dim = 300;
    double learning_rate = 2.5e-3;
    std::size_t epochs = 30;
    std::uint64_t seed = 1;

    void validate() const {
        if (rank < 1 || train_iters < 1 || test_iters < 1)
            throw std::invalid_argument("rank and iteration counts must be >= 1");
        if (hidden_dim < 1 || embed_dim < 1 || mlp_dim < 1)
            throw std::invalid_argument("model dimensions must be >= 1");
    }

    /// Small-profile defaults for machines without an accelerator.
    static Hyperparams desk() {
        Hyperparams h;
        h.rank = 16;
        h.hidden_dim = 32;
        h.embed_dim = 32;
        h.mlp_dim = 32;
        h.epochs = 50;
        return h;
    }
};

}  // namespace sdparse
