#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdparse/core.hpp"
#include "sdparse/mean_field.hpp"
#include "sdparse/sdp_io.hpp"
#include "sdparse/tensor.hpp"

namespace sdparse {

inline constexpr double kLeakySlope = 0.01;

inline double leaky_relu(double x) { return x > 0.0 ? x : kLeakySlope * x; }
inline double leaky_relu_grad(double pre) { return pre > 0.0 ? 1.0 : kLeakySlope; }

/// Word-form vocabulary. Index 0 is the root pseudo-token, index 1 the
/// unknown-word fallback.
struct Vocab {
    static constexpr std::size_t kRoot = 0;
    static constexpr std::size_t kUnk = 1;
    std::vector<std::string> words;
    std::unordered_map<std::string, std::size_t> index;

    Vocab();
    std::size_t add(const std::string& form);
    std::size_t id_of(const std::string& form) const;  // kUnk when absent
    std::size_t size() const { return words.size(); }
};

Vocab build_vocab(const SdpDocument& doc);

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t num_labels = 0;
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 32;
    std::size_t mlp_dim = 32;  // biaffine / affine input width k
    std::size_t rank = 16;
    std::size_t window = 2;  // context mixer radius
    /// When false, the factor heads emit presence-only label axes: the A and
    /// B matrices carry a zero NULL row and one shared learned row for every
    /// real label, so second-order messages see arcs but not their labels.
    bool labeled_factors = true;
};

/// Named parameter tensors in a stable order.
struct ParamStore {
    std::vector<std::string> names;
    std::unordered_map<std::string, Mat> tensors;

    Mat& add(const std::string& name, std::size_t rows, std::size_t cols);
    Mat& at(const std::string& name);
    const Mat& at(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    std::size_t total_parameters() const;

    /// Same names and shapes, zero-filled.
    ParamStore zeros_like() const;
};

ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

extern const std::array<const char*, 3> kRelationKeys;   // "sib", "cop", "grd"
extern const std::array<const char*, 5> kRoleKeys;       // "I", "J", "K", "A", "B"

/// Everything one forward scoring pass records, enough for the reverse pass.
struct ScoreTape {
    std::vector<std::size_t> word_ids;  // n + 1, root first

    // encoder
    Mat embeds;   // (n+1, embed) gathered embedding rows
    Mat ctx;      // (n+1, embed) windowed neighbor average
    Mat mixed;    // (n+1, embed) e + sigmoid(gate) * ctx
    Mat enc_pre;  // (n+1, hidden)
    Mat reprs;    // (n+1, hidden)

    // arc head
    Mat arc_head_pre, arc_head;    // (n+1, k)
    Mat arc_child_pre, arc_child;  // (n+1, k)
    Tensor3 s_arc;

    // factor heads: per relation, per role, the MLP pre-activation and
    // activation. Token roles span n+1 rows; label roles span the label
    // rows (L in labeled mode, 1 in presence mode).
    struct RoleTape {
        Mat pre;
        Mat act;
    };
    std::array<std::array<RoleTape, 5>, 3> roles;
    CpdScores factors;
};

/// Token representations from the embedding + gated-window encoder.
void encode(const ParamStore& params, const ModelConfig& config,
            const std::vector<std::size_t>& word_ids, ScoreTape& tape);

/// Biaffine arc scores over the encoded representations.
void score_arcs(const ParamStore& params, const ModelConfig& config, ScoreTape& tape);

/// CP factors for one relation from the encoded representations and the
/// label embeddings.
CpdFactors score_factors(const ParamStore& params, const ModelConfig& config,
                         const ScoreTape& tape, std::size_t rel_idx,
                         std::array<ScoreTape::RoleTape, 5>* role_tapes);

/// Full scoring pass: encoder, arc head, all three factor heads.
ScoreTape score_sentence(const ParamStore& params, const ModelConfig& config,
                         const std::vector<std::size_t>& word_ids);

std::vector<std::size_t> words_to_ids(const Vocab& vocab, const SdpSentence& sentence);

/// [acts ; 1] * w, one appended bias input per row.
Mat affine_rows(const Mat& acts, const Mat& w);

/// s[i,j,l] = [head_i ; 1]^T W_l [child_j ; 1] with W_l the l-th row of
/// `biaffine` reshaped to (k+1) x (k+1).
Tensor3 biaffine_scores(const Mat& head, const Mat& child, const Mat& biaffine,
                        std::size_t num_labels);

/// Model checkpoint: versioned header, config block, vocabulary and label
/// strings, then named tensor sections (name, shape, row-major f64 payload).
struct Checkpoint {
    ModelConfig config;
    Hyperparams hyper;
    Vocab vocab;
    LabelSet labels;
    ParamStore params;
};

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& in);

/// Scores a sentence and builds the factored score set for inference.
ScoreSet score_set_for(const ParamStore& params, const ModelConfig& config,
                       const std::vector<std::size_t>& word_ids);

/// Parse one sentence end to end: score, run fixed-iteration inference,
/// decode.
LabeledGraph parse_sentence(const Checkpoint& ckpt, const SdpSentence& sentence,
                            std::size_t iters);

}  // namespace sdparse
