#include "sdparse/scorer.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace sdparse {

const std::array<const char*, 3> kRelationKeys = {"sib", "cop", "grd"};
const std::array<const char*, 5> kRoleKeys = {"I", "J", "K", "A", "B"};

Vocab::Vocab() {
    words = {"<root>", "<unk>"};
    index = {{"<root>", 0}, {"<unk>", 1}};
}

std::size_t Vocab::add(const std::string& form) {
    auto it = index.find(form);
    if (it != index.end()) return it->second;
    words.push_back(form);
    index.emplace(form, words.size() - 1);
    return words.size() - 1;
}

std::size_t Vocab::id_of(const std::string& form) const {
    auto it = index.find(form);
    return it == index.end() ? kUnk : it->second;
}

Vocab build_vocab(const SdpDocument& doc) {
    Vocab v;
    for (const SdpSentence& s : doc.sentences)
        for (const Token& t : s.tokens) v.add(t.form);
    return v;
}

Mat& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols) {
    names.push_back(name);
    auto [it, fresh] = tensors.emplace(name, Mat(rows, cols));
    if (!fresh) throw std::invalid_argument("duplicate parameter name " + name);
    return it->second;
}

Mat& ParamStore::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("no parameter named " + name);
    return it->second;
}

const Mat& ParamStore::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("no parameter named " + name);
    return it->second;
}

std::size_t ParamStore::total_parameters() const {
    std::size_t total = 0;
    for (const auto& [name, m] : tensors) total += m.size();
    return total;
}

ParamStore ParamStore::zeros_like() const {
    ParamStore out;
    for (const std::string& name : names) {
        const Mat& m = at(name);
        out.add(name, m.rows, m.cols);
    }
    return out;
}

namespace {

void fill_uniform(Mat& m, Rng& rng, double bound) {
    for (double& v : m.data) v = rng.next_sym(bound);
}

void glorot(Mat& m, Rng& rng) {
    fill_uniform(m, rng, std::sqrt(6.0 / double(m.rows + m.cols)));
}

}  // namespace

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    ParamStore p;
    const std::size_t E = config.embed_dim;
    const std::size_t H = config.hidden_dim;
    const std::size_t K = config.mlp_dim;
    const std::size_t R = config.rank;
    const std::size_t L = config.num_labels;

    fill_uniform(p.add("embed", config.vocab_size, E), rng, 0.1);
    p.add("enc.gate", 1, E);  // zero: sigmoid gate starts half-open
    glorot(p.add("enc.W", E, H), rng);
    p.add("enc.b", 1, H);

    glorot(p.add("arc.head.W", H, K), rng);
    p.add("arc.head.b", 1, K);
    glorot(p.add("arc.child.W", H, K), rng);
    p.add("arc.child.b", 1, K);
    glorot(p.add("arc.biaffine", L, (K + 1) * (K + 1)), rng);

    if (config.labeled_factors)
        fill_uniform(p.add("labels.embed", L, E), rng, 0.1);
    else
        fill_uniform(p.add("labels.presence", 1, E), rng, 0.1);

    for (const char* rel : kRelationKeys) {
        for (const char* role : kRoleKeys) {
            const bool label_side = role[0] == 'A' || role[0] == 'B';
            const std::string base = std::string(rel) + "." + role;
            glorot(p.add(base + ".mlp.W", label_side ? E : H, K), rng);
            p.add(base + ".mlp.b", 1, K);
            glorot(p.add(base + ".affine", K + 1, R), rng);
        }
    }
    return p;
}

Mat affine_rows(const Mat& acts, const Mat& w) {
    if (w.rows != acts.cols + 1)
        throw std::invalid_argument("affine expects one extra bias input row");
    Mat out(acts.rows, w.cols, 0.0);
    for (std::size_t r = 0; r < acts.rows; ++r) {
        const double* a = acts.row(r);
        double* o = out.row(r);
        for (std::size_t i = 0; i < acts.cols; ++i) {
            const double v = a[i];
            if (v == 0.0) continue;
            const double* wr = w.row(i);
            for (std::size_t c = 0; c < w.cols; ++c) o[c] += v * wr[c];
        }
        const double* bias = w.row(acts.cols);
        for (std::size_t c = 0; c < w.cols; ++c) o[c] += bias[c];
    }
    return out;
}

namespace {

/// acts * w + b, then LeakyReLU; pre-activations kept for the reverse pass.
void mlp_forward(const Mat& in, const Mat& w, const Mat& b, Mat& pre, Mat& act) {
    pre = Mat(in.rows, w.cols);
    for (std::size_t r = 0; r < in.rows; ++r) {
        const double* x = in.row(r);
        double* o = pre.row(r);
        for (std::size_t c = 0; c < w.cols; ++c) o[c] = b(0, c);
        for (std::size_t i = 0; i < in.cols; ++i) {
            const double v = x[i];
            if (v == 0.0) continue;
            const double* wr = w.row(i);
            for (std::size_t c = 0; c < w.cols; ++c) o[c] += v * wr[c];
        }
    }
    act = pre;
    for (double& v : act.data) v = leaky_relu(v);
}

}  // namespace

void encode(const ParamStore& params, const ModelConfig& config,
            const std::vector<std::size_t>& word_ids, ScoreTape& tape) {
    const std::size_t np = word_ids.size();
    const std::size_t E = config.embed_dim;
    const Mat& table = params.at("embed");

    tape.word_ids = word_ids;
    tape.embeds = Mat(np, E);
    for (std::size_t i = 0; i < np; ++i) {
        if (word_ids[i] >= table.rows) throw VocabError("word id out of range");
        const double* src = table.row(word_ids[i]);
        std::copy(src, src + E, tape.embeds.row(i));
    }

    // windowed neighbor average, self excluded
    tape.ctx = Mat(np, E, 0.0);
    const std::size_t w = config.window;
    for (std::size_t i = 0; i < np; ++i) {
        const std::size_t lo = i > w ? i - w : 0;
        const std::size_t hi = std::min(np - 1, i + w);
        std::size_t count = 0;
        double* dst = tape.ctx.row(i);
        for (std::size_t t = lo; t <= hi; ++t) {
            if (t == i) continue;
            const double* src = tape.embeds.row(t);
            for (std::size_t e = 0; e < E; ++e) dst[e] += src[e];
            ++count;
        }
        if (count > 0)
            for (std::size_t e = 0; e < E; ++e) dst[e] /= double(count);
    }

    const Mat& gate = params.at("enc.gate");
    tape.mixed = Mat(np, E);
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t e = 0; e < E; ++e) {
            const double s = 1.0 / (1.0 + std::exp(-gate(0, e)));
            tape.mixed(i, e) = tape.embeds(i, e) + s * tape.ctx(i, e);
        }

    mlp_forward(tape.mixed, params.at("enc.W"), params.at("enc.b"), tape.enc_pre,
                tape.reprs);
}

Tensor3 biaffine_scores(const Mat& head, const Mat& child, const Mat& biaffine,
                        std::size_t num_labels) {
    const std::size_t np = head.rows;
    const std::size_t k1 = head.cols + 1;
    if (biaffine.rows != num_labels || biaffine.cols != k1 * k1)
        throw std::invalid_argument("biaffine parameter shape mismatch");
    Tensor3 s(np, np, num_labels);
    Mat u(np, k1);  // [head ; 1] * W_l
    for (std::size_t l = 0; l < num_labels; ++l) {
        const double* wl = biaffine.row(l);
        for (std::size_t i = 0; i < np; ++i) {
            const double* h = head.row(i);
            double* ur = u.row(i);
            for (std::size_t c = 0; c < k1; ++c) {
                double acc = wl[(k1 - 1) * k1 + c];  // bias input row
                for (std::size_t r = 0; r + 1 < k1; ++r) acc += h[r] * wl[r * k1 + c];
                ur[c] = acc;
            }
        }
        for (std::size_t i = 0; i < np; ++i) {
            const double* ur = u.row(i);
            for (std::size_t j = 0; j < np; ++j) {
                const double* c = child.row(j);
                double acc = ur[k1 - 1];  // child bias component
                for (std::size_t r = 0; r + 1 < k1; ++r) acc += ur[r] * c[r];
                s(i, j, l) = acc;
            }
        }
    }
    return s;
}

void score_arcs(const ParamStore& params, const ModelConfig& config, ScoreTape& tape) {
    mlp_forward(tape.reprs, params.at("arc.head.W"), params.at("arc.head.b"),
                tape.arc_head_pre, tape.arc_head);
    mlp_forward(tape.reprs, params.at("arc.child.W"), params.at("arc.child.b"),
                tape.arc_child_pre, tape.arc_child);
    tape.s_arc = biaffine_scores(tape.arc_head, tape.arc_child,
                                 params.at("arc.biaffine"), config.num_labels);
}

CpdFactors score_factors(const ParamStore& params, const ModelConfig& config,
                         const ScoreTape& tape, std::size_t rel_idx,
                         std::array<ScoreTape::RoleTape, 5>* role_tapes) {
    const char* rel = kRelationKeys[rel_idx];
    const std::size_t L = config.num_labels;
    CpdFactors f;
    f.relation = static_cast<Relation>(rel_idx);

    const Mat* label_input = nullptr;
    if (config.labeled_factors)
        label_input = &params.at("labels.embed");
    else
        label_input = &params.at("labels.presence");

    Mat outs[5];
    for (std::size_t role = 0; role < 5; ++role) {
        const std::string base = std::string(rel) + "." + kRoleKeys[role];
        const bool label_side = role >= 3;
        const Mat& input = label_side ? *label_input : tape.reprs;
        ScoreTape::RoleTape scratch;
        ScoreTape::RoleTape& rt = role_tapes ? (*role_tapes)[role] : scratch;
        mlp_forward(input, params.at(base + ".mlp.W"), params.at(base + ".mlp.b"),
                    rt.pre, rt.act);
        outs[role] = affine_rows(rt.act, params.at(base + ".affine"));
    }

    f.I = std::move(outs[0]);
    f.J = std::move(outs[1]);
    f.K = std::move(outs[2]);
    if (config.labeled_factors) {
        f.A = std::move(outs[3]);
        f.B = std::move(outs[4]);
    } else {
        // presence-only label axes: zero NULL row, one shared row otherwise
        const std::size_t R = config.rank;
        f.A = Mat(L, R, 0.0);
        f.B = Mat(L, R, 0.0);
        for (std::size_t l = 1; l < L; ++l)
            for (std::size_t r = 0; r < R; ++r) {
                f.A(l, r) = outs[3](0, r);
                f.B(l, r) = outs[4](0, r);
            }
    }
    return f;
}

ScoreTape score_sentence(const ParamStore& params, const ModelConfig& config,
                         const std::vector<std::size_t>& word_ids) {
    ScoreTape tape;
    encode(params, config, word_ids, tape);
    score_arcs(params, config, tape);
    tape.factors.sib = score_factors(params, config, tape, 0, &tape.roles[0]);
    tape.factors.cop = score_factors(params, config, tape, 1, &tape.roles[1]);
    tape.factors.grd = score_factors(params, config, tape, 2, &tape.roles[2]);
    return tape;
}

std::vector<std::size_t> words_to_ids(const Vocab& vocab, const SdpSentence& sentence) {
    std::vector<std::size_t> ids;
    ids.reserve(sentence.positions());
    ids.push_back(Vocab::kRoot);
    for (const Token& t : sentence.tokens) ids.push_back(vocab.id_of(t.form));
    return ids;
}

ScoreSet score_set_for(const ParamStore& params, const ModelConfig& config,
                       const std::vector<std::size_t>& word_ids) {
    ScoreTape tape = score_sentence(params, config, word_ids);
    ScoreSet s;
    s.arc = std::move(tape.s_arc);
    s.second_order = std::move(tape.factors);
    return s;
}

LabeledGraph parse_sentence(const Checkpoint& ckpt, const SdpSentence& sentence,
                            std::size_t iters) {
    ScoreSet scores =
        score_set_for(ckpt.params, ckpt.config, words_to_ids(ckpt.vocab, sentence));
    return decode(infer(scores, iters));
}

namespace {

constexpr char kMagic[8] = {'S', 'D', 'P', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw FormatError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

double get_f64(std::istream& in) {
    std::uint64_t bits = get_u64(in);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void put_str(std::ostream& out, const std::string& s) {
    put_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& in) {
    const std::size_t len = static_cast<std::size_t>(get_u64(in));
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw FormatError("truncated checkpoint string");
    return s;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    out.write(kMagic, 8);
    const ModelConfig& c = ckpt.config;
    for (std::uint64_t v :
         {std::uint64_t(c.vocab_size), std::uint64_t(c.num_labels),
          std::uint64_t(c.embed_dim), std::uint64_t(c.hidden_dim),
          std::uint64_t(c.mlp_dim), std::uint64_t(c.rank), std::uint64_t(c.window),
          std::uint64_t(c.labeled_factors ? 1 : 0)})
        put_u64(out, v);
    const Hyperparams& h = ckpt.hyper;
    put_u64(out, h.train_iters);
    put_u64(out, h.test_iters);
    put_u64(out, h.epochs);
    put_u64(out, h.seed);
    put_f64(out, h.learning_rate);

    put_u64(out, ckpt.vocab.words.size());
    for (const std::string& w : ckpt.vocab.words) put_str(out, w);
    put_u64(out, ckpt.labels.size());
    for (const std::string& l : ckpt.labels.names()) put_str(out, l);

    put_u64(out, ckpt.params.names.size());
    for (const std::string& name : ckpt.params.names) {
        const Mat& m = ckpt.params.at(name);
        put_str(out, name);
        put_u64(out, m.rows);
        put_u64(out, m.cols);
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    }
}

Checkpoint load_checkpoint(std::istream& in) {
    char magic[8];
    in.read(magic, 8);
    if (!in || !std::equal(magic, magic + 8, kMagic))
        throw FormatError("not a model checkpoint (bad magic)");
    Checkpoint ckpt;
    ModelConfig& c = ckpt.config;
    c.vocab_size = static_cast<std::size_t>(get_u64(in));
    c.num_labels = static_cast<std::size_t>(get_u64(in));
    c.embed_dim = static_cast<std::size_t>(get_u64(in));
    c.hidden_dim = static_cast<std::size_t>(get_u64(in));
    c.mlp_dim = static_cast<std::size_t>(get_u64(in));
    c.rank = static_cast<std::size_t>(get_u64(in));
    c.window = static_cast<std::size_t>(get_u64(in));
    c.labeled_factors = get_u64(in) != 0;
    ckpt.hyper.rank = c.rank;
    ckpt.hyper.hidden_dim = c.hidden_dim;
    ckpt.hyper.embed_dim = c.embed_dim;
    ckpt.hyper.mlp_dim = c.mlp_dim;
    ckpt.hyper.train_iters = static_cast<std::size_t>(get_u64(in));
    ckpt.hyper.test_iters = static_cast<std::size_t>(get_u64(in));
    ckpt.hyper.epochs = static_cast<std::size_t>(get_u64(in));
    ckpt.hyper.seed = get_u64(in);
    ckpt.hyper.learning_rate = get_f64(in);

    const std::size_t vocab_count = static_cast<std::size_t>(get_u64(in));
    ckpt.vocab.words.clear();
    ckpt.vocab.index.clear();
    for (std::size_t i = 0; i < vocab_count; ++i) {
        std::string w = get_str(in);
        ckpt.vocab.index.emplace(w, i);
        ckpt.vocab.words.push_back(std::move(w));
    }
    const std::size_t label_count = static_cast<std::size_t>(get_u64(in));
    LabelSet labels;
    for (std::size_t i = 0; i < label_count; ++i) {
        std::string name = get_str(in);
        if (i == 0) {
            if (name != LabelSet::kNullName)
                throw FormatError("checkpoint label set does not start with NULL");
        } else {
            labels.add(name);
        }
    }
    ckpt.labels = std::move(labels);

    const std::size_t tensor_count = static_cast<std::size_t>(get_u64(in));
    for (std::size_t t = 0; t < tensor_count; ++t) {
        std::string name = get_str(in);
        const std::size_t rows = static_cast<std::size_t>(get_u64(in));
        const std::size_t cols = static_cast<std::size_t>(get_u64(in));
        Mat& m = ckpt.params.add(name, rows, cols);
        in.read(reinterpret_cast<char*>(m.data.data()),
                static_cast<std::streamsize>(m.data.size() * sizeof(double)));
        if (!in) throw FormatError("truncated checkpoint tensor " + name);
    }
    return ckpt;
}

}  // namespace sdparse
