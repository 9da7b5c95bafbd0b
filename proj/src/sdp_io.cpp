#include "sdparse/sdp_io.hpp"

#include <istream>
#include <ostream>
#include <sstream>

namespace sdparse {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

[[noreturn]] void fail(std::size_t line_no, const std::string& what) {
    throw FormatError("line " + std::to_string(line_no) + ": " + what);
}

struct RawSentence {
    std::vector<std::string> comments;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> row_lines;
};

void finish_sentence(const RawSentence& raw, SdpFormat format, SdpDocument& doc) {
    const std::size_t fixed_cols = format == SdpFormat::V2015 ? 7 : 6;
    SdpSentence sent;
    sent.comments = raw.comments;

    // First pass: tokens, marks, predicate order.
    std::vector<std::size_t> pred_positions;
    for (std::size_t idx = 0; idx < raw.rows.size(); ++idx) {
        const auto& cols = raw.rows[idx];
        const std::size_t line_no = raw.row_lines[idx];
        if (cols.size() < fixed_cols) fail(line_no, "too few columns for a token line");
        unsigned long id = 0;
        try {
            id = std::stoul(cols[0]);
        } catch (const std::exception&) {
            fail(line_no, "token ID is not a number: '" + cols[0] + "'");
        }
        if (id != idx + 1) fail(line_no, "non-contiguous token IDs");
        Token tok;
        tok.form = cols[1];
        tok.lemma = cols[2];
        tok.pos = cols[3];
        tok.frame = format == SdpFormat::V2015 ? cols[6] : "_";
        sent.tokens.push_back(std::move(tok));
        sent.top_marks.push_back(cols[4] == "+");
        sent.pred_marks.push_back(cols[5] == "+");
        if (cols[5] == "+") pred_positions.push_back(idx + 1);
    }

    // Second pass: exact column counts and the ARG block.
    const std::size_t want = fixed_cols + pred_positions.size();
    for (std::size_t idx = 0; idx < raw.rows.size(); ++idx) {
        const auto& cols = raw.rows[idx];
        const std::size_t line_no = raw.row_lines[idx];
        if (cols.size() != want)
            fail(line_no, "expected " + std::to_string(want) + " columns for " +
                              std::to_string(pred_positions.size()) +
                              " predicates, found " + std::to_string(cols.size()));
        const std::size_t dep = idx + 1;
        if (sent.top_marks[idx]) {
            Arc arc;
            arc.head = 0;
            arc.dependent = dep;
            arc.label = doc.labels.add(kTopLabelName);
            sent.gold_arcs.push_back(arc);
        }
        for (std::size_t k = 0; k < pred_positions.size(); ++k) {
            const std::string& cell = cols[fixed_cols + k];
            if (cell == "_" || cell.empty()) continue;
            if (pred_positions[k] == dep)
                fail(line_no, "token is an argument of itself");
            Arc arc;
            arc.head = pred_positions[k];
            arc.dependent = dep;
            arc.label = doc.labels.add(cell);
            sent.gold_arcs.push_back(arc);
        }
    }
    sent.validate(doc.labels.size());
    doc.sentences.push_back(std::move(sent));
}

}  // namespace

SdpDocument read_sdp(std::istream& in, SdpFormat format) {
    SdpDocument doc;
    RawSentence raw;
    std::string line;
    std::size_t line_no = 0;
    auto flush = [&] {
        if (!raw.rows.empty() || !raw.comments.empty()) {
            if (raw.rows.empty())
                fail(line_no, "comment block without token lines");
            finish_sentence(raw, format, doc);
        }
        raw = RawSentence{};
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            flush();
            continue;
        }
        if (line[0] == '#') {
            if (!raw.rows.empty()) flush();  // comment starts the next sentence
            raw.comments.push_back(line);
            continue;
        }
        raw.rows.push_back(split_tabs(line));
        raw.row_lines.push_back(line_no);
    }
    flush();
    return doc;
}

void write_sdp(std::ostream& out, const SdpDocument& doc, SdpFormat format) {
    const bool with_frame = format == SdpFormat::V2015;
    for (const SdpSentence& sent : doc.sentences) {
        for (const std::string& c : sent.comments) out << c << '\n';
        const std::size_t n = sent.length();

        // Predicates: every stored mark plus every head that carries an arc.
        std::vector<bool> is_pred(n + 1, false);
        std::vector<bool> is_top(n + 1, false);
        for (std::size_t t = 0; t < n; ++t) {
            if (t < sent.pred_marks.size() && sent.pred_marks[t]) is_pred[t + 1] = true;
            if (t < sent.top_marks.size() && sent.top_marks[t]) is_top[t + 1] = true;
        }
        for (const Arc& a : sent.gold_arcs) {
            if (a.head == 0)
                is_top[a.dependent] = true;
            else
                is_pred[a.head] = true;
        }
        std::vector<std::size_t> pred_positions;
        for (std::size_t p = 1; p <= n; ++p)
            if (is_pred[p]) pred_positions.push_back(p);

        // label per (head, dependent)
        std::vector<std::string> arg(pred_positions.size() * n, "_");
        for (const Arc& a : sent.gold_arcs) {
            if (a.head == 0) continue;
            for (std::size_t k = 0; k < pred_positions.size(); ++k)
                if (pred_positions[k] == a.head)
                    arg[k * n + (a.dependent - 1)] = doc.labels.name(a.label);
        }

        for (std::size_t t = 0; t < n; ++t) {
            const Token& tok = sent.tokens[t];
            out << (t + 1) << '\t' << tok.form << '\t' << tok.lemma << '\t' << tok.pos
                << '\t' << (is_top[t + 1] ? '+' : '-') << '\t'
                << (is_pred[t + 1] ? '+' : '-');
            if (with_frame) out << '\t' << (tok.frame.empty() ? "_" : tok.frame);
            for (std::size_t k = 0; k < pred_positions.size(); ++k)
                out << '\t' << arg[k * n + t];
            out << '\n';
        }
        out << '\n';
    }
}

void align_labels(SdpDocument& doc, const LabelSet& frozen) {
    // Map from current indices to frozen indices; unseen names are an error.
    std::vector<std::size_t> remap(doc.labels.size());
    for (std::size_t i = 0; i < doc.labels.size(); ++i)
        remap[i] = frozen.index_of(doc.labels.name(i));
    for (SdpSentence& sent : doc.sentences)
        for (Arc& a : sent.gold_arcs) a.label = remap[a.label];
    doc.labels = frozen;
}

SdpSentence sentence_with_graph(const SdpSentence& base, const LabeledGraph& g) {
    SdpSentence out;
    out.tokens = base.tokens;
    out.comments = base.comments;
    const std::size_t n = base.length();
    out.top_marks.assign(n, false);
    out.pred_marks.assign(n, false);
    for (const Arc& a : g.arcs()) {
        if (a.head == 0)
            out.top_marks[a.dependent - 1] = true;
        else
            out.pred_marks[a.head - 1] = true;
        out.gold_arcs.push_back(a);
    }
    return out;
}

}  // namespace sdparse
