#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sdparse/core.hpp"

namespace sdparse {

/// Column layouts of the SemEval shared-task files. The 2015 layout carries
/// a FRAME column between PRED and the ARG block; the 2014 layout does not.
enum class SdpFormat { V2015, V2014 };

/// Label name under which TOP marks are stored: a TOP '+' on token j becomes
/// the arc (0, j, kTopLabelName), so root attachment needs no separate head.
inline constexpr const char* kTopLabelName = "-TOP-";

struct SdpDocument {
    std::vector<SdpSentence> sentences;
    LabelSet labels;  // built in first-appearance order while reading
};

/// Parses tab-separated SDP text. Per sentence: optional '#...' comment
/// lines (kept verbatim), token lines
///   ID FORM LEMMA POS TOP PRED [FRAME] ARG_1 ... ARG_P
/// with one ARG column per PRED-marked token, and a blank terminator line.
/// The k-th ARG column belongs to the k-th PRED token; a non-'_' cell at row
/// j yields the arc (pred_k, j, label). Throws FormatError with a line
/// number on malformed input.
SdpDocument read_sdp(std::istream& in, SdpFormat format = SdpFormat::V2015);

/// Inverse of read_sdp up to column re-alignment:
/// read(write(doc)) == doc on the parsed representation.
void write_sdp(std::ostream& out, const SdpDocument& doc,
               SdpFormat format = SdpFormat::V2015);

/// Re-indexes every gold arc of doc from doc.labels into `frozen`.
/// Unseen label names throw VocabError; this is the ingestion gate for
/// evaluation data against a training-time vocabulary.
void align_labels(SdpDocument& doc, const LabelSet& frozen);

/// Replaces a sentence's arcs and marks with the arcs of a predicted graph
/// (tokens and comments are kept). Arcs out of the root become TOP marks.
SdpSentence sentence_with_graph(const SdpSentence& base, const LabeledGraph& g);

}  // namespace sdparse
