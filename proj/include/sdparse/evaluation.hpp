#pragma once

#include <array>
#include <string>
#include <vector>

#include "sdparse/core.hpp"

namespace sdparse {

/// Per-bucket LF1 breakdown by sentence length: 1-10, 11-20, ..., 61-70.
struct LengthBucket {
    std::size_t lo = 0, hi = 0;
    std::size_t predicted = 0, gold = 0, correct_labeled = 0;
    double lf1 = 0.0;
};

struct F1Report {
    std::size_t predicted = 0;
    std::size_t gold = 0;
    std::size_t correct_labeled = 0;
    std::size_t correct_unlabeled = 0;
    double precision = 0.0;  // labeled
    double recall = 0.0;     // labeled
    double lf1 = 0.0;
    double uf1 = 0.0;
    std::vector<LengthBucket> buckets;

    /// key=value block, one line per field.
    std::string to_kv() const;
};

/// Arc-set F1 between aligned prediction/gold lists. A prediction is
/// labeled-correct iff (head, dependent, label) match and
/// unlabeled-correct iff (head, dependent) match; NULL cells are not arcs.
/// Arcs out of the root (top marks) are skipped unless include_root_arcs;
/// 0/0 ratios evaluate to 0.
F1Report evaluate(const std::vector<LabeledGraph>& predicted,
                  const std::vector<LabeledGraph>& gold,
                  bool include_root_arcs = false);

}  // namespace sdparse
