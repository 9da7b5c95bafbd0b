#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdparse/mean_field.hpp"

namespace sdparse {

/// Random factored score set for checks and benchmarks.
ScoreSet random_cpd_scores(std::size_t n, std::size_t num_labels, std::size_t rank,
                           std::uint64_t seed, double scale = 0.5);

/// Materialized twin of a factored score set. With share_tensor the three
/// relation slots alias one tensor: per-iteration arithmetic and traffic are
/// those of the dense path at a third of the resident memory, but the values
/// no longer match the factored set, so sharing is for timing only.
ScoreSet densify(const ScoreSet& cpd_scores, std::size_t element_budget,
                 bool share_tensor);

/// Median wall-clock seconds of infer(scores, iters), monotonic clock,
/// one unrecorded warmup run.
double time_inference(const ScoreSet& scores, std::size_t iters, std::size_t repeats);

/// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys);

// ---------------------------------------------------------------------------
// Equivalence check: factored vs materialized trajectories.

struct EquivalenceOptions {
    std::size_t trials = 100;
    std::size_t min_n = 2, max_n = 8;
    std::size_t max_labels = 5;
    std::size_t max_rank = 8;
    std::size_t max_iters = 5;
    std::uint64_t seed = 1;
    double tolerance = 1e-8;
    bool inject_fault = false;  // corrupt one message entry: negative control
};

struct EquivalenceReport {
    std::size_t trials = 0;
    double max_deviation = 0.0;
    double tolerance = 1e-8;
    bool pass = false;
};

EquivalenceReport run_equivalence_check(const EquivalenceOptions& opts);

// ---------------------------------------------------------------------------
// Gradient check on random tiny models.

struct GradientCheckOptions {
    std::size_t instances = 10;
    std::size_t coords_per_group = 20;
    std::size_t iters = 2;
    double h = 1e-5;
    double tolerance = 1e-4;
    std::uint64_t seed = 1;
};

struct GradientCheckReport {
    double max_deviation = 0.0;
    std::size_t coords_checked = 0;
    std::size_t coords_skipped = 0;
    double tolerance = 1e-4;
    bool pass = false;
};

GradientCheckReport run_gradient_check(const GradientCheckOptions& opts);

// ---------------------------------------------------------------------------
// Timing experiments.

struct LabelBenchOptions {
    std::size_t n = 30;
    std::vector<std::size_t> label_sizes = {1, 5, 10, 20, 30, 40};
    std::size_t rank = 300;
    std::size_t iters = 3;
    std::size_t repeats = 100;
    std::size_t element_budget = kDefaultElementBudget;
    std::uint64_t seed = 1;
};

struct LabelBenchRow {
    std::size_t labels = 0;
    double cpd_seconds = 0.0;
    double dense_seconds = 0.0;
    bool dense_skipped = false;  // over the element budget
};

std::vector<LabelBenchRow> run_label_bench(const LabelBenchOptions& opts);

struct SizeScalingOptions {
    std::vector<std::size_t> sizes = {20, 40, 80, 160};
    std::size_t num_labels = 8;
    std::size_t rank = 16;
    std::size_t iters = 2;
    std::size_t repeats = 3;
    std::size_t element_budget = kDefaultElementBudget;
    std::uint64_t seed = 1;
};

struct SizeScalingRow {
    std::size_t n = 0;
    double cpd_per_iter = 0.0;
    double dense_per_iter = 0.0;
    bool dense_skipped = false;
};

std::vector<SizeScalingRow> run_size_scaling(const SizeScalingOptions& opts);

}  // namespace sdparse
