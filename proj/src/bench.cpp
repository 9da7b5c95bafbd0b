#include "sdparse/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "sdparse/scorer.hpp"
#include "sdparse/training.hpp"

namespace sdparse {

ScoreSet random_cpd_scores(std::size_t n, std::size_t num_labels, std::size_t rank,
                           std::uint64_t seed, double scale) {
    Rng rng(seed);
    ScoreSet s;
    s.arc = Tensor3(n + 1, n + 1, num_labels);
    for (double& v : s.arc.data) v = rng.next_sym(1.0);
    CpdScores c;
    c.sib = random_factors(n, num_labels, rank, scale, rng.next_u64(), Relation::Sibling);
    c.cop = random_factors(n, num_labels, rank, scale, rng.next_u64(), Relation::CoParent);
    c.grd =
        random_factors(n, num_labels, rank, scale, rng.next_u64(), Relation::Grandparent);
    s.second_order = std::move(c);
    return s;
}

ScoreSet densify(const ScoreSet& cpd_scores, std::size_t element_budget,
                 bool share_tensor) {
    const CpdScores& c = cpd_scores.cpd();
    ScoreSet out;
    out.arc = cpd_scores.arc;
    DenseScores d;
    if (share_tensor) {
        auto shared = std::make_shared<DenseFactor>(materialize(c.sib, element_budget));
        d.sib = shared;
        d.cop = shared;
        d.grd = shared;
    } else {
        d.sib = std::make_shared<DenseFactor>(materialize(c.sib, element_budget));
        d.cop = std::make_shared<DenseFactor>(materialize(c.cop, element_budget));
        d.grd = std::make_shared<DenseFactor>(materialize(c.grd, element_budget));
    }
    out.second_order = std::move(d);
    return out;
}

double time_inference(const ScoreSet& scores, std::size_t iters, std::size_t repeats) {
    using clock = std::chrono::steady_clock;
    (void)infer(scores, iters);  // warmup
    std::vector<double> samples;
    samples.reserve(repeats);
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto t0 = clock::now();
        Posterior q = infer(scores, iters);
        const auto t1 = clock::now();
        // fold the result into the sample so the run cannot be elided
        volatile double sink = q.q.data[0];
        (void)sink;
        samples.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
}

double fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("need at least two points for a slope fit");
    const std::size_t m = xs.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double lx = std::log(xs[i]);
        const double ly = std::log(ys[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (double(m) * sxy - sx * sy) / (double(m) * sxx - sx * sx);
}

EquivalenceReport run_equivalence_check(const EquivalenceOptions& opts) {
    Rng rng(opts.seed);
    EquivalenceReport rep;
    rep.tolerance = opts.tolerance;
    for (std::size_t trial = 0; trial < opts.trials; ++trial) {
        const std::size_t n =
            opts.min_n + rng.next_below(opts.max_n - opts.min_n + 1);
        const std::size_t L = 1 + rng.next_below(opts.max_labels);
        const std::size_t R = 1 + rng.next_below(opts.max_rank);
        const std::size_t iters = 1 + rng.next_below(opts.max_iters);

        ScoreSet cpd = random_cpd_scores(n, L, R, rng.next_u64());
        ScoreSet dense = densify(cpd, kDefaultElementBudget, /*share_tensor=*/false);
        const CpdScores& c = cpd.cpd();

        Posterior qc = softmax_rows(cpd.arc);
        Posterior qd = softmax_rows(dense.arc);
        for (std::size_t m = 0; m <= iters; ++m) {
            for (std::size_t idx = 0; idx < qc.q.size(); ++idx) {
                const double a = qc.q.data[idx];
                const double b = qd.q.data[idx];
                const double den = std::max(std::fabs(a), std::fabs(b));
                if (den > 0.0)
                    rep.max_deviation =
                        std::max(rep.max_deviation, std::fabs(a - b) / den);
            }
            if (m == iters) break;
            Tensor3 field = cpd.arc;
            for (const CpdFactors* f : {&c.sib, &c.cop, &c.grd}) {
                Tensor3 msg = cpd_update_traced(*f, qc.q, nullptr);
                for (std::size_t idx = 0; idx < field.size(); ++idx)
                    field.data[idx] += msg.data[idx];
            }
            if (opts.inject_fault && m == 0)
                field.data[L] += 1e-3;  // cell (0, 1), never clamped
            qc = softmax_rows(field);
            qd = mf_step(dense, qd);
        }
        ++rep.trials;
    }
    rep.pass = rep.max_deviation < rep.tolerance;
    return rep;
}

GradientCheckReport run_gradient_check(const GradientCheckOptions& opts) {
    Rng rng(opts.seed);
    GradientCheckReport rep;
    rep.tolerance = opts.tolerance;
    for (std::size_t inst = 0; inst < opts.instances; ++inst) {
        ModelConfig config;
        config.vocab_size = 8 + rng.next_below(6);
        config.num_labels = 2 + rng.next_below(2);  // 2..3
        config.embed_dim = 4 + rng.next_below(3);
        config.hidden_dim = 4 + rng.next_below(4);
        config.mlp_dim = 3 + rng.next_below(3);
        config.rank = 2 + rng.next_below(3);  // 2..4
        config.window = 1 + rng.next_below(2);
        config.labeled_factors = (inst % 3) != 2;  // presence mode every third

        ParamStore params = init_params(config, rng.next_u64());
        const std::size_t n = 2 + rng.next_below(4);  // 2..5
        std::vector<std::size_t> ids = {Vocab::kRoot};
        for (std::size_t p = 0; p < n; ++p)
            ids.push_back(2 + rng.next_below(config.vocab_size - 2));
        LabeledGraph gold(n + 1, config.num_labels);
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t j = 1; j <= n; ++j) {
                if (i == j) continue;
                if (rng.next_unit() < 0.35)
                    gold.set_label(i, j, 1 + rng.next_below(config.num_labels - 1));
            }

        auto reports = finite_diff_check(params, config, ids, gold, opts.iters,
                                         opts.coords_per_group, opts.h, rng.next_u64());
        for (const FdGroupReport& g : reports) {
            rep.max_deviation = std::max(rep.max_deviation, g.max_rel_dev);
            rep.coords_checked += g.coords;
            rep.coords_skipped += g.skipped;
        }
    }
    rep.pass = rep.max_deviation <= rep.tolerance && rep.coords_checked > 0;
    return rep;
}

std::vector<LabelBenchRow> run_label_bench(const LabelBenchOptions& opts) {
    std::vector<LabelBenchRow> rows;
    for (std::size_t L : opts.label_sizes) {
        LabelBenchRow row;
        row.labels = L;
        ScoreSet cpd = random_cpd_scores(opts.n, L, opts.rank, opts.seed + L);
        row.cpd_seconds = time_inference(cpd, opts.iters, opts.repeats);
        if (dense_element_count(opts.n + 1, L) > opts.element_budget) {
            row.dense_skipped = true;
        } else {
            ScoreSet dense = densify(cpd, opts.element_budget, /*share_tensor=*/true);
            row.dense_seconds = time_inference(dense, opts.iters, opts.repeats);
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<SizeScalingRow> run_size_scaling(const SizeScalingOptions& opts) {
    std::vector<SizeScalingRow> rows;
    for (std::size_t n : opts.sizes) {
        SizeScalingRow row;
        row.n = n;
        ScoreSet cpd = random_cpd_scores(n, opts.num_labels, opts.rank, opts.seed + n);
        row.cpd_per_iter =
            time_inference(cpd, opts.iters, opts.repeats) / double(opts.iters);
        if (dense_element_count(n + 1, opts.num_labels) > opts.element_budget) {
            row.dense_skipped = true;
        } else {
            ScoreSet dense = densify(cpd, opts.element_budget, /*share_tensor=*/true);
            row.dense_per_iter =
                time_inference(dense, opts.iters, opts.repeats) / double(opts.iters);
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace sdparse
