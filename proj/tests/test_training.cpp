#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "sdparse/training.hpp"
#include "synthetic.hpp"

using namespace sdparse;
using namespace sdparse::testing;

namespace {

ModelConfig tiny_config(std::size_t vocab, std::size_t L, bool labeled = true) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.num_labels = L;
    c.embed_dim = 5;
    c.hidden_dim = 6;
    c.mlp_dim = 4;
    c.rank = 3;
    c.window = 2;
    c.labeled_factors = labeled;
    return c;
}

LabeledGraph random_gold(std::size_t n, std::size_t L, Rng& rng) {
    LabeledGraph g(n + 1, L);
    for (std::size_t i = 0; i <= n; ++i)
        for (std::size_t j = 1; j <= n; ++j) {
            if (i == j) continue;
            if (rng.next_unit() < 0.3) {
                std::size_t lab = 1 + rng.next_below(L - 1);
                g.set_label(i, j, lab);
            }
        }
    return g;
}

}  // namespace

TEST_CASE("loss: uniform field costs cells * log L") {
    const std::size_t n = 3, L = 4;
    Tensor3 negF(n + 1, n + 1, L, 0.7);  // constant rows are uniform after softmax
    LabeledGraph gold(n + 1, L);
    // non-clamped cells: n^2
    CHECK(loss_from_field(negF, gold) ==
          doctest::Approx(double(n * n) * std::log(double(L))).epsilon(1e-12));
}

TEST_CASE("loss: a huge margin on the gold label drives the loss to zero") {
    const std::size_t n = 2, L = 3;
    LabeledGraph gold(n + 1, L);
    gold.set_label(1, 2, 2);
    Tensor3 negF(n + 1, n + 1, L, 0.0);
    for (std::size_t i = 0; i <= n; ++i)
        for (std::size_t j = 1; j <= n; ++j) {
            if (i == j) continue;
            negF(i, j, gold.label(i, j)) = 60.0;
        }
    CHECK(loss_from_field(negF, gold) < 1e-12);
}

TEST_CASE("loss matches the per-cell log-softmax sum") {
    const std::size_t n = 2, L = 2;
    Tensor3 negF = random_tensor3(n + 1, n + 1, L, 2.0, 17);
    Rng rng(3);
    LabeledGraph gold = random_gold(n, L, rng);
    double expect = 0.0;
    for (std::size_t i = 0; i <= n; ++i)
        for (std::size_t j = 1; j <= n; ++j) {
            if (i == j) continue;
            double z = 0.0;
            for (std::size_t l = 0; l < L; ++l) z += std::exp(negF(i, j, l));
            expect += std::log(z) - negF(i, j, gold.label(i, j));
        }
    CHECK(loss_from_field(negF, gold) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss gradient is softmax minus one-hot, zero on clamped cells") {
    const std::size_t n = 2, L = 3;
    Tensor3 negF = random_tensor3(n + 1, n + 1, L, 1.0, 29);
    Rng rng(4);
    LabeledGraph gold = random_gold(n, L, rng);

    const double h = 1e-6;
    for (std::size_t idx = 0; idx < negF.size(); ++idx) {
        Tensor3 up = negF, down = negF;
        up.data[idx] += h;
        down.data[idx] -= h;
        const double fd =
            (loss_from_field(up, gold) - loss_from_field(down, gold)) / (2 * h);

        const std::size_t L2 = negF.d2;
        const std::size_t cell = idx / L2;
        const std::size_t l = idx % L2;
        const std::size_t i = cell / negF.d1;
        const std::size_t j = cell % negF.d1;
        double expect = 0.0;
        if (!is_clamped_cell(i, j)) {
            const double* row = negF.cell(i, j);
            double mx = row[0];
            for (std::size_t m = 1; m < L2; ++m) mx = std::max(mx, row[m]);
            double z = 0.0;
            for (std::size_t m = 0; m < L2; ++m) z += std::exp(row[m] - mx);
            expect = std::exp(row[l] - mx) / z - (gold.label(i, j) == l ? 1.0 : 0.0);
        }
        CHECK(fd == doctest::Approx(expect).epsilon(1e-4));
    }
}

TEST_CASE("zero iterations: factor heads are structurally unused") {
    auto cfg = tiny_config(10, 3);
    auto params = init_params(cfg, 5);
    Rng rng(6);
    LabeledGraph gold = random_gold(3, 3, rng);
    Tape tape = forward(params, cfg, {0, 2, 3, 4}, gold, /*iters=*/0);
    ParamStore grads = params.zeros_like();
    backward(tape, params, cfg, grads);

    double factor_norm = 0.0, arc_norm = 0.0;
    for (const std::string& name : grads.names) {
        double sq = 0.0;
        for (double v : grads.at(name).data) sq += v * v;
        if (name.rfind("sib.", 0) == 0 || name.rfind("cop.", 0) == 0 ||
            name.rfind("grd.", 0) == 0)
            factor_norm += sq;
        if (name.rfind("arc.", 0) == 0) arc_norm += sq;
    }
    CHECK(factor_norm == 0.0);
    CHECK(arc_norm > 0.0);
}

TEST_CASE("analytic gradients agree with central differences") {
    // full pipeline: all three relations, two unrolled iterations
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto cfg = tiny_config(9, 3, seed != 2);  // second trial in presence mode
        auto params = init_params(cfg, seed * 101);
        Rng rng(seed);
        const std::size_t n = 3 + rng.next_below(2);
        std::vector<std::size_t> ids = {0};
        for (std::size_t p = 0; p < n; ++p) ids.push_back(2 + rng.next_below(7));
        LabeledGraph gold = random_gold(n, 3, rng);

        auto reports =
            finite_diff_check(params, cfg, ids, gold, /*iters=*/2,
                              /*coords_per_group=*/6, /*h=*/1e-5, seed * 7);
        for (const auto& rep : reports) {
            INFO(rep.group);
            CHECK(rep.max_rel_dev <= 1e-4);
        }
    }
}

TEST_CASE("loss_report: totals, per-sentence entries and norms are finite") {
    auto cfg = tiny_config(10, 3);
    auto params = init_params(cfg, 50);
    Rng rng(8);
    std::vector<std::vector<std::size_t>> ids;
    std::vector<LabeledGraph> golds;
    for (int s = 0; s < 3; ++s) {
        ids.push_back({0, 2, 5, 7});
        golds.push_back(random_gold(3, 3, rng));
    }
    LossReport rep = loss_report(params, cfg, ids, golds, 2);
    CHECK(rep.per_sentence.size() == 3);
    CHECK(rep.total >= 0.0);
    CHECK(std::isfinite(rep.total));
    double sum = 0.0;
    for (double l : rep.per_sentence) {
        CHECK(l >= 0.0);
        sum += l;
    }
    CHECK(rep.total == doctest::Approx(sum));
    CHECK(rep.grad_norms.size() == params.names.size());
    for (const auto& [name, norm] : rep.grad_norms) CHECK(std::isfinite(norm));
}

TEST_CASE("clip_global_norm caps large gradients and keeps small ones") {
    auto cfg = tiny_config(6, 2);
    auto grads = init_params(cfg, 3);  // random values as stand-in gradients
    double before = clip_global_norm(grads, 1.0);
    CHECK(before > 1.0);
    double after = 0.0;
    for (const std::string& name : grads.names)
        for (double v : grads.at(name).data) after += v * v;
    CHECK(std::sqrt(after) == doctest::Approx(1.0).epsilon(1e-9));
    ParamStore copy = grads;
    CHECK(clip_global_norm(grads, 10.0) <= 10.0);
    for (const std::string& name : grads.names)
        CHECK(grads.at(name).data == copy.at(name).data);  // untouched below the cap
}

TEST_CASE("AdamW steps reduce the loss on a tiny problem") {
    auto cfg = tiny_config(8, 2);
    auto params = init_params(cfg, 11);
    std::vector<std::size_t> ids = {0, 2, 3};
    LabeledGraph gold(3, 2);
    gold.set_label(1, 2, 1);

    AdamW opt(params);
    double first = forward_loss(params, cfg, ids, gold, 1);
    double last = first;
    for (int step = 0; step < 40; ++step) {
        Tape tape = forward(params, cfg, ids, gold, 1);
        ParamStore grads = params.zeros_like();
        backward(tape, params, cfg, grads);
        opt.step(params, grads, 5e-3, 0.0);
        last = tape.loss;
    }
    CHECK(last < first);
}

TEST_CASE("train is deterministic for a fixed seed") {
    auto doc = make_memorization_corpus(6, 12, 99);
    TrainConfig cfg;
    cfg.hp = Hyperparams::desk();
    cfg.hp.embed_dim = 6;
    cfg.hp.hidden_dim = 6;
    cfg.hp.mlp_dim = 4;
    cfg.hp.rank = 3;
    cfg.hp.epochs = 3;
    cfg.hp.learning_rate = 1e-3;
    cfg.hp.seed = 7;
    auto r1 = train(doc, nullptr, cfg, nullptr);
    auto r2 = train(doc, nullptr, cfg, nullptr);
    CHECK(r1.epoch_losses == r2.epoch_losses);
    for (const std::string& name : r1.best.params.names)
        CHECK(r1.best.params.at(name).data == r2.best.params.at(name).data);
}

TEST_CASE("thread count does not change gradient accumulation materially") {
    auto doc = make_memorization_corpus(5, 10, 123);
    TrainConfig base;
    base.hp = Hyperparams::desk();
    base.hp.embed_dim = 5;
    base.hp.hidden_dim = 5;
    base.hp.mlp_dim = 4;
    base.hp.rank = 2;
    base.hp.epochs = 2;
    base.hp.seed = 3;
    TrainConfig threaded = base;
    threaded.threads = 3;
    auto r1 = train(doc, nullptr, base, nullptr);
    auto r2 = train(doc, nullptr, threaded, nullptr);
    REQUIRE(r1.epoch_losses.size() == r2.epoch_losses.size());
    for (std::size_t e = 0; e < r1.epoch_losses.size(); ++e)
        CHECK(std::fabs(r1.epoch_losses[e] - r2.epoch_losses[e]) <= 1e-8);
}

TEST_CASE("training on empty-graph data predicts all NULL") {
    SdpDocument doc;
    for (int s = 0; s < 8; ++s) {
        SdpSentence sent;
        for (int t = 0; t < 4; ++t)
            sent.tokens.push_back(Token{"tok" + std::to_string(t), "_", "X", "_"});
        sent.top_marks.assign(4, false);
        sent.pred_marks.assign(4, false);
        doc.sentences.push_back(sent);
    }
    doc.labels.add("ARG1");  // vocabulary exists, data never uses it

    TrainConfig cfg;
    cfg.hp = Hyperparams::desk();
    cfg.hp.embed_dim = 5;
    cfg.hp.hidden_dim = 5;
    cfg.hp.mlp_dim = 4;
    cfg.hp.rank = 2;
    cfg.hp.epochs = 10;
    cfg.hp.learning_rate = 2e-2;
    cfg.batch_tokens = 8;

    // all-zero dev LF1 (0/0 convention) is handled, not fatal
    auto with_dev = train(doc, &doc, cfg, nullptr);
    CHECK(with_dev.best_dev_lf1 == 0.0);

    // without a dev split the last epoch is kept; it must be all-NULL by now
    auto result = train(doc, nullptr, cfg, nullptr);
    auto preds = parse_document(result.best, doc, 2);
    for (const auto& g : preds) CHECK(g.arc_count() == 0);
}

TEST_CASE("metrics log lines carry epoch, split, loss and lf1 fields") {
    auto doc = make_memorization_corpus(4, 10, 5);
    TrainConfig cfg;
    cfg.hp = Hyperparams::desk();
    cfg.hp.embed_dim = 5;
    cfg.hp.hidden_dim = 5;
    cfg.hp.mlp_dim = 4;
    cfg.hp.rank = 2;
    cfg.hp.epochs = 2;
    std::ostringstream log;
    auto result = train(doc, &doc, cfg, &log);
    CHECK(result.log_lines.size() == 4);  // train + dev per epoch
    CHECK(result.log_lines[0].rfind("epoch=1 split=train loss=", 0) == 0);
    CHECK(result.log_lines[1].find("split=dev") != std::string::npos);
    CHECK(result.log_lines[1].find("lf1=") != std::string::npos);
    CHECK(log.str().find("epoch=2") != std::string::npos);
}

TEST_CASE("unseen dev labels abort training at ingestion") {
    auto doc = make_memorization_corpus(4, 10, 6);
    SdpDocument dev;
    std::size_t weird = dev.labels.add("NEVER-SEEN");
    SdpSentence s;
    s.tokens = {Token{"w1", "_", "X", "_"}, Token{"w2", "_", "X", "_"}};
    s.top_marks = {false, false};
    s.pred_marks = {true, false};
    s.gold_arcs = {Arc{1, 2, weird}};
    dev.sentences.push_back(s);

    TrainConfig cfg;
    cfg.hp = Hyperparams::desk();
    cfg.hp.epochs = 1;
    CHECK_THROWS_AS((void)train(doc, &dev, cfg, nullptr), VocabError);
}

TEST_CASE("loss decreases over the first epochs for nearly all seeds") {
    std::size_t improved = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto doc = make_memorization_corpus(8, 14, 1000 + seed);
        TrainConfig cfg;
        cfg.hp = Hyperparams::desk();
        cfg.hp.embed_dim = 8;
        cfg.hp.hidden_dim = 8;
        cfg.hp.mlp_dim = 6;
        cfg.hp.rank = 4;
        cfg.hp.epochs = 5;
        cfg.hp.learning_rate = 2e-3;
        cfg.hp.seed = seed;
        auto result = train(doc, nullptr, cfg, nullptr);
        if (result.epoch_losses.back() < result.epoch_losses.front()) ++improved;
    }
    CHECK(improved >= 9);
}

TEST_CASE("training diverges loudly when the step size is absurd") {
    auto doc = make_memorization_corpus(4, 10, 44);
    TrainConfig cfg;
    cfg.hp = Hyperparams::desk();
    cfg.hp.embed_dim = 5;
    cfg.hp.hidden_dim = 5;
    cfg.hp.mlp_dim = 4;
    cfg.hp.rank = 2;
    cfg.hp.epochs = 6;
    cfg.hp.learning_rate = 1e50;
    cfg.weight_decay = 0.0;
    CHECK_THROWS_AS((void)train(doc, nullptr, cfg, nullptr), NumericError);
}
