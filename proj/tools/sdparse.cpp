// Command-line front end: train, parse, check, bench.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "sdparse/bench.hpp"
#include "sdparse/evaluation.hpp"
#include "sdparse/sdp_io.hpp"
#include "sdparse/training.hpp"

namespace {

using namespace sdparse;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::map<std::string, std::string> read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError(path + " line " + std::to_string(line_no) +
                              ": expected key=value");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

SdpDocument read_sdp_file(const std::string& path, SdpFormat format) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open SDP file: " + path);
    return read_sdp(in, format);
}

SdpFormat parse_format(const std::string& name) {
    if (name == "2015") return SdpFormat::V2015;
    if (name == "2014") return SdpFormat::V2014;
    throw FormatError("unknown SDP format '" + name + "' (expected 2015 or 2014)");
}

struct GlobalOverrides {
    std::int64_t seed = -1;
    std::int64_t threads = -1;
    std::int64_t iters_train = -1;
    std::int64_t iters_test = -1;
    std::int64_t rank = -1;
    std::int64_t dense_budget = -1;
};

int cmd_train(const std::string& config_path, const GlobalOverrides& g) {
    auto kv = read_config(config_path);
    auto get = [&](const char* key, const std::string& fallback) {
        auto it = kv.find(key);
        return it == kv.end() ? fallback : it->second;
    };
    auto get_u = [&](const char* key, std::size_t fallback) {
        auto it = kv.find(key);
        return it == kv.end() ? fallback : std::stoull(it->second);
    };
    auto get_d = [&](const char* key, double fallback) {
        auto it = kv.find(key);
        return it == kv.end() ? fallback : std::stod(it->second);
    };

    const std::string train_path = get("train", "");
    if (train_path.empty()) throw FormatError("config misses the 'train' key");
    const SdpFormat format = parse_format(get("format", "2015"));

    TrainConfig cfg;
    cfg.hp = Hyperparams::desk();
    cfg.hp.embed_dim = get_u("embed_dim", cfg.hp.embed_dim);
    cfg.hp.hidden_dim = get_u("hidden_dim", cfg.hp.hidden_dim);
    cfg.hp.mlp_dim = get_u("mlp_dim", cfg.hp.mlp_dim);
    cfg.hp.rank = get_u("rank", cfg.hp.rank);
    cfg.hp.train_iters = get_u("train_iters", cfg.hp.train_iters);
    cfg.hp.test_iters = get_u("test_iters", cfg.hp.test_iters);
    cfg.hp.learning_rate = get_d("lr", cfg.hp.learning_rate);
    cfg.hp.epochs = get_u("epochs", cfg.hp.epochs);
    cfg.hp.seed = get_u("seed", cfg.hp.seed);
    cfg.batch_tokens = get_u("batch_tokens", cfg.batch_tokens);
    cfg.weight_decay = get_d("weight_decay", cfg.weight_decay);
    cfg.clip_norm = get_d("clip_norm", cfg.clip_norm);
    cfg.warmup_frac = get_d("warmup", cfg.warmup_frac);
    cfg.window = get_u("window", cfg.window);
    cfg.labeled_factors = get_u("labeled_factors", 1) != 0;
    cfg.threads = get_u("threads", cfg.threads);
    cfg.max_len = get_u("max_len", cfg.max_len);
    cfg.eval_train = get_u("eval_train", 0) != 0;
    cfg.stop_train_lf1 = get_d("stop_train_lf1", cfg.stop_train_lf1);

    if (g.seed >= 0) cfg.hp.seed = std::uint64_t(g.seed);
    if (g.threads >= 0) cfg.threads = std::size_t(g.threads);
    if (g.iters_train >= 0) cfg.hp.train_iters = std::size_t(g.iters_train);
    if (g.iters_test >= 0) cfg.hp.test_iters = std::size_t(g.iters_test);
    if (g.rank >= 0) cfg.hp.rank = std::size_t(g.rank);

    SdpDocument train_doc = read_sdp_file(train_path, format);
    SdpDocument dev_doc;
    const std::string dev_path = get("dev", "");
    if (!dev_path.empty()) dev_doc = read_sdp_file(dev_path, format);

    const std::string log_path = get("log", "");
    std::ofstream log_file;
    if (!log_path.empty()) {
        log_file.open(log_path);
        if (!log_file) throw FormatError("cannot open log file: " + log_path);
    }
    std::ostream* log = log_path.empty() ? &std::cout : &log_file;

    TrainResult result =
        train(train_doc, dev_path.empty() ? nullptr : &dev_doc, cfg, log);
    if (!log_path.empty())
        for (const std::string& line : result.log_lines) std::cout << line << '\n';

    const std::string ckpt_path = get("checkpoint", "model.ckpt");
    std::ofstream out(ckpt_path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint: " + ckpt_path);
    save_checkpoint(out, result.best);
    std::cout << "checkpoint=" << ckpt_path << " best_epoch=" << result.best_epoch
              << " best_dev_lf1=" << result.best_dev_lf1 << '\n';
    return kExitOk;
}

int cmd_parse(const std::string& ckpt_path, const std::string& input_path,
              const std::string& output_path, const std::string& format_name,
              bool report, bool include_root, const GlobalOverrides& g) {
    std::ifstream ckpt_in(ckpt_path, std::ios::binary);
    if (!ckpt_in) throw FormatError("cannot open checkpoint: " + ckpt_path);
    Checkpoint ckpt = load_checkpoint(ckpt_in);
    const SdpFormat format = parse_format(format_name);

    SdpDocument doc = read_sdp_file(input_path, format);
    align_labels(doc, ckpt.labels);  // vocabulary mismatch is a hard error

    std::size_t iters = ckpt.hyper.test_iters;
    if (g.iters_test >= 0) iters = std::size_t(g.iters_test);
    const std::size_t threads = g.threads >= 1 ? std::size_t(g.threads) : 1;

    std::vector<LabeledGraph> predicted = parse_document(ckpt, doc, iters, threads);

    if (report) {
        std::vector<LabeledGraph> gold;
        for (const SdpSentence& s : doc.sentences)
            gold.push_back(graph_from_gold(s, ckpt.labels));
        F1Report rep = evaluate(predicted, gold, include_root);
        std::cout << rep.to_kv();
    }

    SdpDocument out_doc;
    out_doc.labels = ckpt.labels;
    for (std::size_t s = 0; s < doc.sentences.size(); ++s)
        out_doc.sentences.push_back(
            sentence_with_graph(doc.sentences[s], predicted[s]));
    std::ofstream out(output_path);
    if (!out) throw FormatError("cannot write output: " + output_path);
    write_sdp(out, out_doc, format);
    return kExitOk;
}

int cmd_check(std::size_t n, std::size_t labels, std::size_t rank, std::size_t iters,
              std::size_t trials, bool inject_fault, std::size_t fd_instances,
              const GlobalOverrides& g) {
    EquivalenceOptions eq;
    eq.trials = trials;
    eq.max_n = n;
    eq.max_labels = labels;
    eq.max_rank = rank;
    eq.max_iters = iters;
    eq.inject_fault = inject_fault;
    if (g.seed >= 0) eq.seed = std::uint64_t(g.seed);
    if (g.rank >= 0) eq.max_rank = std::size_t(g.rank);
    EquivalenceReport eq_rep = run_equivalence_check(eq);
    std::cout << "equivalence trials=" << eq_rep.trials
              << " max_deviation=" << eq_rep.max_deviation
              << " tolerance=" << eq_rep.tolerance << " => "
              << (eq_rep.pass ? "pass" : "FAIL") << '\n';

    GradientCheckOptions gc;
    gc.instances = fd_instances;
    if (g.seed >= 0) gc.seed = std::uint64_t(g.seed) + 1;
    if (g.iters_train >= 0) gc.iters = std::size_t(g.iters_train);
    GradientCheckReport gc_rep = run_gradient_check(gc);
    std::cout << "gradients coords=" << gc_rep.coords_checked
              << " skipped=" << gc_rep.coords_skipped
              << " max_deviation=" << gc_rep.max_deviation
              << " tolerance=" << gc_rep.tolerance << " => "
              << (gc_rep.pass ? "pass" : "FAIL") << '\n';

    return (eq_rep.pass && gc_rep.pass) ? kExitOk : kExitNumeric;
}

int cmd_bench(std::size_t n, const std::string& labels_csv, std::size_t rank,
              std::size_t iters, std::size_t repeats, bool scaling,
              const GlobalOverrides& g) {
    std::size_t budget = kDefaultElementBudget;
    if (g.dense_budget >= 0) budget = std::size_t(g.dense_budget);

    if (scaling) {
        SizeScalingOptions opts;
        opts.rank = rank;
        opts.iters = iters;
        opts.repeats = repeats;
        opts.element_budget = budget;
        if (g.seed >= 0) opts.seed = std::uint64_t(g.seed);
        if (g.rank >= 0) opts.rank = std::size_t(g.rank);
        auto rows = run_size_scaling(opts);
        std::cout << "# per-iteration seconds, median of " << opts.repeats
                  << " runs\n";
        std::vector<double> ns, cpd, dense;
        for (const auto& row : rows) {
            std::cout << "n=" << row.n << " cpd_s=" << row.cpd_per_iter;
            if (row.dense_skipped)
                std::cout << " dense=skipped(budget)";
            else
                std::cout << " dense_s=" << row.dense_per_iter;
            std::cout << '\n';
            ns.push_back(double(row.n));
            cpd.push_back(row.cpd_per_iter);
            if (!row.dense_skipped) dense.push_back(row.dense_per_iter);
        }
        std::cout << "cpd_slope=" << fit_loglog_slope(ns, cpd) << '\n';
        if (dense.size() == ns.size())
            std::cout << "dense_slope=" << fit_loglog_slope(ns, dense) << '\n';
        return kExitOk;
    }

    LabelBenchOptions opts;
    opts.n = n;
    opts.rank = rank;
    opts.iters = iters;
    opts.repeats = repeats;
    opts.element_budget = budget;
    if (g.seed >= 0) opts.seed = std::uint64_t(g.seed);
    if (g.rank >= 0) opts.rank = std::size_t(g.rank);
    if (!labels_csv.empty()) {
        opts.label_sizes.clear();
        std::stringstream ss(labels_csv);
        std::string item;
        while (std::getline(ss, item, ',')) opts.label_sizes.push_back(std::stoull(item));
    }
    auto rows = run_label_bench(opts);
    std::cout << "# total seconds for " << opts.iters << " iterations, median of "
              << opts.repeats << " runs, n=" << opts.n << ", rank=" << opts.rank
              << "\n";
    for (const auto& row : rows) {
        std::cout << "L=" << row.labels << " cpd_s=" << row.cpd_seconds;
        if (row.dense_skipped)
            std::cout << " dense=skipped(budget)";
        else
            std::cout << " dense_s=" << row.dense_seconds;
        std::cout << '\n';
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"labeled second-order semantic dependency parser"};
    app.require_subcommand(1);

    GlobalOverrides g;
    app.add_option("--seed", g.seed, "seed override");
    app.add_option("--threads", g.threads, "worker threads (default 1)");
    app.add_option("--iters-train", g.iters_train, "training inference iterations");
    app.add_option("--iters-test", g.iters_test, "test-time inference iterations");
    app.add_option("--rank", g.rank, "factor rank override");
    app.add_option("--dense-budget", g.dense_budget,
                   "element budget for materialized tensors");

    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    std::string config_path;
    train_cmd->add_option("--config", config_path, "key=value config file")->required();

    auto* parse_cmd = app.add_subcommand("parse", "parse an SDP file with a checkpoint");
    std::string ckpt_path, input_path, output_path, format_name = "2015";
    bool report = false, include_root = false;
    parse_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    parse_cmd->add_option("--input", input_path, "input SDP file")->required();
    parse_cmd->add_option("--output", output_path, "output SDP file")->required();
    parse_cmd->add_option("--format", format_name, "2015 or 2014");
    parse_cmd->add_flag("--report", report, "print F1 against the input's gold arcs");
    parse_cmd->add_flag("--include-root-arcs", include_root,
                        "count root/top arcs in the report");

    auto* check_cmd =
        app.add_subcommand("check", "equivalence and gradient verification");
    std::size_t check_n = 8, check_labels = 5, check_rank = 8, check_iters = 5,
                check_trials = 100, fd_instances = 10;
    bool inject_fault = false;
    check_cmd->add_option("--n", check_n, "max sentence length");
    check_cmd->add_option("--labels", check_labels, "max label count");
    check_cmd->add_option("--max-rank", check_rank, "max factor rank");
    check_cmd->add_option("--iters", check_iters, "max inference iterations");
    check_cmd->add_option("--trials", check_trials, "random trials");
    check_cmd->add_option("--fd-instances", fd_instances, "gradient-check instances");
    check_cmd->add_flag("--inject-fault", inject_fault,
                        "corrupt one contraction (negative control)");

    auto* bench_cmd = app.add_subcommand("bench", "timing harness");
    std::size_t bench_n = 30, bench_rank = 300, bench_iters = 3, bench_repeats = 100;
    std::string bench_labels;
    bool bench_scaling = false;
    bench_cmd->add_option("--n", bench_n, "sentence length");
    bench_cmd->add_option("--labels", bench_labels,
                          "comma-separated label sizes (default 1,5,10,20,30,40)");
    bench_cmd->add_option("--bench-rank", bench_rank, "factor rank");
    bench_cmd->add_option("--iters", bench_iters, "inference iterations");
    bench_cmd->add_option("--repeats", bench_repeats, "timing repetitions");
    bench_cmd->add_flag("--scaling", bench_scaling,
                        "run the length-scaling experiment instead");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, g);
        if (parse_cmd->parsed())
            return cmd_parse(ckpt_path, input_path, output_path, format_name, report,
                             include_root, g);
        if (check_cmd->parsed())
            return cmd_check(check_n, check_labels, check_rank, check_iters,
                             check_trials, inject_fault, fd_instances, g);
        if (bench_cmd->parsed())
            return cmd_bench(bench_n, bench_labels, bench_rank, bench_iters,
                             bench_repeats, bench_scaling, g);
    } catch (const BudgetError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const VocabError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
