#include "s2d/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "s2d/cli/config.hpp"
#include "s2d/cli/plot.hpp"
#include "s2d/core/error.hpp"
#include "s2d/pag/runner.hpp"

namespace s2d::cli {
namespace {

namespace fs = std::filesystem;

struct Failure : std::runtime_error {
    int code;
    Failure(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool strict_serial = false;
};

void note(const std::string& msg) { std::cerr << msg << '\n'; }

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw Error(ErrorKind::io, "cannot read " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::io, "cannot write " + p.string());
    f << text;
}

std::string fixed(double v, int prec = 4) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

RunConfig resolve_config(const Globals& g) {
    RunConfig c = g.config.empty() ? preset_config("desk") : load_config(g.config);
    if (g.seed) c.seed = *g.seed;
    c.validate();
    return c;
}

fs::path corpus_path(const RunConfig& c) {
    const fs::path p(c.corpus_dir);
    return p.is_absolute() ? p : home_dir() / p;
}

syndata::CorpusSplit open_corpus(const fs::path& dir) {
    if (!syndata::corpus_exists(dir)) {
        throw Failure(kMissingCorpus, "no corpus at " + dir.string() + " (run gen-corpus first)");
    }
    return syndata::load_corpus(dir);
}

pag::Experiment make_experiment(const RunConfig& c, const syndata::CorpusSplit& corpus) {
    pag::Experiment exp;
    exp.corpus = &corpus;
    exp.model = c.model;
    exp.train = c.train;
    exp.cache_dir = home_dir() / "cache";
    exp.progress = note;
    return exp;
}

// Writes config.echo, or refuses when the directory holds a different one.
void claim_dir(const fs::path& dir, const RunConfig& c) {
    const fs::path echo_path = dir / "config.echo";
    const std::string text = echo(c);
    if (fs::exists(echo_path)) {
        if (read_file(echo_path) != text) {
            throw Failure(kBadConfig, dir.string() + " was created with a different config; refusing to resume");
        }
        return;
    }
    write_file(echo_path, text);
}

std::string metrics_line(const eval::MetricReport& m) {
    return "B@1 " + fixed(m.bleu[0]) + "  B@2 " + fixed(m.bleu[1]) + "  B@3 " + fixed(m.bleu[2]) + "  B@4 " +
           fixed(m.bleu[3]) + "  R-L " + fixed(m.rouge_l) + "  CE P/R/F1 " + fixed(m.ce_precision) + "/" +
           fixed(m.ce_recall) + "/" + fixed(m.ce_f1) + "  (" + std::to_string(m.samples) + " studies)";
}

void log_eval(pag::MetricsLog& log, long step, const std::string& split, const eval::MetricReport& m) {
    const std::pair<const char*, double> values[] = {
        {"bleu1", m.bleu[0]},        {"bleu2", m.bleu[1]},     {"bleu3", m.bleu[2]},   {"bleu4", m.bleu[3]},
        {"rouge_l", m.rouge_l},      {"ce_precision", m.ce_precision}, {"ce_recall", m.ce_recall},
        {"ce_f1", m.ce_f1}};
    for (const auto& [name, v] : values) log.write(step, "eval", split + "." + name, v, 0.0);
}

std::vector<int> stage_checkpoints(const fs::path& dir) {
    std::vector<int> found;
    for (int k = 1; fs::exists(dir / ("stage" + std::to_string(k) + ".ckpt")); ++k) found.push_back(k);
    return found;
}

std::map<std::string, std::string> manifest_for(const RunConfig& c, const pag::StageEvent& ev, const std::string& path,
                                                bool strict_serial) {
    const auto& r = *ev.result;
    return {{"plan", c.plan},
            {"connector", c.model.connector},
            {"seed", std::to_string(c.seed)},
            {"stage_index", std::to_string(ev.index)},
            {"stage_id", std::to_string(r.stage_id)},
            {"path", path},
            {"global_step", std::to_string(ev.global_step)},
            {"stage_steps", std::to_string(r.steps)},
            {"epochs_run", std::to_string(r.epochs_run)},
            {"probe_start", fixed(r.probe_start, 6)},
            {"probe_end", fixed(r.probe_end, 6)},
            {"rng_seed", hex64(derive_seed(c.seed, hash_string(path)))},
            {"config_hash", hex64(config_hash(c))},
            {"strict_serial", strict_serial ? "1" : "0"}};
}

// ---------------------------------------------------------------- commands

int cmd_gen_corpus(const Globals& g) {
    RunConfig c = resolve_config(g);
    if (g.seed) c.corpus.seed = *g.seed;
    const fs::path dir = g.out.empty() ? corpus_path(c) : fs::path(g.out);
    note("generating corpus into " + dir.string());
    const auto corpus = syndata::build_corpus(c.corpus);
    syndata::write_corpus(corpus, dir);
    std::cout << "corpus " << dir.string() << ": train " << corpus.study_count(syndata::Split::train) << ", val "
              << corpus.study_count(syndata::Split::val) << ", test " << corpus.study_count(syndata::Split::test)
              << " studies; vocab " << corpus.vocab.size() << '\n';
    return kOk;
}

int cmd_train(const Globals& g, const std::string& plan_override) {
    RunConfig c = resolve_config(g);
    if (!plan_override.empty()) {
        c.plan = plan_override;
        c.validate();
    }
    const auto corpus = open_corpus(corpus_path(c));
    const std::string run_id = c.run_id.empty() ? c.plan + "-" + c.model.connector + "-s" + std::to_string(c.seed)
                                                : c.run_id;
    const fs::path dir = g.out.empty() ? home_dir() / "runs" / run_id : fs::path(g.out);
    fs::create_directories(dir);
    claim_dir(dir, c);

    const pag::Experiment exp = make_experiment(c, corpus);
    const pag::CurriculumPlan plan = pag::make_plan(c.plan, c.train);
    pag::SeedContext ctx(exp, c.seed);
    pag::PrefixCache cache;

    // Resume: finished stages are loaded rather than retrained.
    const auto done = stage_checkpoints(dir);
    for (int k : done) {
        const fs::path file = dir / ("stage" + std::to_string(k) + ".ckpt");
        pag::Checkpoint ckpt = pag::load_checkpoint(file);
        if (ckpt.manifest["config_hash"] != hex64(config_hash(c))) {
            throw Failure(kBadConfig, file.string() + " belongs to a different config");
        }
        pag::PathState st;
        for (auto& [name, m] : ckpt.tensors) {
            if (name.rfind("opt/", 0) != 0) st.params.emplace(name, std::move(m));
        }
        st.global_step = std::stol(ckpt.manifest.at("global_step"));
        st.result.stage_id = std::stoi(ckpt.manifest.at("stage_id"));
        st.result.path = ckpt.manifest.at("path");
        st.result.steps = std::stol(ckpt.manifest.at("stage_steps"));
        st.result.epochs_run = std::stoi(ckpt.manifest.at("epochs_run"));
        st.result.probe_start = std::stod(ckpt.manifest.at("probe_start"));
        st.result.probe_end = std::stod(ckpt.manifest.at("probe_end"));
        cache.put(pag::cache_key(c.seed, c.model.connector, st.result.path), std::move(st));
        note("resuming: stage " + std::to_string(k) + " loaded from " + file.string());
    }

    pag::MetricsLog log(dir / "metrics.tsv", !done.empty());
    const auto on_stage = [&](const pag::StageEvent& ev) {
        if (ev.cached) return;
        const std::string path = ev.result->path;
        const auto manifest = manifest_for(c, ev, path, g.strict_serial);
        pag::save_checkpoint(pag::make_checkpoint(ev.model->store(), ev.optimizer, manifest),
                             dir / ("stage" + std::to_string(ev.index) + ".ckpt"));
    };
    const pag::PlanRun run = pag::run_plan(plan, exp, ctx, c.model.connector, cache, true, on_stage, &log);

    const auto& m = run.eval->metrics;
    log_eval(log, cache.find(pag::cache_key(c.seed, c.model.connector, run.stages.back().path))->global_step, "test",
             m);
    pag::write_predictions(*run.eval, syndata::default_grammar(), dir / "predictions.tsv");

    pag::AblationTable table;
    table.matrix = "run";
    const auto& plans = pag::plan_names();
    const auto info = std::find_if(plans.begin(), plans.end(), [&](const auto& p) { return p.name == c.plan; });
    table.rows.push_back({c.plan, info->label, {c.seed}, {m.bleu[0]}, {m.bleu[3]}, {m.rouge_l}, {m.ce_f1}});
    write_file(dir / "table.tsv", pag::format_table(table));

    for (const auto& s : run.stages) {
        std::cout << "stage " << s.path << ": " << s.epochs_run << " epochs, " << s.steps << " steps, probe loss "
                  << fixed(s.probe_start) << " -> " << fixed(s.probe_end) << '\n';
    }
    std::cout << "test: " << metrics_line(m) << '\n' << "run directory: " << dir.string() << '\n';
    return kOk;
}

int cmd_ablate(const Globals& g, const std::string& matrix, const std::vector<std::string>& only) {
    RunConfig c = resolve_config(g);
    std::vector<std::uint64_t> seeds = c.seeds;
    if (g.seed) seeds = {*g.seed};
    const auto corpus = open_corpus(corpus_path(c));
    const fs::path dir = g.out.empty() ? home_dir() / "ablations" / matrix : fs::path(g.out);
    fs::create_directories(dir);
    write_file(dir / "config.echo", echo(c));

    const pag::Experiment exp = make_experiment(c, corpus);
    const pag::AblationTable table = pag::run_ablation(matrix, exp, seeds, only);
    const std::string tsv = pag::format_table(table);
    write_file(dir / "table.tsv", tsv);

    std::ostringstream summary;
    const auto compare = [&](const std::string& a, const std::string& b) {
        const auto* ra = pag::find_row(table, a);
        const auto* rb = pag::find_row(table, b);
        if (!ra || !rb) return;
        const double diff = pag::mean_sd(ra->ce_f1).mean - pag::mean_sd(rb->ce_f1).mean;
        summary << a << " vs " << b << ": mean CE-F1 difference " << fixed(diff) << ", one-sided sign test p = "
                << fixed(pag::sign_test_greater(ra->ce_f1, rb->ce_f1)) << " over " << ra->ce_f1.size() << " seeds\n";
    };
    if (matrix == "pag") compare("canonical", "s1");
    if (matrix == "connector") compare("sma", "mlp");
    write_file(dir / "summary.txt", summary.str());
    std::cout << tsv << summary.str() << "table: " << (dir / "table.tsv").string() << '\n';
    return kOk;
}

int cmd_eval(const Globals& g, const std::string& run_dir, const std::string& split_name, int stage_index,
             bool without_aux, int context_stage) {
    if (context_stage != 1) {
        throw Failure(kBadConfig, "evaluation always builds stage-1 contexts; --context-stage " +
                                      std::to_string(context_stage) + " is refused");
    }
    const fs::path dir(run_dir);
    if (!fs::exists(dir / "config.echo")) throw Failure(kBadConfig, dir.string() + " is not a run directory");
    RunConfig c = parse_config(read_file(dir / "config.echo"), (dir / "config.echo").string());
    const auto split = syndata::parse_split(split_name);
    const auto corpus = open_corpus(corpus_path(c));
    const auto stages = stage_checkpoints(dir);
    if (stages.empty()) throw Failure(kBadCheckpoint, "no stage checkpoints in " + dir.string());
    const int k = stage_index > 0 ? stage_index : stages.back();
    const fs::path file = dir / ("stage" + std::to_string(k) + ".ckpt");
    const pag::Checkpoint ckpt = pag::load_checkpoint(file);

    pag::S2dModel model(c.model, corpus.vocab.size(), c.seed);
    std::vector<std::string> skip;
    if (without_aux) skip = {"sma_t", "sma_p"};
    pag::apply_checkpoint(ckpt, model.store(), nullptr, skip);
    const pag::FeatureCache features(model, corpus, {split});
    GenerateOptions go;
    go.max_len = c.train.max_gen_len;
    go.mode = c.train.beam ? DecodeMode::beam : DecodeMode::greedy;
    const auto out = pag::evaluate(model, corpus, features, split, go, c.train.eval_limit);
    (void)g;

    pag::MetricsLog log(dir / "metrics.tsv", true);
    const long step = std::stol(ckpt.manifest.count("global_step") ? ckpt.manifest.at("global_step") : "0");
    log_eval(log, step, split_name, out.metrics);
    pag::write_predictions(out, syndata::default_grammar(), dir / "predictions.tsv");
    std::cout << "stage " << k << " checkpoint, " << split_name << ": " << metrics_line(out.metrics) << '\n';
    return kOk;
}

int cmd_export_prompt(const Globals& g, const std::string& id, int n_demos) {
    const RunConfig c = resolve_config(g);
    const auto corpus = open_corpus(corpus_path(c));
    // id: <split>/<patient_id>/<study_index>
    const syndata::StudyRecord* query = nullptr;
    {
        std::istringstream in(id);
        std::string split_s, pid_s, idx_s;
        std::getline(in, split_s, '/');
        std::getline(in, pid_s, '/');
        std::getline(in, idx_s);
        try {
            const auto split = syndata::parse_split(split_s);
            const int pid = std::stoi(pid_s), idx = std::stoi(idx_s);
            for (const auto& p : corpus.patients(split)) {
                if (p.patient_id != pid) continue;
                for (const auto& s : p.studies) {
                    if (s.study_index == idx) query = &s;
                }
            }
        } catch (const std::exception&) {
        }
    }
    if (!query) throw Failure(kUnknownStudy, "unknown study id '" + id + "' (expected <split>/<patient>/<study>)");

    std::vector<syndata::Demonstration> pool;
    for (const auto& p : corpus.train) {
        for (const auto& s : p.studies) {
            if (&s == query || s.phrases.empty()) continue;
            pool.push_back({s.tuples, s.phrases});
        }
    }
    const std::string prompt =
        syndata::render_refinement_prompt(query->tuples, pool, n_demos, derive_seed(c.seed, hash_string(id)));
    std::string file_id = id;
    std::replace(file_id.begin(), file_id.end(), '/', '_');
    const fs::path file = g.out.empty() ? home_dir() / "prompts" / (file_id + ".txt") : fs::path(g.out);
    write_file(file, prompt);
    const auto phrases = syndata::refine_tuples_to_phrases(query->tuples);
    std::cout << "prompt: " << file.string() << "\nrule-based refinement (" << phrases.size() << " phrases):\n";
    for (const auto& ph : phrases) std::cout << "  " << syndata::join(ph) << '\n';
    return kOk;
}

int cmd_plot(const Globals& g, const std::string& run_dir) {
    const fs::path dir(run_dir);
    const fs::path metrics = dir / "metrics.tsv";
    if (!fs::exists(metrics)) throw Failure(kEmptyMetrics, "no metrics.tsv in " + dir.string());
    const auto rows = read_metrics(metrics);
    const auto stages = plotted_stages(rows);
    if (stages.empty()) throw Failure(kEmptyMetrics, metrics.string() + " has no training rows");
    const fs::path out = g.out.empty() ? dir / "plots" : fs::path(g.out);
    for (const auto& s : stages) {
        write_file(out / ("loss_stage" + s + ".tsv"), loss_table(rows, s));
        write_file(out / ("loss_stage" + s + ".svg"), loss_svg(rows, s));
        std::cout << (out / ("loss_stage" + s + ".svg")).string() << '\n';
    }
    if (fs::exists(dir / "table.tsv")) {
        const auto bars = read_table_bars(dir / "table.tsv");
        std::string tsv = "variant\tce_f1\tce_f1_sd\n";
        for (const auto& b : bars) tsv += b.label + "\t" + fixed(b.value) + "\t" + fixed(b.error) + "\n";
        write_file(out / "ablation.tsv", tsv);
        write_file(out / "ablation.svg", bar_svg(bars, "CE-F1 by variant"));
        std::cout << (out / "ablation.svg").string() << '\n';
    }
    return kOk;
}

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::config:
        case ErrorKind::usage:
        case ErrorKind::registry: return kBadConfig;
        case ErrorKind::checkpoint: return kBadCheckpoint;
        default: return kInternal;
    }
}

}  // namespace

fs::path home_dir() {
    if (const char* h = std::getenv("S2D_HOME"); h && *h) return fs::path(h);
    return fs::current_path();
}

int run(const std::vector<std::string>& args) {
    CLI::App app{"s2d: staged vision-language training for synthetic radiograph reports"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "JSON config (preset plus overrides); default: desk preset");
    app.add_option("--seed", g.seed, "override the run seed (corpus seed for gen-corpus)");
    app.add_option("--out", g.out, "output location for the command");
    app.add_flag("--strict-serial", g.strict_serial, "single-threaded, bit-reproducible execution");

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");

    std::string plan;
    auto* train = app.add_subcommand("train", "train one curriculum plan and evaluate it");
    train->add_option("--plan", plan, "canonical, s1, joint, reversed, s1s2 or s1s3");

    std::string matrix;
    std::vector<std::string> only;
    auto* ablate = app.add_subcommand("ablate", "run an ablation matrix over the configured seeds");
    ablate->add_option("--matrix", matrix, "pag or connector")->required();
    ablate->add_option("--only", only, "restrict to these variants")->delimiter(',');

    std::string run_dir, split = "test";
    int stage_index = 0, context_stage = 1;
    bool without_aux = false;
    auto* ev = app.add_subcommand("eval", "evaluate a run's checkpoint");
    ev->add_option("run_dir", run_dir, "run directory")->required();
    ev->add_option("--split", split, "train, val or test");
    ev->add_option("--stage", stage_index, "checkpoint index (default: last)");
    ev->add_flag("--without-aux", without_aux, "do not load the auxiliary adapters (sma_t, sma_p)");
    ev->add_option("--context-stage", context_stage, "accepted only as 1");

    std::string study;
    int demos = syndata::kDefaultPromptDemos;
    auto* prompt = app.add_subcommand("export-prompt", "write the key-phrase refinement prompt for a study");
    prompt->add_option("study_id", study, "<split>/<patient>/<study>")->required();
    prompt->add_option("--demos", demos, "few-shot demonstrations");

    std::string plot_dir;
    auto* plot = app.add_subcommand("plot", "render loss curves and the ablation chart");
    plot->add_option("run_dir", plot_dir, "run or ablation directory")->required();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kBadConfig;
    }
    if (g.strict_serial) Eigen::setNbThreads(1);

    try {
        if (*gen) return cmd_gen_corpus(g);
        if (*train) return cmd_train(g, plan);
        if (*ablate) return cmd_ablate(g, matrix, only);
        if (*ev) return cmd_eval(g, run_dir, split, stage_index, without_aux, context_stage);
        if (*prompt) return cmd_export_prompt(g, study, demos);
        if (*plot) return cmd_plot(g, plot_dir);
    } catch (const Failure& f) {
        std::cerr << "s2d: " << f.what() << '\n';
        return f.code;
    } catch (const Error& e) {
        std::cerr << "s2d: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "s2d: internal error: " << e.what() << '\n';
        return kInternal;
    }
    return kInternal;
}

int run(int argc, const char* const* argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace s2d::cli
