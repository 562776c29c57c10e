#include "s2d/pag/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "s2d/core/error.hpp"

namespace s2d::pag {
namespace {

void say(const Experiment& exp, const std::string& msg) {
    if (exp.progress) exp.progress(msg);
}

TrainEnv make_env(const Experiment& exp, const FeatureCache& features, std::uint64_t seed, MetricsLog* log) {
    TrainEnv env;
    env.corpus = exp.corpus;
    env.cache = &features;
    env.config = exp.train;
    env.seed = seed;
    env.log = log;
    env.progress = exp.progress;
    return env;
}

// Everything the warm-up result depends on.
std::uint64_t warmup_fingerprint(const Experiment& exp, std::uint64_t seed) {
    const auto& m = exp.model;
    const auto& t = exp.train;
    std::ostringstream ss;
    ss.precision(17);
    ss << exp.corpus->config.echo() << "vocab=" << exp.corpus->vocab.size() << "\nreal=" << sizeof(Real)
       << "\nseed=" << seed << "\nd_model=" << m.d_model << "\ndepth=" << m.dec_depth << "\nheads=" << m.dec_heads
       << "\nmax_tokens=" << m.max_tokens << "\nlora=" << m.lora.rank << "," << m.lora.alpha << "," << m.lora.dropout
       << "\nbatch=" << t.batch_size << "\nwarmup_steps=" << t.warmup_steps << "\nadamw=" << t.adamw.beta1 << ","
       << t.adamw.beta2 << "," << t.adamw.eps << "," << t.adamw.weight_decay << "\npretrain=" << t.pretrain.epochs
       << "," << t.pretrain.lr << "\npatience=" << t.patience << "," << t.min_delta << "\n";
    return fnv1a(ss.str());
}

const std::vector<std::string> kWarmupNamespaces = {"dec/base", "dec/embed"};

Snapshot warmup_snapshot(const ParamStore& store) {
    Snapshot snap;
    for (const auto& ns : kWarmupNamespaces) snap.merge(snapshot(store, ns));
    return snap;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

const PathState* PrefixCache::find(const std::string& key) const {
    auto it = states_.find(key);
    return it == states_.end() ? nullptr : &it->second;
}

PathState* PrefixCache::find(const std::string& key) {
    auto it = states_.find(key);
    return it == states_.end() ? nullptr : &it->second;
}

PathState& PrefixCache::put(const std::string& key, PathState state) {
    return states_.insert_or_assign(key, std::move(state)).first->second;
}

std::string cache_key(std::uint64_t seed, const std::string& connector, const std::string& path) {
    return std::to_string(seed) + "/" + connector + "/" + path;
}

std::string warmup_key(std::uint64_t seed) { return std::to_string(seed) + "/P"; }

SeedContext::SeedContext(const Experiment& exp, std::uint64_t seed) : exp_(&exp), seed_(seed) {
    if (!exp.corpus) throw Error(ErrorKind::usage, "experiment has no corpus");
}

S2dModel& SeedContext::fresh_model(const std::string& connector) {
    auto it = models_.find(connector);
    if (it == models_.end()) {
        ModelConfig cfg = exp_->model;
        cfg.connector = connector;
        auto model = std::make_unique<S2dModel>(cfg, exp_->corpus->vocab.size(), seed_);
        if (!features_) features_ = std::make_unique<FeatureCache>(*model, *exp_->corpus);
        initial_.emplace(connector, snapshot(model->store()));
        it = models_.emplace(connector, std::move(model)).first;
    } else {
        restore(it->second->store(), initial_.at(connector));
    }
    it->second->store().freeze_all();
    return *it->second;
}

long ensure_warmup(const Experiment& exp, S2dModel& model, const FeatureCache& features, std::uint64_t seed,
                   PrefixCache& cache, MetricsLog* log) {
    const std::string key = warmup_key(seed);
    if (const PathState* hit = cache.find(key)) {
        restore(model.store(), hit->params);
        return hit->global_step;
    }
    std::filesystem::path file;
    if (!exp.cache_dir.empty()) {
        file = exp.cache_dir / ("warmup-" + hex64(warmup_fingerprint(exp, seed)) + ".ckpt");
        if (std::filesystem::exists(file)) {
            const Checkpoint ckpt = load_checkpoint(file);
            apply_checkpoint(ckpt, model.store());
            const long steps = std::stol(ckpt.manifest.at("global_step"));
            say(exp, "[warmup] restored from " + file.string());
            cache.put(key, PathState{warmup_snapshot(model.store()), steps, {}, nullptr});
            return steps;
        }
    }
    long global_step = 0;
    StageResult r;
    if (exp.train.pretrain.epochs > 0) {
        const TrainEnv env = make_env(exp, features, seed, log);
        r = pretrain_decoder(model, env, global_step);
    }
    Snapshot snap = warmup_snapshot(model.store());
    if (!file.empty()) {
        Checkpoint ckpt{snap, {{"global_step", std::to_string(global_step)}, {"seed", std::to_string(seed)}}};
        save_checkpoint(ckpt, file);
    }
    cache.put(key, PathState{std::move(snap), global_step, r, nullptr});
    return global_step;
}

EvalOutput evaluate_test(const Experiment& exp, const S2dModel& model, const FeatureCache& features) {
    GenerateOptions go;
    go.max_len = exp.train.max_gen_len;
    go.mode = exp.train.beam ? DecodeMode::beam : DecodeMode::greedy;
    return evaluate(model, *exp.corpus, features, syndata::Split::test, go, exp.train.eval_limit);
}

PlanRun run_plan(const CurriculumPlan& plan, const Experiment& exp, SeedContext& seed_ctx, const std::string& connector,
                 PrefixCache& cache, bool evaluate_now, const std::function<void(const StageEvent&)>& on_stage,
                 MetricsLog* log) {
    S2dModel& model = seed_ctx.fresh_model(connector);
    const FeatureCache& features = seed_ctx.features();
    const std::uint64_t seed = seed_ctx.seed();
    PlanRun run;
    run.plan = plan.name;
    run.connector = connector;
    run.seed = seed;
    long global_step = ensure_warmup(exp, model, features, seed, cache, log);
    const TrainEnv env = make_env(exp, features, seed, log);

    std::string path;
    std::string key;
    const std::size_t n = plan.joint ? 1 : plan.stages.size();
    for (std::size_t i = 0; i < n; ++i) {
        const StageSpec* spec = plan.joint ? nullptr : &plan.stages[i];
        path = plan.joint ? "J" : path.empty() ? std::to_string(spec->stage_id)
                                                : path + ">" + std::to_string(spec->stage_id);
        key = cache_key(seed, connector, path);
        StageEvent ev;
        ev.index = static_cast<int>(i) + 1;
        ev.spec = spec;
        ev.model = &model;
        if (const PathState* hit = cache.find(key)) {
            restore(model.store(), hit->params);
            global_step = hit->global_step;
            run.stages.push_back(hit->result);
            say(exp, "[" + path + "] reusing cached prefix");
            ev.cached = true;
            ev.result = &run.stages.back();
            ev.global_step = global_step;
            if (on_stage) on_stage(ev);
            continue;
        }
        AdamW opt;
        StageResult r = plan.joint ? train_joint(model, plan, env, global_step, &opt)
                                   : train_stage(model, *spec, env, path, global_step, &opt);
        cache.put(key, PathState{snapshot(model.store()), global_step, r, nullptr});
        run.stages.push_back(std::move(r));
        ev.result = &run.stages.back();
        ev.optimizer = &opt;
        ev.global_step = global_step;
        if (on_stage) on_stage(ev);
    }
    if (evaluate_now && !key.empty()) {
        PathState* state = cache.find(key);
        if (!state->eval) state->eval = std::make_shared<const EvalOutput>(evaluate_test(exp, model, features));
        run.eval = state->eval;
    }
    return run;
}

MeanSd mean_sd(const std::vector<double>& xs) {
    MeanSd r;
    if (xs.empty()) return r;
    r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0;
        for (double x : xs) ss += (x - r.mean) * (x - r.mean);
        r.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return r;
}

double sign_test_greater(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error(ErrorKind::usage, "sign test needs paired samples");
    int n = 0, k = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) continue;
        ++n;
        if (a[i] > b[i]) ++k;
    }
    if (n == 0) return 1.0;
    double p = 0;
    for (int j = k; j <= n; ++j) {
        p += std::exp(std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0) - n * std::log(2.0));
    }
    return std::min(1.0, p);
}

std::vector<std::string> matrix_names() { return {"pag", "connector"}; }

AblationTable run_ablation(const std::string& matrix, const Experiment& exp, const std::vector<std::uint64_t>& seeds,
                           const std::vector<std::string>& only) {
    struct Variant {
        std::string name, label, plan, connector;
    };
    std::vector<Variant> variants;
    if (matrix == "pag") {
        for (const auto& p : plan_names()) variants.push_back({p.name, p.label, p.name, exp.model.connector});
    } else if (matrix == "connector") {
        for (const auto& c : connector_names()) variants.push_back({c.name, c.label, "canonical", c.name});
    } else {
        throw Error(ErrorKind::config, "unknown ablation matrix '" + matrix + "' (pag, connector)");
    }
    if (!only.empty()) {
        for (const auto& name : only) {
            if (std::none_of(variants.begin(), variants.end(), [&](const Variant& v) { return v.name == name; })) {
                throw Error(ErrorKind::config, "matrix " + matrix + " has no variant '" + name + "'");
            }
        }
        std::erase_if(variants, [&](const Variant& v) {
            return std::find(only.begin(), only.end(), v.name) == only.end();
        });
    }
    if (seeds.empty()) throw Error(ErrorKind::config, "ablation needs at least one seed");

    AblationTable table;
    table.matrix = matrix;
    for (const auto& v : variants) table.rows.push_back({v.name, v.label, {}, {}, {}, {}, {}});
    for (std::uint64_t seed : seeds) {
        SeedContext ctx(exp, seed);
        PrefixCache cache;
        for (std::size_t i = 0; i < variants.size(); ++i) {
            const auto& v = variants[i];
            say(exp, "== " + matrix + "/" + v.name + " seed " + std::to_string(seed));
            const PlanRun run = run_plan(make_plan(v.plan, exp.train), exp, ctx, v.connector, cache, true);
            const auto& m = run.eval->metrics;
            auto& row = table.rows[i];
            row.seeds.push_back(seed);
            row.bleu1.push_back(m.bleu[0]);
            row.bleu4.push_back(m.bleu[3]);
            row.rouge_l.push_back(m.rouge_l);
            row.ce_f1.push_back(m.ce_f1);
            say(exp, "   CE-F1 " + fmt(m.ce_f1) + ", B@4 " + fmt(m.bleu[3]));
        }
    }
    std::stable_sort(table.rows.begin(), table.rows.end(), [](const AblationRow& a, const AblationRow& b) {
        return mean_sd(a.ce_f1).mean > mean_sd(b.ce_f1).mean;
    });
    return table;
}

const AblationRow* find_row(const AblationTable& table, const std::string& variant) {
    for (const auto& r : table.rows) {
        if (r.variant == variant) return &r;
    }
    return nullptr;
}

std::string format_table(const AblationTable& table) {
    std::ostringstream out;
    out << "rank\tvariant\tlabel\tseeds\tbleu1\tbleu1_sd\tbleu4\tbleu4_sd\trouge_l\trouge_l_sd\tce_f1\tce_f1_sd\tce_f1_"
           "by_seed\n";
    int rank = 0;
    for (const auto& r : table.rows) {
        out << ++rank << '\t' << r.variant << '\t' << r.label << '\t' << r.seeds.size();
        for (const auto* xs : {&r.bleu1, &r.bleu4, &r.rouge_l, &r.ce_f1}) {
            const MeanSd ms = mean_sd(*xs);
            out << '\t' << fmt(ms.mean) << '\t' << fmt(ms.sd);
        }
        out << '\t';
        for (std::size_t i = 0; i < r.ce_f1.size(); ++i) out << (i ? "," : "") << fmt(r.ce_f1[i]);
        out << '\n';
    }
    return out.str();
}

}  // namespace s2d::pag
