#include "s2d/pag/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "s2d/core/error.hpp"

namespace s2d::pag {
namespace {

using syndata::Split;
using syndata::Vocab;

constexpr int kPretrainStage = 0;

struct Scored {
    double nll = 0;  // summed over tokens
    long tokens = 0;
    double mean() const { return tokens > 0 ? nll / static_cast<double>(tokens) : 0.0; }
};

long target_tokens(const Batch& batch) {
    long n = 0;
    for (const auto& s : batch.samples) {
        n += std::count_if(s.target.begin(), s.target.end(), [](int t) { return t != Vocab::kPadId; });
    }
    return n;
}

std::vector<Batch> fixed_batches(int stage, const std::vector<StudyRef>& refs, const TrainEnv& env,
                                 std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Batch> out;
    const std::size_t bs = static_cast<std::size_t>(std::max(1, env.config.batch_size));
    for (std::size_t i = 0; i < refs.size(); i += bs) {
        const std::span<const StudyRef> chunk(refs.data() + i, std::min(bs, refs.size() - i));
        out.push_back(make_batch(stage, chunk, *env.corpus, *env.cache, env.config.key_phrases, rng));
    }
    return out;
}

Scored score_batches(const S2dModel& model, const std::vector<Batch>& batches) {
    Scored s;
    for (const auto& b : batches) {
        const long n = target_tokens(b);
        s.nll += batch_loss(model, b, false, 0, false) * static_cast<double>(n);
        s.tokens += n;
    }
    return s;
}

std::string batch_ids(const Batch& batch, const syndata::CorpusSplit& corpus) {
    std::string ids;
    for (const auto& s : batch.samples) ids += (ids.empty() ? "" : ",") + study_id(corpus, s.ref);
    return ids;
}

void say(const TrainEnv& env, const std::string& msg) {
    if (env.progress) env.progress(msg);
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(prec);
    ss << v;
    return ss.str();
}

// Shared epoch loop for sequential stages, the joint objective and warm-up.
// `recipe_for(b)` gives the context recipe of the b-th batch of an epoch.
StageResult run_training(S2dModel& model, const std::vector<std::string>& selector, const StageProfile& profile,
                         int patience, double min_delta, const std::vector<int>& recipes, const TrainEnv& env,
                         const std::string& path, const std::string& stage_label, long& global_step,
                         AdamW* optimizer_out) {
    const auto& cfg = env.config;
    const std::uint64_t path_seed = derive_seed(env.seed, hash_string(path));
    ParamStore& store = model.store();
    store.set_trainable(selector);
    const auto params = store.trainable();
    AdamW opt(cfg.adamw);

    const auto train_refs = split_refs(*env.corpus, Split::train);
    const auto val_refs = split_refs(*env.corpus, Split::val);
    if (train_refs.empty()) throw Error(ErrorKind::data, "empty train split");
    const std::size_t bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));
    const long per_epoch = static_cast<long>((train_refs.size() + bs - 1) / bs);
    const long budget = per_epoch * profile.epochs;

    // Probe and validation batches are drawn once so start/end and per-epoch
    // scores compare like with like.
    std::vector<StudyRef> probe_refs(train_refs.begin(),
                                     train_refs.begin() + std::min<std::size_t>(train_refs.size(),
                                                                                static_cast<std::size_t>(std::max(0, cfg.probe_size))));
    std::vector<std::vector<Batch>> probe, val;
    for (std::size_t r = 0; r < recipes.size(); ++r) {
        if (std::find(recipes.begin(), recipes.begin() + static_cast<long>(r), recipes[r]) != recipes.begin() + static_cast<long>(r)) continue;
        probe.push_back(fixed_batches(recipes[r], probe_refs, env, derive_seed(path_seed, 0x9B, recipes[r])));
        val.push_back(fixed_batches(recipes[r], val_refs, env, derive_seed(path_seed, 0x7A1, recipes[r])));
    }
    auto mean_over = [&](const std::vector<std::vector<Batch>>& sets) {
        double sum = 0;
        for (const auto& set : sets) sum += score_batches(model, set).mean();
        return sets.empty() ? 0.0 : sum / static_cast<double>(sets.size());
    };

    StageResult result;
    result.path = path;
    result.stage_id = recipes.size() == 1 ? recipes.front() : -1;
    result.probe_start = mean_over(probe);
    if (env.log) env.log->write(global_step, stage_label, "train_probe", result.probe_start, 0.0);
    say(env, "[" + stage_label + "] start: probe loss " + fmt(result.probe_start) + ", " + std::to_string(params.size()) +
                 " trainable tensors, " + std::to_string(budget) + " steps budget");

    double best_val = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;
    long step = 0;
    for (int epoch = 0; epoch < profile.epochs; ++epoch) {
        std::vector<StudyRef> order = train_refs;
        Rng shuffle(derive_seed(path_seed, 0x5F, epoch));
        std::shuffle(order.begin(), order.end(), shuffle);
        Rng sampler(derive_seed(path_seed, 0xBA7C, epoch));
        Scored epoch_loss;
        for (long b = 0; b < per_epoch; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * bs;
            const std::span<const StudyRef> chunk(order.data() + lo, std::min(bs, order.size() - lo));
            const int recipe = recipes[static_cast<std::size_t>(b) % recipes.size()];
            const Batch batch = make_batch(recipe, chunk, *env.corpus, *env.cache, cfg.key_phrases, sampler);
            store.zero_grad();
            ++step;
            ++global_step;
            const double lr = lr_at(step, profile.lr, cfg.warmup_steps, budget);
            const double loss = batch_loss(model, batch, true, derive_seed(path_seed, 0xD80, step), true);
            if (!std::isfinite(loss)) {
                throw Error(ErrorKind::numeric, "non-finite loss in " + stage_label + " at step " +
                                                    std::to_string(step) + " (global " + std::to_string(global_step) +
                                                    "), lr " + fmt(lr, 8) + "; batch: " + batch_ids(batch, *env.corpus));
            }
            opt.step(params, lr);
            const long n = target_tokens(batch);
            epoch_loss.nll += loss * static_cast<double>(n);
            epoch_loss.tokens += n;
            if (env.log) env.log->write(global_step, stage_label, "train", loss, lr);
        }
        result.train_loss.push_back(epoch_loss.mean());
        const double v = mean_over(val);
        result.val_loss.push_back(v);
        result.epochs_run = epoch + 1;
        if (env.log) env.log->write(global_step, stage_label, "val", v, lr_at(step, profile.lr, cfg.warmup_steps, budget));
        say(env, "[" + stage_label + "] epoch " + std::to_string(epoch + 1) + "/" + std::to_string(profile.epochs) +
                     ": train " + fmt(epoch_loss.mean()) + ", val " + fmt(v));
        if (v < best_val - min_delta) {
            best_val = v;
            bad_epochs = 0;
        } else if (patience > 0 && ++bad_epochs >= patience) {
            say(env, "[" + stage_label + "] validation loss stalled; stopping");
            break;
        }
    }
    result.steps = step;
    result.probe_end = mean_over(probe);
    if (env.log) env.log->write(global_step, stage_label, "train_probe", result.probe_end, 0.0);
    store.zero_grad();
    store.freeze_all();
    if (optimizer_out) *optimizer_out = std::move(opt);
    return result;
}

}  // namespace

std::vector<std::string> stage_selector(int stage_id, const TrainConfig& config) {
    if (stage_id < 1 || stage_id > 3) throw Error(ErrorKind::config, "stage id must be 1..3");
    std::vector<std::string> sel = {"sma_v"};
    if (config.bank_with_vision) sel.push_back("bank");
    if (stage_id >= 2) sel.push_back("sma_t");
    if (stage_id == 3) sel.push_back("sma_p");
    if (config.lora_from_stage > 0 && stage_id >= config.lora_from_stage) sel.push_back("dec/lora");
    return sel;
}

StageSpec make_stage(int stage_id, const TrainConfig& config) {
    StageSpec s;
    s.stage_id = stage_id;
    s.selector = stage_selector(stage_id, config);
    s.profile = config.stages.at(static_cast<std::size_t>(stage_id - 1));
    s.patience = config.patience;
    s.min_delta = config.min_delta;
    return s;
}

const std::vector<PlanInfo>& plan_names() {
    static const std::vector<PlanInfo> plans = {
        {"s1", "Single-stage (S1 only)"},
        {"joint", "Joint (S1+S2+S3)"},
        {"reversed", "Reversed (S1>S3>S2)"},
        {"s1s2", "w/o fine-grained grounding (S1>S2)"},
        {"s1s3", "w/o contextual enhancement (S1>S3)"},
        {"canonical", "Full (S1>S2>S3)"},
    };
    return plans;
}

CurriculumPlan make_plan(const std::string& name, const TrainConfig& config) {
    std::vector<int> ids;
    bool joint = false;
    if (name == "canonical") {
        ids = {1, 2, 3};
    } else if (name == "s1") {
        ids = {1};
    } else if (name == "joint") {
        ids = {1, 2, 3};
        joint = true;
    } else if (name == "reversed") {
        ids = {1, 3, 2};
    } else if (name == "s1s2") {
        ids = {1, 2};
    } else if (name == "s1s3") {
        ids = {1, 3};
    } else {
        throw Error(ErrorKind::config, "unknown plan '" + name + "' (canonical, s1, joint, reversed, s1s2, s1s3)");
    }
    CurriculumPlan plan{name, {}, joint};
    for (int id : ids) plan.stages.push_back(make_stage(id, config));
    return plan;
}

std::vector<StudyRef> split_refs(const syndata::CorpusSplit& corpus, Split split, int limit) {
    std::vector<StudyRef> refs;
    const auto& patients = corpus.patients(split);
    for (std::size_t p = 0; p < patients.size(); ++p) {
        for (std::size_t s = 0; s < patients[p].studies.size(); ++s) {
            if (limit > 0 && static_cast<int>(refs.size()) >= limit) return refs;
            refs.push_back({split, static_cast<int>(p), static_cast<int>(s)});
        }
    }
    return refs;
}

Batch make_batch(int stage, std::span<const StudyRef> refs, const syndata::CorpusSplit& corpus,
                 const FeatureCache& cache, int key_phrases, Rng& rng) {
    if (stage < kPretrainStage || stage > 3) throw Error(ErrorKind::config, "batch stage must be 0..3");
    Batch batch;
    batch.stage = stage;
    std::size_t longest = 0;
    for (const auto& ref : refs) {
        const auto& patient = corpus.patients(ref.split).at(static_cast<std::size_t>(ref.patient));
        const auto& study = patient.studies.at(static_cast<std::size_t>(ref.study));
        Sample s;
        s.ref = ref;
        s.target = corpus.vocab.encode(study.report);
        s.input.reserve(s.target.size());
        s.input.push_back(Vocab::kBosId);
        s.input.insert(s.input.end(), s.target.begin(), s.target.end() - 1);
        if (stage >= 1) s.vision = &cache.get(ref).vision;
        if (stage >= 2) {
            if (patient.studies.size() < 2) {
                throw Error(ErrorKind::data, "patient " + std::to_string(patient.patient_id) +
                                                 " has a single study; no reference report for stage " +
                                                 std::to_string(stage));
            }
            const int other = syndata::select_reference_index(patient, ref.study, rng);
            s.reference = &cache.get({ref.split, ref.patient, other}).report;
        }
        if (stage == 3) {
            const Matrix& all = cache.get(ref).phrases;
            const int have = static_cast<int>(all.rows());
            const int take = std::min(std::max(0, key_phrases), have);
            std::vector<int> idx(static_cast<std::size_t>(have));
            std::iota(idx.begin(), idx.end(), 0);
            for (int i = 0; i < take; ++i) {
                const int j = std::uniform_int_distribution<int>(i, have - 1)(rng);
                std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
            }
            std::sort(idx.begin(), idx.begin() + take);
            s.key.resize(take, all.cols());
            for (int i = 0; i < take; ++i) s.key.row(i) = all.row(idx[static_cast<std::size_t>(i)]);
        }
        longest = std::max(longest, s.target.size());
        batch.samples.push_back(std::move(s));
    }
    for (const auto& s : batch.samples) {
        auto t = s.target;
        t.resize(longest, Vocab::kPadId);
        batch.padded_targets.push_back(std::move(t));
    }
    return batch;
}

ContextVar sample_context(Graph& g, const S2dModel& model, int stage, const Sample& sample) {
    const auto& slots = model.connectors();
    Var v = slots.at(Role::vision).forward(g, *sample.vision);
    std::optional<Var> r, k;
    if (stage >= 2) r = slots.at(Role::ref_text).forward(g, *sample.reference);
    if (stage == 3) k = slots.at(Role::key_text).forward(g, sample.key);
    return build_context(g, stage, v, r, k);
}

std::vector<Context> batch_contexts(const S2dModel& model, const Batch& batch) {
    std::vector<Context> out;
    for (const auto& s : batch.samples) {
        Graph g;
        const ContextVar c = sample_context(g, model, batch.stage, s);
        out.push_back(Context{c.stage, g.value(c.rows), c.lengths});
    }
    return out;
}

double batch_loss(const S2dModel& model, const Batch& batch, bool training, std::uint64_t dropout_seed,
                  bool backward) {
    const long tokens = target_tokens(batch);
    if (tokens == 0) throw Error(ErrorKind::empty_loss, "batch has no target tokens");
    const Real scale = Real(1) / static_cast<Real>(tokens);
    double total = 0;
    for (std::size_t i = 0; i < batch.samples.size(); ++i) {
        const Sample& s = batch.samples[i];
        Graph g(training, derive_seed(dropout_seed, i));
        Var logits;
        if (batch.stage != kPretrainStage) {
            logits = model.decoder().forward(g, sample_context(g, model, batch.stage, s).rows, s.input);
        } else {
            logits = model.decoder().forward(g, s.input);
        }
        Var loss = g.cross_entropy(logits, s.target, Vocab::kPadId, scale);
        total += static_cast<double>(g.value(loss)(0, 0));
        if (backward) g.backward(loss);
    }
    return total;
}

MetricsLog::MetricsLog(std::filesystem::path path, bool append) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    if (append && std::filesystem::exists(path_)) return;
    std::ofstream f(path_, std::ios::trunc);
    if (!f) throw Error(ErrorKind::io, "cannot write " + path_.string());
    f << "step\tstage\tsplit\tloss\tlr\n";
}

void MetricsLog::write(long step, const std::string& stage, const std::string& split, double loss, double lr) {
    if (path_.empty()) return;
    std::ofstream f(path_, std::ios::app);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f\t%.8g", loss, lr);
    f << step << '\t' << stage << '\t' << split << '\t' << buf << '\n';
}

StageResult train_stage(S2dModel& model, const StageSpec& spec, const TrainEnv& env, const std::string& path,
                        long& global_step, AdamW* optimizer_out) {
    return run_training(model, spec.selector, spec.profile, spec.patience, spec.min_delta, {spec.stage_id}, env, path,
                        std::to_string(spec.stage_id), global_step, optimizer_out);
}

StageResult train_joint(S2dModel& model, const CurriculumPlan& plan, const TrainEnv& env, long& global_step,
                        AdamW* optimizer_out) {
    std::vector<std::string> selector;
    std::vector<int> recipes;
    StageProfile profile{0, plan.stages.empty() ? 0.0 : plan.stages.front().profile.lr};
    for (const auto& s : plan.stages) {
        for (const auto& ns : s.selector) {
            if (std::find(selector.begin(), selector.end(), ns) == selector.end()) selector.push_back(ns);
        }
        recipes.push_back(s.stage_id);
        profile.epochs += s.profile.epochs;
    }
    const int patience = plan.stages.empty() ? 2 : plan.stages.front().patience;
    const double min_delta = plan.stages.empty() ? 1e-3 : plan.stages.front().min_delta;
    StageResult r = run_training(model, selector, profile, patience, min_delta, recipes, env, "J", "joint",
                                 global_step, optimizer_out);
    r.stage_id = 0;
    return r;
}

StageResult pretrain_decoder(S2dModel& model, const TrainEnv& env, long& global_step) {
    return run_training(model, {"dec/base", "dec/embed"}, env.config.pretrain, env.config.patience,
                        env.config.min_delta, {kPretrainStage}, env, "P", "warmup", global_step, nullptr);
}

EvalOutput evaluate(const S2dModel& model, const syndata::CorpusSplit& corpus, const FeatureCache& cache, Split split,
                    const GenerateOptions& options, int limit) {
    EvalOutput out;
    std::vector<syndata::Tokens> cands, refs;
    for (const auto& ref : split_refs(corpus, split, limit)) {
        Graph g;
        Var v = model.connectors().at(Role::vision).forward(g, cache.get(ref).vision);
        const Context ctx = build_context(1, g.value(v));
        const GenerateResult gen = model.decoder().generate(ctx, options);
        Prediction p;
        p.ref = ref;
        p.id = study_id(corpus, ref);
        p.generated = corpus.vocab.decode(gen.tokens);
        p.reference = corpus.patients(split)[static_cast<std::size_t>(ref.patient)]
                          .studies[static_cast<std::size_t>(ref.study)]
                          .report;
        p.truncated = gen.truncated;
        cands.push_back(p.generated);
        refs.push_back(p.reference);
        out.predictions.push_back(std::move(p));
    }
    out.metrics = eval::evaluate_reports(cands, refs);
    return out;
}

void write_predictions(const EvalOutput& out, const syndata::Grammar& grammar, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error(ErrorKind::io, "cannot write " + path.string());
    f << "id\tgenerated\tparsed_labels\ttrue_labels\ttruncated\n";
    for (const auto& p : out.predictions) {
        f << p.id << '\t' << syndata::join(p.generated) << '\t'
          << eval::format_labels(eval::parse_findings(p.generated, grammar), grammar.catalog) << '\t'
          << eval::format_labels(eval::parse_findings(p.reference, grammar), grammar.catalog) << '\t'
          << (p.truncated ? 1 : 0) << '\n';
    }
}

}  // namespace s2d::pag
