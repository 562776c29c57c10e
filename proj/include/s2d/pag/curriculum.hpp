#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s2d/eval/metrics.hpp"
#include "s2d/pag/model.hpp"
#include "s2d/pag/optimizer.hpp"

namespace s2d::pag {

struct StageProfile {
    int epochs = 1;
    double lr = 3e-4;
};

struct TrainConfig {
    int batch_size = 16;
    long warmup_steps = 100;
    AdamWConfig adamw;
    std::array<StageProfile, 3> stages = {StageProfile{8, 3e-4}, StageProfile{5, 1e-4}, StageProfile{3, 5e-5}};
    StageProfile pretrain{3, 1e-3};  // decoder language-model warm-up
    int patience = 2;  // epochs without val improvement; ≤ 0 disables early stopping
    double min_delta = 1e-3;
    int key_phrases = 4;      // l
    int lora_from_stage = 2;  // 2, 3, or 0 for never
    bool bank_with_vision = true;
    int probe_size = 256;  // train studies scored at stage start/end
    int max_gen_len = 48;
    bool beam = false;
    int eval_limit = 0;  // 0: whole split
};

/// One curriculum stage. The context recipe is the stage id: stage 1 feeds
/// vision only, stage 2 adds the reference report, stage 3 adds reference and
/// key phrases.
struct StageSpec {
    int stage_id = 1;
    std::vector<std::string> selector;
    StageProfile profile;
    int patience = 2;
    double min_delta = 1e-3;
};

/// Trainable namespaces for a stage: {sma_v, bank} + sma_t (≥2) + sma_p (3),
/// plus dec/lora from `lora_from_stage` on.
std::vector<std::string> stage_selector(int stage_id, const TrainConfig& config);
StageSpec make_stage(int stage_id, const TrainConfig& config);

struct CurriculumPlan {
    std::string name;
    std::vector<StageSpec> stages;  // sequential, or the recipes mixed in joint mode
    bool joint = false;
};

struct PlanInfo {
    std::string name;
    std::string label;
};

/// canonical, s1, joint, reversed, s1s2, s1s3 in table order.
const std::vector<PlanInfo>& plan_names();
CurriculumPlan make_plan(const std::string& name, const TrainConfig& config);

struct Sample {
    StudyRef ref;
    const Matrix* vision = nullptr;
    const Matrix* reference = nullptr;  // stage ≥ 2
    Matrix key;                         // stage 3: sampled phrase rows
    std::vector<int> input;             // BOS + report without its last token
    std::vector<int> target;            // report ids ending in EOS
};

struct Batch {
    int stage = 1;
    std::vector<Sample> samples;
    std::vector<std::vector<int>> padded_targets;  // PAD-filled to the longest report
};

/// Stage 2 picks a different study of the same patient as reference; stage 3
/// also draws min(l, |K|) distinct key phrases. Patients with a single study
/// throw ErrorKind::data at stage ≥ 2.
Batch make_batch(int stage, std::span<const StudyRef> refs, const syndata::CorpusSplit& corpus,
                 const FeatureCache& cache, int key_phrases, Rng& rng);

/// Context rows for one sample, as a node of `g`.
ContextVar sample_context(Graph& g, const S2dModel& model, int stage, const Sample& sample);
/// Evaluated contexts, one per sample.
std::vector<Context> batch_contexts(const S2dModel& model, const Batch& batch);

/// Mean token loss of a batch, Σ NLL / #non-PAD targets. When `backward` is
/// set, gradients accumulate into the trainable parameters.
double batch_loss(const S2dModel& model, const Batch& batch, bool training, std::uint64_t dropout_seed,
                  bool backward);

/// Tab-separated: step, stage, split, loss, lr.
class MetricsLog {
public:
    MetricsLog() = default;
    explicit MetricsLog(std::filesystem::path path, bool append = false);
    void write(long step, const std::string& stage, const std::string& split, double loss, double lr);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

struct TrainEnv {
    const syndata::CorpusSplit* corpus = nullptr;
    const FeatureCache* cache = nullptr;
    TrainConfig config;
    std::uint64_t seed = 0;
    MetricsLog* log = nullptr;
    std::function<void(const std::string&)> progress;
};

struct StageResult {
    int stage_id = 0;
    std::string path;  // stage ids so far, e.g. "1>3"
    long steps = 0;
    int epochs_run = 0;
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;
    double probe_start = 0;
    double probe_end = 0;
};

/// Trains the selector's parameters on the stage's recipe. Randomness derives
/// from (seed, path), so a stage reached through the same prefix of stages is
/// reproduced exactly. A non-finite loss throws ErrorKind::numeric with the
/// step, lr and batch study ids.
StageResult train_stage(S2dModel& model, const StageSpec& spec, const TrainEnv& env, const std::string& path,
                        long& global_step, AdamW* optimizer_out = nullptr);

/// Union objective: batches cycle through the recipes of `plan` in turn.
StageResult train_joint(S2dModel& model, const CurriculumPlan& plan, const TrainEnv& env, long& global_step,
                        AdamW* optimizer_out = nullptr);

/// Language-model warm-up of dec/base and dec/embed on train reports with no
/// prefix; stands in for a pre-trained decoder. Leaves every parameter frozen.
StageResult pretrain_decoder(S2dModel& model, const TrainEnv& env, long& global_step);

std::vector<StudyRef> split_refs(const syndata::CorpusSplit& corpus, syndata::Split split, int limit = 0);

struct Prediction {
    StudyRef ref;
    std::string id;
    syndata::Tokens generated;
    syndata::Tokens reference;
    bool truncated = false;
};

struct EvalOutput {
    eval::MetricReport metrics;
    std::vector<Prediction> predictions;
};

/// Generates from stage-1 contexts only and scores against the ground truth.
EvalOutput evaluate(const S2dModel& model, const syndata::CorpusSplit& corpus, const FeatureCache& cache,
                    syndata::Split split, const GenerateOptions& options, int limit = 0);

void write_predictions(const EvalOutput& out, const syndata::Grammar& grammar, const std::filesystem::path& path);

}  // namespace s2d::pag
