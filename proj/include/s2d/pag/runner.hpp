#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "s2d/pag/checkpoint.hpp"
#include "s2d/pag/curriculum.hpp"

namespace s2d::pag {

struct Experiment {
    const syndata::CorpusSplit* corpus = nullptr;
    ModelConfig model;
    TrainConfig train;
    /// Decoder warm-up checkpoints are cached here, keyed by everything they
    /// depend on. Empty disables the disk cache.
    std::filesystem::path cache_dir;
    std::function<void(const std::string&)> progress;
};

/// Trained state after a stage path ("1", "1>2", "J", ...) for one seed.
struct PathState {
    Snapshot params;
    long global_step = 0;
    StageResult result;
    std::shared_ptr<const EvalOutput> eval;  // test split, filled on demand
};

/// Memo of trained stage prefixes. Keys combine seed, connector and path, so
/// plans sharing a prefix (s1, s1s2, canonical) train it once.
class PrefixCache {
public:
    const PathState* find(const std::string& key) const;
    PathState* find(const std::string& key);
    PathState& put(const std::string& key, PathState state);
    std::size_t size() const { return states_.size(); }

private:
    std::map<std::string, PathState> states_;
};

struct StageEvent {
    int index = 0;  // 1-based position in the plan
    const StageSpec* spec = nullptr;  // null for joint training
    const StageResult* result = nullptr;
    const S2dModel* model = nullptr;
    const AdamW* optimizer = nullptr;  // null when the stage came from the cache
    long global_step = 0;
    bool cached = false;
};

struct PlanRun {
    std::string plan;
    std::string connector;
    std::uint64_t seed = 0;
    std::vector<StageResult> stages;
    std::shared_ptr<const EvalOutput> eval;
};

/// Holds one seed's model and frozen-encoder features for a connector. Models
/// of different connectors with the same seed share encoders, so the feature
/// cache is built once per seed.
class SeedContext {
public:
    SeedContext(const Experiment& exp, std::uint64_t seed);

    /// The connector's model, reset to its initial weights.
    S2dModel& fresh_model(const std::string& connector);
    const FeatureCache& features() const { return *features_; }
    std::uint64_t seed() const { return seed_; }

private:
    const Experiment* exp_;
    std::uint64_t seed_;
    std::map<std::string, std::unique_ptr<S2dModel>> models_;
    std::map<std::string, Snapshot> initial_;
    std::unique_ptr<FeatureCache> features_;
};

/// Warm-up, then each stage of the plan, reusing any prefix already in
/// `cache`. The model starts from its initial weights whatever ran before.
PlanRun run_plan(const CurriculumPlan& plan, const Experiment& exp, SeedContext& seed_ctx, const std::string& connector,
                 PrefixCache& cache, bool evaluate_test,
                 const std::function<void(const StageEvent&)>& on_stage = {},
                 MetricsLog* log = nullptr);

std::string cache_key(std::uint64_t seed, const std::string& connector, const std::string& path);
std::string warmup_key(std::uint64_t seed);

/// Applies the decoder warm-up from `cache`, then the disk cache, training
/// it on a miss. Returns the warm-up's global step count.
long ensure_warmup(const Experiment& exp, S2dModel& model, const FeatureCache& features, std::uint64_t seed,
                   PrefixCache& cache, MetricsLog* log = nullptr);

EvalOutput evaluate_test(const Experiment& exp, const S2dModel& model, const FeatureCache& features);

struct MeanSd {
    double mean = 0;
    double sd = 0;  // sample standard deviation; 0 for a single value
};
MeanSd mean_sd(const std::vector<double>& xs);

/// One-sided exact sign test for "a > b": ties are dropped, p = P(X ≥ k)
/// with X ~ Binomial(n, 1/2), k the count of positive differences.
double sign_test_greater(const std::vector<double>& a, const std::vector<double>& b);

struct AblationRow {
    std::string variant;
    std::string label;
    std::vector<std::uint64_t> seeds;
    std::vector<double> bleu1, bleu4, rouge_l, ce_f1;  // per seed
};

struct AblationTable {
    std::string matrix;  // "pag" or "connector"
    std::vector<AblationRow> rows;  // sorted by mean CE-F1, descending
};

std::vector<std::string> matrix_names();

/// Variants of the matrix, restricted to `only` when non-empty.
AblationTable run_ablation(const std::string& matrix, const Experiment& exp, const std::vector<std::uint64_t>& seeds,
                           const std::vector<std::string>& only = {});

const AblationRow* find_row(const AblationTable& table, const std::string& variant);
std::string format_table(const AblationTable& table);

}  // namespace s2d::pag
