#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "s2d/model/decoder.hpp"
#include "s2d/model/encoders.hpp"
#include "s2d/pag/connectors.hpp"
#include "s2d/syndata/corpus.hpp"

namespace s2d::pag {

struct ModelConfig {
    EncoderConfig vision;
    EncoderConfig text;
    int d_model = 64;
    int n_mem = kDefaultMemoryQueries;
    int sma_heads = 8;
    int dec_depth = 4;
    int dec_heads = 4;
    int max_tokens = 64;
    LoraConfig lora;
    std::string connector = "sma";
};

/// Encoders, the three adapter slots and the decoder over one parameter store.
/// Every component's initialization depends only on (config, vocab size, seed),
/// so two models built with the same seed but different connectors share
/// identical encoders and decoder weights.
class S2dModel {
public:
    S2dModel(const ModelConfig& config, int vocab_size, std::uint64_t seed);
    S2dModel(const S2dModel&) = delete;
    S2dModel& operator=(const S2dModel&) = delete;

    const ModelConfig& config() const { return config_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    const VisualEncoder& vision() const { return vision_; }
    const TextEncoder& text() const { return text_; }
    const ConnectorSet& connectors() const { return connectors_; }
    const Decoder& decoder() const { return decoder_; }

private:
    ModelConfig config_;
    ParamStore store_;
    VisualEncoder vision_;
    TextEncoder text_;
    ConnectorSet connectors_;
    Decoder decoder_;
};

/// Values of every parameter by name.
using Snapshot = std::map<std::string, Matrix>;
Snapshot snapshot(const ParamStore& store, std::string_view ns = {});
/// Copies matching entries back; names missing from the store throw.
void restore(ParamStore& store, const Snapshot& snap);

struct StudyRef {
    syndata::Split split = syndata::Split::train;
    int patient = 0;  // index into the split's patient list
    int study = 0;

    auto operator<=>(const StudyRef&) const = default;
};

std::string study_id(const syndata::CorpusSplit& corpus, const StudyRef& ref);

/// Frozen-encoder outputs for every study of the requested splits. Encoders
/// never change, so caching is exact.
struct StudyFeatures {
    Matrix vision;   // N×D_v patch features
    Matrix report;   // L×D_t, one row per report token (EOS excluded)
    Matrix phrases;  // |K|×D_t, one mean-pooled row per key phrase
};

class FeatureCache {
public:
    FeatureCache(const S2dModel& model, const syndata::CorpusSplit& corpus,
                 const std::vector<syndata::Split>& splits = {syndata::Split::train, syndata::Split::val,
                                                              syndata::Split::test});

    const StudyFeatures& get(const StudyRef& ref) const;
    bool contains(syndata::Split split) const;

private:
    std::map<syndata::Split, std::vector<std::vector<StudyFeatures>>> features_;
};

/// Token ids of a report without <eos>, used as text-encoder input.
std::vector<int> report_ids(const syndata::Vocab& vocab, const syndata::StudyRecord& study);

}  // namespace s2d::pag
