#include "s2d/pag/model.hpp"

#include "s2d/core/error.hpp"

namespace s2d::pag {

S2dModel::S2dModel(const ModelConfig& config, int vocab_size, std::uint64_t seed)
    : config_(config),
      vision_(store_, config.vision, derive_seed(seed, 0x11)),
      text_(store_, vocab_size, config.text, derive_seed(seed, 0x12)),
      connectors_(connector_registry(config.connector, store_,
                                     ConnectorDims{config.vision.dim, config.text.dim, config.d_model, config.n_mem,
                                                   config.sma_heads},
                                     derive_seed(seed, 0x13))),
      decoder_(store_,
               DecoderConfig{vocab_size, config.d_model, config.dec_depth, config.dec_heads, config.max_tokens,
                             config.lora, true},
               derive_seed(seed, 0x14)) {}

Snapshot snapshot(const ParamStore& store, std::string_view ns) {
    Snapshot snap;
    for (const Parameter* p : store.all()) {
        if (ns.empty() || in_namespace(p->name, ns)) snap.emplace(p->name, p->value);
    }
    return snap;
}

void restore(ParamStore& store, const Snapshot& snap) {
    for (const auto& [name, value] : snap) {
        Parameter* p = store.find(name);
        if (!p) throw Error(ErrorKind::checkpoint, "no parameter named " + name);
        if (p->value.rows() != value.rows() || p->value.cols() != value.cols()) {
            throw Error(ErrorKind::checkpoint, "shape mismatch for " + name);
        }
        p->value = value;
    }
}

std::string study_id(const syndata::CorpusSplit& corpus, const StudyRef& ref) {
    const auto& patient = corpus.patients(ref.split).at(static_cast<std::size_t>(ref.patient));
    return std::string(syndata::to_string(ref.split)) + "/" + std::to_string(patient.patient_id) + "/" +
           std::to_string(patient.studies.at(static_cast<std::size_t>(ref.study)).study_index);
}

std::vector<int> report_ids(const syndata::Vocab& vocab, const syndata::StudyRecord& study) {
    syndata::Tokens words;
    for (const auto& t : study.report) {
        if (t != syndata::kEos) words.push_back(t);
    }
    return vocab.encode(words);
}

FeatureCache::FeatureCache(const S2dModel& model, const syndata::CorpusSplit& corpus,
                           const std::vector<syndata::Split>& splits) {
    for (auto split : splits) {
        auto& per_patient = features_[split];
        for (const auto& patient : corpus.patients(split)) {
            auto& per_study = per_patient.emplace_back();
            for (const auto& study : patient.studies) {
                StudyFeatures f;
                f.vision = model.vision().encode(study.image);
                f.report = model.text().encode(report_ids(corpus.vocab, study));
                f.phrases.resize(static_cast<Eigen::Index>(study.phrases.size()), model.text().dim());
                for (std::size_t i = 0; i < study.phrases.size(); ++i) {
                    f.phrases.row(static_cast<Eigen::Index>(i)) =
                        model.text().encode_pooled(corpus.vocab.encode(study.phrases[i]));
                }
                per_study.push_back(std::move(f));
            }
        }
    }
}

bool FeatureCache::contains(syndata::Split split) const { return features_.count(split) != 0; }

const StudyFeatures& FeatureCache::get(const StudyRef& ref) const {
    auto it = features_.find(ref.split);
    if (it == features_.end()) throw Error(ErrorKind::data, std::string("features not cached for split ") + syndata::to_string(ref.split));
    return it->second.at(static_cast<std::size_t>(ref.patient)).at(static_cast<std::size_t>(ref.study));
}

}  // namespace s2d::pag
