#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "s2d/syndata/syndata.hpp"

namespace s2d::syndata {

class Vocab {
public:
    static constexpr int kPadId = 0;
    static constexpr int kBosId = 1;
    static constexpr int kEosId = 2;

    Vocab();
    explicit Vocab(const std::vector<std::string>& tokens);  // tokens[0..2] must be the specials

    int id(const std::string& token) const;  // throws ErrorKind::vocab
    bool contains(const std::string& token) const { return ids_.count(token) != 0; }
    const std::string& token(int id) const;
    std::vector<int> encode(const Tokens& tokens) const;
    Tokens decode(const std::vector<int>& ids) const;
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    void add(const std::string& token);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

struct CorpusConfig {
    int train_patients = 800;
    int val_patients = 100;
    int test_patients = 100;
    int total_patients = 0;  // 0: sum of the splits
    GenOptions gen;
    std::uint64_t seed = 0;

    void validate() const;
    /// key=value lines; stable order.
    std::string echo() const;
};

enum class Split { train, val, test };
const char* to_string(Split split);
Split parse_split(const std::string& name);

struct CorpusSplit {
    CorpusConfig config;
    std::vector<PatientRecord> train, val, test;
    Vocab vocab;

    const std::vector<PatientRecord>& patients(Split split) const;
    std::vector<PatientRecord>& patients(Split split);
    std::size_t study_count(Split split) const;
};

/// Patient-disjoint splits; patient i's seed is derived from (seed, i).
CorpusSplit build_corpus(const CorpusConfig& config, const Grammar& grammar = default_grammar());

/// Specials, then the sorted train tokens, then any closed-vocabulary token
/// the train split happened not to use.
Vocab build_vocab(const std::vector<PatientRecord>& train, const Grammar& grammar = default_grammar());

// On-disk layout:
//   <dir>/<split>/<patient_id>/<study_index>.img   binary image
//   <dir>/<split>/<patient_id>/<study_index>.rec   tab-separated records
//   <dir>/vocab.txt                                one token per line
//   <dir>/manifest                                 config echo
void write_corpus(const CorpusSplit& corpus, const std::filesystem::path& dir);
CorpusSplit load_corpus(const std::filesystem::path& dir);
bool corpus_exists(const std::filesystem::path& dir);

void write_image(const Image& img, const std::filesystem::path& path);
Image read_image(const std::filesystem::path& path);

std::string format_record(const StudyRecord& study);
/// Parses a .rec body; the image is left empty.
StudyRecord parse_record(const std::string& text);

}  // namespace s2d::syndata
