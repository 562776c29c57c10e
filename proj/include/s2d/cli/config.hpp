#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s2d/pag/curriculum.hpp"
#include "s2d/pag/model.hpp"
#include "s2d/syndata/corpus.hpp"

namespace s2d::cli {

/// Everything a command needs. Files name a preset ("desk" or "paper") and
/// override individual keys on top of it.
struct RunConfig {
    std::string preset = "desk";
    syndata::CorpusConfig corpus;
    pag::ModelConfig model;
    pag::TrainConfig train;
    std::string plan = "canonical";
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};  // ablation matrices
    std::string corpus_dir = "corpus";                    // relative to the S2D home
    std::string run_id;                                   // empty: derived from plan and seed

    /// Throws ErrorKind::config naming the first out-of-bounds field.
    void validate() const;
};

RunConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

/// Strict: unknown keys and ill-typed values throw ErrorKind::config with
/// the key path ("train.stages[1].lr"). The result is validated.
RunConfig parse_config(const std::string& json_text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Resolved config as pretty-printed JSON with every key spelled out;
/// echo(parse_config(echo(c))) == echo(c).
std::string echo(const RunConfig& config);
std::uint64_t config_hash(const RunConfig& config);

}  // namespace s2d::cli
