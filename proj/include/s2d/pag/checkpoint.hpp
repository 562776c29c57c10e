#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "s2d/core/params.hpp"
#include "s2d/pag/optimizer.hpp"

namespace s2d::pag {

inline constexpr char kCheckpointMagic[8] = {'S', '2', 'D', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensors plus a key=value manifest (stage_id, global_step,
/// rng_state, config_hash, ...). Optimizer moments are stored as ordinary
/// entries under opt/m/<param> and opt/v/<param>.
struct Checkpoint {
    std::map<std::string, Matrix> tensors;
    std::map<std::string, std::string> manifest;

    bool operator==(const Checkpoint&) const = default;
};

Checkpoint make_checkpoint(const ParamStore& store, const AdamW* optimizer,
                           std::map<std::string, std::string> manifest);

/// Loads parameter values (and optimizer moments when `optimizer` is set).
/// Entries for parameters the store lacks throw ErrorKind::checkpoint.
void apply_checkpoint(const Checkpoint& ckpt, ParamStore& store, AdamW* optimizer = nullptr,
                      const std::vector<std::string>& skip_namespaces = {});

/// Layout: magic, u32 version, u32 entry count, then per entry
/// (u32 name length, name, u32 dtype code, u32 rank, u32 dims[rank],
/// u64 byte length, u64 FNV-1a of the payload); payloads follow in table order
/// (little-endian), then u32 manifest length and "key=value\n" lines.
/// Entries are written in name order, so save(load(f)) reproduces f.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Corruption throws ErrorKind::checkpoint naming the offending entry.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace s2d::pag
