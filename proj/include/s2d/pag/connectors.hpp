#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "s2d/model/sma.hpp"

namespace s2d::pag {

struct ConnectorDims {
    int d_vision = 64;
    int d_text = 64;
    int d_model = 64;
    int n_mem = kDefaultMemoryQueries;
    int heads = 8;
};

/// One connector per role, in Role order (vision, ref_text, key_text).
struct ConnectorSet {
    std::string name;
    MemoryBank bank;  // only set for the shared "sma" variant
    std::array<std::unique_ptr<Connector>, 3> slots;

    const Connector& at(Role role) const { return *slots[static_cast<int>(role)]; }
};

struct ConnectorInfo {
    std::string name;
    std::string label;  // row label in ablation tables
};

/// The five drop-in variants for the adapter slot, in table order.
const std::vector<ConnectorInfo>& connector_names();

/// Builds all three role instances for the named variant. Unknown names throw
/// ErrorKind::registry.
ConnectorSet connector_registry(const std::string& name, ParamStore& store, const ConnectorDims& dims,
                                std::uint64_t seed);

}  // namespace s2d::pag
