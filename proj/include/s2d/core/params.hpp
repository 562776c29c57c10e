#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "s2d/core/tensor.hpp"

namespace s2d {

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;  // empty until the first backward pass touches it
    bool trainable = false;
    bool decay = true;  // false for norms, biases and query banks
};

/// Names are namespaced with '/' ("sma_v/attn/wq"). A selector entry such as
/// "dec/lora" matches every parameter whose name starts with "dec/lora/".
bool in_namespace(std::string_view name, std::string_view ns);
bool matches_any(std::string_view name, const std::vector<std::string>& namespaces);

/// Owns every tensor of a model. Parameter addresses are stable for the
/// lifetime of the store.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Parameter& create(const std::string& name, Matrix init, bool decay = true);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    /// Sorted by name.
    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::vector<Parameter*> trainable();

    /// Marks exactly the parameters inside `namespaces` as trainable.
    void set_trainable(const std::vector<std::string>& namespaces);
    void freeze_all();
    void zero_grad();

    /// Hash over names and value bytes of every parameter under `ns`
    /// (all parameters when `ns` is empty).
    std::uint64_t fingerprint(std::string_view ns = {}) const;

    /// Top-level groups, e.g. "bank", "sma_v", "dec/base", "dec/lora".
    std::map<std::string, std::uint64_t> group_fingerprints() const;

    std::size_t size() const { return params_.size(); }

private:
    std::map<std::string, std::unique_ptr<Parameter>, std::less<>> params_;
};

/// "dec/lora/blk0/wq/down" -> "dec/lora"; "sma_v/attn/wq" -> "sma_v".
std::string group_of(std::string_view name);

}  // namespace s2d
