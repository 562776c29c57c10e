#include "s2d/core/params.hpp"

#include "s2d/core/error.hpp"

namespace s2d {

bool in_namespace(std::string_view name, std::string_view ns) {
    if (ns.empty()) return true;
    if (name.size() < ns.size() || name.substr(0, ns.size()) != ns) return false;
    return name.size() == ns.size() || name[ns.size()] == '/';
}

bool matches_any(std::string_view name, const std::vector<std::string>& namespaces) {
    for (const auto& ns : namespaces) {
        if (in_namespace(name, ns)) return true;
    }
    return false;
}

std::string group_of(std::string_view name) {
    const auto first = name.find('/');
    if (first == std::string_view::npos) return std::string(name);
    if (name.substr(0, first) == "dec") {
        const auto second = name.find('/', first + 1);
        return std::string(name.substr(0, second));
    }
    return std::string(name.substr(0, first));
}

Parameter& ParamStore::create(const std::string& name, Matrix init, bool decay) {
    if (params_.count(name)) throw Error(ErrorKind::config, "duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = std::move(init);
    p->decay = decay;
    auto& ref = *p;
    params_.emplace(name, std::move(p));
    return ref;
}

Parameter& ParamStore::get(const std::string& name) {
    auto* p = find(name);
    if (!p) throw Error(ErrorKind::config, "unknown parameter '" + name + "'");
    return *p;
}

const Parameter& ParamStore::get(const std::string& name) const {
    const auto* p = find(name);
    if (!p) throw Error(ErrorKind::config, "unknown parameter '" + name + "'");
    return *p;
}

Parameter* ParamStore::find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : it->second.get();
}

const Parameter* ParamStore::find(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : it->second.get();
}

std::vector<Parameter*> ParamStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& [_, p] : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParamStore::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& [_, p] : params_) out.push_back(p.get());
    return out;
}

std::vector<Parameter*> ParamStore::trainable() {
    std::vector<Parameter*> out;
    for (auto& [_, p] : params_) {
        if (p->trainable) out.push_back(p.get());
    }
    return out;
}

void ParamStore::set_trainable(const std::vector<std::string>& namespaces) {
    for (auto& [name, p] : params_) p->trainable = matches_any(name, namespaces);
}

void ParamStore::freeze_all() {
    for (auto& [_, p] : params_) p->trainable = false;
}

void ParamStore::zero_grad() {
    for (auto& [_, p] : params_) p->grad.resize(0, 0);
}

std::uint64_t ParamStore::fingerprint(std::string_view ns) const {
    std::uint64_t h = fnv1a(std::string_view("s2d-params"));
    for (const auto& [name, p] : params_) {
        if (!in_namespace(name, ns)) continue;
        h = fnv1a(name, h);
        h = fnv1a(p->value, h);
    }
    return h;
}

std::map<std::string, std::uint64_t> ParamStore::group_fingerprints() const {
    std::map<std::string, std::uint64_t> out;
    for (const auto& [name, p] : params_) {
        const auto group = group_of(name);
        auto [it, inserted] = out.try_emplace(group, fnv1a(std::string_view(group)));
        it->second = fnv1a(p->value, fnv1a(name, it->second));
    }
    return out;
}

}  // namespace s2d
