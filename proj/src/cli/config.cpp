#include "s2d/cli/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "s2d/core/error.hpp"
#include "s2d/pag/connectors.hpp"

namespace s2d::cli {
namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& key, const std::string& msg) {
    throw Error(ErrorKind::config, key + ": " + msg);
}

template <typename T>
void check_range(const std::string& key, T v, T lo, T hi) {
    if (v < lo || v > hi) {
        std::ostringstream ss;
        ss << "value " << v << " outside [" << lo << ", " << hi << "]";
        bad(key, ss.str());
    }
}

// Shortest decimal that reads back to the same Real, so 0.1f echoes as 0.1.
double tidy(Real v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*g", std::numeric_limits<Real>::max_digits10 - 1, static_cast<double>(v));
    if (static_cast<Real>(std::strtod(buf, nullptr)) != v) {
        std::snprintf(buf, sizeof(buf), "%.*g", std::numeric_limits<Real>::max_digits10, static_cast<double>(v));
    }
    return std::strtod(buf, nullptr);
}

Json profile_json(const pag::StageProfile& p) { return Json{{"epochs", p.epochs}, {"lr", p.lr}}; }

Json to_json(const RunConfig& c) {
    const auto& g = c.corpus.gen;
    Json corpus = {{"train_patients", c.corpus.train_patients},
                   {"val_patients", c.corpus.val_patients},
                   {"test_patients", c.corpus.test_patients},
                   {"seed", c.corpus.seed},
                   {"min_studies", g.min_studies},
                   {"max_studies", g.max_studies},
                   {"max_labels", g.max_labels},
                   {"image_size", g.image_size},
                   {"patch_size", g.patch_size}};
    const auto& m = c.model;
    Json model = {{"d_vision", m.vision.dim},
                  {"d_text", m.text.dim},
                  {"encoder_depth", m.vision.depth},
                  {"encoder_heads", m.vision.heads},
                  {"d_model", m.d_model},
                  {"n_mem", m.n_mem},
                  {"sma_heads", m.sma_heads},
                  {"depth", m.dec_depth},
                  {"heads", m.dec_heads},
                  {"max_tokens", m.max_tokens},
                  {"connector", m.connector},
                  {"lora", {{"rank", m.lora.rank}, {"alpha", tidy(m.lora.alpha)}, {"dropout", tidy(m.lora.dropout)}}}};
    const auto& t = c.train;
    Json stages = Json::array();
    for (const auto& s : t.stages) stages.push_back(profile_json(s));
    Json train = {{"batch_size", t.batch_size},
                  {"warmup_steps", t.warmup_steps},
                  {"beta1", t.adamw.beta1},
                  {"beta2", t.adamw.beta2},
                  {"eps", t.adamw.eps},
                  {"weight_decay", t.adamw.weight_decay},
                  {"stages", stages},
                  {"decoder_warmup", profile_json(t.pretrain)},
                  {"patience", t.patience},
                  {"min_delta", t.min_delta},
                  {"key_phrases", t.key_phrases},
                  {"lora_from_stage", t.lora_from_stage},
                  {"bank_with_vision", t.bank_with_vision},
                  {"probe_size", t.probe_size},
                  {"max_gen_len", t.max_gen_len},
                  {"beam", t.beam},
                  {"eval_limit", t.eval_limit}};
    return Json{{"preset", c.preset}, {"plan", c.plan},     {"seed", c.seed},   {"seeds", c.seeds},
                {"corpus_dir", c.corpus_dir}, {"run_id", c.run_id}, {"corpus", corpus}, {"model", model},
                {"train", train}};
}

bool same_kind(const Json& a, const Json& b) {
    if (a.is_number() && b.is_number()) {
        // Integer fields stay integers; float fields accept either.
        if (a.is_number_float()) return true;
        if (b.is_number_float()) return false;
        return !a.is_number_unsigned() || b.is_number_unsigned();
    }
    return a.type() == b.type();
}

// Overlays `user` onto `base` in place. Every user key must already exist in
// the base (the base is a fully spelled-out preset), with a compatible type.
void overlay(Json& base, const Json& user, const std::string& path) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        auto slot = base.find(it.key());
        if (slot == base.end()) bad(key, "unknown key");
        const Json& v = it.value();
        if (slot->is_object()) {
            if (!v.is_object()) bad(key, "expected an object");
            overlay(*slot, v, key);
        } else if (slot->is_array()) {
            if (!v.is_array()) bad(key, "expected an array");
            const Json proto = slot->empty() ? Json() : slot->front();
            Json out = Json::array();
            for (std::size_t i = 0; i < v.size(); ++i) {
                const std::string elem = key + "[" + std::to_string(i) + "]";
                if (proto.is_object()) {
                    if (!v[i].is_object()) bad(elem, "expected an object");
                    Json e = i < slot->size() ? (*slot)[i] : proto;
                    overlay(e, v[i], elem);
                    out.push_back(e);
                } else {
                    if (!proto.is_null() && !same_kind(proto, v[i])) bad(elem, "wrong type");
                    out.push_back(v[i]);
                }
            }
            *slot = out;
        } else {
            if (!same_kind(*slot, v)) bad(key, std::string("expected ") + slot->type_name() + ", got " + v.type_name());
            *slot = v;
        }
    }
}

template <typename T>
T get(const Json& j, const char* key, const std::string& path) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        bad(path + key, "missing or ill-typed");
    }
}

pag::StageProfile profile_from(const Json& j, const std::string& path) {
    return {get<int>(j, "epochs", path + "."), get<double>(j, "lr", path + ".")};
}

RunConfig from_json(const Json& j) {
    RunConfig c;
    c.preset = get<std::string>(j, "preset", "");
    c.plan = get<std::string>(j, "plan", "");
    c.seed = get<std::uint64_t>(j, "seed", "");
    c.seeds = get<std::vector<std::uint64_t>>(j, "seeds", "");
    c.corpus_dir = get<std::string>(j, "corpus_dir", "");
    c.run_id = get<std::string>(j, "run_id", "");

    const Json& cj = j.at("corpus");
    c.corpus.train_patients = get<int>(cj, "train_patients", "corpus.");
    c.corpus.val_patients = get<int>(cj, "val_patients", "corpus.");
    c.corpus.test_patients = get<int>(cj, "test_patients", "corpus.");
    c.corpus.seed = get<std::uint64_t>(cj, "seed", "corpus.");
    c.corpus.gen.min_studies = get<int>(cj, "min_studies", "corpus.");
    c.corpus.gen.max_studies = get<int>(cj, "max_studies", "corpus.");
    c.corpus.gen.max_labels = get<int>(cj, "max_labels", "corpus.");
    c.corpus.gen.image_size = get<int>(cj, "image_size", "corpus.");
    c.corpus.gen.patch_size = get<int>(cj, "patch_size", "corpus.");

    const Json& mj = j.at("model");
    auto& m = c.model;
    m.vision.dim = get<int>(mj, "d_vision", "model.");
    m.text.dim = get<int>(mj, "d_text", "model.");
    m.vision.depth = m.text.depth = get<int>(mj, "encoder_depth", "model.");
    m.vision.heads = m.text.heads = get<int>(mj, "encoder_heads", "model.");
    m.vision.patch_size = c.corpus.gen.patch_size;
    m.d_model = get<int>(mj, "d_model", "model.");
    m.n_mem = get<int>(mj, "n_mem", "model.");
    m.sma_heads = get<int>(mj, "sma_heads", "model.");
    m.dec_depth = get<int>(mj, "depth", "model.");
    m.dec_heads = get<int>(mj, "heads", "model.");
    m.max_tokens = get<int>(mj, "max_tokens", "model.");
    m.connector = get<std::string>(mj, "connector", "model.");
    const Json& lj = mj.at("lora");
    m.lora.rank = get<int>(lj, "rank", "model.lora.");
    m.lora.alpha = static_cast<Real>(get<double>(lj, "alpha", "model.lora."));
    m.lora.dropout = static_cast<Real>(get<double>(lj, "dropout", "model.lora."));

    const Json& tj = j.at("train");
    auto& t = c.train;
    t.batch_size = get<int>(tj, "batch_size", "train.");
    t.warmup_steps = get<long>(tj, "warmup_steps", "train.");
    t.adamw.beta1 = get<double>(tj, "beta1", "train.");
    t.adamw.beta2 = get<double>(tj, "beta2", "train.");
    t.adamw.eps = get<double>(tj, "eps", "train.");
    t.adamw.weight_decay = get<double>(tj, "weight_decay", "train.");
    const Json& sj = tj.at("stages");
    if (sj.size() != 3) bad("train.stages", "expected 3 stage profiles, got " + std::to_string(sj.size()));
    for (std::size_t i = 0; i < 3; ++i) t.stages[i] = profile_from(sj[i], "train.stages[" + std::to_string(i) + "]");
    t.pretrain = profile_from(tj.at("decoder_warmup"), "train.decoder_warmup");
    t.patience = get<int>(tj, "patience", "train.");
    t.min_delta = get<double>(tj, "min_delta", "train.");
    t.key_phrases = get<int>(tj, "key_phrases", "train.");
    t.lora_from_stage = get<int>(tj, "lora_from_stage", "train.");
    t.bank_with_vision = get<bool>(tj, "bank_with_vision", "train.");
    t.probe_size = get<int>(tj, "probe_size", "train.");
    t.max_gen_len = get<int>(tj, "max_gen_len", "train.");
    t.beam = get<bool>(tj, "beam", "train.");
    t.eval_limit = get<int>(tj, "eval_limit", "train.");
    return c;
}

}  // namespace

void RunConfig::validate() const {
    if (preset != "desk" && preset != "paper") bad("preset", "unknown preset '" + preset + "' (desk, paper)");
    const auto& plans = pag::plan_names();
    if (std::none_of(plans.begin(), plans.end(), [&](const auto& p) { return p.name == plan; })) {
        bad("plan", "unknown plan '" + plan + "'");
    }
    if (seeds.empty()) bad("seeds", "at least one seed required");
    if (corpus_dir.empty()) bad("corpus_dir", "must not be empty");
    if (run_id.find('/') != std::string::npos) bad("run_id", "must not contain '/'");

    check_range("corpus.train_patients", corpus.train_patients, 1, 1000000);
    check_range("corpus.val_patients", corpus.val_patients, 1, 1000000);
    check_range("corpus.test_patients", corpus.test_patients, 1, 1000000);
    const auto& g = corpus.gen;
    check_range("corpus.min_studies", g.min_studies, 2, 16);
    check_range("corpus.max_studies", g.max_studies, g.min_studies, 16);
    check_range("corpus.max_labels", g.max_labels, 0, 6);
    check_range("corpus.image_size", g.image_size, 24, 1024);
    check_range("corpus.patch_size", g.patch_size, 1, g.image_size);
    if (g.image_size % g.patch_size != 0) bad("corpus.patch_size", "must divide image_size");

    check_range("model.d_vision", model.vision.dim, 1, 4096);
    check_range("model.d_text", model.text.dim, 1, 4096);
    check_range("model.encoder_depth", model.vision.depth, 0, 24);
    check_range("model.encoder_heads", model.vision.heads, 1, 64);
    if (model.vision.dim % model.vision.heads != 0 || model.text.dim % model.text.heads != 0) {
        bad("model.encoder_heads", "must divide d_vision and d_text");
    }
    check_range("model.d_model", model.d_model, 1, 4096);
    check_range("model.n_mem", model.n_mem, 1, 4096);
    check_range("model.sma_heads", model.sma_heads, 1, 64);
    if (model.d_model % model.sma_heads != 0) bad("model.sma_heads", "must divide d_model");
    check_range("model.depth", model.dec_depth, 1, 48);
    check_range("model.heads", model.dec_heads, 1, 64);
    if (model.d_model % model.dec_heads != 0) bad("model.heads", "must divide d_model");
    check_range("model.max_tokens", model.max_tokens, 2, 4096);
    const auto& conns = pag::connector_names();
    if (std::none_of(conns.begin(), conns.end(), [&](const auto& c) { return c.name == model.connector; })) {
        bad("model.connector", "unknown connector '" + model.connector + "'");
    }
    check_range("model.lora.rank", model.lora.rank, 1, 1024);
    check_range<Real>("model.lora.alpha", model.lora.alpha, Real(1e-6), Real(1e6));
    check_range<Real>("model.lora.dropout", model.lora.dropout, 0, Real(0.95));

    check_range("train.batch_size", train.batch_size, 1, 4096);
    check_range("train.warmup_steps", train.warmup_steps, 0L, 10000000L);
    check_range("train.beta1", train.adamw.beta1, 0.0, 0.999999);
    check_range("train.beta2", train.adamw.beta2, 0.0, 0.999999);
    check_range("train.eps", train.adamw.eps, 1e-12, 1e-2);
    check_range("train.weight_decay", train.adamw.weight_decay, 0.0, 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string k = "train.stages[" + std::to_string(i) + "]";
        check_range(k + ".epochs", train.stages[i].epochs, 1, 10000);
        check_range(k + ".lr", train.stages[i].lr, 1e-9, 1.0);
    }
    check_range("train.decoder_warmup.epochs", train.pretrain.epochs, 0, 10000);
    check_range("train.decoder_warmup.lr", train.pretrain.lr, 1e-9, 1.0);
    check_range("train.patience", train.patience, 0, 1000);
    check_range("train.min_delta", train.min_delta, 0.0, 10.0);
    check_range("train.key_phrases", train.key_phrases, 0, 64);
    check_range("train.lora_from_stage", train.lora_from_stage, 0, 3);
    check_range("train.probe_size", train.probe_size, 0, 1000000);
    check_range("train.max_gen_len", train.max_gen_len, 1, model.max_tokens - 1);
    check_range("train.eval_limit", train.eval_limit, 0, 1000000);
}

std::vector<std::string> preset_names() { return {"desk", "paper"}; }

RunConfig preset_config(const std::string& name) {
    RunConfig c;
    c.preset = name;
    c.model.n_mem = 16;
    c.model.lora = LoraConfig{4, 8, Real(0.1)};
    c.train.batch_size = 16;
    c.train.warmup_steps = 100;
    c.train.stages = {pag::StageProfile{6, 3e-3}, pag::StageProfile{5, 3e-3}, pag::StageProfile{3, 1e-3}};
    c.train.pretrain = {2, 1e-3};
    if (name == "desk") return c;
    if (name != "paper") bad("preset", "unknown preset '" + name + "' (desk, paper)");
    c.model.vision.dim = c.model.text.dim = 768;
    c.model.vision.heads = c.model.text.heads = 12;
    c.model.n_mem = kDefaultMemoryQueries;
    c.model.lora = LoraConfig{16, 16, Real(0.1)};
    c.train.batch_size = 64;
    c.train.warmup_steps = 1000;
    c.train.stages = {pag::StageProfile{8, 3e-4}, pag::StageProfile{5, 1e-4}, pag::StageProfile{3, 5e-5}};
    return c;
}

RunConfig parse_config(const std::string& json_text, const std::string& origin) {
    Json user;
    try {
        user = Json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::config, origin + ": not valid JSON (" + e.what() + ")");
    }
    if (!user.is_object()) throw Error(ErrorKind::config, origin + ": top level must be an object");
    std::string preset = "desk";
    if (auto it = user.find("preset"); it != user.end()) {
        if (!it->is_string()) bad("preset", "expected a string");
        preset = it->get<std::string>();
    }
    Json base = to_json(preset_config(preset));
    overlay(base, user, "");
    RunConfig c = from_json(base);
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::config, "cannot read config " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string echo(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

std::uint64_t config_hash(const RunConfig& config) { return fnv1a(echo(config)); }

}  // namespace s2d::cli
