#include "s2d/model/sma.hpp"

#include <cmath>

#include "s2d/core/error.hpp"

namespace s2d {

const char* role_namespace(Role role) {
    switch (role) {
        case Role::vision: return "sma_v";
        case Role::ref_text: return "sma_t";
        case Role::key_text: return "sma_p";
    }
    return "sma_?";
}

MemoryBank init_memory(ParamStore& store, const std::string& name, int n_mem, int d, std::uint64_t seed) {
    if (n_mem < 1 || d < 1) {
        throw Error(ErrorKind::config, "memory bank needs n_mem >= 1 and d >= 1 (got " + std::to_string(n_mem) + ", " +
                                           std::to_string(d) + ")");
    }
    Rng rng(derive_seed(seed, 0xBA4C));
    return MemoryBank{&store.create(name, random_normal(n_mem, d, Real(1) / std::sqrt(Real(d)), rng), false)};
}

CrossAttentionParams CrossAttentionParams::create(ParamStore& store, const std::string& prefix, int d_q, int d_kv,
                                                  int d_attn, int heads, Rng& rng) {
    if (heads < 1 || d_attn % heads != 0) {
        throw Error(ErrorKind::config, "attention heads (" + std::to_string(heads) + ") must divide width " +
                                           std::to_string(d_attn));
    }
    CrossAttentionParams p;
    p.heads = heads;
    p.q = LinearLayer::create(store, prefix + "/wq", d_q, d_attn, Real(1) / std::sqrt(Real(d_q)), rng);
    p.k = LinearLayer::create(store, prefix + "/wk", d_kv, d_attn, Real(1) / std::sqrt(Real(d_kv)), rng);
    p.v = LinearLayer::create(store, prefix + "/wv", d_kv, d_attn, Real(1) / std::sqrt(Real(d_kv)), rng);
    p.o = LinearLayer::create(store, prefix + "/wo", d_attn, d_q, Real(1) / std::sqrt(Real(d_attn)), rng);
    return p;
}

Var cross_attention(Graph& g, Var queries, Var keys, Var values, const CrossAttentionParams& params,
                    std::vector<Matrix>* probs) {
    if (g.value(keys).rows() == 0) throw Error(ErrorKind::empty_context, "cross-attention over an empty sequence");
    if (g.value(keys).cols() != params.k.in_features() || g.value(values).cols() != params.v.in_features()) {
        throw Error(ErrorKind::shape, "auxiliary feature width " + std::to_string(g.value(keys).cols()) +
                                          " does not match key projection width " +
                                          std::to_string(params.k.in_features()));
    }
    Var q = params.q.forward(g, queries);
    Var k = params.k.forward(g, keys);
    Var v = params.v.forward(g, values);
    Var att = g.attention(q, k, v, params.heads, AttentionMask::full(), probs);
    return params.o.forward(g, att);
}

Connector::Connector(ParamStore& store, Role role, int d_aux, std::uint64_t seed) : role_(role), d_aux_(d_aux) {
    Rng rng(derive_seed(seed, 0x5E7, static_cast<int>(role)));
    sentinel_ = &store.create(std::string(role_namespace(role)) + "/sentinel", random_normal(1, d_aux, Real(0.02), rng),
                              false);
}

Var Connector::aux_input(Graph& g, const Matrix& aux) const {
    if (aux.rows() == 0) return g.param(*sentinel_);
    if (aux.cols() != d_aux_) {
        throw Error(ErrorKind::shape, std::string(role_namespace(role_)) + " expects width " + std::to_string(d_aux_) +
                                          ", got " + std::to_string(aux.cols()));
    }
    return g.constant(aux);
}

SmaInstance::SmaInstance(ParamStore& store, Role role, MemoryBank bank, const SmaDims& dims, std::uint64_t seed)
    : Connector(store, role, dims.d_aux, seed), bank_(bank) {
    if (!bank.queries) throw Error(ErrorKind::config, "adapter constructed without a memory bank");
    Rng rng(derive_seed(seed, 0x5A, static_cast<int>(role)));
    const std::string ns = role_namespace(role);
    attn_ = CrossAttentionParams::create(store, ns + "/attn", bank.dim(), dims.d_aux, bank.dim(), dims.heads, rng);
    mlp_ = Mlp3::create(store, ns + "/mlp", bank.dim(), 2 * dims.d_model, dims.d_model, rng);
    ln_ = LayerNormLayer::create(store, ns + "/ln", dims.d_model);
}

Var SmaInstance::forward(Graph& g, const Matrix& aux) const {
    Var x = aux_input(g, aux);
    Var f = cross_attention(g, g.param(*bank_.queries), x, x, attn_);
    return ln_.forward(g, mlp_.forward(g, f));
}

std::vector<Matrix> SmaInstance::attention_weights(const Matrix& aux) const {
    Graph g;
    Var x = aux_input(g, aux);
    std::vector<Matrix> probs;
    cross_attention(g, g.param(*bank_.queries), x, x, attn_, &probs);
    return probs;
}

}  // namespace s2d
