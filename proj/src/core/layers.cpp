#include "s2d/core/layers.hpp"

#include <algorithm>
#include <cmath>

#include "s2d/core/error.hpp"

namespace s2d {

LinearLayer LinearLayer::create(ParamStore& store, const std::string& prefix, int in, int out, Real init_std, Rng& rng,
                                bool with_bias) {
    LinearLayer l;
    l.weight = &store.create(prefix + "/w", random_normal(in, out, init_std, rng));
    if (with_bias) l.bias = &store.create(prefix + "/b", Matrix::Zero(1, out), false);
    return l;
}

Var LinearLayer::forward(Graph& g, Var x) const {
    return g.linear(x, g.param(*weight), bias ? g.param(*bias) : Var{});
}

LayerNormLayer LayerNormLayer::create(ParamStore& store, const std::string& prefix, int dim) {
    LayerNormLayer ln;
    ln.gain = &store.create(prefix + "/gain", Matrix::Ones(1, dim), false);
    ln.bias = &store.create(prefix + "/bias", Matrix::Zero(1, dim), false);
    return ln;
}

Var LayerNormLayer::forward(Graph& g, Var x) const { return g.layer_norm(x, g.param(*gain), g.param(*bias)); }

Mlp3 Mlp3::create(ParamStore& store, const std::string& prefix, int in, int hidden, int out, Rng& rng) {
    Mlp3 m;
    m.fc1 = LinearLayer::create(store, prefix + "/fc1", in, hidden, Real(1) / std::sqrt(Real(in)), rng);
    m.fc2 = LinearLayer::create(store, prefix + "/fc2", hidden, hidden, Real(1) / std::sqrt(Real(hidden)), rng);
    m.fc3 = LinearLayer::create(store, prefix + "/fc3", hidden, out, Real(1) / std::sqrt(Real(hidden)), rng);
    return m;
}

Var Mlp3::forward(Graph& g, Var x) const {
    Var h = g.gelu(fc1.forward(g, x));
    h = g.gelu(fc2.forward(g, h));
    return fc3.forward(g, h);
}

Var LoraLinear::forward(Graph& g, Var x) const {
    Var y = base_.forward(g, x);
    if (!down_) return y;
    // Frozen zero adapters contribute exact zeros; skip the work.
    if (!up_->trainable && !down_->trainable && up_->value.isZero(0)) return y;
    Var h = g.matmul(g.dropout(x, dropout_), g.param(*down_));
    return g.add(y, g.scale(g.matmul(h, g.param(*up_)), scale_));
}

Matrix LoraLinear::merged_weight() const {
    Matrix w = base_.weight->value;
    if (down_) w += scale_ * (down_->value * up_->value);
    return w;
}

LoraLinear lora_wrap(ParamStore& store, const std::string& adapter_prefix, const LinearLayer& base,
                     const LoraConfig& config, std::uint64_t seed) {
    const int in = base.in_features(), out = base.out_features();
    if (config.rank < 1 || config.rank > std::min(in, out)) {
        throw Error(ErrorKind::config, "LoRA rank " + std::to_string(config.rank) + " outside [1, " +
                                           std::to_string(std::min(in, out)) + "] for " + adapter_prefix);
    }
    if (config.dropout < 0 || config.dropout >= 1) throw Error(ErrorKind::config, "LoRA dropout must be in [0, 1)");
    Rng rng(seed);
    auto& down = store.create(adapter_prefix + "/down",
                              random_uniform(in, config.rank, Real(1) / std::sqrt(Real(in)), rng));
    auto& up = store.create(adapter_prefix + "/up", Matrix::Zero(config.rank, out));
    return LoraLinear(base, down, up, config.scale(), config.dropout);
}

TransformerBlock TransformerBlock::create(ParamStore& store, const std::string& prefix, int dim, int heads, int depth,
                                          Rng& rng) {
    if (heads < 1 || dim % heads != 0) throw Error(ErrorKind::config, "heads must divide the model width");
    TransformerBlock b;
    b.heads = heads;
    const Real std_in = Real(1) / std::sqrt(Real(dim));
    const Real std_res = std_in / std::sqrt(Real(2 * std::max(depth, 1)));
    b.ln1 = LayerNormLayer::create(store, prefix + "/ln1", dim);
    b.ln2 = LayerNormLayer::create(store, prefix + "/ln2", dim);
    b.wq = LoraLinear(LinearLayer::create(store, prefix + "/wq", dim, dim, std_in, rng));
    b.wk = LoraLinear(LinearLayer::create(store, prefix + "/wk", dim, dim, std_in, rng));
    b.wv = LoraLinear(LinearLayer::create(store, prefix + "/wv", dim, dim, std_in, rng));
    b.wo = LoraLinear(LinearLayer::create(store, prefix + "/wo", dim, dim, std_res, rng));
    b.fc1 = LoraLinear(LinearLayer::create(store, prefix + "/fc1", dim, 4 * dim, std_in, rng));
    b.fc2 = LoraLinear(LinearLayer::create(store, prefix + "/fc2", 4 * dim, dim,
                                           Real(1) / std::sqrt(Real(4 * dim)) / std::sqrt(Real(2 * std::max(depth, 1))),
                                           rng));
    return b;
}

void TransformerBlock::attach_lora(ParamStore& store, const std::string& adapter_prefix, const LoraConfig& config,
                                   std::uint64_t seed) {
    wq = lora_wrap(store, adapter_prefix + "/wq", wq.base(), config, derive_seed(seed, 1));
    wk = lora_wrap(store, adapter_prefix + "/wk", wk.base(), config, derive_seed(seed, 2));
    wv = lora_wrap(store, adapter_prefix + "/wv", wv.base(), config, derive_seed(seed, 3));
    wo = lora_wrap(store, adapter_prefix + "/wo", wo.base(), config, derive_seed(seed, 4));
    fc1 = lora_wrap(store, adapter_prefix + "/fc1", fc1.base(), config, derive_seed(seed, 5));
    fc2 = lora_wrap(store, adapter_prefix + "/fc2", fc2.base(), config, derive_seed(seed, 6));
}

Var TransformerBlock::forward(Graph& g, Var x, const AttentionMask& mask) const {
    Var h = ln1.forward(g, x);
    Var att = g.attention(wq.forward(g, h), wk.forward(g, h), wv.forward(g, h), heads, mask);
    x = g.add(x, wo.forward(g, att));
    h = ln2.forward(g, x);
    h = fc2.forward(g, g.gelu(fc1.forward(g, h)));
    return g.add(x, h);
}

}  // namespace s2d
