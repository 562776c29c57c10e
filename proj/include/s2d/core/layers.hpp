#pragma once

#include <string>

#include "s2d/core/autograd.hpp"
#include "s2d/core/params.hpp"

namespace s2d {

struct LinearLayer {
    Parameter* weight = nullptr;  // in × out
    Parameter* bias = nullptr;    // 1 × out, may be null

    static LinearLayer create(ParamStore& store, const std::string& prefix, int in, int out, Real init_std, Rng& rng,
                              bool with_bias = true);
    Var forward(Graph& g, Var x) const;
    int in_features() const { return static_cast<int>(weight->value.rows()); }
    int out_features() const { return static_cast<int>(weight->value.cols()); }
};

struct LayerNormLayer {
    Parameter* gain = nullptr;
    Parameter* bias = nullptr;

    static LayerNormLayer create(ParamStore& store, const std::string& prefix, int dim);
    Var forward(Graph& g, Var x) const;
};

/// Three linear layers with GELU between them.
struct Mlp3 {
    LinearLayer fc1, fc2, fc3;

    static Mlp3 create(ParamStore& store, const std::string& prefix, int in, int hidden, int out, Rng& rng);
    Var forward(Graph& g, Var x) const;
};

struct LoraConfig {
    int rank = 4;
    Real alpha = 8;
    Real dropout = Real(0.1);

    Real scale() const { return alpha / static_cast<Real>(rank); }
};

/// A linear layer with an optional low-rank adapter:
///   y = x·W + b + (α/r)·dropout(x)·down·up
/// `up` starts at zero so a fresh adapter is an exact identity.
class LoraLinear {
public:
    LoraLinear() = default;
    explicit LoraLinear(LinearLayer base) : base_(base) {}
    LoraLinear(LinearLayer base, Parameter& down, Parameter& up, Real scale, Real dropout)
        : base_(base), down_(&down), up_(&up), scale_(scale), dropout_(dropout) {}

    Var forward(Graph& g, Var x) const;
    /// W + (α/r)·down·up; reproduces forward() without dropout.
    Matrix merged_weight() const;

    const LinearLayer& base() const { return base_; }
    bool has_adapter() const { return down_ != nullptr; }
    Parameter* down() const { return down_; }
    Parameter* up() const { return up_; }
    Real scale() const { return scale_; }

private:
    LinearLayer base_;
    Parameter* down_ = nullptr;  // in × r
    Parameter* up_ = nullptr;    // r × out
    Real scale_ = 0;
    Real dropout_ = 0;
};

/// Attaches an adapter under `adapter_prefix` ("…/down", "…/up").
/// Throws ErrorKind::config when rank is outside [1, min(in, out)].
LoraLinear lora_wrap(ParamStore& store, const std::string& adapter_prefix, const LinearLayer& base,
                     const LoraConfig& config, std::uint64_t seed);

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)), MLP width 4·D.
struct TransformerBlock {
    LayerNormLayer ln1, ln2;
    LoraLinear wq, wk, wv, wo, fc1, fc2;
    int heads = 1;

    static TransformerBlock create(ParamStore& store, const std::string& prefix, int dim, int heads, int depth, Rng& rng);
    /// Adds adapters to all six linear layers.
    void attach_lora(ParamStore& store, const std::string& adapter_prefix, const LoraConfig& config, std::uint64_t seed);
    Var forward(Graph& g, Var x, const AttentionMask& mask) const;
};

}  // namespace s2d
