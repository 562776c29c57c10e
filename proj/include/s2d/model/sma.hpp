#pragma once

#include <string>
#include <vector>

#include "s2d/core/layers.hpp"

namespace s2d {

enum class Role { vision, ref_text, key_text };

/// Checkpoint namespace of the adapter slot for a role: sma_v / sma_t / sma_p.
const char* role_namespace(Role role);

/// Learnable query matrix Q_mem (N_mem × D). One bank per model; adapters hold
/// a pointer to it, never a copy.
struct MemoryBank {
    Parameter* queries = nullptr;

    int n_mem() const { return static_cast<int>(queries->value.rows()); }
    int dim() const { return static_cast<int>(queries->value.cols()); }
};

inline constexpr int kDefaultMemoryQueries = 64;

/// Q_mem entries i.i.d. N(0, 1/d), deterministic per seed. The bank is
/// exempt from weight decay.
MemoryBank init_memory(ParamStore& store, const std::string& name, int n_mem, int d, std::uint64_t seed);

/// Projections of a multi-head cross-attention layer. Queries of width d_q are
/// projected to d_attn, keys/values of width d_kv likewise; the output
/// projection returns to d_q.
struct CrossAttentionParams {
    LinearLayer q, k, v, o;
    int heads = 1;

    static CrossAttentionParams create(ParamStore& store, const std::string& prefix, int d_q, int d_kv, int d_attn,
                                       int heads, Rng& rng);
};

/// softmax((Q·Wq)(K·Wk)ᵀ/√d_h)(V·Wv) per head, heads concatenated, then Wo.
/// Output has one row per query row. Throws ErrorKind::empty_context when K
/// has no rows.
Var cross_attention(Graph& g, Var queries, Var keys, Var values, const CrossAttentionParams& params,
                    std::vector<Matrix>* probs = nullptr);

/// A module that turns a variable-length feature sequence into a fixed number
/// of D_model rows for the decoder prefix.
class Connector {
public:
    virtual ~Connector() = default;

    /// An empty `aux` is replaced by the connector's learned sentinel row.
    virtual Var forward(Graph& g, const Matrix& aux) const = 0;
    virtual int output_rows() const = 0;
    Role role() const { return role_; }

protected:
    Connector(ParamStore& store, Role role, int d_aux, std::uint64_t seed);
    Var aux_input(Graph& g, const Matrix& aux) const;

    Role role_;
    int d_aux_;
    Parameter* sentinel_ = nullptr;
};

struct SmaDims {
    int d_aux = 64;
    int d_model = 64;
    int heads = 8;
};

/// Shallow-to-deep memory adapter:
///   out = LayerNorm(MLP3(CrossAttn(Q_mem, F_aux, F_aux)))
/// The MLP runs D_v → 2·D_model → 2·D_model → D_model, so every instance emits
/// N_mem × D_model regardless of its input width or length.
class SmaInstance final : public Connector {
public:
    SmaInstance(ParamStore& store, Role role, MemoryBank bank, const SmaDims& dims, std::uint64_t seed);

    Var forward(Graph& g, const Matrix& aux) const override;
    int output_rows() const override { return bank_.n_mem(); }

    /// Evaluates the attention stage only and returns its per-head weights.
    std::vector<Matrix> attention_weights(const Matrix& aux) const;
    const MemoryBank& bank() const { return bank_; }

private:
    MemoryBank bank_;
    CrossAttentionParams attn_;
    Mlp3 mlp_;
    LayerNormLayer ln_;
};

}  // namespace s2d
