#include "s2d/pag/connectors.hpp"

#include <cmath>

#include "s2d/core/error.hpp"

namespace s2d::pag {
namespace {

int aux_width(const ConnectorDims& dims, Role role) { return role == Role::vision ? dims.d_vision : dims.d_text; }

// Mean-pools the sequence to a fixed count, then projects.
class MlpConnector final : public Connector {
public:
    MlpConnector(ParamStore& store, Role role, const ConnectorDims& dims, std::uint64_t seed)
        : Connector(store, role, aux_width(dims, role), seed), rows_(dims.n_mem) {
        Rng rng(derive_seed(seed, 0x31, static_cast<int>(role)));
        const std::string ns = role_namespace(role);
        mlp_ = Mlp3::create(store, ns + "/mlp", d_aux_, 2 * dims.d_model, dims.d_model, rng);
        ln_ = LayerNormLayer::create(store, ns + "/ln", dims.d_model);
    }

    Var forward(Graph& g, const Matrix& aux) const override {
        Var x = g.pool_rows(aux_input(g, aux), rows_);
        return ln_.forward(g, mlp_.forward(g, x));
    }
    int output_rows() const override { return rows_; }

private:
    int rows_;
    Mlp3 mlp_;
    LayerNormLayer ln_;
};

// Learned per-instance queries refined by one self-attention block before
// cross-attending to the input.
class QFormerConnector final : public Connector {
public:
    QFormerConnector(ParamStore& store, Role role, const ConnectorDims& dims, std::uint64_t seed)
        : Connector(store, role, aux_width(dims, role), seed) {
        Rng rng(derive_seed(seed, 0x32, static_cast<int>(role)));
        const std::string ns = role_namespace(role);
        const int dq = dims.d_vision;
        queries_ = &store.create(ns + "/queries", random_normal(dims.n_mem, dq, Real(1) / std::sqrt(Real(dq)), rng),
                                 false);
        self_ = TransformerBlock::create(store, ns + "/qblk", dq, dims.heads, 1, rng);
        attn_ = CrossAttentionParams::create(store, ns + "/attn", dq, d_aux_, dq, dims.heads, rng);
        mlp_ = Mlp3::create(store, ns + "/mlp", dq, 2 * dims.d_model, dims.d_model, rng);
        ln_ = LayerNormLayer::create(store, ns + "/ln", dims.d_model);
    }

    Var forward(Graph& g, const Matrix& aux) const override {
        Var x = aux_input(g, aux);
        Var q = self_.forward(g, g.param(*queries_), AttentionMask::full());
        return ln_.forward(g, mlp_.forward(g, cross_attention(g, q, x, x, attn_)));
    }
    int output_rows() const override { return static_cast<int>(queries_->value.rows()); }

private:
    Parameter* queries_ = nullptr;
    TransformerBlock self_;
    CrossAttentionParams attn_;
    Mlp3 mlp_;
    LayerNormLayer ln_;
};

// Cross-attention without a memory bank: queries are the pooled input rows.
class PooledQueryConnector final : public Connector {
public:
    PooledQueryConnector(ParamStore& store, Role role, const ConnectorDims& dims, std::uint64_t seed)
        : Connector(store, role, aux_width(dims, role), seed), rows_(dims.n_mem) {
        Rng rng(derive_seed(seed, 0x33, static_cast<int>(role)));
        const std::string ns = role_namespace(role);
        const int dq = dims.d_vision;
        qproj_ = LinearLayer::create(store, ns + "/qproj", d_aux_, dq, Real(1) / std::sqrt(Real(d_aux_)), rng);
        attn_ = CrossAttentionParams::create(store, ns + "/attn", dq, d_aux_, dq, dims.heads, rng);
        mlp_ = Mlp3::create(store, ns + "/mlp", dq, 2 * dims.d_model, dims.d_model, rng);
        ln_ = LayerNormLayer::create(store, ns + "/ln", dims.d_model);
    }

    Var forward(Graph& g, const Matrix& aux) const override {
        Var x = aux_input(g, aux);
        Var q = qproj_.forward(g, g.pool_rows(x, rows_));
        return ln_.forward(g, mlp_.forward(g, cross_attention(g, q, x, x, attn_)));
    }
    int output_rows() const override { return rows_; }

private:
    int rows_;
    LinearLayer qproj_;
    CrossAttentionParams attn_;
    Mlp3 mlp_;
    LayerNormLayer ln_;
};

constexpr std::array kRoles = {Role::vision, Role::ref_text, Role::key_text};

}  // namespace

const std::vector<ConnectorInfo>& connector_names() {
    static const std::vector<ConnectorInfo> names = {
        {"mlp", "MLP"},
        {"mlp_qformer", "MLP + Q-Former"},
        {"sma_no_bank", "SMA (MLP + MSA)"},
        {"sma_unshared", "SMA (w/o Shared Memory)"},
        {"sma", "SMA"},
    };
    return names;
}

ConnectorSet connector_registry(const std::string& name, ParamStore& store, const ConnectorDims& dims,
                                std::uint64_t seed) {
    ConnectorSet set;
    set.name = name;
    const SmaDims sma_dims_v{dims.d_vision, dims.d_model, dims.heads};
    const SmaDims sma_dims_t{dims.d_text, dims.d_model, dims.heads};
    auto sma_dims = [&](Role r) { return r == Role::vision ? sma_dims_v : sma_dims_t; };

    if (name == "sma") {
        set.bank = init_memory(store, "bank/q_mem", dims.n_mem, dims.d_vision, seed);
        for (Role r : kRoles) set.slots[static_cast<int>(r)] = std::make_unique<SmaInstance>(store, r, set.bank, sma_dims(r), seed);
    } else if (name == "sma_unshared") {
        for (Role r : kRoles) {
            MemoryBank own = init_memory(store, std::string(role_namespace(r)) + "/q_mem", dims.n_mem, dims.d_vision,
                                         derive_seed(seed, static_cast<int>(r)));
            set.slots[static_cast<int>(r)] = std::make_unique<SmaInstance>(store, r, own, sma_dims(r), seed);
        }
    } else if (name == "sma_no_bank") {
        for (Role r : kRoles) set.slots[static_cast<int>(r)] = std::make_unique<PooledQueryConnector>(store, r, dims, seed);
    } else if (name == "mlp_qformer") {
        for (Role r : kRoles) set.slots[static_cast<int>(r)] = std::make_unique<QFormerConnector>(store, r, dims, seed);
    } else if (name == "mlp") {
        for (Role r : kRoles) set.slots[static_cast<int>(r)] = std::make_unique<MlpConnector>(store, r, dims, seed);
    } else {
        std::string known;
        for (const auto& info : connector_names()) known += (known.empty() ? "" : ", ") + info.name;
        throw Error(ErrorKind::registry, "unknown connector '" + name + "' (known: " + known + ")");
    }
    return set;
}

}  // namespace s2d::pag
