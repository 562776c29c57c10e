#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "s2d/core/params.hpp"
#include "s2d/core/tensor.hpp"

namespace s2d {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Attention visibility. With `prefix_rows` set, row i may attend column j
/// iff j < prefix_rows or j <= i: the prefix is mutually visible, the rest is
/// causal. Without it every row sees every column.
struct AttentionMask {
    std::optional<int> prefix_rows;

    static AttentionMask full() { return {}; }
    static AttentionMask prefix_causal(int n_prefix) { return {n_prefix}; }
    bool allowed(int i, int j) const { return !prefix_rows || j < *prefix_rows || j <= i; }
};

/// Tape-based reverse-mode differentiation over dense row-major matrices.
/// One graph per forward pass; nodes are appended in topological order so
/// backward is a reverse sweep. Gradients of trainable parameters accumulate
/// into Parameter::grad.
class Graph {
public:
    explicit Graph(bool training = false, std::uint64_t dropout_seed = 0);
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool training() const { return training_; }

    Var constant(Matrix value);
    Var input(Matrix value);  // like constant, but receives a gradient
    Var param(Parameter& p);

    const Matrix& value(Var v) const;
    const Matrix& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    Var matmul(Var a, Var b);
    Var linear(Var x, Var weight, Var bias);  // x·W + b, bias optional
    Var add(Var a, Var b);
    Var add_row(Var x, Var row);  // broadcast a 1×D row over x
    Var scale(Var a, Real s);
    Var gelu(Var a);
    Var layer_norm(Var x, Var gain, Var bias, Real eps = Real(1e-5));
    /// q: A×D, k/v: B×D, heads | D. When `probs` is non-null it receives the
    /// per-head attention matrices (A×B each).
    Var attention(Var q, Var k, Var v, int heads, const AttentionMask& mask,
                  std::vector<Matrix>* probs = nullptr);
    Var concat_rows(std::span<const Var> parts);
    Var slice_rows(Var x, int start, int count);
    Var gather_rows(Var table, std::span<const int> ids);
    /// Adaptive average pooling of the rows into `bins` rows.
    Var pool_rows(Var x, int bins);
    Var dropout(Var x, Real rate);
    /// scale · Σ_t −log softmax(logits_t)[targets_t], skipping `ignore_id`; 1×1.
    Var cross_entropy(Var logits, std::span<const int> targets, int ignore_id, Real scale);
    /// Σ x ⊙ weights; 1×1. Used to build test losses.
    Var weighted_sum(Var x, const Matrix& weights);

    /// Seeds d(root)=1 for a 1×1 root and sweeps the tape.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix owned;
        const Matrix* borrowed = nullptr;
        Matrix grad;
        Parameter* param = nullptr;
        bool requires_grad = false;
        std::function<void()> back;
    };

    Var push(Matrix value, bool requires_grad);
    const Matrix& val(int id) const;
    void accumulate(int id, const Matrix& g);
    template <typename Expr>
    void accumulate_expr(int id, const Expr& g);
    bool any_grad(std::initializer_list<Var> vs) const;

    std::vector<Node> nodes_;
    bool training_;
    Rng dropout_rng_;
};

}  // namespace s2d
