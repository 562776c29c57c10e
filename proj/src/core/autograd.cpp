#include "s2d/core/autograd.hpp"

#include <cmath>
#include <limits>

#include "s2d/core/error.hpp"

namespace s2d {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::shape, what);
}

constexpr Real kGeluC = Real(0.7978845608028654);  // sqrt(2/pi)
constexpr Real kGeluA = Real(0.044715);

}  // namespace

Graph::Graph(bool training, std::uint64_t dropout_seed) : training_(training), dropout_rng_(dropout_seed) {
    nodes_.reserve(256);
}

Var Graph::push(Matrix value, bool requires_grad) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Graph::val(int id) const {
    const auto& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.owned;
}

const Matrix& Graph::value(Var v) const { return val(v.id); }
const Matrix& Graph::grad(Var v) const { return nodes_[v.id].grad; }

bool Graph::any_grad(std::initializer_list<Var> vs) const {
    for (auto v : vs) {
        if (v.valid() && nodes_[v.id].requires_grad) return true;
    }
    return false;
}

void Graph::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

template <typename Expr>
void Graph::accumulate_expr(int id, const Expr& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

Var Graph::constant(Matrix value) { return push(std::move(value), false); }

Var Graph::input(Matrix value) { return push(std::move(value), true); }

Var Graph::param(Parameter& p) {
    Node n;
    n.borrowed = &p.value;
    n.param = &p;
    n.requires_grad = p.trainable;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    if (p.trainable) {
        nodes_[id].back = [this, id] {
            auto& node = nodes_[id];
            auto& dst = node.param->grad;
            if (dst.size() == 0) {
                dst = node.grad;
            } else {
                dst += node.grad;
            }
        };
    }
    return Var{id};
}

Var Graph::matmul(Var a, Var b) {
    require(val(a.id).cols() == val(b.id).rows(), "matmul inner dimensions differ");
    Var out = push(val(a.id) * val(b.id), any_grad({a, b}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, a, b, out] {
            const Matrix& g = nodes_[out.id].grad;
            if (nodes_[a.id].requires_grad) accumulate_expr(a.id, g * val(b.id).transpose());
            if (nodes_[b.id].requires_grad) accumulate_expr(b.id, val(a.id).transpose() * g);
        };
    }
    return out;
}

Var Graph::linear(Var x, Var weight, Var bias) {
    const Matrix& w = val(weight.id);
    require(val(x.id).cols() == w.rows(), "linear input width does not match weight rows");
    Matrix y = val(x.id) * w;
    if (bias.valid()) {
        require(val(bias.id).rows() == 1 && val(bias.id).cols() == w.cols(), "linear bias shape");
        y.rowwise() += val(bias.id).row(0);
    }
    Var out = push(std::move(y), any_grad({x, weight, bias}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, x, weight, bias, out] {
            const Matrix& g = nodes_[out.id].grad;
            if (nodes_[x.id].requires_grad) accumulate_expr(x.id, g * val(weight.id).transpose());
            if (nodes_[weight.id].requires_grad) accumulate_expr(weight.id, val(x.id).transpose() * g);
            if (bias.valid() && nodes_[bias.id].requires_grad) accumulate_expr(bias.id, g.colwise().sum());
        };
    }
    return out;
}

Var Graph::add(Var a, Var b) {
    require(val(a.id).rows() == val(b.id).rows() && val(a.id).cols() == val(b.id).cols(), "add shapes differ");
    Var out = push(val(a.id) + val(b.id), any_grad({a, b}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, a, b, out] {
            const Matrix& g = nodes_[out.id].grad;
            accumulate(a.id, g);
            accumulate(b.id, g);
        };
    }
    return out;
}

Var Graph::add_row(Var x, Var row) {
    require(val(row.id).rows() == 1 && val(row.id).cols() == val(x.id).cols(), "add_row shape");
    Matrix y = val(x.id);
    y.rowwise() += val(row.id).row(0);
    Var out = push(std::move(y), any_grad({x, row}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, x, row, out] {
            const Matrix& g = nodes_[out.id].grad;
            accumulate(x.id, g);
            if (nodes_[row.id].requires_grad) accumulate_expr(row.id, g.colwise().sum());
        };
    }
    return out;
}

Var Graph::scale(Var a, Real s) {
    Var out = push(val(a.id) * s, any_grad({a}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, a, s, out] { accumulate_expr(a.id, nodes_[out.id].grad * s); };
    }
    return out;
}

Var Graph::gelu(Var a) {
    const Matrix& x = val(a.id);
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const Real v = x.data()[i];
        const Real t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        y.data()[i] = Real(0.5) * v * (Real(1) + t);
    }
    Var out = push(std::move(y), any_grad({a}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, a, out] {
            const Matrix& xv = val(a.id);
            const Matrix& g = nodes_[out.id].grad;
            Matrix dx(xv.rows(), xv.cols());
            for (Eigen::Index i = 0; i < xv.size(); ++i) {
                const Real v = xv.data()[i];
                const Real t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
                const Real dt = (Real(1) - t * t) * kGeluC * (Real(1) + Real(3) * kGeluA * v * v);
                dx.data()[i] = g.data()[i] * (Real(0.5) * (Real(1) + t) + Real(0.5) * v * dt);
            }
            accumulate(a.id, dx);
        };
    }
    return out;
}

Var Graph::layer_norm(Var x, Var gain, Var bias, Real eps) {
    const Matrix& xv = val(x.id);
    const Eigen::Index n = xv.rows(), d = xv.cols();
    require(val(gain.id).cols() == d && val(bias.id).cols() == d, "layer_norm parameter width");
    Matrix xhat(n, d);
    RowVector inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Real mu = xv.row(i).mean();
        const Real var = (xv.row(i).array() - mu).square().mean();
        inv_std(i) = Real(1) / std::sqrt(var + eps);
        xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
    }
    Matrix y = xhat;
    y.array().rowwise() *= val(gain.id).row(0).array();
    y.rowwise() += val(bias.id).row(0);
    Var out = push(std::move(y), any_grad({x, gain, bias}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
            const Matrix& g = nodes_[out.id].grad;
            if (nodes_[gain.id].requires_grad) accumulate_expr(gain.id, (g.array() * xhat.array()).colwise().sum().matrix());
            if (nodes_[bias.id].requires_grad) accumulate_expr(bias.id, g.colwise().sum());
            if (nodes_[x.id].requires_grad) {
                Matrix dxhat = g;
                dxhat.array().rowwise() *= val(gain.id).row(0).array();
                const Eigen::Index rows = dxhat.rows();
                Matrix dx(rows, dxhat.cols());
                for (Eigen::Index i = 0; i < rows; ++i) {
                    const Real m1 = dxhat.row(i).mean();
                    const Real m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
                    dx.row(i) = ((dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i)).matrix();
                }
                accumulate(x.id, dx);
            }
        };
    }
    return out;
}

Var Graph::attention(Var q, Var k, Var v, int heads, const AttentionMask& mask, std::vector<Matrix>* probs) {
    const Matrix& qv = val(q.id);
    const Matrix& kv = val(k.id);
    const Matrix& vv = val(v.id);
    const Eigen::Index a = qv.rows(), b = kv.rows(), d = qv.cols();
    if (b == 0) throw Error(ErrorKind::empty_context, "attention over zero key rows");
    require(kv.cols() == d && vv.cols() == d && vv.rows() == b, "attention operand shapes");
    require(heads >= 1 && d % heads == 0, "head count must divide the attention width");
    if (mask.prefix_rows) require(a == b, "prefix-causal attention needs square scores");
    const Eigen::Index dh = d / heads;
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
    constexpr Real neg_inf = -std::numeric_limits<Real>::infinity();

    std::vector<Matrix> p(static_cast<std::size_t>(heads));
    Matrix y(a, d);
    for (int h = 0; h < heads; ++h) {
        Matrix s = (qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose()) * scale;
        for (Eigen::Index i = 0; i < a; ++i) {
            if (mask.prefix_rows) {
                for (Eigen::Index j = 0; j < b; ++j) {
                    if (!mask.allowed(static_cast<int>(i), static_cast<int>(j))) s(i, j) = neg_inf;
                }
            }
            const Real mx = s.row(i).maxCoeff();
            s.row(i) = (s.row(i).array() - mx).exp().matrix();
            s.row(i) /= s.row(i).sum();
        }
        y.middleCols(h * dh, dh).noalias() = s * vv.middleCols(h * dh, dh);
        p[static_cast<std::size_t>(h)] = std::move(s);
    }
    if (probs) *probs = p;
    Var out = push(std::move(y), any_grad({q, k, v}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, q, k, v, out, heads, dh, scale, p = std::move(p)] {
            const Matrix& g = nodes_[out.id].grad;
            const Matrix& qv2 = val(q.id);
            const Matrix& kv2 = val(k.id);
            const Matrix& vv2 = val(v.id);
            const bool gq = nodes_[q.id].requires_grad, gk = nodes_[k.id].requires_grad,
                       gv = nodes_[v.id].requires_grad;
            Matrix dq = gq ? Matrix::Zero(qv2.rows(), qv2.cols()) : Matrix();
            Matrix dk = gk ? Matrix::Zero(kv2.rows(), kv2.cols()) : Matrix();
            Matrix dv = gv ? Matrix::Zero(vv2.rows(), vv2.cols()) : Matrix();
            for (int h = 0; h < heads; ++h) {
                const Matrix& ph = p[static_cast<std::size_t>(h)];
                const auto gh = g.middleCols(h * dh, dh);
                if (gv) dv.middleCols(h * dh, dh).noalias() += ph.transpose() * gh;
                if (!gq && !gk) continue;
                Matrix dp = gh * vv2.middleCols(h * dh, dh).transpose();
                const Eigen::VectorX<Real> rowdot = (dp.array() * ph.array()).rowwise().sum();
                Matrix ds = ph.array() * (dp.array().colwise() - rowdot.array());
                ds *= scale;
                if (gq) dq.middleCols(h * dh, dh).noalias() += ds * kv2.middleCols(h * dh, dh);
                if (gk) dk.middleCols(h * dh, dh).noalias() += ds.transpose() * qv2.middleCols(h * dh, dh);
            }
            if (gq) accumulate(q.id, dq);
            if (gk) accumulate(k.id, dk);
            if (gv) accumulate(v.id, dv);
        };
    }
    return out;
}

Var Graph::concat_rows(std::span<const Var> parts) {
    require(!parts.empty(), "concat of zero parts");
    const Eigen::Index cols = val(parts[0].id).cols();
    Eigen::Index rows = 0;
    bool needs = false;
    for (auto part : parts) {
        require(val(part.id).cols() == cols, "concat_rows column mismatch");
        rows += val(part.id).rows();
        needs = needs || nodes_[part.id].requires_grad;
    }
    Matrix y(rows, cols);
    Eigen::Index r = 0;
    for (auto part : parts) {
        const Matrix& m = val(part.id);
        if (m.rows() > 0) y.middleRows(r, m.rows()) = m;
        r += m.rows();
    }
    Var out = push(std::move(y), needs);
    if (needs) {
        std::vector<Var> ps(parts.begin(), parts.end());
        nodes_[out.id].back = [this, ps = std::move(ps), out] {
            const Matrix& g = nodes_[out.id].grad;
            Eigen::Index off = 0;
            for (auto part : ps) {
                const Eigen::Index n = val(part.id).rows();
                if (nodes_[part.id].requires_grad && n > 0) accumulate_expr(part.id, g.middleRows(off, n));
                off += n;
            }
        };
    }
    return out;
}

Var Graph::slice_rows(Var x, int start, int count) {
    const Matrix& xv = val(x.id);
    require(start >= 0 && count >= 0 && start + count <= xv.rows(), "slice_rows out of range");
    Var out = push(xv.middleRows(start, count), any_grad({x}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, x, start, count, out] {
            auto& n = nodes_[x.id];
            if (n.grad.size() == 0) n.grad = Matrix::Zero(val(x.id).rows(), val(x.id).cols());
            n.grad.middleRows(start, count) += nodes_[out.id].grad;
        };
    }
    return out;
}

Var Graph::gather_rows(Var table, std::span<const int> ids) {
    const Matrix& t = val(table.id);
    Matrix y(static_cast<Eigen::Index>(ids.size()), t.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= t.rows()) throw Error(ErrorKind::vocab, "row id " + std::to_string(ids[i]) + " outside table");
        y.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
    }
    Var out = push(std::move(y), any_grad({table}));
    if (nodes_[out.id].requires_grad) {
        std::vector<int> idv(ids.begin(), ids.end());
        nodes_[out.id].back = [this, table, idv = std::move(idv), out] {
            auto& n = nodes_[table.id];
            if (n.grad.size() == 0) n.grad = Matrix::Zero(val(table.id).rows(), val(table.id).cols());
            const Matrix& g = nodes_[out.id].grad;
            for (std::size_t i = 0; i < idv.size(); ++i) n.grad.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
        };
    }
    return out;
}

Var Graph::pool_rows(Var x, int bins) {
    const Matrix& xv = val(x.id);
    const Eigen::Index n = xv.rows();
    require(n >= 1 && bins >= 1, "pool_rows needs at least one row and one bin");
    // bin i averages rows [floor(i·n/bins), ceil((i+1)·n/bins))
    std::vector<std::pair<Eigen::Index, Eigen::Index>> spans(static_cast<std::size_t>(bins));
    Matrix y(bins, xv.cols());
    for (int i = 0; i < bins; ++i) {
        const Eigen::Index lo = (static_cast<Eigen::Index>(i) * n) / bins;
        const Eigen::Index hi = ((static_cast<Eigen::Index>(i) + 1) * n + bins - 1) / bins;
        spans[static_cast<std::size_t>(i)] = {lo, hi};
        y.row(i) = xv.middleRows(lo, hi - lo).colwise().mean();
    }
    Var out = push(std::move(y), any_grad({x}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, x, spans = std::move(spans), out] {
            const Matrix& g = nodes_[out.id].grad;
            Matrix dx = Matrix::Zero(val(x.id).rows(), val(x.id).cols());
            for (std::size_t i = 0; i < spans.size(); ++i) {
                const auto [lo, hi] = spans[i];
                const Real w = Real(1) / static_cast<Real>(hi - lo);
                for (Eigen::Index r = lo; r < hi; ++r) dx.row(r) += g.row(static_cast<Eigen::Index>(i)) * w;
            }
            accumulate(x.id, dx);
        };
    }
    return out;
}

Var Graph::dropout(Var x, Real rate) {
    if (!training_ || rate <= Real(0)) return x;
    const Matrix& xv = val(x.id);
    std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
    const Real inv = Real(1) / (Real(1) - rate);
    Matrix mask(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(dropout_rng_) ? inv : Real(0);
    Var out = push(xv.cwiseProduct(mask), any_grad({x}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, x, out, mask = std::move(mask)] {
            accumulate_expr(x.id, nodes_[out.id].grad.cwiseProduct(mask));
        };
    }
    return out;
}

Var Graph::cross_entropy(Var logits, std::span<const int> targets, int ignore_id, Real scale) {
    const Matrix& z = val(logits.id);
    require(static_cast<Eigen::Index>(targets.size()) == z.rows(), "one target per logit row");
    Matrix prob(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index t = 0; t < z.rows(); ++t) {
        const Real mx = z.row(t).maxCoeff();
        prob.row(t) = (z.row(t).array() - mx).exp().matrix();
        const Real sum = prob.row(t).sum();
        prob.row(t) /= sum;
        const int target = targets[static_cast<std::size_t>(t)];
        if (target == ignore_id) continue;
        if (target < 0 || target >= z.cols()) throw Error(ErrorKind::vocab, "target id outside vocabulary");
        loss -= static_cast<double>(z(t, target) - mx - std::log(sum));
    }
    Matrix y(1, 1);
    y(0, 0) = static_cast<Real>(loss) * scale;
    Var out = push(std::move(y), any_grad({logits}));
    if (nodes_[out.id].requires_grad) {
        std::vector<int> tv(targets.begin(), targets.end());
        nodes_[out.id].back = [this, logits, out, ignore_id, scale, tv = std::move(tv), prob = std::move(prob)] {
            const Real g = nodes_[out.id].grad(0, 0) * scale;
            Matrix d = prob;
            for (Eigen::Index t = 0; t < d.rows(); ++t) {
                const int target = tv[static_cast<std::size_t>(t)];
                if (target == ignore_id) {
                    d.row(t).setZero();
                } else {
                    d(t, target) -= Real(1);
                }
            }
            accumulate_expr(logits.id, d * g);
        };
    }
    return out;
}

Var Graph::weighted_sum(Var x, const Matrix& weights) {
    require(val(x.id).rows() == weights.rows() && val(x.id).cols() == weights.cols(), "weighted_sum shape");
    Matrix y(1, 1);
    y(0, 0) = val(x.id).cwiseProduct(weights).sum();
    Var out = push(std::move(y), any_grad({x}));
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [this, x, out, weights] { accumulate_expr(x.id, weights * nodes_[out.id].grad(0, 0)); };
    }
    return out;
}

void Graph::backward(Var root) {
    require(val(root.id).rows() == 1 && val(root.id).cols() == 1, "backward root must be a scalar");
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad = Matrix::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.requires_grad && n.back && n.grad.size() != 0) n.back();
    }
}

}  // namespace s2d
