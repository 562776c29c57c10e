#include "s2d/model/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "s2d/core/error.hpp"
#include "s2d/syndata/corpus.hpp"

namespace s2d {
namespace {

void check_branches(int stage, bool has_ref, bool has_key) {
    if (stage < 1 || stage > 3) throw Error(ErrorKind::context, "context stage must be 1, 2 or 3, got " + std::to_string(stage));
    const bool want_ref = stage >= 2, want_key = stage == 3;
    if (has_ref != want_ref || has_key != want_key) {
        throw Error(ErrorKind::context, "stage " + std::to_string(stage) + " context needs " +
                                            (stage == 1 ? "vision only" : stage == 2 ? "vision and reference"
                                                                                     : "vision, reference and key phrases") +
                                            " branches");
    }
}

// Per-layer key/value rows accumulated during incremental decoding.
struct KvCache {
    std::vector<Matrix> k, v;
};

struct Beam {
    std::vector<int> tokens;
    KvCache cache;
    double score = 0;
    bool done = false;
};

}  // namespace

Context build_context(int stage, const Matrix& v_mem, const Matrix* r_mem, const Matrix* k_mem) {
    check_branches(stage, r_mem != nullptr, k_mem != nullptr);
    Context c;
    c.stage = stage;
    c.lengths.vision = static_cast<int>(v_mem.rows());
    c.lengths.ref = r_mem ? static_cast<int>(r_mem->rows()) : 0;
    c.lengths.key = k_mem ? static_cast<int>(k_mem->rows()) : 0;
    for (const Matrix* m : {r_mem, k_mem}) {
        if (m && m->cols() != v_mem.cols()) throw Error(ErrorKind::shape, "context branches differ in width");
    }
    c.rows.resize(c.lengths.total(), v_mem.cols());
    c.rows.topRows(c.lengths.vision) = v_mem;
    if (r_mem) c.rows.middleRows(c.lengths.vision, c.lengths.ref) = *r_mem;
    if (k_mem) c.rows.bottomRows(c.lengths.key) = *k_mem;
    return c;
}

ContextVar build_context(Graph& g, int stage, Var v_mem, std::optional<Var> r_mem, std::optional<Var> k_mem) {
    check_branches(stage, r_mem.has_value(), k_mem.has_value());
    ContextVar c;
    c.stage = stage;
    std::vector<Var> parts = {v_mem};
    c.lengths.vision = static_cast<int>(g.value(v_mem).rows());
    if (r_mem) {
        parts.push_back(*r_mem);
        c.lengths.ref = static_cast<int>(g.value(*r_mem).rows());
    }
    if (k_mem) {
        parts.push_back(*k_mem);
        c.lengths.key = static_cast<int>(g.value(*k_mem).rows());
    }
    c.rows = parts.size() == 1 ? v_mem : g.concat_rows(parts);
    return c;
}

Decoder::Decoder(ParamStore& store, const DecoderConfig& config, std::uint64_t seed) : config_(config) {
    if (config.vocab_size < 3) throw Error(ErrorKind::config, "decoder vocabulary too small");
    if (config.dim < 1 || config.depth < 1 || config.max_tokens < 1) throw Error(ErrorKind::config, "bad decoder sizes");
    Rng rng(derive_seed(seed, 0xDEC));
    embed_ = &store.create("dec/embed/tokens", random_normal(config.vocab_size, config.dim, Real(0.3), rng), false);
    pos_ = &store.create("dec/base/pos", random_normal(config.max_tokens, config.dim, Real(0.1), rng), false);
    for (int i = 0; i < config.depth; ++i) {
        blocks_.push_back(TransformerBlock::create(store, "dec/base/blk" + std::to_string(i), config.dim, config.heads,
                                                   config.depth, rng));
    }
    ln_f_ = LayerNormLayer::create(store, "dec/base/ln_f", config.dim);
    head_ = LinearLayer::create(store, "dec/base/head", config.dim, config.vocab_size,
                                Real(1) / std::sqrt(Real(config.dim)), rng);
    if (config.use_lora) {
        for (int i = 0; i < config.depth; ++i) {
            blocks_[i].attach_lora(store, "dec/lora/blk" + std::to_string(i), config.lora, derive_seed(seed, 0x10A, i));
        }
    }
}

void Decoder::check_tokens(std::span<const int> tokens) const {
    if (tokens.empty() || tokens[0] != syndata::Vocab::kBosId) throw Error(ErrorKind::usage, "decoder input must start with BOS");
    if (static_cast<int>(tokens.size()) > config_.max_tokens) {
        throw Error(ErrorKind::shape, "token sequence of " + std::to_string(tokens.size()) + " exceeds " +
                                          std::to_string(config_.max_tokens) + " positions");
    }
    for (int id : tokens) {
        if (id < 0 || id >= config_.vocab_size) throw Error(ErrorKind::vocab, "token id " + std::to_string(id) + " outside vocabulary");
    }
}

Var Decoder::forward(Graph& g, Var context_rows, std::span<const int> tokens) const {
    check_tokens(tokens);
    const int n = static_cast<int>(tokens.size());
    Var x = g.gather_rows(g.param(*embed_), tokens);
    x = g.add(x, g.slice_rows(g.param(*pos_), 0, n));
    int n_ctx = 0;
    if (context_rows.valid()) {
        n_ctx = static_cast<int>(g.value(context_rows).rows());
        if (g.value(context_rows).cols() != config_.dim) {
            throw Error(ErrorKind::shape, "context width " + std::to_string(g.value(context_rows).cols()) +
                                              " differs from decoder width " + std::to_string(config_.dim));
        }
        if (n_ctx > 0) {
            const std::array<Var, 2> parts = {context_rows, x};
            x = g.concat_rows(parts);
        }
    }
    const AttentionMask mask = AttentionMask::prefix_causal(n_ctx);
    for (const auto& b : blocks_) x = b.forward(g, x, mask);
    if (n_ctx > 0) x = g.slice_rows(x, n_ctx, n);
    return head_.forward(g, ln_f_.forward(g, x));
}

Var Decoder::forward(Graph& g, std::span<const int> tokens) const { return forward(g, Var{}, tokens); }

Matrix Decoder::logits(const Context& context, std::span<const int> tokens) const {
    Graph g;
    return g.value(forward(g, g.constant(context.rows), tokens));
}

GenerateResult Decoder::generate(const Context& context, const GenerateOptions& options) const {
    if (context.stage != 1 || context.lengths.ref != 0 || context.lengths.key != 0) {
        throw Error(ErrorKind::asymmetry, "generation conditions on the visual context only; got a stage-" +
                                              std::to_string(context.stage) + " context");
    }
    if (options.max_len < 1) throw Error(ErrorKind::usage, "max_len must be >= 1");
    if (context.rows.cols() != config_.dim) throw Error(ErrorKind::shape, "context width differs from decoder width");
    const int max_len = std::min(options.max_len, config_.max_tokens - 1);

    // Context rows never see tokens, so their keys/values are computed once.
    KvCache prefix;
    if (context.rows.rows() > 0) {
        Graph g;
        Var x = g.constant(context.rows);
        for (const auto& b : blocks_) {
            Var h = b.ln1.forward(g, x);
            Var q = b.wq.forward(g, h), k = b.wk.forward(g, h), v = b.wv.forward(g, h);
            prefix.k.push_back(g.value(k));
            prefix.v.push_back(g.value(v));
            x = g.add(x, b.wo.forward(g, g.attention(q, k, v, b.heads, AttentionMask::full())));
            h = b.ln2.forward(g, x);
            x = g.add(x, b.fc2.forward(g, g.gelu(b.fc1.forward(g, h))));
        }
    } else {
        prefix.k.assign(blocks_.size(), Matrix(0, config_.dim));
        prefix.v.assign(blocks_.size(), Matrix(0, config_.dim));
    }

    // Appends one token at `position`; returns log-probabilities of the next token.
    auto step = [&](KvCache& cache, int token, int position) {
        Graph g;
        const std::array<int, 1> id = {token};
        Var x = g.add(g.gather_rows(g.param(*embed_), id), g.slice_rows(g.param(*pos_), position, 1));
        for (std::size_t l = 0; l < blocks_.size(); ++l) {
            const auto& b = blocks_[l];
            Var h = b.ln1.forward(g, x);
            Var q = b.wq.forward(g, h);
            Matrix& kc = cache.k[l];
            Matrix& vc = cache.v[l];
            kc.conservativeResize(kc.rows() + 1, Eigen::NoChange);
            vc.conservativeResize(vc.rows() + 1, Eigen::NoChange);
            kc.bottomRows(1) = g.value(b.wk.forward(g, h));
            vc.bottomRows(1) = g.value(b.wv.forward(g, h));
            Var att = g.attention(q, g.constant(kc), g.constant(vc), b.heads, AttentionMask::full());
            x = g.add(x, b.wo.forward(g, att));
            h = b.ln2.forward(g, x);
            x = g.add(x, b.fc2.forward(g, g.gelu(b.fc1.forward(g, h))));
        }
        const Matrix logits = g.value(head_.forward(g, ln_f_.forward(g, x)));
        const double mx = logits.maxCoeff();
        Eigen::Matrix<double, 1, Eigen::Dynamic> lp = (logits.cast<double>().array() - mx).matrix();
        lp.array() -= std::log(lp.array().exp().sum());
        return lp;
    };

    GenerateResult result;
    if (options.mode == DecodeMode::greedy) {
        KvCache cache = prefix;
        int token = syndata::Vocab::kBosId;
        for (int t = 0; t < max_len; ++t) {
            const auto lp = step(cache, token, t);
            Eigen::Index best = 0;
            lp.maxCoeff(&best);
            token = static_cast<int>(best);
            result.tokens.push_back(token);
            if (token == syndata::Vocab::kEosId) return result;
        }
        result.truncated = true;
        return result;
    }

    const int width = std::max(1, options.beam_width);
    std::vector<Beam> beams(1);
    beams[0].cache = prefix;
    for (int t = 0; t < max_len; ++t) {
        struct Candidate {
            double score;
            int beam;
            int token;
        };
        std::vector<Candidate> cands;
        std::vector<Eigen::Matrix<double, 1, Eigen::Dynamic>> lps(beams.size());
        for (std::size_t i = 0; i < beams.size(); ++i) {
            if (beams[i].done) {
                cands.push_back({beams[i].score, static_cast<int>(i), -1});
                continue;
            }
            const int last = beams[i].tokens.empty() ? syndata::Vocab::kBosId : beams[i].tokens.back();
            lps[i] = step(beams[i].cache, last, t);
            std::vector<int> order(lps[i].size());
            std::iota(order.begin(), order.end(), 0);
            std::partial_sort(order.begin(), order.begin() + std::min<int>(width, order.size()), order.end(),
                              [&](int a, int b) { return lps[i](a) > lps[i](b) || (lps[i](a) == lps[i](b) && a < b); });
            for (int j = 0; j < width && j < static_cast<int>(order.size()); ++j) {
                cands.push_back({beams[i].score + lps[i](order[j]), static_cast<int>(i), order[j]});
            }
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
        std::vector<Beam> next;
        for (const auto& c : cands) {
            if (static_cast<int>(next.size()) == width) break;
            Beam b = beams[c.beam];
            if (c.token >= 0) {
                b.tokens.push_back(c.token);
                b.score = c.score;
                b.done = c.token == syndata::Vocab::kEosId;
            }
            next.push_back(std::move(b));
        }
        beams = std::move(next);
        if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.done; })) break;
    }
    const Beam& best = beams.front();
    result.tokens = best.tokens;
    result.truncated = !best.done;
    return result;
}

Real loss_ce(const Matrix& logits, std::span<const int> targets, int pad) {
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
        throw Error(ErrorKind::shape, "loss targets and logits differ in length");
    }
    double total = 0;
    int count = 0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        if (targets[t] == pad) continue;
        const int y = targets[t];
        if (y < 0 || y >= logits.cols()) throw Error(ErrorKind::vocab, "target id outside vocabulary");
        const auto row = logits.row(static_cast<Eigen::Index>(t)).cast<double>();
        const double mx = row.maxCoeff();
        total += mx + std::log((row.array() - mx).exp().sum()) - row(y);
        ++count;
    }
    if (count == 0) throw Error(ErrorKind::empty_loss, "every target position is padding");
    return static_cast<Real>(total / count);
}

}  // namespace s2d
