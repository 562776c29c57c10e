#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "s2d/core/layers.hpp"

namespace s2d {

enum class Branch { vision, ref, key };

/// Prefix segment order. Contexts are always laid out in this order.
inline constexpr std::array<Branch, 3> kBranchOrder = {Branch::vision, Branch::ref, Branch::key};

struct SegmentLengths {
    int vision = 0;
    int ref = 0;
    int key = 0;

    int total() const { return vision + ref + key; }
    bool operator==(const SegmentLengths&) const = default;
};

struct Context {
    int stage = 1;
    Matrix rows;
    SegmentLengths lengths;
};

/// Same as Context, but the rows are a node of a training graph.
struct ContextVar {
    int stage = 1;
    Var rows;
    SegmentLengths lengths;
};

/// [V_mem ; R_mem ; K_mem] along the sequence axis. Stage 1 takes V only,
/// stage 2 adds R, stage 3 adds R and K. A missing or surplus branch throws
/// ErrorKind::context.
Context build_context(int stage, const Matrix& v_mem, const Matrix* r_mem = nullptr, const Matrix* k_mem = nullptr);
ContextVar build_context(Graph& g, int stage, Var v_mem, std::optional<Var> r_mem = std::nullopt,
                         std::optional<Var> k_mem = std::nullopt);

struct DecoderConfig {
    int vocab_size = 0;
    int dim = 64;
    int depth = 4;
    int heads = 4;
    int max_tokens = 64;
    LoraConfig lora;
    bool use_lora = true;
};

enum class DecodeMode { greedy, beam };

struct GenerateOptions {
    int max_len = 64;
    DecodeMode mode = DecodeMode::greedy;
    int beam_width = 3;
};

struct GenerateResult {
    std::vector<int> tokens;  // generated ids, EOS included when produced
    bool truncated = false;   // max_len reached without EOS
};

/// Small pre-LN transformer language model over a feature prefix.
/// Namespaces: dec/embed/* (token table), dec/base/* (positions, blocks, head),
/// dec/lora/* (adapters on every linear layer of every block).
class Decoder {
public:
    Decoder() = default;
    Decoder(ParamStore& store, const DecoderConfig& config, std::uint64_t seed);

    /// Logits (|tokens|×vocab). Context rows are mutually visible and visible
    /// to every token; tokens are causal among themselves. tokens[0] must be BOS.
    Var forward(Graph& g, Var context_rows, std::span<const int> tokens) const;
    Var forward(Graph& g, std::span<const int> tokens) const;  // no prefix
    Matrix logits(const Context& context, std::span<const int> tokens) const;

    /// Inference from a stage-1 context only; other stages throw
    /// ErrorKind::asymmetry.
    GenerateResult generate(const Context& context, const GenerateOptions& options = {}) const;

    const DecoderConfig& config() const { return config_; }
    const std::vector<TransformerBlock>& blocks() const { return blocks_; }

private:
    void check_tokens(std::span<const int> tokens) const;

    DecoderConfig config_;
    Parameter* embed_ = nullptr;
    Parameter* pos_ = nullptr;
    std::vector<TransformerBlock> blocks_;
    LayerNormLayer ln_f_;
    LinearLayer head_;
};

/// Mean NLL (nats) over targets != pad. All-PAD targets throw
/// ErrorKind::empty_loss.
Real loss_ce(const Matrix& logits, std::span<const int> targets, int pad = 0);

}  // namespace s2d
