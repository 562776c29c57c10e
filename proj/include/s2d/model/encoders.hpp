#pragma once

#include <span>
#include <vector>

#include "s2d/core/layers.hpp"
#include "s2d/syndata/syndata.hpp"

namespace s2d {

struct EncoderConfig {
    int dim = 64;
    int depth = 2;
    int heads = 4;
    int patch_size = 8;
    int channels = 1;
};

/// Sinusoidal position table (rows × dim); deterministic, not a parameter.
Matrix sinusoidal_positions(int rows, int dim);

/// Frozen ViT-style stand-in: non-overlapping P×P patches, linear patch
/// embedding plus position, `depth` bidirectional blocks, final LayerNorm.
/// Parameters live under "enc_v/" and are never marked trainable.
class VisualEncoder {
public:
    VisualEncoder() = default;
    VisualEncoder(ParamStore& store, const EncoderConfig& config, std::uint64_t seed);

    /// N×D with N = (H/P)·(W/P), rows in row-major patch order.
    Matrix encode(const syndata::Image& image) const;

    int patch_size() const { return config_.patch_size; }
    int dim() const { return config_.dim; }

private:
    EncoderConfig config_;
    LinearLayer patch_embed_;
    std::vector<TransformerBlock> blocks_;
    LayerNormLayer final_ln_;
};

/// Frozen BERT-style stand-in under "enc_t/": token embedding plus position,
/// bidirectional blocks, final LayerNorm. One output row per input token.
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(ParamStore& store, int vocab_size, const EncoderConfig& config, std::uint64_t seed);

    /// L×D; an empty sequence yields 0×D. Throws ErrorKind::vocab on bad ids.
    Matrix encode(std::span<const int> ids) const;
    /// Mean of encode(ids) rows: one 1×D vector per phrase.
    Matrix encode_pooled(std::span<const int> ids) const;

    int dim() const { return config_.dim; }
    int vocab_size() const { return vocab_size_; }

private:
    EncoderConfig config_;
    int vocab_size_ = 0;
    Parameter* embed_ = nullptr;
    std::vector<TransformerBlock> blocks_;
    LayerNormLayer final_ln_;
};

}  // namespace s2d
