#include "s2d/model/encoders.hpp"

#include <cmath>

#include "s2d/core/error.hpp"

namespace s2d {

Matrix sinusoidal_positions(int rows, int dim) {
    Matrix pe(rows, dim);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < dim; ++j) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / dim);
            pe(i, j) = static_cast<Real>(j % 2 == 0 ? std::sin(i * freq) : std::cos(i * freq));
        }
    }
    return pe;
}

VisualEncoder::VisualEncoder(ParamStore& store, const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    if (config.patch_size < 1 || config.dim < 1 || config.depth < 0) throw Error(ErrorKind::config, "bad visual encoder sizes");
    Rng rng(derive_seed(seed, 0xE1));
    const int patch_dim = config.patch_size * config.patch_size * config.channels;
    patch_embed_ = LinearLayer::create(store, "enc_v/patch", patch_dim, config.dim,
                                       Real(4) / std::sqrt(Real(patch_dim)), rng);
    for (int i = 0; i < config.depth; ++i) {
        blocks_.push_back(TransformerBlock::create(store, "enc_v/blk" + std::to_string(i), config.dim, config.heads,
                                                   config.depth, rng));
    }
    final_ln_ = LayerNormLayer::create(store, "enc_v/ln_f", config.dim);
}

Matrix VisualEncoder::encode(const syndata::Image& image) const {
    const int p = config_.patch_size;
    if (image.height % p != 0 || image.width % p != 0 || image.height == 0 || image.width == 0) {
        throw Error(ErrorKind::shape, "image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                          " not divisible by patch size " + std::to_string(p));
    }
    if (image.channels != config_.channels) throw Error(ErrorKind::shape, "image channel count mismatch");
    const int ph = image.height / p, pw = image.width / p, c = image.channels;
    Matrix patches(ph * pw, p * p * c);
    for (int by = 0; by < ph; ++by) {
        for (int bx = 0; bx < pw; ++bx) {
            int col = 0;
            for (int y = 0; y < p; ++y) {
                for (int x = 0; x < p; ++x) {
                    for (int ch = 0; ch < c; ++ch) {
                        patches(by * pw + bx, col++) = static_cast<Real>(image.at(by * p + y, bx * p + x, ch));
                    }
                }
            }
        }
    }
    Graph g;
    Var x = patch_embed_.forward(g, g.constant(std::move(patches)));
    x = g.add(x, g.constant(sinusoidal_positions(ph * pw, config_.dim)));
    for (const auto& b : blocks_) x = b.forward(g, x, AttentionMask::full());
    return g.value(final_ln_.forward(g, x));
}

TextEncoder::TextEncoder(ParamStore& store, int vocab_size, const EncoderConfig& config, std::uint64_t seed)
    : config_(config), vocab_size_(vocab_size) {
    if (vocab_size < 1 || config.dim < 1) throw Error(ErrorKind::config, "bad text encoder sizes");
    Rng rng(derive_seed(seed, 0xE2));
    embed_ = &store.create("enc_t/embed", random_normal(vocab_size, config.dim, Real(1), rng), false);
    for (int i = 0; i < config.depth; ++i) {
        blocks_.push_back(TransformerBlock::create(store, "enc_t/blk" + std::to_string(i), config.dim, config.heads,
                                                   config.depth, rng));
    }
    final_ln_ = LayerNormLayer::create(store, "enc_t/ln_f", config.dim);
}

Matrix TextEncoder::encode(std::span<const int> ids) const {
    for (int id : ids) {
        if (id < 0 || id >= vocab_size_) throw Error(ErrorKind::vocab, "token id " + std::to_string(id) + " outside vocabulary");
    }
    if (ids.empty()) return Matrix(0, config_.dim);
    Graph g;
    Var x = g.gather_rows(g.param(*embed_), ids);
    x = g.add(x, g.constant(sinusoidal_positions(static_cast<int>(ids.size()), config_.dim) * Real(0.5)));
    for (const auto& b : blocks_) x = b.forward(g, x, AttentionMask::full());
    return g.value(final_ln_.forward(g, x));
}

Matrix TextEncoder::encode_pooled(std::span<const int> ids) const {
    const Matrix rows = encode(ids);
    if (rows.rows() == 0) return Matrix(0, config_.dim);
    return rows.colwise().mean();
}

}  // namespace s2d
