#pragma once

#include "s2d/pag/model.hpp"
#include "s2d/syndata/corpus.hpp"

namespace fixture {

/// Small enough to build and encode in milliseconds.
inline s2d::pag::ModelConfig tiny_model(const std::string& connector = "sma") {
    s2d::pag::ModelConfig m;
    m.vision = {16, 1, 2, 8, 1};
    m.text = {16, 1, 2, 8, 1};
    m.d_model = 16;
    m.n_mem = 4;
    m.sma_heads = 2;
    m.dec_depth = 1;
    m.dec_heads = 2;
    m.max_tokens = 40;
    m.lora = {2, 4, 0};
    m.connector = connector;
    return m;
}

inline s2d::syndata::CorpusConfig tiny_corpus(int train = 12, int val = 3, int test = 3, std::uint64_t seed = 2) {
    s2d::syndata::CorpusConfig c;
    c.train_patients = train;
    c.val_patients = val;
    c.test_patients = test;
    c.seed = seed;
    c.gen.image_size = 32;
    return c;
}

}  // namespace fixture
