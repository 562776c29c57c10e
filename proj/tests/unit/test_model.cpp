#include <doctest.h>

#include "s2d/core/error.hpp"
#include "s2d/model/decoder.hpp"
#include "s2d/model/encoders.hpp"
#include "s2d/model/sma.hpp"
#include "s2d/pag/connectors.hpp"
#include "s2d/pag/model.hpp"
#include "s2d/syndata/corpus.hpp"

using namespace s2d;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::io;
}

Matrix features(int rows, int dim, std::uint64_t seed) {
    Rng rng(seed);
    return random_normal(rows, dim, 1, rng);
}

Matrix eval(const Connector& c, const Matrix& aux) {
    Graph g;
    return g.value(c.forward(g, aux));
}

}  // namespace

TEST_CASE("visual encoder emits one row per patch") {
    ParamStore store;
    VisualEncoder enc(store, EncoderConfig{32, 1, 4, 8, 1}, 3);
    const auto img = syndata::render_background(9, 64, 48);
    const Matrix f = enc.encode(img);
    CHECK(f.rows() == 8 * 6);
    CHECK(f.cols() == 32);
    CHECK(f == enc.encode(img));
    for (auto* p : store.all()) CHECK_FALSE(p->trainable);
}

TEST_CASE("text encoder shapes and errors") {
    ParamStore store;
    TextEncoder enc(store, 20, EncoderConfig{16, 1, 2, 8, 1}, 4);
    const std::vector<int> ids = {1, 5, 7, 9};
    CHECK(enc.encode(ids).rows() == 4);
    CHECK(enc.encode(std::vector<int>{}).rows() == 0);
    CHECK(enc.encode(std::vector<int>{}).cols() == 16);
    CHECK(enc.encode_pooled(ids).rows() == 1);
    CHECK(enc.encode_pooled(ids).isApprox(enc.encode(ids).colwise().mean()));
    CHECK(kind_of([&] { (void)enc.encode(std::vector<int>{20}); }) == ErrorKind::vocab);
}

TEST_CASE("SMA maps any input length to N_mem rows of width D_model") {
    ParamStore store;
    const MemoryBank bank = init_memory(store, "bank/q_mem", 16, 32, 1);
    SmaInstance sma(store, Role::vision, bank, SmaDims{24, 32, 4}, 2);
    for (int len : {1, 7, 500}) {
        const Matrix out = eval(sma, features(len, 24, static_cast<std::uint64_t>(len)));
        CHECK(out.rows() == 16);
        CHECK(out.cols() == 32);
    }
    CHECK(eval(sma, Matrix(0, 24)).rows() == 16);  // sentinel row stands in

    const auto w = sma.attention_weights(features(5, 24, 0));
    REQUIRE(w.size() == 4);
    for (const auto& h : w) {
        CHECK(h.rows() == 16);
        CHECK(h.cols() == 5);
        for (int r = 0; r < 16; ++r) CHECK(h.row(r).sum() == doctest::Approx(1.0).epsilon(1e-5));
    }
    CHECK_FALSE(store.get("bank/q_mem").decay);
}

TEST_CASE("memory bank init is seeded with variance 1/d") {
    ParamStore a, b;
    const auto qa = init_memory(a, "bank/q_mem", 64, 256, 5);
    const auto qb = init_memory(b, "bank/q_mem", 64, 256, 5);
    CHECK(qa.queries->value == qb.queries->value);
    const Matrix& q = qa.queries->value;
    const double mean = q.mean();
    const double var = (q.array() - mean).square().mean();
    CHECK(std::abs(mean) < 0.01);
    CHECK(var * 256 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("connector registry") {
    CHECK(pag::connector_names().size() == 5);
    ParamStore store;
    pag::ConnectorDims dims{24, 16, 32, 8, 4};
    SUBCASE("sma shares one bank across all three roles") {
        const auto set = pag::connector_registry("sma", store, dims, 1);
        for (Role r : {Role::vision, Role::ref_text, Role::key_text}) {
            const auto& inst = dynamic_cast<const SmaInstance&>(set.at(r));
            CHECK(inst.bank().queries == set.bank.queries);
            CHECK(inst.output_rows() == 8);
        }
    }
    SUBCASE("every variant emits a fixed row count per role") {
        for (const auto& info : pag::connector_names()) {
            ParamStore s;
            const auto set = pag::connector_registry(info.name, s, dims, 1);
            for (Role r : {Role::vision, Role::ref_text, Role::key_text}) {
                const int d = r == Role::vision ? 24 : 16;
                for (int len : {1, 40}) {
                    const Matrix out = eval(set.at(r), features(len, d, 2));
                    CHECK(out.rows() == set.at(r).output_rows());
                    CHECK(out.cols() == 32);
                }
            }
        }
    }
    SUBCASE("unknown names are registry errors") {
        CHECK(kind_of([&] { (void)pag::connector_registry("qformer", store, dims, 1); }) == ErrorKind::registry);
    }
}

TEST_CASE("build_context lays out V;R;K and checks the stage") {
    const Matrix v = Matrix::Constant(64, 8, 1), r = Matrix::Constant(64, 8, 2), k = Matrix::Constant(64, 8, 3);
    const Context c3 = build_context(3, v, &r, &k);
    CHECK(c3.rows.rows() == 192);
    CHECK(c3.lengths == SegmentLengths{64, 64, 64});
    CHECK(c3.rows(0, 0) == 1);
    CHECK(c3.rows(64, 0) == 2);
    CHECK(c3.rows(191, 0) == 3);
    CHECK(build_context(1, v).rows.rows() == 64);
    CHECK(build_context(2, v, &r).rows.rows() == 128);
    CHECK(kind_of([&] { (void)build_context(1, v, &r); }) == ErrorKind::context);
    CHECK(kind_of([&] { (void)build_context(2, v); }) == ErrorKind::context);
    CHECK(kind_of([&] { (void)build_context(3, v, &r); }) == ErrorKind::context);
}

TEST_CASE("LoRA") {
    ParamStore store;
    Rng rng(1);
    const LinearLayer base = LinearLayer::create(store, "dec/base/w", 12, 10, 0.2f, rng);
    const LoraLinear lora = lora_wrap(store, "dec/lora/w", base, LoraConfig{4, 8, 0}, 2);
    const Matrix x = features(5, 12, 3);

    SUBCASE("a fresh adapter is an exact identity") {
        Graph g;
        const Var xi = g.constant(x);
        CHECK(g.value(lora.forward(g, xi)) == g.value(base.forward(g, xi)));
        CHECK(lora.merged_weight() == base.weight->value);
    }
    SUBCASE("merged weight reproduces the adapted forward pass") {
        store.get("dec/lora/w/up").value = features(4, 10, 4);
        Graph g;
        const Matrix y = g.value(lora.forward(g, g.constant(x)));
        const Matrix merged = (x * lora.merged_weight()).rowwise() + base.bias->value.row(0);
        CHECK(y.isApprox(merged, 1e-5f));
        CHECK(lora.scale() == 2);
    }
    SUBCASE("rank outside [1, min(in, out)] is a config error") {
        CHECK(kind_of([&] { (void)lora_wrap(store, "dec/lora/x", base, LoraConfig{11, 8, 0}, 2); }) ==
              ErrorKind::config);
        CHECK(kind_of([&] { (void)lora_wrap(store, "dec/lora/y", base, LoraConfig{0, 8, 0}, 2); }) ==
              ErrorKind::config);
    }
}

TEST_CASE("decoder") {
    ParamStore store;
    DecoderConfig cfg;
    cfg.vocab_size = 30;
    cfg.dim = 16;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.max_tokens = 12;
    Decoder dec(store, cfg, 7);
    const Context ctx = build_context(1, features(6, 16, 1));
    const std::vector<int> toks = {1, 5, 9, 4, 3};

    CHECK(dec.logits(ctx, toks).rows() == 5);
    CHECK(dec.logits(ctx, toks).cols() == 30);

    SUBCASE("tokens are causal, the prefix is visible to all of them") {
        std::vector<int> changed = toks;
        changed[3] = 11;
        const Matrix a = dec.logits(ctx, toks), b = dec.logits(ctx, changed);
        CHECK(a.topRows(3) == b.topRows(3));
        CHECK(a.row(3) != b.row(3));

        Context other = ctx;
        other.rows(5, 0) += 1;
        CHECK(dec.logits(other, toks).row(0) != a.row(0));
    }
    SUBCASE("generation only accepts stage-1 contexts") {
        const Matrix r = features(6, 16, 2);
        CHECK(kind_of([&] { (void)dec.generate(build_context(2, ctx.rows, &r)); }) == ErrorKind::asymmetry);
        const auto res = dec.generate(ctx, {8, DecodeMode::greedy, 1});
        CHECK(res.tokens.size() <= 8);
        CHECK(res.tokens == dec.generate(ctx, {8, DecodeMode::greedy, 1}).tokens);
    }
    SUBCASE("bad inputs") {
        CHECK_THROWS_AS(dec.logits(ctx, std::vector<int>{5, 6}), Error);  // no BOS
        CHECK(kind_of([&] { (void)dec.logits(ctx, std::vector<int>{1, 30}); }) == ErrorKind::vocab);
        CHECK(kind_of([&] { (void)loss_ce(Matrix::Zero(3, 30), std::vector<int>{0, 0, 0}); }) ==
              ErrorKind::empty_loss);
    }
    SUBCASE("loss_ce is the mean NLL over non-pad targets") {
        const Matrix logits = Matrix::Zero(3, 30);
        CHECK(loss_ce(logits, std::vector<int>{4, 0, 7}) == doctest::Approx(std::log(30.0)));
    }
}

TEST_CASE("models that differ only in connector share encoders and decoder") {
    pag::ModelConfig cfg;
    cfg.vision = {16, 1, 2, 8, 1};
    cfg.text = {16, 1, 2, 8, 1};
    cfg.d_model = 16;
    cfg.n_mem = 4;
    cfg.sma_heads = 2;
    cfg.dec_depth = 1;
    cfg.dec_heads = 2;
    cfg.max_tokens = 16;
    pag::S2dModel a(cfg, 40, 3);
    cfg.connector = "mlp";
    pag::S2dModel b(cfg, 40, 3);
    for (const char* ns : {"enc_v", "enc_t", "dec/base", "dec/embed", "dec/lora"}) {
        CHECK(a.store().fingerprint(ns) == b.store().fingerprint(ns));
    }
    CHECK(a.store().contains("bank/q_mem"));
}
