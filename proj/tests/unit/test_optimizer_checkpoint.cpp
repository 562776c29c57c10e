#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "s2d/core/error.hpp"
#include "s2d/pag/checkpoint.hpp"
#include "s2d/pag/optimizer.hpp"

using namespace s2d;
using namespace s2d::pag;

namespace {

void fill_store(ParamStore& store, std::uint64_t seed) {
    Rng rng(seed);
    store.create("dec/base/w", random_normal(3, 4, 1, rng));
    store.create("dec/lora/a", random_normal(4, 2, 1, rng));
    store.create("bank/q_mem", random_normal(5, 4, 1, rng), false);
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::io;
}

}  // namespace

TEST_CASE("lr schedule") {
    const double peak = 3e-4;
    const long warmup = 100, total = 1100;

    CHECK(lr_at(warmup, peak, warmup, total) == peak);
    CHECK(lr_at(total, peak, warmup, total) == 0.0);
    CHECK(lr_at(0, peak, warmup, total) == 0.0);
    CHECK(std::abs(lr_at(600, peak, warmup, total) - peak / 2) < 1e-12);

    for (long s = 1; s <= total; ++s) {
        const double lr = lr_at(s, peak, warmup, total);
        const double expect = s <= warmup ? peak * s / warmup
                                          : peak / 2 * (1 + std::cos(std::numbers::pi * (s - warmup) / (total - warmup)));
        REQUIRE(std::abs(lr - expect) < 1e-12);
        if (s > 1 && s <= warmup) REQUIRE(lr > lr_at(s - 1, peak, warmup, total));
        if (s > warmup) REQUIRE(lr <= lr_at(s - 1, peak, warmup, total));
        // cosine half is point-symmetric about its midpoint
        if (s > warmup) REQUIRE(std::abs(lr + lr_at(total + warmup - s, peak, warmup, total) - peak) < 1e-12);
    }
    SUBCASE("no warmup starts at the peak") { CHECK(lr_at(1, peak, 0, 10) < peak + 1e-15); }
    SUBCASE("total within warmup holds the peak") { CHECK(lr_at(50, peak, 100, 80) == peak * 0.5); }
}

TEST_CASE("AdamW first step moves each coordinate by lr against the gradient sign") {
    ParamStore store;
    Parameter& p = store.create("w", Matrix::Constant(2, 2, 1), false);
    p.trainable = true;
    p.grad = Matrix(2, 2);
    p.grad << 0.5f, -2.0f, 1e-3f, -7.0f;
    AdamW opt(AdamWConfig{0.9, 0.999, 1e-12, 0.0});
    opt.step({&p}, 0.01);
    CHECK(p.value(0, 0) == doctest::Approx(0.99));
    CHECK(p.value(0, 1) == doctest::Approx(1.01));
    CHECK(p.value(1, 0) == doctest::Approx(0.99));
    CHECK(p.value(1, 1) == doctest::Approx(1.01));
    CHECK(opt.steps() == 1);
}

TEST_CASE("AdamW skips decay for no-decay parameters and skips untouched ones") {
    ParamStore store;
    Parameter& a = store.create("a", Matrix::Constant(1, 1, 2), true);
    Parameter& b = store.create("b", Matrix::Constant(1, 1, 2), false);
    Parameter& c = store.create("c", Matrix::Constant(1, 1, 2), true);
    a.grad = Matrix::Zero(1, 1);
    b.grad = Matrix::Zero(1, 1);
    AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, 0.1});
    opt.step({&a, &b, &c}, 0.5);
    CHECK(a.value(0, 0) == doctest::Approx(2 - 0.5 * 0.1 * 2));
    CHECK(b.value(0, 0) == 2.0f);
    CHECK(c.value(0, 0) == 2.0f);
    CHECK(opt.moments().count("c") == 0);
}

TEST_CASE("checkpoint round trip") {
    ParamStore store;
    fill_store(store, 1);
    AdamW opt;
    for (auto* p : store.all()) {
        p->trainable = true;
        p->grad = Matrix::Ones(p->value.rows(), p->value.cols());
    }
    opt.step(store.all(), 1e-3);

    const Checkpoint ck = make_checkpoint(store, &opt, {{"stage_id", "2"}, {"global_step", "17"}});
    const std::string bytes = serialize_checkpoint(ck);
    CHECK(deserialize_checkpoint(bytes) == ck);
    CHECK(serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes);

    ParamStore other;
    fill_store(other, 2);
    AdamW opt2;
    apply_checkpoint(ck, other, &opt2);
    CHECK(other.fingerprint() == store.fingerprint());
    CHECK(opt2.moments().at("dec/base/w").v == opt.moments().at("dec/base/w").v);

    const auto path = std::filesystem::temp_directory_path() / "s2d_unit.ckpt";
    save_checkpoint(ck, path);
    CHECK(load_checkpoint(path) == ck);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption is reported as a checkpoint error") {
    ParamStore store;
    fill_store(store, 3);
    const Checkpoint ck = make_checkpoint(store, nullptr, {{"k", "v"}});
    const std::string good = serialize_checkpoint(ck);

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    CHECK(kind_of([&] { (void)deserialize_checkpoint(bad_magic); }) == ErrorKind::checkpoint);
    CHECK(kind_of([&] { (void)deserialize_checkpoint(good.substr(0, good.size() / 2)); }) == ErrorKind::checkpoint);

    // flip one payload byte: the per-entry checksum must catch it
    std::string flipped = good;
    const auto pos = good.size() - 40;
    flipped[pos] = static_cast<char>(flipped[pos] ^ 0x5A);
    CHECK(kind_of([&] { (void)deserialize_checkpoint(flipped); }) == ErrorKind::checkpoint);

    ParamStore missing;
    missing.create("dec/base/w", Matrix::Zero(3, 4));
    CHECK(kind_of([&] { apply_checkpoint(ck, missing); }) == ErrorKind::checkpoint);

    ParamStore wrong_shape;
    fill_store(wrong_shape, 3);
    wrong_shape.get("dec/base/w").value = Matrix::Zero(4, 3);
    CHECK(kind_of([&] { apply_checkpoint(ck, wrong_shape); }) == ErrorKind::checkpoint);

    CHECK(kind_of([] { (void)load_checkpoint("/nonexistent/x.ckpt"); }) == ErrorKind::checkpoint);
}
