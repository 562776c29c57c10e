#include <doctest.h>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "s2d/core/error.hpp"
#include "s2d/pag/curriculum.hpp"

using namespace s2d;
using namespace s2d::pag;

namespace {

struct World {
    syndata::CorpusSplit corpus = syndata::build_corpus(fixture::tiny_corpus());
    S2dModel model{fixture::tiny_model(), corpus.vocab.size(), 1};
    FeatureCache cache{model, corpus};
};

World& world() {
    static World w;
    return w;
}

bool same_rows_subset(const Matrix& sub, const Matrix& of) {
    for (int i = 0; i < sub.rows(); ++i) {
        bool found = false;
        for (int j = 0; j < of.rows() && !found; ++j) found = sub.row(i) == of.row(j);
        if (!found) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("stage selectors") {
    TrainConfig cfg;
    using V = std::vector<std::string>;
    auto sorted = [](V v) {
        std::sort(v.begin(), v.end());
        return v;
    };
    CHECK(sorted(stage_selector(1, cfg)) == V{"bank", "sma_v"});
    CHECK(sorted(stage_selector(2, cfg)) == V{"bank", "dec/lora", "sma_t", "sma_v"});
    CHECK(sorted(stage_selector(3, cfg)) == V{"bank", "dec/lora", "sma_p", "sma_t", "sma_v"});
    cfg.lora_from_stage = 0;
    CHECK(sorted(stage_selector(3, cfg)) == V{"bank", "sma_p", "sma_t", "sma_v"});
    cfg.lora_from_stage = 1;
    CHECK(sorted(stage_selector(1, cfg)) == V{"bank", "dec/lora", "sma_v"});
}

TEST_CASE("curriculum plans") {
    TrainConfig cfg;
    auto ids = [&](const std::string& name) {
        std::vector<int> out;
        for (const auto& s : make_plan(name, cfg).stages) out.push_back(s.stage_id);
        return out;
    };
    CHECK(ids("canonical") == std::vector<int>{1, 2, 3});
    CHECK(ids("s1") == std::vector<int>{1});
    CHECK(ids("reversed") == std::vector<int>{1, 3, 2});
    CHECK(ids("s1s2") == std::vector<int>{1, 2});
    CHECK(ids("s1s3") == std::vector<int>{1, 3});
    CHECK(make_plan("joint", cfg).joint);
    CHECK(plan_names().size() == 6);
    CHECK_THROWS_AS(make_plan("s2", cfg), Error);
    CHECK(make_plan("canonical", cfg).stages[1].profile.lr == cfg.stages[1].lr);
}

TEST_CASE("make_batch builds teacher-forcing pairs and stage contexts") {
    auto& w = world();
    const auto refs = split_refs(w.corpus, syndata::Split::train);
    Rng rng(4);

    for (int stage = 1; stage <= 3; ++stage) {
        const Batch b = make_batch(stage, refs, w.corpus, w.cache, 2, rng);
        REQUIRE(b.samples.size() == refs.size());
        std::size_t longest = 0;
        for (const auto& s : b.samples) longest = std::max(longest, s.target.size());
        for (std::size_t i = 0; i < b.samples.size(); ++i) {
            const Sample& s = b.samples[i];
            CHECK(s.input.front() == syndata::Vocab::kBosId);
            CHECK(s.target.back() == syndata::Vocab::kEosId);
            CHECK(std::equal(s.input.begin() + 1, s.input.end(), s.target.begin()));
            CHECK(b.padded_targets[i].size() == longest);
            CHECK(s.vision == &w.cache.get(s.ref).vision);
            CHECK((s.reference != nullptr) == (stage >= 2));
            CHECK((s.key.rows() > 0) == (stage == 3 && !w.corpus.train[s.ref.patient].studies[s.ref.study].phrases.empty()));
        }
    }
}

TEST_CASE("stage-2 references come from another study of the same patient") {
    auto& w = world();
    const auto refs = split_refs(w.corpus, syndata::Split::train);
    Rng rng(5);
    std::set<std::pair<const Matrix*, const Matrix*>> seen;
    for (int epoch = 0; epoch < 30; ++epoch) {
        const Batch b = make_batch(2, refs, w.corpus, w.cache, 2, rng);
        for (const auto& s : b.samples) {
            const auto& patient = w.corpus.train[s.ref.patient];
            bool sibling = false;
            for (int j = 0; j < static_cast<int>(patient.studies.size()); ++j) {
                const Matrix* r = &w.cache.get({syndata::Split::train, s.ref.patient, j}).report;
                if (r == s.reference) {
                    CHECK(j != s.ref.study);
                    sibling = true;
                }
            }
            CHECK(sibling);
            seen.emplace(s.vision, s.reference);
        }
    }
    // every (study, sibling) pair gets drawn eventually
    std::size_t pairs = 0;
    for (const auto& p : w.corpus.train) pairs += p.studies.size() * (p.studies.size() - 1);
    CHECK(seen.size() == pairs);
}

TEST_CASE("stage-3 key phrases are min(l, |K|) distinct rows of the study's phrases") {
    auto& w = world();
    const auto refs = split_refs(w.corpus, syndata::Split::train);
    Rng rng(6);
    for (int l : {1, 2, 4}) {
        const Batch b = make_batch(3, refs, w.corpus, w.cache, l, rng);
        for (const auto& s : b.samples) {
            const Matrix& all = w.cache.get(s.ref).phrases;
            CHECK(s.key.rows() == std::min<Eigen::Index>(l, all.rows()));
            CHECK(same_rows_subset(s.key, all));
            for (int i = 0; i < s.key.rows(); ++i) {
                for (int j = i + 1; j < s.key.rows(); ++j) CHECK(s.key.row(i) != s.key.row(j));
            }
        }
    }
}

TEST_CASE("stage >= 2 rejects single-study patients") {
    auto corpus = syndata::build_corpus(fixture::tiny_corpus(3, 1, 1));
    corpus.train[0].studies.resize(1);
    S2dModel model(fixture::tiny_model(), corpus.vocab.size(), 1);
    FeatureCache cache(model, corpus, {syndata::Split::train});
    const std::vector<StudyRef> refs = {{syndata::Split::train, 0, 0}};
    Rng rng(1);
    CHECK_NOTHROW(make_batch(1, refs, corpus, cache, 2, rng));
    try {
        (void)make_batch(2, refs, corpus, cache, 2, rng);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
    }
}

TEST_CASE("sample contexts have the stage's segment lengths") {
    auto& w = world();
    const auto refs = split_refs(w.corpus, syndata::Split::train, 4);
    Rng rng(7);
    for (int stage = 1; stage <= 3; ++stage) {
        const Batch b = make_batch(stage, refs, w.corpus, w.cache, 2, rng);
        for (const auto& c : batch_contexts(w.model, b)) {
            CHECK(c.stage == stage);
            CHECK(c.lengths.vision == 4);
            CHECK(c.lengths.ref == (stage >= 2 ? 4 : 0));
            CHECK(c.lengths.key == (stage == 3 ? 4 : 0));
            CHECK(c.rows.rows() == 4 * stage);
        }
    }
}

TEST_CASE("train_stage changes exactly the selector's parameters") {
    auto& w = world();
    S2dModel model(fixture::tiny_model(), w.corpus.vocab.size(), 1);
    TrainEnv env;
    env.corpus = &w.corpus;
    env.cache = &w.cache;
    env.config.batch_size = 8;
    env.config.warmup_steps = 2;
    env.config.probe_size = 4;
    env.seed = 3;
    long step = 0;
    for (int stage = 1; stage <= 3; ++stage) {
        StageSpec spec = make_stage(stage, env.config);
        spec.profile = {1, 1e-2};
        const auto before = model.store().group_fingerprints();
        const auto res = train_stage(model, spec, env, std::to_string(stage), step);
        const auto after = model.store().group_fingerprints();
        CHECK(res.steps > 0);
        for (const auto& [group, fp] : before) {
            const bool selected = std::count(spec.selector.begin(), spec.selector.end(), group) > 0;
            CHECK_MESSAGE((after.at(group) != fp) == selected, group);
        }
        for (const auto* p : model.store().all()) CHECK_FALSE(p->trainable);
    }
}
