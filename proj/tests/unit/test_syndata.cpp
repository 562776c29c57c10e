#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "s2d/core/error.hpp"
#include "s2d/eval/metrics.hpp"
#include "s2d/syndata/corpus.hpp"

using namespace s2d;
using namespace s2d::syndata;

namespace {

const Grammar& G() { return default_grammar(); }

FindingLabel label(const std::string& finding, const std::string& tag, bool present, int severity) {
    return {G().catalog.find_finding(finding), G().catalog.find_region_tag(tag), present, present ? severity : 0};
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Every file under dir, keyed by relative path.
std::map<std::string, std::string> tree(const std::filesystem::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[std::filesystem::relative(e.path(), dir).string()] = file_bytes(e.path());
    }
    return out;
}

const CorpusSplit& small_corpus() {
    static const CorpusSplit c = [] {
        CorpusConfig cfg;
        cfg.train_patients = 100;
        cfg.val_patients = 10;
        cfg.test_patients = 10;
        cfg.seed = 11;
        return build_corpus(cfg);
    }();
    return c;
}

}  // namespace

TEST_CASE("catalog has 12 findings, 6 regions, 3 severities") {
    const auto& c = default_catalog();
    CHECK(c.finding_count() == 12);
    CHECK(c.region_count() == 6);
    CHECK(c.severity_count() == 3);
    for (int r = 0; r < c.region_count(); ++r) CHECK(c.find_region_tag(c.region_tag(r)) == r);
}

TEST_CASE("gen_patient is deterministic and has at least two studies") {
    const PatientRecord a = gen_patient(0, default_catalog());
    const PatientRecord b = gen_patient(0, default_catalog());
    CHECK(a == b);
    CHECK(a.studies.size() >= 2);
    for (const auto& s : a.studies) CHECK(s.anatomy_seed == a.anatomy_seed);
}

TEST_CASE("different patient seeds give different anatomy") {
    CHECK(gen_patient(0, default_catalog()).anatomy_seed != gen_patient(1, default_catalog()).anatomy_seed);
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 2000; ++s) CHECK(seen.insert(anatomy_seed_for(s)).second);
}

TEST_CASE("consecutive studies differ in at least one label (100-patient scan)") {
    const auto& corpus = small_corpus();
    int pairs = 0;
    for (const auto& p : corpus.train) {
        for (std::size_t i = 1; i < p.studies.size(); ++i) {
            CHECK(p.studies[i].labels != p.studies[i - 1].labels);
            ++pairs;
        }
    }
    CHECK(pairs >= 100);
}

TEST_CASE("study invariants: pixels in [0,1], one tuple per present label, one label per slot") {
    for (const auto& p : small_corpus().train) {
        for (const auto& s : p.studies) {
            for (float v : s.image.pixels) REQUIRE((v >= 0.0f && v <= 1.0f));
            const auto present = std::count_if(s.labels.begin(), s.labels.end(), [](auto& l) { return l.present; });
            CHECK(static_cast<long>(s.tuples.size()) == present);
            std::set<std::pair<int, int>> slots;
            for (const auto& l : s.labels) CHECK(slots.emplace(l.finding, l.region).second);
            CHECK(s.report == compose_report(s.labels));
        }
    }
}

TEST_CASE("render_radiograph") {
    StudyRecord s;
    s.anatomy_seed = 42;

    SUBCASE("no present findings renders the pure background") {
        s.labels = {label("effusion", "left-base", false, 0)};
        CHECK(render_radiograph(s, 64, 64, 8) == render_background(42, 64, 64));
    }
    SUBCASE("same anatomy and labels give identical images") {
        s.labels = {label("nodule", "right-apex", true, 2)};
        StudyRecord t = s;
        t.patient_id = 7;
        CHECK(render_radiograph(s, 64, 64, 8) == render_radiograph(t, 64, 64, 8));
    }
    SUBCASE("a finding only touches its own region cell") {
        const Image bg = render_background(42, 64, 64);
        for (int region = 0; region < 6; ++region) {
            s.labels = {FindingLabel{3, region, true, 1}};
            const Image img = render_radiograph(s, 64, 64, 8);
            const auto cell = region_cell(region, 64, 64);
            int changed_inside = 0;
            for (int y = 0; y < 64; ++y) {
                for (int x = 0; x < 64; ++x) {
                    const bool inside = y >= cell.y0 && y < cell.y1 && x >= cell.x0 && x < cell.x1;
                    if (inside) {
                        changed_inside += img.at(y, x) != bg.at(y, x);
                    } else {
                        REQUIRE(img.at(y, x) == bg.at(y, x));
                    }
                }
            }
            CHECK(changed_inside > 0);
        }
    }
    SUBCASE("size not divisible by the patch size is a config error") {
        try {
            (void)render_radiograph(s, 60, 64, 8);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::config);
        }
    }
    SUBCASE("distinct finding kinds draw distinct glyphs") {
        std::set<std::vector<float>> glyphs;
        for (int f = 0; f < 12; ++f) {
            s.labels = {FindingLabel{f, 0, true, 1}};
            glyphs.insert(render_radiograph(s, 64, 64, 8).pixels);
        }
        CHECK(glyphs.size() == 12);
    }
}

TEST_CASE("longitudinal anatomy: all-absent renders agree across a patient's studies") {
    for (const auto& p : small_corpus().train) {
        const Image bg = render_background(p.anatomy_seed, 64, 64);
        for (const auto& s : p.studies) {
            StudyRecord empty = s;
            empty.labels.clear();
            CHECK(render_radiograph(empty, 64, 64, 8) == bg);
        }
    }
}

TEST_CASE("compose_report") {
    const Tokens pre = {"frontal", "view", "of", "the", "chest", "."};
    const Tokens close = {"heart", "size", "is", "normal", "."};

    SUBCASE("empty label set") {
        Tokens expect = pre;
        for (auto t : {"no", "acute", "findings", "."}) expect.push_back(t);
        expect.insert(expect.end(), close.begin(), close.end());
        expect.emplace_back("<eos>");
        CHECK(compose_report({}) == expect);
    }
    SUBCASE("one label yields its sentence exactly once") {
        const Tokens r = compose_report({label("effusion", "left-base", true, 1)});
        CHECK(join(r) == "frontal view of the chest . moderate effusion at the left base . heart size is normal . <eos>");
    }
    SUBCASE("canonical order is region-major, then finding") {
        const Tokens r = compose_report({label("nodule", "left-apex", false, 0), label("edema", "right-apex", true, 0),
                                         label("effusion", "left-apex", true, 2)});
        CHECK(join(r) ==
              "frontal view of the chest . mild edema at the right apex . severe effusion at the left apex . "
              "no nodule at the left apex . heart size is normal . <eos>");
    }
    SUBCASE("unknown finding id is a catalog error") {
        try {
            (void)compose_report({FindingLabel{12, 0, true, 0}});
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::catalog);
        }
    }
}

TEST_CASE("report round-trips through parse_findings over the corpus") {
    const auto& corpus = small_corpus();
    for (Split split : {Split::train, Split::val, Split::test}) {
        for (const auto& p : corpus.patients(split)) {
            for (const auto& s : p.studies) {
                auto expect = s.labels;
                std::sort(expect.begin(), expect.end(),
                          [](auto& a, auto& b) { return std::tie(a.finding, a.region) < std::tie(b.finding, b.region); });
                CHECK(eval::parse_findings(s.report) == expect);
            }
        }
    }
}

TEST_CASE("extract_tuples") {
    StudyRecord s;
    s.labels = {label("edema", "right-apex", false, 0)};
    CHECK(extract_tuples(s).empty());

    s.labels = {label("effusion", "left-base", true, 0), label("mass", "right-apex", true, 2),
                label("edema", "left-apex", false, 0)};
    s.labels = canonical_order(s.labels);
    const auto t = extract_tuples(s);
    REQUIRE(t.size() == 2);
    CHECK(t[0] == Tuple{"mass", "present-severe", "right-apex"});
    CHECK(t[1] == Tuple{"effusion", "present-mild", "left-base"});
}

TEST_CASE("tuples regenerate identically from (patient seed, labels)") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto p = gen_patient(seed, default_catalog());
        for (const auto& s : p.studies) {
            StudyRecord fresh;
            fresh.labels = s.labels;
            CHECK(extract_tuples(fresh) == s.tuples);
        }
    }
}

TEST_CASE("refine_tuples_to_phrases") {
    CHECK(refine_tuples_to_phrases({{"effusion", "absent", "left-base"}, {"mass", "absent", "right-apex"}}).empty());
    const auto ph = refine_tuples_to_phrases({{"effusion", "present-mild", "left-base"}});
    REQUIRE(ph.size() == 1);
    CHECK(join(ph[0]) == "mild effusion at the left base");
    try {
        (void)refine_tuples_to_phrases({{"unicorn", "present-mild", "left-base"}});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::grammar);
    }
}

TEST_CASE("phrase faithfulness: one phrase per present tuple, words drawn from the report") {
    for (const auto& p : small_corpus().train) {
        for (const auto& s : p.studies) {
            CHECK(s.phrases.size() == s.tuples.size());
            const std::set<std::string> words(s.report.begin(), s.report.end());
            for (const auto& ph : s.phrases) {
                for (const auto& w : ph) CHECK(words.count(w) == 1);
            }
        }
    }
}

TEST_CASE("render_refinement_prompt") {
    std::vector<Demonstration> pool;
    for (std::uint64_t seed = 100; pool.size() < 8; ++seed) {
        for (const auto& s : gen_patient(seed, default_catalog()).studies) {
            const bool dup = std::any_of(pool.begin(), pool.end(), [&](auto& d) { return d.tuples == s.tuples; });
            if (!s.tuples.empty() && !dup) pool.push_back({s.tuples, s.phrases});
        }
    }
    const std::vector<Tuple> query = {{"effusion", "present-mild", "left-base"}};

    SUBCASE("zero demonstrations: instruction and query only") {
        const std::string p = render_refinement_prompt(query, pool, 0, 5);
        CHECK(p.find("Example") == std::string::npos);
        CHECK(p.find("(effusion, present-mild, left-base)") != std::string::npos);
    }
    SUBCASE("fixed seed repeats the same demonstrations") {
        CHECK(render_refinement_prompt(query, pool, 3, 5) == render_refinement_prompt(query, pool, 3, 5));
    }
    SUBCASE("exactly n demonstrations, each verbatim, system section before the user section") {
        const std::string p = render_refinement_prompt(query, pool, kDefaultPromptDemos, 9);
        const auto sep = p.find("----");
        REQUIRE(sep != std::string::npos);
        int found = 0;
        for (const auto& d : pool) {
            std::string tuples, phrases;
            for (std::size_t i = 0; i < d.tuples.size(); ++i) {
                tuples += (i ? " | " : "") + ("(" + d.tuples[i].entity + ", " + d.tuples[i].relation + ", " +
                                              d.tuples[i].region + ")");
                phrases += (i ? " | " : "") + join(d.phrases[i]);
            }
            const auto at = p.find("Tuples: " + tuples + "\nPhrases: " + phrases + "\n");
            if (at != std::string::npos) {
                CHECK(at < sep);
                ++found;
            }
        }
        CHECK(found == 3);
        CHECK(p.find("Example 3") != std::string::npos);
        CHECK(p.find("Example 4") == std::string::npos);
        CHECK(p.rfind("(effusion, present-mild, left-base)") > sep);
    }
    SUBCASE("query with no positive tuples lists none") {
        const std::string p = render_refinement_prompt({}, pool, 3, 1);
        CHECK(p.substr(p.find("[USER]")).find("(none)") != std::string::npos);
    }
    SUBCASE("a pool smaller than n is a pool error") {
        try {
            (void)render_refinement_prompt(query, {pool[0]}, 3, 1);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::pool);
        }
    }
}

TEST_CASE("select_reference") {
    PatientRecord two = gen_patient(3, 0, G(), GenOptions{2, 2, 3, 64, 8});
    PatientRecord three = gen_patient(4, 0, G(), GenOptions{3, 3, 3, 64, 8});
    Rng rng(1);

    for (int i = 0; i < 100; ++i) CHECK(select_reference_index(two, 0, rng) == 1);
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 10000; ++i) ++counts[select_reference_index(three, 1, rng)];
    CHECK(counts[1] == 0);
    CHECK(std::abs(counts[0] / 10000.0 - 0.5) <= 0.02);
    CHECK(&select_reference(two, 1, rng) == &two.studies[0].report);

    PatientRecord one = two;
    one.studies.resize(1);
    try {
        (void)select_reference(one, 0, rng);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::selection);
    }
}

TEST_CASE("build_corpus") {
    SUBCASE("2/1/1 patients are partitioned with distinct ids") {
        CorpusConfig cfg;
        cfg.train_patients = 2;
        cfg.val_patients = 1;
        cfg.test_patients = 1;
        const auto c = build_corpus(cfg);
        std::set<int> ids;
        for (Split s : {Split::train, Split::val, Split::test}) {
            for (const auto& p : c.patients(s)) ids.insert(p.patient_id);
        }
        CHECK(c.train.size() == 2);
        CHECK(c.val.size() == 1);
        CHECK(c.test.size() == 1);
        CHECK(ids.size() == 4);
    }
    SUBCASE("splits are patient-disjoint and vocab covers the grammar") {
        const auto& c = small_corpus();
        std::set<int> train_ids;
        for (const auto& p : c.train) train_ids.insert(p.patient_id);
        for (Split s : {Split::val, Split::test}) {
            for (const auto& p : c.patients(s)) CHECK(train_ids.count(p.patient_id) == 0);
        }
        CHECK(c.vocab.token(Vocab::kPadId) == "<pad>");
        CHECK(c.vocab.token(Vocab::kBosId) == "<bos>");
        CHECK(c.vocab.token(Vocab::kEosId) == "<eos>");
        for (const auto& t : G().closed_vocabulary()) CHECK(c.vocab.contains(t));
    }
    SUBCASE("overlapping split sizes are a config error") {
        CorpusConfig cfg;
        cfg.train_patients = 5;
        cfg.val_patients = 5;
        cfg.test_patients = 5;
        cfg.total_patients = 10;
        CHECK_THROWS_AS(build_corpus(cfg), Error);
    }
}

TEST_CASE("desk profile yields at least 1,600 train samples") {
    CorpusConfig cfg;  // 800 / 100 / 100
    const auto c = build_corpus(cfg);
    CHECK(c.study_count(Split::train) >= 1600);
}

TEST_CASE("corpus files: byte-identical on regeneration and lossless on reload") {
    const auto tmp = std::filesystem::temp_directory_path() / "s2d_unit_corpus";
    std::filesystem::remove_all(tmp);
    CorpusConfig cfg;
    cfg.train_patients = 6;
    cfg.val_patients = 2;
    cfg.test_patients = 2;
    cfg.seed = 5;
    write_corpus(build_corpus(cfg), tmp / "a");
    write_corpus(build_corpus(cfg), tmp / "b");
    CHECK(tree(tmp / "a") == tree(tmp / "b"));

    const auto original = build_corpus(cfg);
    const auto loaded = load_corpus(tmp / "a");
    CHECK(loaded.vocab.tokens() == original.vocab.tokens());
    CHECK(loaded.train == original.train);
    CHECK(loaded.test == original.test);

    const std::string img = file_bytes(tmp / "a" / "train" / std::to_string(original.train[0].patient_id) / "0.img");
    CHECK(img.compare(0, 7, std::string("S2DIMG\0", 7)) == 0);
    std::filesystem::remove_all(tmp);
}
