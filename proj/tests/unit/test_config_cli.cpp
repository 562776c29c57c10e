#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "s2d/cli/commands.hpp"
#include "s2d/cli/config.hpp"
#include "s2d/cli/plot.hpp"
#include "s2d/core/error.hpp"

using namespace s2d;
using namespace s2d::cli;
namespace fs = std::filesystem;

namespace {

std::string config_error(const std::string& json) {
    try {
        (void)parse_config(json);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        return e.what();
    }
    FAIL("expected a config error for " << json);
    return {};
}

void write(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p) << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

const char* kTiny = R"({
  "corpus": {"train_patients": 8, "val_patients": 2, "test_patients": 2, "image_size": 32},
  "model": {"d_vision": 16, "d_text": 16, "encoder_depth": 1, "encoder_heads": 2, "d_model": 16, "n_mem": 4,
            "sma_heads": 2, "depth": 1, "heads": 2, "max_tokens": 40, "lora": {"rank": 2, "alpha": 4, "dropout": 0}},
  "train": {"batch_size": 8, "warmup_steps": 2, "probe_size": 8, "max_gen_len": 39,
            "stages": [{"epochs": 1}, {"epochs": 1}, {"epochs": 1}], "decoder_warmup": {"epochs": 1}},
  "seeds": [1, 2]
})";

// Runs the CLI with S2D_HOME pointed at a scratch directory.
struct Home {
    fs::path dir;
    explicit Home(const std::string& name) : dir(fs::temp_directory_path() / name) {
        fs::remove_all(dir);
        fs::create_directories(dir);
        setenv("S2D_HOME", dir.c_str(), 1);
        write(dir / "tiny.json", kTiny);
    }
    ~Home() {
        fs::remove_all(dir);
        unsetenv("S2D_HOME");
    }
    int operator()(std::vector<std::string> args) const {
        args.insert(args.begin(), "s2d");
        return run(args);
    }
};

}  // namespace

TEST_CASE("presets") {
    CHECK(preset_names() == std::vector<std::string>{"desk", "paper"});
    for (const auto& name : preset_names()) CHECK_NOTHROW(preset_config(name).validate());
    const auto paper = preset_config("paper");
    CHECK(paper.model.vision.dim == 768);
    CHECK(paper.model.n_mem == 64);
    CHECK(paper.model.lora.rank == 16);
    CHECK(paper.train.batch_size == 64);
    CHECK(paper.train.stages[0].lr == doctest::Approx(3e-4));
    CHECK(preset_config("desk").corpus.train_patients == 800);
    CHECK_THROWS_AS(preset_config("huge"), Error);
}

TEST_CASE("config echo round-trips and hashes stably") {
    const RunConfig c = parse_config(kTiny);
    CHECK(echo(parse_config(echo(c))) == echo(c));
    CHECK(config_hash(parse_config(echo(c))) == config_hash(c));
    CHECK(config_hash(c) != config_hash(preset_config("desk")));
    CHECK(c.model.d_model == 16);
    CHECK(c.train.stages[1].lr == preset_config("desk").train.stages[1].lr);
    CHECK(parse_config(R"({"preset": "paper"})").model.vision.dim == 768);
}

TEST_CASE("config strictness names the offending key") {
    CHECK(config_error(R"({"train": {"bogus": 1}})").find("train.bogus") != std::string::npos);
    CHECK(config_error(R"({"train": {"stages": [{"epochs": 1}, {"lr": "fast"}, {}]}})").find("train.stages[1].lr") !=
          std::string::npos);
    CHECK(config_error(R"({"corpus": {"train_patients": 1.5}})").find("corpus.train_patients") != std::string::npos);
    CHECK(config_error(R"({"seed": -1})").find("seed") != std::string::npos);
    CHECK(config_error(R"({"model": {"d_model": 30, "sma_heads": 4}})").find("heads") != std::string::npos);
    CHECK(config_error(R"({"corpus": {"min_studies": 1}})").find("corpus.min_studies") != std::string::npos);
    CHECK(config_error(R"({"plan": "s2"})").find("plan") != std::string::npos);
    CHECK(config_error("{not json").size() > 0);
    CHECK(parse_config(R"({"train": {"stages": [{"lr": 1}, {}, {}]}})").train.stages[0].lr == 1.0);
}

TEST_CASE("CLI exit codes") {
    Home home("s2d_unit_cli_codes");
    CHECK(home({"frobnicate"}) == kBadConfig);
    CHECK(home({}) == kBadConfig);
    CHECK(home({"--config", (home.dir / "missing.json").string(), "gen-corpus"}) != kOk);
    write(home.dir / "bad.json", R"({"train": {"bogus": 1}})");
    CHECK(home({"--config", (home.dir / "bad.json").string(), "gen-corpus"}) == kBadConfig);
    CHECK(home({"--config", (home.dir / "tiny.json").string(), "train"}) == kMissingCorpus);
    CHECK(home({"plot", (home.dir / "nothing").string()}) == kEmptyMetrics);

    REQUIRE(home({"--config", (home.dir / "tiny.json").string(), "gen-corpus"}) == kOk);
    CHECK(fs::exists(home.dir / "corpus" / "vocab.txt"));
    CHECK(home({"--config", (home.dir / "tiny.json").string(), "export-prompt", "test/999/0"}) == kUnknownStudy);
    CHECK(home({"--config", (home.dir / "tiny.json").string(), "train", "--plan", "s9"}) == kBadConfig);
    CHECK(home({"--config", (home.dir / "tiny.json").string(), "ablate", "--matrix", "nope"}) == kBadConfig);

    write(home.dir / "runs" / "broken" / "stage1.ckpt", "not a checkpoint");
    write(home.dir / "runs" / "broken" / "config.echo", echo(parse_config(kTiny)));
    CHECK(home({"--config", (home.dir / "tiny.json").string(), "eval", (home.dir / "runs" / "broken").string()}) ==
          kBadCheckpoint);
}

TEST_CASE("CLI train, eval, resume and plot on a tiny corpus") {
    Home home("s2d_unit_cli_train");
    const std::string cfg = (home.dir / "tiny.json").string();
    REQUIRE(home({"--config", cfg, "gen-corpus"}) == kOk);
    REQUIRE(home({"--config", cfg, "--strict-serial", "train", "--plan", "s1s2"}) == kOk);

    const fs::path run = home.dir / "runs" / "s1s2-sma-s1";
    for (const char* f : {"config.echo", "stage1.ckpt", "stage2.ckpt", "metrics.tsv", "predictions.tsv", "table.tsv"}) {
        CHECK_MESSAGE(fs::exists(run / f), f);
    }
    const std::string table = slurp(run / "table.tsv");

    // a second invocation resumes from the final checkpoint and reproduces the table
    REQUIRE(home({"--config", cfg, "--strict-serial", "train", "--plan", "s1s2"}) == kOk);
    CHECK(slurp(run / "table.tsv") == table);

    CHECK(home({"--config", cfg, "eval", run.string()}) == kOk);
    CHECK(home({"--config", cfg, "eval", run.string(), "--without-aux"}) == kOk);
    CHECK(home({"--config", cfg, "eval", run.string(), "--context-stage", "2"}) == kBadConfig);
    CHECK(home({"--config", cfg, "eval", run.string(), "--stage", "7"}) == kBadCheckpoint);

    CHECK(home({"plot", run.string()}) == kOk);
    CHECK(fs::exists(run / "plots" / "loss_stage1.svg"));
    CHECK(fs::exists(run / "plots" / "loss_stage2.tsv"));

    CHECK(home({"--config", cfg, "export-prompt", "train/0/1"}) == kOk);
    CHECK(fs::exists(home.dir / "prompts" / "train_0_1.txt"));

    // the same run directory under a different config is refused
    auto other = parse_config(kTiny);
    other.plan = "s1s2";
    other.train.min_delta = 0.5;
    write(home.dir / "other.json", echo(other));
    CHECK(home({"--config", (home.dir / "other.json").string(), "train"}) == kBadConfig);
}

TEST_CASE("plot helpers are pure functions of the metrics rows") {
    const std::vector<MetricsRow> rows = {{0, "warmup", "train", 3.0, 1e-3}, {1, "1", "train", 2.0, 1e-3},
                                          {1, "1", "val", 2.5, 0},           {2, "1", "train", 1.5, 1e-3},
                                          {3, "2", "train", 1.0, 1e-3},      {3, "eval", "test.ce_f1", 0.2, 0}};
    CHECK(plotted_stages(rows) == std::vector<std::string>{"1", "2"});
    CHECK(loss_table(rows, "1") == "step\ttrain\tval\n1\t2\t2.5\n2\t1.5\t\n");
    CHECK(loss_svg(rows, "1") == loss_svg(rows, "1"));
    CHECK(loss_svg(rows, "1").find("<polyline") != std::string::npos);
    const std::string bars = bar_svg({{"a<b", 0.2, 0.01}, {"c", 0.1, 0}}, "t");
    CHECK(bars.find("a&lt;b") != std::string::npos);
    CHECK(bars == bar_svg({{"a<b", 0.2, 0.01}, {"c", 0.1, 0}}, "t"));
}
