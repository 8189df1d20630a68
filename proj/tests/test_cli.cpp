#include <cmath>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "tasc/cli.hpp"

using namespace tasc;

namespace {

const char* kSmallToml = R"(
seed = 5

[synth]
dims = 256
vocab_size = 150
n_common = 4
n_source_private = 2
n_target_private = 3
source_samples_per_class = 8
target_samples_per_class = 8
cluster_spread = 1.0

[search]
k0 = 16
n_candidates = 40
n_outer = 3

[refine]
epochs = 2
batch_size = 16
eta0 = 0.01
)";

RunConfig small_config(const std::filesystem::path& out) {
    auto cfg = parse_config(kSmallToml);
    cfg.out_dir = out;
    return cfg;
}

void check_close(const std::optional<double>& a, const std::optional<double>& b) {
    REQUIRE(a.has_value() == b.has_value());
    if (a) CHECK(std::abs(*a - *b) <= 1e-5);
}

}  // namespace

TEST_CASE("parse_config") {
    SUBCASE("empty text gives defaults") {
        const auto cfg = parse_config("");
        CHECK(cfg.use_synth);
        CHECK(cfg.prediction.tau == 0.02);
        CHECK(cfg.prediction.lambda_div == 0.6);
        CHECK(cfg.search.k0 == 100);
        CHECK(cfg.search.n_candidates == 300);
        CHECK(cfg.search.gamma_ent == 0.3);
        CHECK(cfg.search.n_outer == 20);
        CHECK(cfg.refine.eta0 == 1e-4);
        CHECK(cfg.refine.batch_size == 64);
        CHECK(cfg.variant == ScoreVariant::unims);
        CHECK(cfg.threshold_method == ThresholdMethod::gmm);
        CHECK_FALSE(cfg.split.has_value());
    }
    SUBCASE("the generated default file parses back to the defaults") {
        const auto a = parse_config(default_config_toml());
        const RunConfig b;
        CHECK(a.search.k0 == b.search.k0);
        CHECK(a.refine.eta0 == b.refine.eta0);
        CHECK(a.synth.dims == b.synth.dims);
        CHECK(a.synth.split.n_target_private == b.synth.split.n_target_private);
        CHECK(a.synth.cluster_spread == b.synth.cluster_spread);
        CHECK(a.refine_enabled == b.refine_enabled);
    }
    SUBCASE("overrides, paths and seeds") {
        const auto cfg = parse_config(R"(
seed = 42
[inputs]
source_images = "a/src.embx"
target_images = "/abs/tgt.embx"
source_classnames = "names.embx"
noun_vocab = "nouns.embx"
[score]
variant = "ms-s"
[threshold]
method = "fixed"
value = 0.25
[eval]
n_common = 3
n_source_private = 1
n_target_private = 2
)",
                                      "/base");
        CHECK_FALSE(cfg.use_synth);
        CHECK(cfg.inputs.source_images == std::filesystem::path("/base/a/src.embx"));
        CHECK(cfg.inputs.target_images == std::filesystem::path("/abs/tgt.embx"));
        CHECK(cfg.variant == ScoreVariant::ms_s);
        CHECK(cfg.threshold_method == ThresholdMethod::fixed);
        CHECK(cfg.fixed_threshold == 0.25);
        REQUIRE(cfg.split.has_value());
        CHECK(cfg.split->n_target_private == 2);
        CHECK(cfg.seed == 42);
        CHECK(cfg.search.seed == derive_seed(42, 2));
        CHECK(cfg.refine.seed == derive_seed(42, 3));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(parse_config("[search]\nk00 = 3\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("bogus = 1\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("[score]\nvariant = \"energy\"\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("[threshold]\nmethod = \"otsu\"\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("[search\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("[search]\nk0 = \"many\"\n"), ConfigError);
    }
}

TEST_CASE("derive_seed") {
    CHECK(derive_seed(0, 1) == derive_seed(0, 1));
    CHECK(derive_seed(0, 1) != derive_seed(0, 2));
    CHECK(derive_seed(0, 1) != derive_seed(1, 1));
}

TEST_CASE("stage errors carry the stage name") {
    const StageError e("search", "boom");
    CHECK(std::string(e.what()) == "search: boom");
    CHECK(e.stage() == "search");
}

TEST_CASE("missing input file is named") {
    const auto dir = oracle::scratch_dir("cli_missing");
    auto cfg = parse_config("[inputs]\nsource_images = \"gone.embx\"\ntarget_images = \"t.embx\"\n"
                            "source_classnames = \"c.embx\"\nnoun_vocab = \"n.embx\"\n",
                            dir);
    cfg.out_dir = dir / "out";
    try {
        run_pipeline(cfg);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("gone.embx") != std::string::npos);
    }
}

TEST_CASE("pipeline reports are deterministic") {
    const auto dir = oracle::scratch_dir("cli_determinism");
    const auto a = run_pipeline(small_config(dir / "a"));
    const auto b = run_pipeline(small_config(dir / "b"));
    REQUIRE(a.eval.has_value());
    for (const char* f : {kSearchReportFile, kAdapterFile, kRefineReportFile, kScoresFile, kFitReportFile,
                          kPredictionsFile, kEvalJsonFile, kEvalCsvFile, kPlotDataFile}) {
        CAPTURE(f);
        REQUIRE(std::filesystem::exists(dir / "a" / f));
        CHECK(read_text_file(dir / "a" / f) == read_text_file(dir / "b" / f));
    }
    const auto plot = read_text_file(dir / "a" / kPlotDataFile);
    for (const char* series : {"search_loss,", "search_k,", "refine_loss,", "score_hist,"})
        CHECK(plot.find(series) != std::string::npos);
}

TEST_CASE("stage commands compose to the pipeline result") {
    const auto dir = oracle::scratch_dir("cli_compose");
    auto synth_cfg = small_config(dir / "bundle");
    run_synth_command(synth_cfg);

    const auto paths = bundle_paths(dir / "bundle");
    auto cfg = small_config(dir / "staged");
    cfg.use_synth = false;
    cfg.inputs = {paths.source_images, paths.target_images, paths.source_classnames, paths.noun_vocab};
    CHECK(validate_files({paths.source_images, paths.target_images, paths.source_classnames, paths.noun_vocab})
              .size() == 4);
    for (const auto& c : validate_files({paths.source_images, paths.noun_vocab})) CHECK(c.ok);

    run_search_command(cfg);
    run_refine_command(cfg);
    run_score_command(cfg);
    run_threshold_command(cfg);
    const auto staged = run_eval_command(cfg);

    auto whole_cfg = cfg;
    whole_cfg.out_dir = dir / "whole";
    const auto whole = run_pipeline(whole_cfg);
    REQUIRE(whole.eval.has_value());
    CHECK(std::abs(staged.a_common - whole.eval->a_common) <= 1e-5);
    CHECK(std::abs(staged.overall_acc - whole.eval->overall_acc) <= 1e-5);
    check_close(staged.a_private, whole.eval->a_private);
    check_close(staged.h_score, whole.eval->h_score);
    check_close(staged.h3_score, whole.eval->h3_score);
    check_close(staged.auroc, whole.eval->auroc);
    check_close(staged.nmi, whole.eval->nmi);

    // Synthetic and file inputs give the same run.
    const auto synth_run = run_pipeline(small_config(dir / "synth_run"));
    check_close(synth_run.eval->h_score, whole.eval->h_score);
}

TEST_CASE("validate_files reports problems") {
    const auto dir = oracle::scratch_dir("cli_validate");
    {
        std::ofstream bad(dir / "bad.embx", std::ios::binary);
        bad << "NOPE";
    }
    const auto checks = validate_files({dir / "bad.embx", dir / "absent.embx"});
    REQUIRE(checks.size() == 2);
    CHECK_FALSE(checks[0].ok);
    CHECK_FALSE(checks[1].ok);
    CHECK(checks[1].message.find("absent.embx") != std::string::npos);
}

TEST_CASE("infer_split and closed-set prediction") {
    auto cfg = small_config("unused");
    const auto in = inputs_from_bundle(generate(cfg.synth));
    const auto s = infer_split(in);
    CHECK(s.n_common == 4);
    CHECK(s.n_source_private == 2);
    CHECK(s.n_target_private == 3);

    const auto preds = predict_classes(in.classnames, in.classnames);
    for (std::size_t i = 0; i < preds.size(); ++i) CHECK(preds[i] == static_cast<int>(i));
}

TEST_CASE("refine can be disabled and a fixed threshold used") {
    auto cfg = small_config("unused");
    cfg.refine_enabled = false;
    cfg.variant = ScoreVariant::ms_s;
    cfg.threshold_method = ThresholdMethod::fixed;
    cfg.fixed_threshold = 0.0;
    const auto in = inputs_from_bundle(generate(cfg.synth));
    const auto r = run_pipeline_in_memory(in, cfg);
    CHECK(r.refine.adapter.weights == Adapter::identity(in.target.dims).weights);
    CHECK(r.threshold.threshold.mode == ThresholdMode::fixed);
    CHECK(r.threshold.threshold.gamma == 0.0);
    REQUIRE(r.eval.has_value());
}
