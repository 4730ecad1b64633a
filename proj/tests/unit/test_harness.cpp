#include "support.hpp"

#include "xmd/config.hpp"
#include "xmd/harness.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace xmd;

namespace {

std::vector<std::string> tiny_overrides(const std::filesystem::path& out) {
    return {"output_dir=" + out.string(),
            "seeds=[0, 1]",
            "dataset.synth.n=60",
            "classifier.text.embed_dim=8",
            "classifier.text.hidden=16",
            "classifier.text.output_dim=16",
            "classifier.text.max_epochs=5",
            "classifier.image.conv_channels=4",
            "classifier.image.hidden=16",
            "classifier.image.output_dim=16",
            "classifier.image.max_epochs=5",
            "classifier.fusion.hidden=[8]",
            "classifier.fusion.input_dim=32",
            "classifier.fusion.max_epochs=5",
            "generator.hidden=16",
            "generator.stage1.epochs=1",
            "generator.stage2.epochs=1",
            "generator.report_alt_objective=false",
            "metrics.joint.epochs=1",
            "metrics.correspondence.max_epochs=1",
            "metrics.correspondence.hidden=[8]",
            "metrics.topics.n_topics=3",
            "metrics.topics.iterations=5"};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Config, DefaultsValidate) { EXPECT_NO_THROW(validate_config(ExperimentConfig{})); }

TEST(Config, NegativeLambdaRejected) {
    EXPECT_THROW(parse_config("generator:\n  lambda: -1\n"), ConfigError);
    EXPECT_THROW(parse_config("", {"generator.lambda=-1"}), ConfigError);
}

TEST(Config, AllProblemsReportedTogether) {
    try {
        parse_config("seeds: []\nbogus: 1\ngenerator:\n  lambda: -1\n  stage1: {epochs: abc}\n");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_GE(e.problems().size(), 3U);
        const std::string all = e.what();
        EXPECT_NE(all.find("bogus"), std::string::npos);
        EXPECT_NE(all.find("generator.stage1.epochs"), std::string::npos);
    }
}

TEST(Config, OverridesWinAndNestedSectionsParse) {
    const auto c = parse_config("generator:\n  lambda: 0.5\nclassifier:\n  fusion: {hidden: [4, 2]}\n", {"generator.lambda=0.25", "seeds=[3]"});
    EXPECT_EQ(c.generator.lambda, 0.25);
    EXPECT_EQ(c.classifier.fusion.hidden, (std::vector<int>{4, 2}));
    EXPECT_EQ(c.seeds, (std::vector<std::int64_t>{3}));
}

TEST(Config, MissingDatasetPathRejected) {
    EXPECT_THROW(parse_config("dataset: {path: /definitely/not/here.jsonl}\n"), ConfigError);
}

TEST(Config, YamlRenderingRoundTrips) {
    ExperimentConfig c;
    c.generator.lambda = 0.1;
    c.sweep_lambdas = {0, 0.03};
    const auto back = parse_config(config_to_yaml(c));
    EXPECT_EQ(canonical_config(back), canonical_config(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, HashIsScopedByPrefix) {
    ExperimentConfig a, b;
    b.generator.lambda = 0.3;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a, {"classifier."}), config_hash(b, {"classifier."}));
}

TEST(Harness, LengthRules) {
    EXPECT_EQ(length_rule("original"), LengthMode::none);
    EXPECT_EQ(length_rule("lm_continuation"), LengthMode::none);
    EXPECT_EQ(length_rule("lm_continuation_ft"), LengthMode::none);
    EXPECT_EQ(length_rule("xmd"), LengthMode::truncate);
    EXPECT_EQ(length_rule("random_url"), LengthMode::repeat);
    EXPECT_EQ(length_rule("caption_append"), LengthMode::repeat);
}

TEST(Harness, AblationModesParse) {
    for (auto m : {AblationMode::plain, AblationMode::adv, AblationMode::full}) EXPECT_EQ(parse_ablation_mode(to_string(m)), m);
    EXPECT_THROW(parse_ablation_mode("half"), InvalidArgument);
}

TEST(Harness, PipelineIsIdempotentAndComplete) {
    const auto dir = xmd::testing::temp_dir("pipeline");
    const auto cfg = parse_config("", tiny_overrides(dir));
    std::map<std::string, std::string> first;
    {
        Experiment exp(cfg);
        const auto reports = run_pipeline(exp);
        ASSERT_EQ(reports.size(), cfg.baselines.methods.size());
        for (std::size_t i = 0; i < reports.size(); ++i) {
            EXPECT_EQ(reports[i].method, cfg.baselines.methods[i]);
            EXPECT_EQ(reports[i].per_seed.size(), 2U);
        }
        EXPECT_GT(exp.trained_stages(), 0);
        for (const auto& e : std::filesystem::directory_iterator(dir / "reports")) first[e.path().filename()] = slurp(e.path());
        EXPECT_THROW(run_ablation(exp, {}), InvalidArgument);
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "tables" / "main.md"));
    EXPECT_TRUE(std::filesystem::exists(dir / "tables" / "main.csv"));

    Experiment again(cfg);
    run_pipeline(again);
    EXPECT_EQ(again.trained_stages(), 0);
    for (const auto& [name, content] : first) EXPECT_EQ(slurp(dir / "reports" / name), content) << name;

    const std::string main = slurp(dir / "tables" / "main.md");
    for (const char* row : {"Original", "Random URL", "Image KW", "Text KW", "Text+Image KW", "Similar image's desc", "LM", "LM-FT",
                            "Captions", "XMD"}) {
        EXPECT_NE(main.find(std::string("| ") + row + " |"), std::string::npos) << row;
    }
}

TEST(Harness, StageFailureNamesStage) {
    const auto dir = xmd::testing::temp_dir("stagefail");
    auto cfg = parse_config("", tiny_overrides(dir));
    std::ofstream(dir / "broken.jsonl") << "{not json\n";
    cfg.dataset.path = (dir / "broken.jsonl").string();
    Experiment exp(cfg);
    try {
        exp.data();
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "data");
    }
}
