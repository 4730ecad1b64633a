#include "support.hpp"

#include "xmd/baselines.hpp"
#include "xmd/text.hpp"

#include <gtest/gtest.h>

#include <cctype>
#include <regex>

using namespace xmd;

namespace {

class FixedDetector final : public ObjectDetector {
public:
    explicit FixedDetector(std::vector<DetectedObject> objects) : objects_(std::move(objects)) {}
    [[nodiscard]] std::vector<DetectedObject> detect(const ImageTensor&) const override { return objects_; }

private:
    std::vector<DetectedObject> objects_;
};

}  // namespace

TEST(RandomUrl, ShapeAndDeterminism) {
    const auto a = random_url("ex1", "some text", 0);
    const auto b = random_url("ex1", "some text", 0);
    EXPECT_EQ(a.dilution_text, b.dilution_text);
    EXPECT_TRUE(std::regex_match(a.dilution_text, std::regex("https://t\\.co/[A-Za-z0-9]{6}")));
    EXPECT_EQ(a.inserted_words(), 1U);
    EXPECT_EQ(a.final_text, "some text " + a.dilution_text);
    EXPECT_NE(random_url("ex2", "some text", 0).dilution_text, a.dilution_text);
}

TEST(KeywordAppend, Modes) {
    const KeywordSet kw{"x", {"flood", "rescue"}, {"boat", "flood"}};
    EXPECT_EQ(keyword_append("x", "t", kw, KeywordMode::text).dilution_text, "flood rescue");
    EXPECT_EQ(keyword_append("x", "t", kw, KeywordMode::image).dilution_text, "boat flood");
    EXPECT_EQ(keyword_append("x", "t", kw, KeywordMode::both).dilution_text, "flood rescue boat");
    const auto empty = keyword_append("x", "t", {"x", {}, {}}, KeywordMode::text);
    EXPECT_TRUE(empty.dilution_text.empty());
    EXPECT_TRUE(empty.has_flag("empty_keywords"));
}

TEST(SimilarImage, DuplicateIsNeighbour) {
    nn::Matrix e(3, 2);
    e << 1, 0, 0, 1, 1, 0;
    const auto r = similar_image_descriptions({"a", "b", "c"}, {"ta", "tb", "tc"}, e);
    EXPECT_EQ(r[0].dilution_text, "tc");
    EXPECT_NEAR(*r[0].score, 1.0, 1e-6);
    EXPECT_EQ(r[2].dilution_text, "ta");
}

TEST(SimilarImage, TwoExamplesPickEachOther) {
    nn::Matrix e(2, 2);
    e << 1, 0, 0.3, 1;
    const auto r = similar_image_descriptions({"a", "b"}, {"ta", "tb"}, e);
    EXPECT_EQ(r[0].dilution_text, "tb");
    EXPECT_EQ(r[1].dilution_text, "ta");
}

TEST(SimilarImage, TiesGoToSmallestId) {
    nn::Matrix e(3, 2);
    e << 1, 0, 1, 0, 1, 0;
    const auto r = similar_image_descriptions({"z", "m", "b"}, {"tz", "tm", "tb"}, e);
    EXPECT_EQ(r[0].dilution_text, "tb");
    EXPECT_EQ(r[2].dilution_text, "tm");
}

TEST(SimilarImage, NeverSelf) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    const nn::Matrix e = nn::Matrix::NullaryExpr(30, 4, [&] { return n(rng); });
    std::vector<std::string> ids, texts;
    for (int i = 0; i < 30; ++i) {
        ids.push_back("id" + std::to_string(i));
        texts.push_back("text" + std::to_string(i));
    }
    const auto r = similar_image_descriptions(ids, texts, e);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NE(r[i].dilution_text, texts[i]);
}

TEST(SimilarImage, NeedsTwoExamples) {
    EXPECT_THROW(similar_image_descriptions({"a"}, {"t"}, nn::Matrix::Ones(1, 2)), InvalidArgument);
}

TEST(NgramLM, DeterministicAndCapped) {
    const NgramLM lm(generic_corpus());
    const auto a = lm_continuation("e", "the weather today", lm, false, 3);
    const auto b = lm_continuation("e", "the weather today", lm, false, 3);
    EXPECT_EQ(a.dilution_text, b.dilution_text);
    EXPECT_LE(a.inserted_words(), static_cast<std::size_t>(kDefaultMaxNewWords));
    EXPECT_TRUE(lm_continuation("e", "the weather", lm, false, 3, 0).dilution_text.empty());
    EXPECT_EQ(a.method, "lm_continuation");
    EXPECT_EQ(lm_continuation("e", "x", lm, true, 3).method, "lm_continuation_ft");
}

TEST(NgramLM, FinetunedHasLowerInDomainPerplexity) {
    const auto& data = xmd::testing::small_synth();
    std::vector<std::string> corpus = generic_corpus();
    for (const auto& ex : data.train) corpus.push_back(preprocess_text(ex.text));
    std::vector<std::string> heldout;
    for (const auto& ex : data.test) heldout.push_back(preprocess_text(ex.text));
    const NgramLM generic(generic_corpus());
    const NgramLM ft(corpus);
    EXPECT_LT(ft.perplexity(heldout), generic.perplexity(heldout));
}

TEST(NgramLM, ConditionalDistributionSumsToOne) {
    const NgramLM lm({"a b c", "a b d", "b c a"});
    for (const auto& [w2, w1] : std::vector<std::pair<std::string, std::string>>{{"a", "b"}, {"zz", "b"}, {"q", "q"}}) {
        double sum = 0;
        // The add-one unigram reserves one share for any unseen word.
        for (const std::string w : {"a", "b", "c", "d", "</s>", "unseen"}) sum += lm.probability(w2, w1, w);
        EXPECT_NEAR(sum, 1.0, 1e-9) << w2 << " " << w1;
    }
}

TEST(Caption, TemplateOverObjects) {
    EXPECT_EQ(TemplateCaptioner::render({"fire", "truck"}), "a photo of fire and truck");
    EXPECT_EQ(TemplateCaptioner::render({"a", "b", "c"}), "a photo of a, b and c");
    const auto det = std::make_shared<FixedDetector>(std::vector<DetectedObject>{{"truck", {0, 0, 10, 10}, 1}, {"fire", {0, 0, 50, 50}, 1}});
    const TemplateCaptioner cap(det);
    ImageTensor t;
    EXPECT_EQ(cap.caption(t), "a photo of fire and truck");
    EXPECT_EQ(cap.caption(t), cap.caption(t));
    EXPECT_EQ(caption_append("x", "text", cap.caption(t)).final_text, "text a photo of fire and truck");
}

TEST(Caption, EmptyFallsBack) {
    const auto det = std::make_shared<FixedDetector>(std::vector<DetectedObject>{});
    const TemplateCaptioner cap(det);
    const auto r = caption_append("x", "text", cap.caption(ImageTensor{}));
    EXPECT_EQ(r.dilution_text, "a photo");
    EXPECT_TRUE(r.has_flag("no_objects"));
}

TEST(Baselines, MethodIdsRoundTrip) {
    EXPECT_EQ(all_baseline_methods().size(), 8U);
    for (auto m : all_baseline_methods()) EXPECT_EQ(parse_baseline_method(method_id(m)), m);
    EXPECT_THROW(parse_baseline_method("gpt"), InvalidArgument);
}
