#include "support.hpp"

#include "xmd/keywords.hpp"
#include "xmd/text.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace xmd;

namespace {

class FixedDetector final : public ObjectDetector {
public:
    explicit FixedDetector(std::vector<DetectedObject> objects) : objects_(std::move(objects)) {}
    [[nodiscard]] std::vector<DetectedObject> detect(const ImageTensor&) const override { return objects_; }

private:
    std::vector<DetectedObject> objects_;
};

class FailingDetector final : public ObjectDetector {
public:
    [[nodiscard]] std::vector<DetectedObject> detect(const ImageTensor&) const override { throw Error("backend down"); }
};

bool is_subsequence(const std::vector<std::string>& sub, const std::vector<std::string>& seq) {
    std::size_t j = 0;
    for (const auto& s : seq) {
        if (j < sub.size() && sub[j] == s) ++j;
    }
    return j == sub.size();
}

ImageTensor blank(const std::string& id) {
    ImageTensor t;
    t.pixels.assign(static_cast<std::size_t>(kImageSide * kImageSide * 3), 0.0F);
    t.source_id = id;
    return t;
}

}  // namespace

TEST(TextKeywords, FrequencyDominant) {
    TextKeywordParams p;
    p.k = 2;
    EXPECT_EQ(extract_text_keywords("flood flood damage report report report in city", p), (std::vector<std::string>{"report", "flood"}));
}

TEST(TextKeywords, EmptyText) { EXPECT_TRUE(extract_text_keywords("").empty()); }

TEST(TextKeywords, NoMoreThanDistinctTokens) {
    const auto kws = extract_text_keywords("alpha beta gamma");
    EXPECT_LE(kws.size(), 3U);
}

TEST(TextKeywords, InvariantsOnRandomTexts) {
    const std::vector<std::string> words{"fire", "truck", "the", "of", "rescue", "crew", "flood", "water", "a", "damage", "city", "!"};
    std::mt19937_64 rng(3);
    for (int i = 0; i < 300; ++i) {
        std::string text;
        const int len = static_cast<int>(rng() % 15);
        for (int j = 0; j < len; ++j) text += words[rng() % words.size()] + " ";
        const auto a = extract_text_keywords(text);
        EXPECT_EQ(a, extract_text_keywords(text));
        EXPECT_LE(a.size(), 5U);
        for (const auto& k : a) {
            EXPECT_FALSE(k.empty());
            EXPECT_EQ(split_words(k).size(), 1U);
            EXPECT_FALSE(is_stopword(k));
            EXPECT_FALSE(is_punctuation(k));
        }
    }
}

TEST(TextKeywords, DedupDropsNearDuplicates) {
    TextKeywordParams p;
    p.dedup_threshold = 0.7;
    const auto kws = extract_text_keywords("rescuer rescuers rescuer rescuers boat", p);
    EXPECT_EQ(std::count(kws.begin(), kws.end(), "rescuers") + std::count(kws.begin(), kws.end(), "rescuer"), 1);
}

TEST(TextKeywords, OrderByOccurrence) {
    EXPECT_EQ(order_by_occurrence({"c", "zz", "a"}, "a b c"), (std::vector<std::string>{"a", "c", "zz"}));
}

TEST(AreaFilter, Examples) {
    EXPECT_TRUE(passes_area_filter({0, 0, 70, 72}, 224, 224, 0.1));
    EXPECT_FALSE(passes_area_filter({0, 0, 10, 10}, 224, 224, 0.1));
}

TEST(AreaFilter, BruteForceOracleOn1000Boxes) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 224.0);
    for (int i = 0; i < 1000; ++i) {
        const Box b{u(rng) * 0.5, u(rng) * 0.5, u(rng) * 0.5 + 0.5, u(rng) * 0.5 + 0.5};
        const bool expected = b.w * b.h >= 0.1 * 224.0 * 224.0;
        EXPECT_EQ(passes_area_filter(b, 224, 224, 0.1), expected) << b.w << "x" << b.h;
    }
}

TEST(ImageKeywords, FiltersByVocabAndAreaOrdersByArea) {
    const FixedDetector det({{"car", {0, 0, 80, 80}, 1.0}, {"tree", {0, 0, 120, 120}, 1.0}, {"dog", {0, 0, 10, 10}, 1.0},
                             {"alien", {0, 0, 200, 200}, 1.0}});
    const auto kws = extract_image_keywords(blank("x"), det, {"car", "tree", "dog"}, 0.1);
    EXPECT_EQ(kws, (std::vector<std::string>{"tree", "car"}));
}

TEST(ImageKeywords, DetectorFailureNamesSource) {
    try {
        extract_image_keywords(blank("img-9"), FailingDetector{}, {"car"}, 0.1);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("img-9"), std::string::npos);
    }
}

TEST(ImageKeywords, OracleBoxesInsideFrame) {
    const auto& data = xmd::testing::small_synth();
    const OracleDetector det(data.train);
    for (std::size_t i = 0; i < 20; ++i) {
        const auto& ex = data.train[i];
        for (const auto& d : det.detect(preprocess_image(ex.image, {}, ex.id))) {
            EXPECT_GT(d.box.w, 0);
            EXPECT_GT(d.box.h, 0);
            EXPECT_GE(d.box.x, 0);
            EXPECT_GE(d.box.y, 0);
            EXPECT_LE(d.box.x + d.box.w, kImageSide + 1e-9);
            EXPECT_LE(d.box.y + d.box.h, kImageSide + 1e-9);
        }
    }
}

TEST(MergeKeywords, Examples) {
    EXPECT_EQ(merge_keywords({"a", "b"}, {"c"}), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_TRUE(merge_keywords({}, {}).empty());
    EXPECT_EQ(merge_keywords({"a"}, {"a", "b"}), (std::vector<std::string>{"a", "b"}));
}

TEST(MergeKeywords, SubsequenceAndSizeProperties) {
    const std::vector<std::string> pool{"a", "b", "c", "d", "e", "f"};
    std::mt19937_64 rng(9);
    for (int i = 0; i < 500; ++i) {
        std::vector<std::string> t, im;
        for (int j = static_cast<int>(rng() % 5); j > 0; --j) t.push_back(pool[rng() % pool.size()]);
        for (int j = static_cast<int>(rng() % 5); j > 0; --j) im.push_back(pool[rng() % pool.size()]);
        const auto m = merge_keywords(t, im);
        EXPECT_LE(m.size(), t.size() + im.size());
        std::vector<std::string> from_t, from_im;
        for (std::size_t j = 0; j < m.size(); ++j) {
            const bool in_t = std::find(t.begin(), t.end(), m[j]) != t.end();
            (in_t ? from_t : from_im).push_back(m[j]);
        }
        EXPECT_TRUE(is_subsequence(from_t, t));
        EXPECT_TRUE(is_subsequence(from_im, im));
    }
}

TEST(LabelVocabulary, RoundTripAndLimit) {
    const auto dir = xmd::testing::temp_dir("labels");
    save_label_vocabulary(dir / "labels.txt", {"car", "tree"});
    EXPECT_EQ(load_label_vocabulary(dir / "labels.txt"), (std::set<std::string>{"car", "tree"}));
    std::vector<std::string> many;
    for (int i = 0; i < 151; ++i) many.push_back("l" + std::to_string(i));
    save_label_vocabulary(dir / "many.txt", many);
    EXPECT_THROW(load_label_vocabulary(dir / "many.txt"), ParseError);
}

TEST(KeywordDump, RoundTrip) {
    const auto dir = xmd::testing::temp_dir("kwdump");
    const std::vector<KeywordSet> sets{{"a", {"x", "y"}, {"car"}}, {"b", {}, {}}};
    write_keyword_dump(dir / "k.jsonl", sets);
    const auto back = read_keyword_dump(dir / "k.jsonl");
    ASSERT_EQ(back.size(), 2U);
    EXPECT_EQ(back[0].text_keywords, sets[0].text_keywords);
    EXPECT_EQ(back[0].image_keywords, sets[0].image_keywords);
    EXPECT_EQ(back[1].source_id, "b");
}
