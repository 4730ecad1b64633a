#include "support.hpp"

#include "xmd/baselines.hpp"
#include "xmd/metrics.hpp"
#include "xmd/text.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace xmd;
using xmd::testing::small_models;

namespace {

struct Deps {
    JointEmbedder joint;
    CorrespondenceModel corr;
    TopicModel topics;
    MetricDeps deps;
};

const Deps& deps() {
    static const Deps d = [] {
        Deps out;
        const auto& m = small_models();
        JointEmbedderConfig jc;
        jc.epochs = 5;
        out.joint = train_joint_embedder(xmd::testing::small_synth().train, jc);
        CorrespondenceConfig cc;
        cc.max_epochs = 5;
        cc.hidden = {32, 16};
        out.corr = train_correspondence_model(m.train, m.bundle, cc);
        TopicModelConfig tc;
        tc.n_topics = 5;
        tc.iterations = 30;
        out.topics = fit_topic_model(xmd::testing::texts_of(m.train), tc);
        return out;
    }();
    return d;
}

MetricDeps metric_deps() {
    MetricDeps d;
    d.bundle = &small_models().bundle;
    d.joint = &deps().joint;
    d.correspondence = &deps().corr;
    d.topics = &deps().topics;
    return d;
}

std::vector<DilutionRecord> keyword_records(const std::vector<PreparedExample>& xs) {
    std::vector<DilutionRecord> out;
    for (const auto& ex : xs) out.push_back(keyword_append(ex.id, ex.text, {ex.id, extract_text_keywords(ex.text), {}}, KeywordMode::text));
    return out;
}

/// Encoder whose outputs are fixed per string.
class TableEmbedder final : public TextEmbedder {
public:
    std::map<std::string, nn::RowVector> table;
    [[nodiscard]] int dim() const override { return 3; }
    [[nodiscard]] nn::RowVector encode(const std::string& text) const override { return table.at(text); }
};

std::vector<double> random_distribution(std::mt19937_64& rng, int k) {
    std::gamma_distribution<double> g(0.3, 1.0);
    std::vector<double> p(static_cast<std::size_t>(k));
    double s = 0;
    for (auto& v : p) s += v = g(rng);
    if (s == 0) {
        p[0] = s = 1;
    }
    for (auto& v : p) v /= s;
    return p;
}

}  // namespace

TEST(SimText, IdentityAndOrthogonality) {
    TableEmbedder enc;
    nn::RowVector a(3), b(3), z = nn::RowVector::Zero(3);
    a << 1, 2, 0;
    b << -2, 1, 5;
    enc.table = {{"a", a}, {"b", b}, {"z", z}};
    EXPECT_NEAR(sim_text("a", "a", enc), 1.0, 1e-6);
    EXPECT_NEAR(sim_text("a", "b", enc), 0.0, 1e-6);
    bool degenerate = false;
    EXPECT_EQ(sim_text("a", "z", enc, &degenerate), 0.0);
    EXPECT_TRUE(degenerate);
}

TEST(SimText, MatchesHandRolledCosine) {
    const auto& enc = small_models().bundle.text.encoder();
    const auto& xs = small_models().test;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
        const auto u = enc.encode(xs[i].text), v = enc.encode(xs[i + 1].text);
        const double want = u.dot(v) / (u.norm() * v.norm());
        const double got = sim_text(xs[i].text, xs[i + 1].text, enc);
        EXPECT_NEAR(got, want, 1e-12);
        EXPECT_GE(got, -1.0);
        EXPECT_LE(got, 1.0);
        EXPECT_NEAR(sim_text(xs[i].text, xs[i].text, enc), 1.0, 1e-6);
    }
}

TEST(SimText, EmptyStringIsDegenerate) {
    bool degenerate = false;
    EXPECT_EQ(sim_text("flood", "", small_models().bundle.text.encoder(), &degenerate), 0.0);
    EXPECT_TRUE(degenerate);
}

TEST(SimImg, DegenerateGuardAndRange) {
    const auto& ex = small_models().test.front();
    bool degenerate = false;
    EXPECT_EQ(sim_img("https://t.co/abcdef", ex.stem, deps().joint, &degenerate), 0.0);
    EXPECT_TRUE(degenerate);
    const double s = sim_img(ex.text, ex.stem, deps().joint, &degenerate);
    EXPECT_FALSE(degenerate);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
}

TEST(SimImg, InClassBeatsOutOfClass) {
    const auto& xs = small_models().test;
    double in = 0, out = 0;
    int n_in = 0, n_out = 0;
    for (const auto& img : xs) {
        for (const auto& txt : xs) {
            const double s = sim_img(txt.text, img.stem, deps().joint);
            if (img.label == txt.label) {
                in += s;
                ++n_in;
            } else {
                out += s;
                ++n_out;
            }
        }
    }
    ASSERT_GE(n_in + n_out, 100);
    EXPECT_GT(in / n_in, out / n_out);
}

TEST(Correspondence, PairConstruction) {
    const auto& xs = small_models().train;
    const auto pairs = build_correspondence_pairs(xs, 3, 0);
    EXPECT_EQ(pairs.size(), 4 * xs.size());
    int positives = 0;
    for (const auto& p : pairs) {
        if (p.label == 1) {
            ++positives;
            EXPECT_EQ(p.image, p.text);
        } else {
            EXPECT_NE(xs[p.image].text, xs[p.text].text);
        }
    }
    EXPECT_EQ(positives, static_cast<int>(xs.size()));
}

TEST(Correspondence, NeedsTwoDistinctTexts) {
    auto xs = std::vector<PreparedExample>(small_models().train.begin(), small_models().train.begin() + 4);
    for (auto& ex : xs) ex.text = "same";
    EXPECT_THROW(build_correspondence_pairs(xs, 3, 0), InvalidArgument);
}

TEST(Correspondence, OutputIsProbabilityAndEmptyRejected) {
    const auto& m = small_models();
    const auto p = deps().corr.match_probability(m.bundle.text_repr(m.test[0].text), m.bundle.image_repr(m.test[0].stem));
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_THROW(sim_corr(deps().corr, {}, m.test, m.bundle), InvalidArgument);
}

TEST(TopicModel, DistributionsAndDeterminism) {
    const auto& tm = deps().topics;
    for (const std::string& t : std::vector<std::string>{"", "zzz unknown", small_models().test[0].text, small_models().test[1].text}) {
        const auto p = tm.infer(t);
        ASSERT_EQ(static_cast<int>(p.size()), tm.n_topics());
        double s = 0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
        EXPECT_EQ(p, tm.infer(t));
    }
    TopicModelConfig tc = tm.config();
    const TopicModel again = fit_topic_model(xmd::testing::texts_of(small_models().train), tc);
    EXPECT_EQ(again.assignments(), tm.assignments());
}

TEST(TopicModel, SeparatesDisjointClusters) {
    std::vector<std::string> docs;
    std::mt19937_64 rng(1);
    const std::vector<std::string> a{"apple", "banana", "cherry", "grape", "melon"};
    const std::vector<std::string> b{"engine", "piston", "gear", "clutch", "brake"};
    for (int i = 0; i < 40; ++i) {
        const auto& words = i % 2 == 0 ? a : b;
        std::string d;
        for (int j = 0; j < 12; ++j) d += words[rng() % words.size()] + " ";
        docs.push_back(d);
    }
    TopicModelConfig tc;
    tc.n_topics = 2;
    tc.iterations = 100;
    const TopicModel tm = fit_topic_model(docs, tc);
    auto argmax = [&](const std::string& d) {
        const auto p = tm.infer(d);
        return std::max_element(p.begin(), p.end()) - p.begin();
    };
    const auto ta = argmax(docs[0]);
    const auto tb = argmax(docs[1]);
    EXPECT_NE(ta, tb);
    for (std::size_t i = 0; i < docs.size(); ++i) EXPECT_EQ(argmax(docs[i]), i % 2 == 0 ? ta : tb);
}

TEST(TopicModel, CorpusTooSmall) {
    TopicModelConfig tc;
    tc.n_topics = 5;
    EXPECT_THROW(fit_topic_model({"a b", "c d"}, tc), InvalidArgument);
}

TEST(TopicModel, SaveLoadRoundTrip) {
    const auto dir = xmd::testing::temp_dir("topics");
    deps().topics.save(dir / "tm.json");
    const TopicModel back = TopicModel::load(dir / "tm.json");
    const std::string t = small_models().test[2].text;
    EXPECT_EQ(back.infer(t), deps().topics.infer(t));
}

TEST(KlDivergence, HandValueAndIdentity) {
    EXPECT_NEAR(kl_divergence({0.9, 0.1}, {0.5, 0.5}), 0.9 * std::log(1.8) + 0.1 * std::log(0.2), 1e-6);
    EXPECT_NEAR(kl_divergence({0.9, 0.1}, {0.5, 0.5}), 0.3681, 1e-4);
    EXPECT_NEAR(kl_divergence({0.25, 0.75, 0.0}, {0.25, 0.75, 0.0}), 0.0, 1e-9);
    const std::string t = small_models().test[0].text;
    EXPECT_NEAR(topic_kl(deps().topics, t, t), 0.0, 1e-9);
}

TEST(KlDivergence, NonNegativeOn1000RandomPairs) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 1000; ++i) {
        const int k = 2 + static_cast<int>(rng() % 20);
        const auto p = random_distribution(rng, k);
        const auto q = random_distribution(rng, k);
        EXPECT_GE(kl_divergence(p, q), 0.0);
    }
}

TEST(SelfBleu, Examples) {
    const auto dup = self_bleu({"the fire crew arrived at the house", "the fire crew arrived at the house"});
    EXPECT_FALSE(dup.insufficient);
    EXPECT_NEAR(dup.value, 1.0, 1e-9);
    const auto disjoint = self_bleu({"alpha beta gamma delta", "one two three four"});
    EXPECT_LT(disjoint.value, 0.11);
    const auto single = self_bleu({"only one sentence"});
    EXPECT_TRUE(single.insufficient);
    EXPECT_EQ(single.value, 0.0);
}

TEST(SelfBleu, RangeAndPermutationInvariance) {
    const std::vector<std::string> words{"a", "b", "c", "d", "e"};
    std::mt19937_64 rng(21);
    for (int i = 0; i < 100; ++i) {
        std::vector<std::string> s;
        for (int j = 2 + static_cast<int>(rng() % 4); j > 0; --j) {
            std::string sent;
            for (int w = 1 + static_cast<int>(rng() % 8); w > 0; --w) sent += words[rng() % words.size()] + " ";
            s.push_back(sent);
        }
        const double v = self_bleu(s).value;
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        std::shuffle(s.begin(), s.end(), rng);
        EXPECT_NEAR(self_bleu(s).value, v, 1e-12);
    }
}

TEST(LengthControl, Examples) {
    const auto r3 = make_record("x", "m", "orig", "a b c");
    const auto rep = length_control(r3, 20, LengthMode::repeat);
    EXPECT_EQ(rep.inserted_words(), 20U);
    EXPECT_EQ(split_words(rep.dilution_text)[18], "a");
    EXPECT_EQ(split_words(rep.dilution_text)[19], "b");
    EXPECT_EQ(rep.final_text, "orig " + rep.dilution_text);

    std::vector<std::string> w38;
    for (int i = 0; i < 38; ++i) w38.push_back("w" + std::to_string(i));
    const auto tr = length_control(make_record("x", "m", "orig", join(w38)), 20, LengthMode::truncate);
    EXPECT_EQ(tr.dilution_text, join(std::vector<std::string>(w38.begin(), w38.begin() + 20)));

    const auto same = length_control(r3, 20, LengthMode::none);
    EXPECT_EQ(same.final_text, r3.final_text);
    EXPECT_EQ(same.flags, r3.flags);
}

TEST(LengthControl, HitsTargetForAnyNonEmptyDilution) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        std::vector<std::string> w;
        for (int j = 1 + static_cast<int>(rng() % 50); j > 0; --j) w.push_back("t" + std::to_string(j));
        const int target = 1 + static_cast<int>(rng() % 30);
        for (auto mode : {LengthMode::repeat, LengthMode::truncate}) {
            const auto r = length_control(make_record("x", "m", "o", join(w)), target, mode);
            EXPECT_GE(static_cast<int>(r.inserted_words()), target - 2);
            EXPECT_LE(static_cast<int>(r.inserted_words()), target);
        }
    }
    const auto empty = length_control(make_record("x", "m", "o", ""), 20, LengthMode::repeat);
    EXPECT_EQ(empty.inserted_words(), 0U);
}

TEST(Reports, OriginalHasNullRelevanceAndKl) {
    const auto& m = small_models();
    const auto r = build_report(kOriginalMethod, {{}}, m.test, metric_deps(), {0});
    EXPECT_FALSE(r.mean.sim_text.has_value());
    EXPECT_FALSE(r.mean.kl_div.has_value());
    EXPECT_TRUE(r.mean.sim_corr.has_value());
    EXPECT_EQ(r.per_seed.size(), 1U);
}

TEST(Reports, MissingDependencyNamed) {
    MetricDeps d = metric_deps();
    d.topics = nullptr;
    try {
        build_report("text_kw", {keyword_records(small_models().test)}, small_models().test, d, {0});
        FAIL() << "expected an error";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("topic model"), std::string::npos);
    }
}

TEST(Reports, DeterministicAndSerializable) {
    const auto& m = small_models();
    const auto recs = keyword_records(m.test);
    const auto a = build_report("text_kw", {recs, recs}, m.test, metric_deps(), {0, 1});
    const auto b = build_report("text_kw", {recs, recs}, m.test, metric_deps(), {0, 1});
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    EXPECT_EQ(a.per_seed.size(), 2U);
    EXPECT_EQ(to_json(report_from_json(nlohmann::json::parse(to_json(a).dump()))).dump(), to_json(a).dump());
}

TEST(Reports, MeanIsArithmeticMean) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<MetricValues> per;
    std::vector<std::int64_t> seeds;
    for (int s = 0; s < 5; ++s) {
        MetricValues v;
        v.classification = {u(rng), u(rng), u(rng), u(rng)};
        v.sim_text = u(rng);
        v.kl_div = u(rng);
        v.words_mean = 10 * u(rng);
        per.push_back(v);
        seeds.push_back(s);
    }
    const auto r = aggregate_report("m", per, seeds);
    double f1 = 0, st = 0, kl = 0, words = 0;
    for (const auto& v : per) {
        f1 += v.classification.f1;
        st += *v.sim_text;
        kl += *v.kl_div;
        words += v.words_mean;
    }
    EXPECT_NEAR(r.mean.classification.f1, f1 / 5, 1e-12);
    EXPECT_NEAR(*r.mean.sim_text, st / 5, 1e-12);
    EXPECT_NEAR(*r.mean.kl_div, kl / 5, 1e-12);
    EXPECT_NEAR(r.mean.words_mean, words / 5, 1e-12);
    EXPECT_FALSE(r.mean.sim_img.has_value());
    EXPECT_THROW(aggregate_report("m", per, {0}), InvalidArgument);
}

TEST(Reports, TablesRenderNullsAndGroups) {
    MetricReport r;
    r.method = "original";
    r.seeds = {0};
    r.per_seed = {MetricValues{}};
    const std::string md = render_markdown({r});
    EXPECT_NE(md.find("Classification ↓"), std::string::npos);
    EXPECT_NE(md.find("Relevance ↑"), std::string::npos);
    EXPECT_NE(md.find("Diversity ↓"), std::string::npos);
    EXPECT_NE(md.find("Topical Diff. ↓"), std::string::npos);
    EXPECT_NE(md.find("| Original |"), std::string::npos);
    EXPECT_NE(md.find("--"), std::string::npos);
    EXPECT_EQ(display_name("xmd_full"), "XMD-Full");
    EXPECT_EQ(display_name("unknown_id"), "unknown_id");
}
