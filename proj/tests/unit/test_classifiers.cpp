#include "support.hpp"

#include "xmd/classifiers.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace xmd;
using xmd::testing::small_models;

namespace {

double accuracy(const ClassifierBundle& b, const std::vector<PreparedExample>& xs) {
    return evaluate_classifier(b, xs).accuracy;
}

/// Independent macro/weighted scores from an explicit confusion matrix, over
/// the classes that occur in either list.
ClassificationMetrics oracle_metrics(const std::vector<int>& pred, const std::vector<int>& truth, int k, bool weighted) {
    std::vector<std::vector<double>> cm(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(k), 0));
    for (std::size_t i = 0; i < pred.size(); ++i) cm[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])] += 1;
    ClassificationMetrics m;
    double diag = 0;
    double wsum = 0;
    for (int c = 0; c < k; ++c) {
        double row = 0, col = 0;
        for (int j = 0; j < k; ++j) {
            row += cm[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
            col += cm[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        }
        const double tp = cm[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
        diag += tp;
        if (row == 0 && col == 0) continue;
        const double p = col > 0 ? tp / col : 0;
        const double r = row > 0 ? tp / row : 0;
        const double f = p + r > 0 ? 2 * p * r / (p + r) : 0;
        const double w = weighted ? row : 1.0;
        m.precision += w * p;
        m.recall += w * r;
        m.f1 += w * f;
        wsum += w;
    }
    m.precision /= wsum;
    m.recall /= wsum;
    m.f1 /= wsum;
    m.accuracy = diag / static_cast<double>(pred.size());
    return m;
}

}  // namespace

TEST(ClassDistribution, LogitsTieGoesToLowestIndex) {
    nn::RowVector logits(2);
    logits << 0, 0;
    const auto d = distribution_from_logits(logits);
    EXPECT_NEAR(d.probs[0], 0.5, 1e-12);
    EXPECT_NEAR(d.probs[1], 0.5, 1e-12);
    EXPECT_EQ(d.predicted(), 0);
}

TEST(ClassDistribution, InvalidRejected) {
    EXPECT_THROW((ClassDistribution{{0.5, 0.6}}.validate()), InvalidArgument);
    EXPECT_THROW((ClassDistribution{{-0.1, 1.1}}.validate()), InvalidArgument);
}

TEST(EarlyStopping, PatienceZeroStopsAfterOneEpoch) {
    EarlyStopping es(0, 200);
    es.update(1.0);
    EXPECT_TRUE(es.should_stop());
    EXPECT_EQ(es.epochs(), 1);
}

TEST(EarlyStopping, StrictlyDecreasingRunsToCap) {
    EarlyStopping es(2, 7);
    double loss = 10;
    while (!es.should_stop()) es.update(loss -= 1);
    EXPECT_EQ(es.epochs(), 7);
    EXPECT_EQ(es.best_epoch(), 7);
}

TEST(EarlyStopping, FlatLossStopsAtPatiencePlusOne) {
    EarlyStopping es(10, 200);
    while (!es.should_stop()) es.update(1.0);
    EXPECT_EQ(es.epochs(), 11);
}

TEST(EarlyStopping, RestoresBestCheckpoint) {
    // One scalar parameter moved by a fixed schedule; validation loss is its
    // distance from 3, so the best epoch is the one that lands on 3.
    nn::Parameter p{"p", nn::Matrix::Zero(1, 1), nn::Matrix::Zero(1, 1)};
    TrainConfig tc;
    tc.patience = 2;
    tc.max_epochs = 10;
    tc.batch_size = 100;
    TrainingHistory h;
    fit_with_early_stopping(
        1, tc, {&p},
        [&](std::span<const std::size_t>) {
            p.value(0, 0) += 1;
            return 0.0;
        },
        [&] { return std::abs(p.value(0, 0) - 3); }, &h);
    EXPECT_EQ(h.best_epoch, 3);
    EXPECT_EQ(p.value(0, 0), 3);
    for (int e = h.best_epoch; e < h.epochs(); ++e) EXPECT_LE(h.val_loss[static_cast<std::size_t>(h.best_epoch - 1)], h.val_loss[static_cast<std::size_t>(e)]);
}

TEST(Fusion, ConcatenatesRepresentations) {
    nn::RowVector a(2), b(1);
    a << 1, 2;
    b << 3;
    const auto f = fuse_representations(a, b);
    ASSERT_EQ(f.size(), 3);
    EXPECT_EQ(f(2), 3);
    EXPECT_EQ(fuse_representations(nn::RowVector(0), b).size(), 1);
}

TEST(Fusion, DefaultWidthsGive1024Input) {
    const TextEncoderConfig t;
    const ImageEncoderConfig i;
    EXPECT_EQ(t.output_dim + i.output_dim, 1024);
}

TEST(Fusion, ParameterCountClosedForm) {
    std::mt19937_64 rng(0);
    const nn::Mlp mlp({1024, 512, 128, 32, 4}, false, rng, "f");
    const std::size_t expected = 1024 * 512 + 512 + 512 * 128 + 128 + 128 * 32 + 32 + 32 * 4 + 4;
    EXPECT_EQ(mlp.parameter_count(), expected);
    EXPECT_EQ(dense_parameter_count({1024, 512, 128, 32, 4}), expected);
}

TEST(Fusion, DeclaredWidthMismatchRejected) {
    ClassifierBundle b = small_models().bundle;
    FusionConfig fc;
    fc.input_dim = 1024;
    EXPECT_THROW(train_fusion_classifier(b, small_models().train, small_models().val, fc, {}), InvalidArgument);
}

TEST(Classifiers, SingleClassRejected) {
    auto train = small_models().train;
    for (auto& ex : train) ex.label = 0;
    EXPECT_THROW(train_text_classifier(train, small_models().val, small_models().vocab, {8, 8, 8}, 4, {}), InvalidArgument);
}

TEST(Classifiers, UnimodalAccuracyOnSynthetic) {
    const auto& m = small_models();
    int text_ok = 0, image_ok = 0;
    std::vector<std::vector<int>> bags;
    for (const auto& ex : m.val) bags.push_back(m.bundle.text.encoder().token_ids(ex.text));
    const nn::Matrix tl = m.bundle.text.logits(bags);
    for (std::size_t i = 0; i < m.val.size(); ++i) {
        Eigen::Index best = 0;
        tl.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
        text_ok += best == m.val[i].label;
        const nn::Matrix il = m.bundle.image.output().forward(m.bundle.image_repr(m.val[i].stem));
        il.row(0).maxCoeff(&best);
        image_ok += best == m.val[i].label;
    }
    const double n = static_cast<double>(m.val.size());
    EXPECT_GE(text_ok / n, 0.9);
    EXPECT_GE(image_ok / n, 0.9);
}

TEST(Classifiers, FrozenBackboneUnchanged) {
    const auto& m = small_models();
    ImageClassifier fresh({8, 32, 32}, 4, 0);
    const auto before = nn::hash_parameters(fresh.encoder().backbone_parameters());
    ImageTrainConfig ic;
    ic.max_epochs = 2;
    ImageClassifier trained = train_image_classifier(m.train, m.val, {8, 32, 32}, 4, ic);
    EXPECT_EQ(nn::hash_parameters(trained.encoder().backbone_parameters()), before);
}

TEST(Classifiers, FusionTrainingLeavesUnimodalHeadsAlone) {
    const auto& m = small_models();
    ClassifierBundle b = m.bundle;
    const auto before = nn::hash_parameters(b.unimodal_parameters());
    FusionConfig fc;
    fc.hidden = {16};
    fc.input_dim = 0;
    TrainConfig tc;
    tc.max_epochs = 2;
    train_fusion_classifier(b, m.train, m.val, fc, tc);
    EXPECT_EQ(nn::hash_parameters(b.unimodal_parameters()), before);
}

TEST(Classifiers, FusionMatchesOrBeatsUnimodal) {
    const auto& m = small_models();
    const double fused = accuracy(m.bundle, m.test);
    int text_ok = 0, image_ok = 0;
    for (const auto& ex : m.test) {
        Eigen::Index best = 0;
        m.bundle.text.logits({m.bundle.text.encoder().token_ids(ex.text)}).row(0).maxCoeff(&best);
        text_ok += best == ex.label;
        m.bundle.image.output().forward(m.bundle.image_repr(ex.stem)).row(0).maxCoeff(&best);
        image_ok += best == ex.label;
    }
    const double n = static_cast<double>(m.test.size());
    EXPECT_GE(fused + 0.02, std::max(text_ok / n, image_ok / n));
}

TEST(Classifiers, PredictIsPureAndNormalized) {
    const auto& m = small_models();
    for (const auto& ex : m.test) {
        const auto a = m.bundle.predict(ex.text, ex.stem);
        const auto b = m.bundle.predict(ex.text, ex.stem);
        EXPECT_EQ(a.probs, b.probs);
        EXPECT_NO_THROW(a.validate());
    }
}

TEST(Classifiers, OverfitsOneBatch) {
    const auto& m = small_models();
    std::vector<PreparedExample> batch(m.train.begin(), m.train.begin() + 8);
    TrainConfig tc;
    tc.lr = 1e-2;
    tc.max_epochs = 100;
    tc.patience = 100;
    const TextClassifier clf = train_text_classifier(batch, batch, m.vocab, {16, 32, 32}, 4, tc);
    for (const auto& ex : batch) {
        Eigen::Index best = 0;
        clf.logits({clf.encoder().token_ids(ex.text)}).row(0).maxCoeff(&best);
        EXPECT_EQ(best, ex.label);
    }
}

TEST(Metrics, PerfectPredictions) {
    const std::vector<int> y{0, 1, 2, 1};
    const auto m = classification_metrics(y, y, 3);
    EXPECT_EQ(m.f1, 1);
    EXPECT_EQ(m.precision, 1);
    EXPECT_EQ(m.recall, 1);
    EXPECT_EQ(m.accuracy, 1);
}

TEST(Metrics, AllOneClassOnBalancedBinary) {
    const std::vector<int> truth{0, 0, 1, 1};
    const std::vector<int> pred{0, 0, 0, 0};
    const auto m = classification_metrics(pred, truth, 2);
    EXPECT_NEAR(m.accuracy, 0.5, 1e-12);
    EXPECT_NEAR(m.f1, 1.0 / 3.0, 1e-12);
}

TEST(Metrics, OracleEquivalenceOnRandomPairs) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = 2 + static_cast<int>(rng() % 5);
        std::vector<int> pred, truth;
        for (int i = 0; i < 1000; ++i) {
            pred.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(k)));
            truth.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(k)));
        }
        for (bool weighted : {false, true}) {
            const auto got = classification_metrics(pred, truth, k, weighted ? Averaging::weighted : Averaging::macro);
            const auto want = oracle_metrics(pred, truth, k, weighted);
            EXPECT_NEAR(got.f1, want.f1, 1e-9);
            EXPECT_NEAR(got.precision, want.precision, 1e-9);
            EXPECT_NEAR(got.recall, want.recall, 1e-9);
            EXPECT_NEAR(got.accuracy, want.accuracy, 1e-9);
        }
        const auto micro = classification_metrics(pred, truth, k, Averaging::micro);
        EXPECT_NEAR(micro.f1, oracle_metrics(pred, truth, k, false).accuracy, 1e-12);
    }
}

TEST(Metrics, AllInUnitInterval) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> pred, truth;
        for (int i = 0; i < 20; ++i) {
            pred.push_back(static_cast<int>(rng() % 3));
            truth.push_back(static_cast<int>(rng() % 3));
        }
        const auto m = classification_metrics(pred, truth, 3);
        for (double v : {m.f1, m.precision, m.recall, m.accuracy}) {
            EXPECT_GE(v, 0);
            EXPECT_LE(v, 1);
        }
    }
}
