#pragma once

#include "xmd/classifiers.hpp"
#include "xmd/common.hpp"
#include "xmd/corpus.hpp"
#include "xmd/generator.hpp"
#include "xmd/text.hpp"
#include "xmd/vocabulary.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace xmd::testing {

/// Slot predictor with pseudo-random distributions derived from the sequence
/// contents; `noi_bias` shifts mass toward [NOI].
class RandomSlotPredictor final : public SlotPredictor {
public:
    RandomSlotPredictor(Vocabulary vocab, std::uint64_t seed, double noi_bias) : vocab_(std::move(vocab)), seed_(seed), noi_bias_(noi_bias) {}

    [[nodiscard]] const Vocabulary& vocabulary() const override { return vocab_; }
    [[nodiscard]] nn::Matrix slot_probabilities(const TokenSeq& seq) const override {
        std::mt19937_64 rng(mix_seed(seed_, join(seq)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        nn::Matrix p = nn::Matrix::Zero(static_cast<Eigen::Index>(seq.size() + 1), vocab_.size());
        for (Eigen::Index s = 0; s < p.rows(); ++s) {
            for (int v = Vocabulary::kReservedCount; v < vocab_.size(); ++v) p(s, v) = u(rng);
            p(s, Vocabulary::kNoInsert) = u(rng) + noi_bias_ * (vocab_.size() - Vocabulary::kReservedCount);
            p.row(s) /= p.row(s).sum();
        }
        return p;
    }

private:
    Vocabulary vocab_;
    std::uint64_t seed_;
    double noi_bias_;
};

/// Puts all mass on [NOI], or on one fixed token for the listed slots.
class ScriptedSlotPredictor final : public SlotPredictor {
public:
    explicit ScriptedSlotPredictor(Vocabulary vocab, std::vector<std::pair<int, std::string>> inserts = {})
        : vocab_(std::move(vocab)), inserts_(std::move(inserts)) {}

    [[nodiscard]] const Vocabulary& vocabulary() const override { return vocab_; }
    [[nodiscard]] nn::Matrix slot_probabilities(const TokenSeq& seq) const override {
        nn::Matrix p = nn::Matrix::Zero(static_cast<Eigen::Index>(seq.size() + 1), vocab_.size());
        p.col(Vocabulary::kNoInsert).setOnes();
        for (const auto& [slot, token] : inserts_) {
            if (slot <= static_cast<int>(seq.size())) {
                p.row(slot).setZero();
                p(slot, vocab_.id(token)) = 1.0;
            }
        }
        return p;
    }

private:
    Vocabulary vocab_;
    std::vector<std::pair<int, std::string>> inserts_;
};

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("xmd_unit_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Small synthetic task shared by the tests that need trained models.
inline const DatasetSplit& small_synth() {
    static const DatasetSplit data = [] {
        SynthSpec spec;
        spec.n = 400;
        return synth_dataset(spec, 0);
    }();
    return data;
}

inline std::vector<std::string> texts_of(const std::vector<PreparedExample>& examples) {
    std::vector<std::string> out;
    for (const auto& ex : examples) out.push_back(ex.text);
    return out;
}

struct SmallModels {
    std::vector<PreparedExample> train, val, test;
    Vocabulary vocab;
    ClassifierBundle bundle;
};

/// Narrow classifiers trained on small_synth(); built once per process.
inline const SmallModels& small_models() {
    static const SmallModels models = [] {
        SmallModels m;
        const auto& data = small_synth();
        m.train = prepare_examples(data.train);
        m.val = prepare_examples(data.validation);
        m.test = prepare_examples(data.test);
        m.vocab = build_vocabulary(texts_of(m.train), 500);
        TrainConfig tc;
        tc.lr = 3e-3;
        tc.max_epochs = 60;
        tc.patience = 5;
        const TextEncoderConfig tcfg{16, 32, 32};
        const ImageEncoderConfig icfg{16, 32, 32};
        m.bundle.num_classes = data.num_classes();
        m.bundle.text = train_text_classifier(m.train, m.val, m.vocab, tcfg, m.bundle.num_classes, tc);
        ImageTrainConfig ic;
        ic.lr = 3e-3;
        ic.max_epochs = 60;
        m.bundle.image = train_image_classifier(m.train, m.val, icfg, m.bundle.num_classes, ic);
        FusionConfig fc;
        fc.hidden = {32, 16};
        fc.input_dim = 64;
        train_fusion_classifier(m.bundle, m.train, m.val, fc, tc);
        return m;
    }();
    return models;
}

}  // namespace xmd::testing
