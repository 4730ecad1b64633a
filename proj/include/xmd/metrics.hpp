#pragma once

#include "xmd/classifiers.hpp"
#include "xmd/dilution.hpp"
#include "xmd/encoders.hpp"
#include "xmd/nn.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xmd {

// --- relevance ------------------------------------------------------------------

/// Cosine of the encoder representations. Strings without tokens, or zero
/// representations, give 0 and set `degenerate`.
double sim_text(const std::string& original, const std::string& dilution, const TextEmbedder& encoder, bool* degenerate = nullptr);

/// Cosine between the dilution and the image in the joint space. A dilution with
/// no known tokens gives 0 and sets `degenerate`.
double sim_img(const std::string& dilution, const nn::Matrix& stem, const JointEmbedder& joint, bool* degenerate = nullptr);

struct CorrespondencePair {
    std::size_t image = 0;  // index of the image's example
    std::size_t text = 0;   // index of the example whose text is paired with it
    int label = 0;          // 1 = matched
};

/// One matched pair plus `neg_ratio` mismatched texts per image. A negative never
/// uses a text equal to the image's own.
std::vector<CorrespondencePair> build_correspondence_pairs(const std::vector<PreparedExample>& examples, int neg_ratio,
                                                           std::uint64_t seed);

struct CorrespondenceConfig : TrainConfig {
    int neg_ratio = 3;
    double holdout_fraction = 0.1;  // of images, with all their pairs
    std::vector<int> hidden{512, 256, 128, 64, 32};
    CorrespondenceConfig() {
        lr = 1e-3;
        max_epochs = 60;
    }
};

/// Binary matched/mismatched classifier over [text_repr, image_repr].
struct CorrespondenceModel {
    nn::Mlp net;
    double heldout_accuracy = 0;
    double heldout_positive_accuracy = 0;

    [[nodiscard]] double match_probability(const nn::RowVector& text_repr, const nn::RowVector& image_repr) const;
    nn::ParameterList parameters() {
        nn::ParameterList out;
        net.collect(out);
        return out;
    }
    void save(const std::filesystem::path& dir);
    static CorrespondenceModel load(const std::filesystem::path& dir);
};

CorrespondenceModel train_correspondence_model(const std::vector<PreparedExample>& train, const ClassifierBundle& bundle,
                                               const CorrespondenceConfig& config = {});

/// Mean P(matched) of each record's final text with its source image. Records are
/// matched to `examples` by source id.
double sim_corr(const CorrespondenceModel& model, const std::vector<DilutionRecord>& records, const std::vector<PreparedExample>& examples,
                const ClassifierBundle& bundle);

// --- topical coherence -------------------------------------------------------------

struct TopicModelConfig {
    int n_topics = 20;
    double alpha = 0.1;
    double beta = 0.01;
    int iterations = 200;
    int inference_iterations = 50;
    std::uint64_t seed = 0;
};

/// LDA fit by collapsed Gibbs sampling over content tokens (stopwords and
/// punctuation dropped).
class TopicModel {
public:
    TopicModel() = default;

    [[nodiscard]] int n_topics() const { return config_.n_topics; }
    /// Topic distribution for any text. Deterministic: the sampler is seeded by
    /// the model seed and the text. Texts with no known words get the uniform
    /// distribution.
    [[nodiscard]] std::vector<double> infer(const std::string& text) const;
    /// Final topic assignment of every token of every training document.
    [[nodiscard]] const std::vector<std::vector<int>>& assignments() const { return assignments_; }
    [[nodiscard]] const TopicModelConfig& config() const { return config_; }

    void save(const std::filesystem::path& path) const;
    static TopicModel load(const std::filesystem::path& path);

    friend TopicModel fit_topic_model(const std::vector<std::string>& train_texts, const TopicModelConfig& config);

private:
    TopicModelConfig config_;
    std::map<std::string, int> word_ids_;
    nn::Matrix topic_word_;  // n_topics x V, rows are distributions
    std::vector<std::vector<int>> assignments_;
};

TopicModel fit_topic_model(const std::vector<std::string>& train_texts, const TopicModelConfig& config = {});

inline constexpr double kKlEpsilon = 1e-8;

/// KL(P || Q) in nats after adding eps to both and renormalizing.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q, double eps = kKlEpsilon);

/// KL from the dilution's topic distribution to the original's.
double topic_kl(const TopicModel& tm, const std::string& dilution, const std::string& original);

// --- diversity ----------------------------------------------------------------------

struct SelfBleu {
    double value = 0;
    bool insufficient = false;  // fewer than two sentences
};

inline constexpr double kBleuEpsilon = 0.1;

/// Sentence BLEU of `hypothesis` against `references`: clipped n-gram precision
/// up to max_ngram, add-eps for orders with no matches, closest-length brevity
/// penalty.
double sentence_bleu(const std::vector<std::string>& hypothesis, const std::vector<std::vector<std::string>>& references,
                     int max_ngram = 4);

/// Mean BLEU of each sentence against all the others.
SelfBleu self_bleu(const std::vector<std::string>& sentences, int max_ngram = 4);

// --- length control -----------------------------------------------------------------

enum class LengthMode { none, repeat, truncate };

LengthMode parse_length_mode(const std::string& s);
std::string to_string(LengthMode mode);

/// repeat cycles the dilution's words up to exactly `target` words. truncate cuts
/// longer dilutions to `target`; shorter ones are filled by cycling so that every
/// controlled method lands on the same count. Empty dilutions are left alone.
DilutionRecord length_control(const DilutionRecord& record, int target_words = 20, LengthMode mode = LengthMode::repeat);

// --- reports --------------------------------------------------------------------------

struct MetricValues {
    ClassificationMetrics classification;
    std::optional<double> sim_text;
    std::optional<double> sim_img;
    std::optional<double> sim_corr;
    std::optional<double> kl_div;
    std::optional<double> self_bleu;
    double words_mean = 0;
    double words_std = 0;
};

struct MetricReport {
    std::string method;
    std::vector<std::int64_t> seeds;
    std::vector<MetricValues> per_seed;
    /// Arithmetic means of the per-seed values; an optional metric is null when
    /// it is undefined for every seed.
    MetricValues mean;
    /// Sample standard deviation of per-seed F1 and Sim_text (0 for a single seed).
    double f1_std = 0;
    double sim_text_std = 0;
};

/// Frozen models the metrics run on. Any that is null and needed raises an error
/// naming it.
struct MetricDeps {
    const ClassifierBundle* bundle = nullptr;
    const JointEmbedder* joint = nullptr;
    const CorrespondenceModel* correspondence = nullptr;
    const TopicModel* topics = nullptr;
    Averaging averaging = Averaging::macro;
};

inline constexpr const char* kOriginalMethod = "original";

/// Metrics of a single seed's dilutions. For the "original" method the records'
/// dilutions are ignored and Sim_text/KL are null.
MetricValues evaluate_records(const std::string& method, const std::vector<DilutionRecord>& records,
                              const std::vector<PreparedExample>& testset, const MetricDeps& deps);

/// Aggregates per-seed values; `per_seed_records` aligns with `seeds`.
MetricReport build_report(const std::string& method, const std::vector<std::vector<DilutionRecord>>& per_seed_records,
                          const std::vector<PreparedExample>& testset, const MetricDeps& deps, const std::vector<std::int64_t>& seeds);

/// Mean over seeds of already evaluated values.
MetricReport aggregate_report(const std::string& method, const std::vector<MetricValues>& per_seed, const std::vector<std::int64_t>& seeds);

nlohmann::ordered_json to_json(const MetricValues& values);
nlohmann::ordered_json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

/// Table display name for a method id; unknown ids are returned unchanged.
std::string display_name(const std::string& method);

std::string render_csv(const std::vector<MetricReport>& reports);
std::string render_markdown(const std::vector<MetricReport>& reports);

}  // namespace xmd
