#pragma once

#include "xmd/baselines.hpp"
#include "xmd/classifiers.hpp"
#include "xmd/common.hpp"
#include "xmd/corpus.hpp"
#include "xmd/encoders.hpp"
#include "xmd/generator.hpp"
#include "xmd/keywords.hpp"
#include "xmd/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace xmd {

/// Every knob of an experiment. Field names mirror the dotted config keys.
struct ExperimentConfig {
    std::string output_dir = "runs/synth";
    std::vector<std::int64_t> seeds{0, 1, 2, 3, 4};

    struct Dataset {
        std::string path;  // JSONL dataset; empty means synthesize
        std::uint64_t seed = 0;
        SynthSpec synth;
    } dataset;

    struct Classifier {
        std::uint64_t seed = 0;  // also seeds the joint, correspondence and topic models
        int vocab_size = 5000;
        std::string averaging = "macro";
        TextEncoderConfig text;
        TrainConfig text_train;
        ImageEncoderConfig image;
        ImageTrainConfig image_train;
        FusionConfig fusion;
        TrainConfig fusion_train;
    } classifier;

    struct Keywords {
        TextKeywordParams text;
        double min_area_frac = 0.1;
        std::string label_vocab;  // path; empty uses the dataset's object labels
    } keywords;

    struct Generator {
        int vocab_size = 5000;
        InsertionLMConfig lm;
        int stage1_epochs = 50;
        double stage1_lr = 3e-3;
        int stage1_batch_size = 16;
        int stage2_epochs = 20;
        double stage2_lr = 1e-3;
        double lambda = 0.01;
        std::string adv_objective = "paper_bce";
        bool report_alt_objective = true;
        std::string decode = "greedy";
    } generator;

    struct Baselines {
        std::vector<std::string> methods{"original",      "random_url",         "image_kw",        "text_kw",
                                         "text_image_kw", "similar_image_desc", "lm_continuation", "lm_continuation_ft",
                                         "caption_append", "xmd"};
        int lm_max_new_words = kDefaultMaxNewWords;
        int caption_max_objects = 3;
    } baselines;

    struct Metrics {
        JointEmbedderConfig joint;
        CorrespondenceConfig correspondence;
        TopicModelConfig topics;
        int length_target = 20;
    } metrics;

    std::vector<double> sweep_lambdas{0.0, 0.01, 0.1};
    std::vector<std::string> ablation_modes{"plain", "adv", "full"};
};

/// All problems found in a config, reported together.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    [[nodiscard]] const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

/// Parses YAML text, applies "dotted.key=value" overrides (values are YAML
/// scalars or flow sequences), then validates.
ExperimentConfig parse_config(const std::string& yaml_text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Semantic checks; throws ConfigError listing every violation.
void validate_config(const ExperimentConfig& config);

/// All known keys in schema order.
std::vector<std::string> config_keys();

/// "key=value" lines in schema order; the basis of config hashes.
std::string canonical_config(const ExperimentConfig& config);

/// Hash over the canonical lines whose key starts with any of `prefixes`
/// (all lines when empty).
std::uint64_t config_hash(const ExperimentConfig& config, const std::vector<std::string>& prefixes = {});

/// Nested YAML rendering of the full config.
std::string config_to_yaml(const ExperimentConfig& config);

}  // namespace xmd
