#pragma once

#include "xmd/baselines.hpp"
#include "xmd/classifiers.hpp"
#include "xmd/config.hpp"
#include "xmd/corpus.hpp"
#include "xmd/dilution.hpp"
#include "xmd/generator.hpp"
#include "xmd/keywords.hpp"
#include "xmd/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace xmd {

/// A pipeline stage failed; `stage()` names it. Artifacts written so far stay on disk.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what);
    [[nodiscard]] const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

enum class AblationMode { plain, adv, full };

AblationMode parse_ablation_mode(const std::string& s);
std::string to_string(AblationMode mode);

struct SweepRow {
    double lambda = 0;
    MetricReport report;
};

struct LengthControlRow {
    std::string method;
    LengthMode mode = LengthMode::none;
    double words_before = 0;
    double f1_before = 0;
    double words_after = 0;
    double f1_after = 0;
};

/// Lazily built, disk-cached experiment state under config.output_dir:
///   checkpoints/  trained models, one directory per stage with a manifest
///   keywords/     keyword dumps
///   dilutions/    <method>_s<seed>.jsonl
///   reports/      <method>.json
///   tables/       csv, md and svg outputs
///   manifest.json config hash, seeds and every artifact written
/// A stage is reused when its manifest key matches the current config.
class Experiment {
public:
    explicit Experiment(ExperimentConfig config, std::ostream* log = nullptr);

    [[nodiscard]] const ExperimentConfig& config() const { return config_; }
    [[nodiscard]] const std::filesystem::path& root() const { return root_; }

    const DatasetSplit& data();
    const std::vector<PreparedExample>& train_set();
    const std::vector<PreparedExample>& validation_set();
    const std::vector<PreparedExample>& test_set();

    const ClassifierBundle& classifiers();
    /// Keyword sets for train and test examples, in split order.
    const std::vector<KeywordSet>& train_keywords();
    const std::vector<KeywordSet>& test_keywords();
    const JointEmbedder& joint();
    const CorrespondenceModel& correspondence();
    const TopicModel& topics();

    const InsertionLM& stage1(std::int64_t seed);
    const InsertionLM& stage2(std::int64_t seed, double lambda, AdvObjective objective);

    /// Dilutions of the test set for one method id and seed. XMD ids: "xmd"
    /// (configured lambda and objective, merged keywords), "xmd_plain",
    /// "xmd_adv", "xmd_full", "xmd_<objective>", "xmd_lambda_<value>".
    std::vector<DilutionRecord> dilutions(const std::string& method, std::int64_t seed);

    /// Evaluates a method over all seeds and writes reports/<method>.json.
    MetricReport report(const std::string& method);
    MetricReport report_records(const std::string& method, const std::vector<std::vector<DilutionRecord>>& per_seed);

    /// Number of training stages that ran (rather than loaded from cache).
    [[nodiscard]] int trained_stages() const { return trained_; }

    void write_table(const std::string& name, const std::vector<MetricReport>& reports);
    void write_text(const std::filesystem::path& relative, const std::string& content, const std::string& kind);

private:
    struct StageInfo {
        std::string name;
        std::uint64_t key;
        std::filesystem::path dir;
    };
    bool cached(const StageInfo& stage) const;
    void mark_done(const StageInfo& stage, std::optional<std::int64_t> seed = std::nullopt);
    void record_artifact(const std::filesystem::path& relative, const std::string& kind, std::optional<std::int64_t> seed,
                         std::uint64_t content_hash);
    void write_manifest() const;
    void build_keywords();
    std::uint64_t data_key();
    std::uint64_t classifier_key();
    std::uint64_t keyword_key();
    std::uint64_t stage1_key(std::int64_t seed);
    std::uint64_t stage2_key(std::int64_t seed, double lambda, AdvObjective objective);
    std::vector<std::string> training_texts();
    const std::vector<ImageTensor>& test_images();
    const NgramLM& ngram(bool finetuned);
    std::shared_ptr<const ObjectDetector> detector();
    std::set<std::string> label_vocabulary();

    template <typename... Args>
    void say(const Args&... args);

    ExperimentConfig config_;
    std::filesystem::path root_;
    std::ostream* log_;
    int trained_ = 0;

    std::optional<DatasetSplit> data_;
    std::optional<std::uint64_t> data_key_;
    std::vector<PreparedExample> train_, val_, test_;
    bool prepared_ = false;
    std::optional<ClassifierBundle> bundle_;
    std::optional<std::vector<KeywordSet>> train_kw_, test_kw_;
    std::optional<JointEmbedder> joint_;
    std::optional<CorrespondenceModel> corr_;
    std::optional<TopicModel> topics_;
    std::map<std::int64_t, InsertionLM> stage1_;
    std::map<std::string, InsertionLM> stage2_;
    std::optional<std::vector<ImageTensor>> test_images_;
    std::unique_ptr<NgramLM> ngram_generic_, ngram_ft_;
    std::shared_ptr<const ObjectDetector> detector_;
    std::map<std::string, std::vector<DilutionRecord>> dilution_cache_;  // "<method>#<seed>"

    struct Artifact {
        std::string kind;
        std::optional<std::int64_t> seed;
        std::uint64_t hash;
    };
    std::map<std::string, Artifact> artifacts_;
};

/// Main table: one row per configured method, written to tables/main.*. Also
/// writes tables/objectives.* when the alternative objective is reported.
std::vector<MetricReport> run_pipeline(Experiment& exp);

/// tables/ablation.*: Plain (stage-1 only, image keywords), Adv (stage-2,
/// image keywords), Full (stage-2, merged keywords).
std::vector<MetricReport> run_ablation(Experiment& exp, const std::vector<AblationMode>& modes);

/// tables/sweep.csv and tables/sweep.svg; stage-1 is shared across lambdas.
std::vector<SweepRow> sweep_lambda(Experiment& exp, const std::vector<double>& lambdas);

/// Per-method length control rule: truncate for XMD, none for LM
/// continuations and the original text, repeat otherwise.
LengthMode length_rule(const std::string& method);

/// tables/length_control.*: F1 and inserted words before and after control.
std::vector<LengthControlRow> run_length_controlled(Experiment& exp, int target);

std::string render_sweep_csv(const std::vector<SweepRow>& rows);
std::string render_sweep_svg(const std::vector<SweepRow>& rows);
std::string render_length_control_markdown(const std::vector<LengthControlRow>& rows, int target);
std::string render_length_control_csv(const std::vector<LengthControlRow>& rows);

}  // namespace xmd
