#pragma once

#include "xmd/corpus.hpp"
#include "xmd/encoders.hpp"
#include "xmd/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace xmd {

/// One training example in the form the classifiers consume.
struct PreparedExample {
    std::string id;
    std::string text;  // preprocessed
    nn::Matrix stem;   // image_stem of the preprocessed image
    int label = 0;
};

std::vector<PreparedExample> prepare_examples(const std::vector<MultimodalExample>& examples, const ChannelNorm& norm = {});

struct ClassDistribution {
    std::vector<double> probs;

    /// Argmax with ties broken toward the lowest class index.
    [[nodiscard]] int predicted() const;
    /// Throws InvalidArgument unless entries are >= 0 and sum to 1 within 1e-6.
    void validate() const;
};

ClassDistribution distribution_from_logits(const nn::RowVector& logits);

/// Patience counter: stop once `patience` consecutive epochs fail to strictly
/// improve the best validation loss. patience == 0 stops after the first epoch.
class EarlyStopping {
public:
    EarlyStopping(int patience, int max_epochs) : patience_(patience), max_epochs_(max_epochs) {}

    /// Records an epoch's validation loss; returns true when it is the new best.
    bool update(double val_loss);
    [[nodiscard]] bool should_stop() const;
    [[nodiscard]] int epochs() const { return epochs_; }
    [[nodiscard]] int best_epoch() const { return best_epoch_; }
    [[nodiscard]] double best_loss() const { return best_; }

private:
    int patience_;
    int max_epochs_;
    int epochs_ = 0;
    int best_epoch_ = 0;
    int bad_epochs_ = 0;
    double best_ = 0.0;
};

struct TrainingHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = 0;  // 1-based
    [[nodiscard]] int epochs() const { return static_cast<int>(val_loss.size()); }
};

struct TrainConfig {
    double lr = 1e-4;
    int patience = 5;
    int max_epochs = 200;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

/// Minibatch loop with early stopping on validation loss. `step` runs one batch
/// (forward, backward, optimizer step) and returns its loss; the best parameters
/// are restored at the end.
void fit_with_early_stopping(std::size_t n, const TrainConfig& config, const nn::ParameterList& params,
                             const std::function<double(std::span<const std::size_t>)>& step,
                             const std::function<double()>& val_loss, TrainingHistory* history = nullptr);

/// Text-only classifier: encoder followed by a linear classification layer.
class TextClassifier {
public:
    TextClassifier() = default;
    TextClassifier(Vocabulary vocab, const TextEncoderConfig& encoder, int num_classes, std::uint64_t seed);

    [[nodiscard]] nn::Matrix logits(const std::vector<std::vector<int>>& bags) const;
    TextEncoder& encoder() { return encoder_; }
    [[nodiscard]] const TextEncoder& encoder() const { return encoder_; }
    nn::Linear& output() { return output_; }
    nn::ParameterList parameters();

private:
    TextEncoder encoder_;
    nn::Linear output_;
};

class ImageClassifier {
public:
    ImageClassifier() = default;
    ImageClassifier(const ImageEncoderConfig& encoder, int num_classes, std::uint64_t seed);

    ImageEncoder& encoder() { return encoder_; }
    [[nodiscard]] const ImageEncoder& encoder() const { return encoder_; }
    nn::Linear& output() { return output_; }
    [[nodiscard]] const nn::Linear& output() const { return output_; }
    nn::ParameterList parameters();

private:
    ImageEncoder encoder_;
    nn::Linear output_;
};

struct FusionConfig {
    std::vector<int> hidden{512, 128, 32};
    /// Declared fusion input width; 0 accepts whatever the unimodal heads produce.
    int input_dim = 1024;
};

/// Joint classifier over concatenated penultimate representations.
struct ClassifierBundle {
    TextClassifier text;
    ImageClassifier image;
    nn::Mlp fusion;
    int num_classes = 0;

    [[nodiscard]] int fusion_input_dim() const { return text.encoder().dim() + image.encoder().dim(); }

    [[nodiscard]] nn::RowVector text_repr(const std::string& text) const;
    [[nodiscard]] nn::RowVector image_repr(const nn::Matrix& stem) const;
    [[nodiscard]] ClassDistribution predict_from_reprs(const nn::RowVector& text_repr, const nn::RowVector& image_repr) const;
    [[nodiscard]] ClassDistribution predict(const std::string& preprocessed_text, const nn::Matrix& stem) const;

    nn::ParameterList unimodal_parameters();
    nn::ParameterList fusion_parameters();

    void save(const std::filesystem::path& dir);
    static ClassifierBundle load(const std::filesystem::path& dir);
};

nn::RowVector fuse_representations(const nn::RowVector& text_repr, const nn::RowVector& image_repr);

/// Closed-form parameter count of a dense stack with the given widths.
std::size_t dense_parameter_count(const std::vector<int>& widths);

TextClassifier train_text_classifier(const std::vector<PreparedExample>& train, const std::vector<PreparedExample>& val,
                                     const Vocabulary& vocab, const TextEncoderConfig& encoder, int num_classes,
                                     const TrainConfig& config, TrainingHistory* history = nullptr);

struct ImageTrainConfig : TrainConfig {
    bool freeze_backbone = true;
    ImageTrainConfig() { patience = 10; }
};

ImageClassifier train_image_classifier(const std::vector<PreparedExample>& train, const std::vector<PreparedExample>& val,
                                       const ImageEncoderConfig& encoder, int num_classes, const ImageTrainConfig& config,
                                       TrainingHistory* history = nullptr);

/// Trains the fusion head on frozen unimodal representations.
void train_fusion_classifier(ClassifierBundle& bundle, const std::vector<PreparedExample>& train,
                             const std::vector<PreparedExample>& val, const FusionConfig& fusion, const TrainConfig& config,
                             TrainingHistory* history = nullptr);

enum class Averaging { macro, micro, weighted };

struct ClassificationMetrics {
    double f1 = 0;
    double precision = 0;
    double recall = 0;
    double accuracy = 0;
};

ClassificationMetrics classification_metrics(std::span<const int> predicted, std::span<const int> truth, int num_classes,
                                             Averaging averaging = Averaging::macro);

/// Predicts every example of a (possibly diluted) test set and scores it.
ClassificationMetrics evaluate_classifier(const ClassifierBundle& bundle, const std::vector<PreparedExample>& testset,
                                          Averaging averaging = Averaging::macro);

}  // namespace xmd
