#pragma once

#include "xmd/corpus.hpp"
#include "xmd/image.hpp"
#include "xmd/nn.hpp"
#include "xmd/vocabulary.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace xmd {

/// Anything that maps text to a fixed-width vector. External pretrained
/// backends plug in here.
class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    [[nodiscard]] virtual int dim() const = 0;
    [[nodiscard]] virtual nn::RowVector encode(const std::string& text) const = 0;
};

class ImageEmbedder {
public:
    virtual ~ImageEmbedder() = default;
    [[nodiscard]] virtual int dim() const = 0;
    [[nodiscard]] virtual nn::RowVector encode(const ImageTensor& image) const = 0;
};

/// Fixed 8x8 average pooling of a 224x224 tensor: (28*28) x 3, row-major HWC.
inline constexpr int kStemSide = 28;
nn::Matrix image_stem(const ImageTensor& image);

struct TextEncoderConfig {
    int embed_dim = 64;
    int hidden = 256;
    int output_dim = 512;
};

/// Token-embedding average followed by a two-layer feed-forward network. The
/// output is the penultimate representation used for fusion and Sim_text.
class TextEncoder final : public TextEmbedder {
public:
    struct Cache {
        std::vector<std::vector<int>> bags;
        nn::MlpCache ffn;
    };

    TextEncoder() = default;
    TextEncoder(Vocabulary vocab, const TextEncoderConfig& config, std::uint64_t seed);

    [[nodiscard]] int dim() const override { return config_.output_dim; }
    [[nodiscard]] nn::RowVector encode(const std::string& text) const override;
    [[nodiscard]] std::vector<int> token_ids(const std::string& text) const;
    [[nodiscard]] nn::Matrix encode_bags(const std::vector<std::vector<int>>& bags) const;

    nn::Matrix forward(const std::vector<std::vector<int>>& bags, Cache& cache) const;
    void backward(const Cache& cache, const nn::Matrix& grad_out);

    /// Relaxation entry point: representation from an already averaged embedding.
    nn::Matrix forward_from_mean(const nn::Matrix& mean_embedding, nn::MlpCache& cache) const;
    /// dL/d(mean embedding); parameters untouched.
    nn::Matrix backward_to_mean(const nn::MlpCache& cache, const nn::Matrix& grad_out);

    [[nodiscard]] const Vocabulary& vocabulary() const { return vocab_; }
    [[nodiscard]] const nn::Matrix& embedding_table() const { return embedding_.table.value; }
    [[nodiscard]] const TextEncoderConfig& config() const { return config_; }
    nn::ParameterList parameters();

private:
    Vocabulary vocab_;
    TextEncoderConfig config_;
    nn::EmbeddingBag embedding_;
    nn::Mlp ffn_;
};

struct ImageEncoderConfig {
    int conv_channels = 32;
    int hidden = 256;
    int output_dim = 512;
};

/// Stem pooling, a 3x3 conv backbone with global average and max pooling, then a
/// feed-forward head producing the penultimate representation.
class ImageEncoder final : public ImageEmbedder {
public:
    struct Cache {
        std::vector<nn::Matrix> cols;       // per-sample im2col of the stem
        std::vector<nn::Matrix> conv_pre;   // per-sample conv pre-activation
        nn::MlpCache head;
    };

    ImageEncoder() = default;
    ImageEncoder(const ImageEncoderConfig& config, std::uint64_t seed);

    [[nodiscard]] int dim() const override { return config_.output_dim; }
    [[nodiscard]] nn::RowVector encode(const ImageTensor& image) const override;
    [[nodiscard]] int backbone_dim() const;

    /// Backbone features for a batch of stems: B x backbone_dim.
    [[nodiscard]] nn::Matrix backbone(const std::vector<const nn::Matrix*>& stems) const;
    nn::Matrix backbone(const std::vector<const nn::Matrix*>& stems, Cache& cache) const;
    [[nodiscard]] nn::Matrix head(const nn::Matrix& features) const;
    nn::Matrix head(const nn::Matrix& features, Cache& cache) const;
    [[nodiscard]] nn::Matrix encode_stems(const std::vector<const nn::Matrix*>& stems) const;

    /// Returns dL/d(backbone features).
    nn::Matrix backward_head(const Cache& cache, const nn::Matrix& grad_out);
    void backward_backbone(const Cache& cache, const nn::Matrix& grad_features);

    [[nodiscard]] const ImageEncoderConfig& config() const { return config_; }
    nn::ParameterList backbone_parameters();
    nn::ParameterList head_parameters();
    nn::ParameterList parameters();

private:
    ImageEncoderConfig config_;
    nn::Conv3x3 conv_;
    nn::Mlp head_;
};

struct JointEmbedderConfig {
    int embed_dim = 64;
    int image_hidden = 128;
    int joint_dim = 64;
    double temperature = 0.1;
    double lr = 1e-3;
    int epochs = 30;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

/// Shared text/image space. Both sides are L2-normalized at the output.
class JointEmbedder {
public:
    JointEmbedder() = default;
    JointEmbedder(Vocabulary vocab, const JointEmbedderConfig& config);

    [[nodiscard]] int dim() const { return config_.joint_dim; }
    [[nodiscard]] nn::RowVector embed_text(const std::string& text) const;
    [[nodiscard]] nn::RowVector embed_image(const ImageTensor& image) const;
    [[nodiscard]] nn::RowVector embed_stem(const nn::Matrix& stem) const;
    /// True when the text has at least one known token, i.e. a non-degenerate embedding.
    [[nodiscard]] bool has_signal(const std::string& text) const;

    /// One contrastive step on matched pairs (row i of both sides); returns the loss.
    double train_step(const std::vector<std::vector<int>>& bags, const std::vector<const nn::Matrix*>& stems, nn::Adam& opt);

    [[nodiscard]] const Vocabulary& vocabulary() const { return vocab_; }
    [[nodiscard]] const JointEmbedderConfig& config() const { return config_; }
    nn::ParameterList parameters();

    void save(const std::filesystem::path& dir);
    static JointEmbedder load(const std::filesystem::path& dir);

private:
    nn::Matrix text_raw(const std::vector<std::vector<int>>& bags) const;

    Vocabulary vocab_;
    JointEmbedderConfig config_;
    nn::EmbeddingBag text_embedding_;
    nn::Linear text_proj_;
    nn::Mlp image_proj_;
};

/// Contrastive (symmetric InfoNCE) training on matched (image, text) pairs.
JointEmbedder train_joint_embedder(const std::vector<MultimodalExample>& train, const JointEmbedderConfig& config,
                                   const ChannelNorm& norm = {});

/// Mean cosine of matched pairs and of all mismatched pairs.
struct PairSeparation {
    double matched = 0;
    double mismatched = 0;
};
PairSeparation joint_pair_separation(const JointEmbedder& joint, const std::vector<MultimodalExample>& examples,
                                     const ChannelNorm& norm = {});

double cosine(const nn::RowVector& a, const nn::RowVector& b, bool* degenerate = nullptr);

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint directory: manifest.json (format version, kind, dims, vocab hash,
/// parameter hash) + params.bin (+ vocab.txt).
void save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const nn::ParameterList& params,
                     const nlohmann::json& dims, const Vocabulary* vocab = nullptr);
/// Reads the manifest, checks kind/version, loads parameters; returns the dims object.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir, const std::string& kind);
void load_checkpoint_parameters(const std::filesystem::path& dir, const nn::ParameterList& params);

}  // namespace xmd
