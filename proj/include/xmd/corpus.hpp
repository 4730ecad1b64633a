#pragma once

#include "xmd/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace xmd {

/// Axis-aligned box in pixel coordinates of whatever image it refers to.
struct Box {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    [[nodiscard]] double area() const { return w * h; }
};

/// Ground-truth object annotation carried by synthetic examples (raw image coordinates).
struct ObjectAnnotation {
    std::string label;
    Box box;
};

struct MultimodalExample {
    std::string id;
    RawImage image;
    std::string image_path;  // empty for in-memory examples
    std::string text;
    int label = 0;
    std::vector<ObjectAnnotation> objects;
};

struct SplitRatios {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

struct DatasetSplit {
    std::vector<MultimodalExample> train;
    std::vector<MultimodalExample> validation;
    std::vector<MultimodalExample> test;
    std::vector<std::string> label_names;
    SplitRatios ratios;

    [[nodiscard]] int num_classes() const { return static_cast<int>(label_names.size()); }
    /// Checks id uniqueness across splits and label ranges; throws InvalidArgument.
    void validate() const;
};

enum class DatasetFormat { jsonl };

/// Reads a JSON Lines dataset. An optional first record {"label_names": [...]}
/// declares the label vocabulary; otherwise it is collected from the records in
/// order of first appearance. Image paths resolve relative to the file.
DatasetSplit load_dataset(const std::filesystem::path& path, DatasetFormat format = DatasetFormat::jsonl);

/// Writes dataset.jsonl plus images/<id>.png under `dir`.
void save_dataset(const DatasetSplit& data, const std::filesystem::path& dir);

/// Deterministic shuffle then floor allocation of validation/test; the remainder goes to train.
DatasetSplit split_dataset(std::vector<MultimodalExample> examples, const SplitRatios& ratios, std::uint64_t seed);

struct SynthSpec {
    int classes = 4;
    int n = 400;
    int vocab_per_class = 8;
    int image_motifs_per_class = 4;
    int raw_width = 160;
    int raw_height = 120;
    double text_noise = 0.1;   // chance a class word is swapped for another class's word
    double image_noise = 0.1;  // chance a secondary motif comes from another class
};

/// Everything synth_dataset decided about the class structure, needed by oracle backends.
struct SynthLexicon {
    std::vector<std::vector<std::string>> class_words;
    std::vector<std::vector<std::string>> motif_labels;
    std::vector<std::array<std::uint8_t, 3>> motif_colors;  // parallel to flattened motif labels
    [[nodiscard]] std::vector<std::string> all_motif_labels() const;
};

SynthLexicon synth_lexicon(const SynthSpec& spec, std::uint64_t seed);

/// Desk-scale multimodal task: class-indicative words in text and class-indicative
/// colored rectangles (with recorded boxes) in images, split 80:10:10.
DatasetSplit synth_dataset(const SynthSpec& spec, std::uint64_t seed);

/// Content hash over ids, texts, labels and pixels of every split.
std::uint64_t dataset_hash(const DatasetSplit& data);

}  // namespace xmd
