#pragma once

#include "xmd/corpus.hpp"
#include "xmd/image.hpp"

#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace xmd {

struct KeywordSet {
    std::string source_id;
    std::vector<std::string> text_keywords;
    std::vector<std::string> image_keywords;
};

struct DetectedObject {
    std::string label;
    Box box;  // pixels of the 224x224 preprocessed image
    double score = 1.0;
};

/// Object detector over preprocessed images. Implementations throw on failure;
/// callers attach the source id.
class ObjectDetector {
public:
    virtual ~ObjectDetector() = default;
    [[nodiscard]] virtual std::vector<DetectedObject> detect(const ImageTensor& image) const = 0;
};

/// Replays ground-truth annotations (synthetic data), mapped from raw pixel
/// coordinates through the resize and center crop and clipped to the frame.
class OracleDetector final : public ObjectDetector {
public:
    explicit OracleDetector(const std::vector<MultimodalExample>& examples);
    void add(const std::vector<MultimodalExample>& examples);
    [[nodiscard]] std::vector<DetectedObject> detect(const ImageTensor& image) const override;

private:
    struct Entry {
        int width = 0;
        int height = 0;
        std::vector<ObjectAnnotation> objects;
    };
    std::unordered_map<std::string, Entry> entries_;
};

/// Maps a raw-image box to preprocessed coordinates; returns false when nothing
/// of the box survives the crop.
bool map_box_to_tensor(const Box& raw, int raw_width, int raw_height, Box& out);

struct TextKeywordParams {
    int k = 5;
    int ngram = 1;
    double dedup_threshold = 0.9;
    int window = 1;
};

/// Unigram keyword extraction. Candidates are non-stopword, non-punctuation
/// tokens; each is scored as
///   tf * (1 + 1 / ln(3 + first_index)) / (1 + 0.5 * dispersion)
/// where dispersion is the mean of the left and right distinct-neighbour ratios
/// within `window`. Candidates whose similarity to a better-ranked keyword
/// exceeds dedup_threshold are dropped. Ties keep the earlier token.
std::vector<std::string> extract_text_keywords(const std::string& text, const TextKeywordParams& params = {});

/// 1 - levenshtein(a, b) / max(|a|, |b|); 1 for two empty strings.
double similarity_ratio(const std::string& a, const std::string& b);

/// Returns the keywords sorted by first occurrence in the text; keywords that do
/// not occur keep their relative order at the end.
std::vector<std::string> order_by_occurrence(const std::vector<std::string>& keywords, const std::string& text);

/// w*h >= min_area_frac * width*height.
bool passes_area_filter(const Box& box, int width, int height, double min_area_frac);

std::vector<std::string> extract_image_keywords(const ImageTensor& image, const ObjectDetector& detector,
                                                const std::set<std::string>& vocab, double min_area_frac = 0.1);

/// K_text followed by K_image, exact duplicates dropped keeping the first.
std::vector<std::string> merge_keywords(const std::vector<std::string>& text_keywords,
                                        const std::vector<std::string>& image_keywords);

inline constexpr std::size_t kMaxLabelVocabulary = 150;

std::set<std::string> load_label_vocabulary(const std::filesystem::path& path);
void save_label_vocabulary(const std::filesystem::path& path, const std::vector<std::string>& labels);

void write_keyword_dump(const std::filesystem::path& path, const std::vector<KeywordSet>& sets);
std::vector<KeywordSet> read_keyword_dump(const std::filesystem::path& path);

}  // namespace xmd
