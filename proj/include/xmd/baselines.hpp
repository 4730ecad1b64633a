#pragma once

#include "xmd/dilution.hpp"
#include "xmd/keywords.hpp"
#include "xmd/nn.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace xmd {

enum class BaselineMethod {
    random_url,
    image_kw,
    text_kw,
    text_image_kw,
    similar_image_desc,
    lm_continuation,
    lm_continuation_ft,
    caption_append,
};

std::string method_id(BaselineMethod method);
BaselineMethod parse_baseline_method(const std::string& id);
const std::vector<BaselineMethod>& all_baseline_methods();

/// "https://t.co/" followed by six characters from [a-zA-Z0-9], drawn from a
/// stream seeded by (seed, source id).
DilutionRecord random_url(const std::string& source_id, const std::string& preprocessed_text, std::uint64_t seed);

enum class KeywordMode { image, text, both };

DilutionRecord keyword_append(const std::string& source_id, const std::string& preprocessed_text, const KeywordSet& kw, KeywordMode mode);

/// Appends the text of the test example whose image embedding is most similar
/// (cosine) to this one, excluding itself. Ties go to the smallest id. Rows of
/// `embeddings` align with the ids and texts.
std::vector<DilutionRecord> similar_image_descriptions(const std::vector<std::string>& ids, const std::vector<std::string>& preprocessed_texts,
                                                       const nn::Matrix& embeddings);

/// Autoregressive continuation backend.
class ContinuationModel {
public:
    virtual ~ContinuationModel() = default;
    /// Up to max_new_words words continuing `prompt`.
    [[nodiscard]] virtual std::vector<std::string> continue_text(const std::string& prompt, int max_new_words, std::uint64_t seed) const = 0;
};

struct NgramWeights {
    double trigram = 0.6;
    double bigram = 0.3;
    double unigram = 0.1;
};

/// Interpolated trigram model over tokenize()d sentences.
class NgramLM final : public ContinuationModel {
public:
    using Weights = NgramWeights;

    NgramLM() = default;
    explicit NgramLM(const std::vector<std::string>& corpus, Weights weights = {});

    [[nodiscard]] std::vector<std::string> continue_text(const std::string& prompt, int max_new_words, std::uint64_t seed) const override;
    [[nodiscard]] double probability(const std::string& w2, const std::string& w1, const std::string& word) const;
    /// Per-token perplexity, end-of-sentence included.
    [[nodiscard]] double perplexity(const std::vector<std::string>& texts) const;
    [[nodiscard]] std::size_t vocabulary_size() const { return unigram_.size(); }

private:
    struct Counts {
        double total = 0;
        std::map<std::string, double> next;
    };

    Weights weights_;
    std::map<std::string, double> unigram_;
    std::map<std::string, Counts> bigram_;
    std::map<std::pair<std::string, std::string>, Counts> trigram_;
    double total_ = 0;
};

/// Small built-in corpus of everyday English used for the non-fine-tuned LM.
const std::vector<std::string>& generic_corpus();

inline constexpr int kDefaultMaxNewWords = 23;

DilutionRecord lm_continuation(const std::string& source_id, const std::string& preprocessed_text, const ContinuationModel& lm,
                               bool finetuned, std::uint64_t seed, int max_new_words = kDefaultMaxNewWords);

class Captioner {
public:
    virtual ~Captioner() = default;
    /// Empty string when the captioner has nothing to say.
    [[nodiscard]] virtual std::string caption(const ImageTensor& image) const = 0;
};

/// "a photo of <labels>" over detected objects, largest first, at most
/// `max_objects` distinct labels.
class TemplateCaptioner final : public Captioner {
public:
    explicit TemplateCaptioner(std::shared_ptr<const ObjectDetector> detector, int max_objects = 3);
    [[nodiscard]] std::string caption(const ImageTensor& image) const override;

    static std::string render(const std::vector<std::string>& labels);

private:
    std::shared_ptr<const ObjectDetector> detector_;
    int max_objects_;
};

/// Falls back to "a photo" (flagged "no_objects") when the caption is empty.
DilutionRecord caption_append(const std::string& source_id, const std::string& preprocessed_text, const std::string& caption);

}  // namespace xmd
