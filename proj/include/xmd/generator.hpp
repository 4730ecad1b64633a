#pragma once

#include "xmd/classifiers.hpp"
#include "xmd/corpus.hpp"
#include "xmd/dilution.hpp"
#include "xmd/keywords.hpp"
#include "xmd/nn.hpp"
#include "xmd/vocabulary.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace xmd {

using TokenSeq = std::vector<std::string>;

/// Anything that scores the len+1 insertion slots of a sequence. Row s of the
/// result is a distribution over the vocabulary for the slot before token s
/// (row len is the slot after the last token). Reserved ids other than [NOI]
/// carry zero mass.
class SlotPredictor {
public:
    virtual ~SlotPredictor() = default;
    [[nodiscard]] virtual const Vocabulary& vocabulary() const = 0;
    [[nodiscard]] virtual nn::Matrix slot_probabilities(const TokenSeq& seq) const = 0;
};

struct InsertionLMConfig {
    int embed_dim = 32;
    int hidden = 128;
    int max_rounds = 8;
    int max_len = 64;
};

/// Slot-wise insertion model. Each slot sees the two tokens on either side
/// (padded with [BOS]/[EOS]), the mean embedding of the whole sequence and a
/// few position scalars; a one-hidden-layer network maps that to logits over
/// the non-reserved vocabulary plus [NOI].
class InsertionLM final : public SlotPredictor {
public:
    struct Cache {
        std::vector<std::vector<int>> seqs;
        std::vector<std::pair<int, int>> slots;  // (sequence, slot) per row
        nn::Matrix features;
        nn::Matrix hidden_pre;
        nn::Matrix hidden;
    };

    InsertionLM() = default;
    InsertionLM(Vocabulary vocab, const InsertionLMConfig& config, std::uint64_t seed);

    [[nodiscard]] const Vocabulary& vocabulary() const override { return vocab_; }
    [[nodiscard]] const InsertionLMConfig& config() const { return config_; }
    [[nodiscard]] nn::Matrix slot_probabilities(const TokenSeq& seq) const override;

    /// Masked logits for every slot of every sequence, stacked in order.
    [[nodiscard]] nn::Matrix slot_logits(const std::vector<std::vector<int>>& seqs) const;
    nn::Matrix slot_logits(const std::vector<std::vector<int>>& seqs, Cache& cache) const;
    void backward(const Cache& cache, const nn::Matrix& grad_logits);

    [[nodiscard]] std::vector<int> encode(const TokenSeq& seq) const { return vocab_.encode(seq); }
    [[nodiscard]] bool is_output(int id) const { return id == Vocabulary::kNoInsert || !Vocabulary::is_reserved(id); }

    nn::ParameterList parameters();
    [[nodiscard]] std::uint64_t parameter_hash();

    void save(const std::filesystem::path& dir);
    static InsertionLM load(const std::filesystem::path& dir);

private:
    [[nodiscard]] int feature_dim() const { return 5 * config_.embed_dim + 3; }

    Vocabulary vocab_;
    InsertionLMConfig config_;
    nn::Parameter embedding_;
    nn::Linear hidden_;
    nn::Linear output_;
};

struct Decode {
    enum class Kind { greedy, sample };
    Kind kind = Kind::greedy;
    std::uint64_t seed = 0;

    static Decode greedy() { return {}; }
    static Decode sample(std::uint64_t seed) { return {Kind::sample, seed}; }
};

struct ExpandResult {
    TokenSeq seq;
    bool all_noi = false;
    bool truncated = false;
};

/// One insertion round. `rng` is used only for sampled decoding.
ExpandResult expand_once(const SlotPredictor& lm, const TokenSeq& seq, Decode decode, int max_len, std::mt19937_64* rng = nullptr);

struct GenerationTrace {
    std::vector<TokenSeq> rounds;  // rounds[0] = keywords
    int expansions = 0;            // number of expand_once calls
    bool terminated = false;       // an all-[NOI] round ended generation
    bool truncated = false;        // stopped by max_rounds or max_len

    [[nodiscard]] const TokenSeq& final_sequence() const { return rounds.back(); }
    /// Sequences whose slots were scored, i.e. rounds[0 .. expansions-1].
    [[nodiscard]] std::vector<TokenSeq> expanded_sequences() const;
};

GenerationTrace generate_from_keywords(const SlotPredictor& lm, const TokenSeq& keywords, Decode decode, int max_rounds,
                                       int max_len);

/// One step of the insertion curriculum: which token each slot of `input`
/// should receive (vocabulary id, or [NOI]).
struct CurriculumStep {
    TokenSeq input;
    std::vector<int> targets;  // input.size() + 1 entries
};

/// Progressive deletion from the full sentence down to its keywords. Each
/// round removes a maximal set of non-adjacent non-keyword tokens, stopwords
/// and punctuation first, then left to right. Steps are returned from the
/// keywords upward and end with an all-[NOI] step on the full sentence.
std::vector<CurriculumStep> build_curriculum(const TokenSeq& tokens, const TokenSeq& keywords, const Vocabulary& vocab);

/// Mean per-slot cross-entropy over a batch of steps; accumulates gradients
/// into the model when `grad` is set.
double generation_loss(InsertionLM& lm, const std::vector<const CurriculumStep*>& steps, bool grad, double scale = 1.0);

struct Stage1Config {
    int epochs = 5;
    double lr = 1e-3;
    int batch_size = 16;  // curriculum steps per update
    std::uint64_t seed = 0;
    TextKeywordParams keywords;
};

struct Stage1Result {
    std::vector<double> epoch_loss;
    int skipped = 0;  // texts without keywords
};

/// Keywords used to rebuild a text: its extracted K_text in text order.
TokenSeq reconstruction_keywords(const std::string& preprocessed_text, const TextKeywordParams& params);

Stage1Result stage1_finetune(InsertionLM& lm, const std::vector<std::string>& train_texts, const Stage1Config& config);

enum class AdvObjective { paper_bce, maximize_incorrect };

AdvObjective parse_adv_objective(const std::string& name);
std::string to_string(AdvObjective objective);

/// y = [argmax != true], yhat = mass on incorrect classes, clamped to
/// [1e-12, 1 - 1e-12]. paper_bce: -(y log yhat + (1-y) log(1-yhat));
/// maximize_incorrect: -log yhat. Writes dL/dprobs when requested.
double adversarial_loss(const ClassDistribution& dist, int true_label, AdvObjective objective = AdvObjective::paper_bce,
                        std::vector<double>* grad_probs = nullptr);

double combined_loss(double l_gen, double l_adv, double lambda);

/// Soft path from slot logits to the frozen classifier. The text side of the
/// classifier sees the mean embedding of
///   fixed tokens + sum over slots of sum_{v != NOI} p_slot(v) * E[v]
/// divided by n_fixed + sum over slots of (1 - p_slot(NOI)); with one-hot slot
/// distributions this is exactly the bag of the discrete diluted text.
class AdversarialRelaxation {
public:
    AdversarialRelaxation(const ClassifierBundle& bundle, const Vocabulary& generator_vocab, AdvObjective objective);

    struct Input {
        std::vector<int> fixed_ids;  // classifier vocabulary ids of original text + keywords
        nn::RowVector image_repr;
        int label = 0;
    };

    [[nodiscard]] Input prepare(const std::string& original_text, const TokenSeq& keywords, const nn::Matrix& stem, int label) const;

    /// L_adv for the given masked slot logits; writes dL/dlogits when `grad` is set.
    double loss(const nn::Matrix& slot_logits, const Input& input, nn::Matrix* grad) const;

private:
    mutable ClassifierBundle bundle_;  // backward passes need non-const access; parameters are never updated
    nn::Matrix token_embeddings_;      // generator id -> classifier embedding row, zero for reserved ids
    AdvObjective objective_;
};

struct Stage2Config {
    double lambda = 0.01;
    int epochs = 1;
    double lr = 1e-3;
    AdvObjective objective = AdvObjective::paper_bce;
    std::uint64_t seed = 0;
};

struct Stage2Result {
    std::vector<double> gen_loss;
    std::vector<double> adv_loss;  // empty when lambda == 0
    std::vector<double> total_loss;
};

/// Multi-task fine-tuning on L_gen + lambda * L_adv. L_gen uses the K_text
/// reconstruction curriculum; L_adv uses the greedy generation from the merged
/// keywords, relaxed as above. The bundle is never modified.
Stage2Result stage2_adversarial_finetune(InsertionLM& lm, const ClassifierBundle& bundle, const std::vector<PreparedExample>& train,
                                         const std::vector<KeywordSet>& keywords, const Stage2Config& config);

enum class KeywordSource { merged, image, text };

/// Ordered generation keywords: K_text in text order, then K_image, deduplicated.
TokenSeq generation_keywords(const KeywordSet& kw, const std::string& preprocessed_text, KeywordSource source);

DilutionRecord dilute(const SlotPredictor& lm, const std::string& source_id, const std::string& preprocessed_text, const KeywordSet& kw,
                      Decode decode, int max_rounds, int max_len, KeywordSource source = KeywordSource::merged,
                      const std::string& method = "xmd");

/// Mean discrete adversarial loss of greedy dilutions over a set of examples.
double mean_adversarial_loss(const SlotPredictor& lm, const ClassifierBundle& bundle, const std::vector<PreparedExample>& examples,
                             const std::vector<KeywordSet>& keywords, AdvObjective objective, int max_rounds, int max_len);

}  // namespace xmd
