#include "xmd/baselines.hpp"

#include "xmd/common.hpp"
#include "xmd/text.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace xmd {

namespace {

struct MethodName {
    BaselineMethod method;
    const char* id;
};

constexpr MethodName kMethodNames[] = {
    {BaselineMethod::random_url, "random_url"},
    {BaselineMethod::image_kw, "image_kw"},
    {BaselineMethod::text_kw, "text_kw"},
    {BaselineMethod::text_image_kw, "text_image_kw"},
    {BaselineMethod::similar_image_desc, "similar_image_desc"},
    {BaselineMethod::lm_continuation, "lm_continuation"},
    {BaselineMethod::lm_continuation_ft, "lm_continuation_ft"},
    {BaselineMethod::caption_append, "caption_append"},
};

constexpr const char* kBos = "<s>";
constexpr const char* kEos = "</s>";

std::vector<std::string> padded(const std::string& sentence) {
    std::vector<std::string> toks{kBos, kBos};
    for (auto& t : tokenize(sentence)) toks.push_back(std::move(t));
    toks.emplace_back(kEos);
    return toks;
}

}  // namespace

std::string method_id(BaselineMethod method) {
    for (const auto& m : kMethodNames)
        if (m.method == method) return m.id;
    throw InvalidArgument("unknown baseline method");
}

BaselineMethod parse_baseline_method(const std::string& id) {
    for (const auto& m : kMethodNames)
        if (id == m.id) return m.method;
    throw InvalidArgument("unknown baseline method '" + id + "'");
}

const std::vector<BaselineMethod>& all_baseline_methods() {
    static const std::vector<BaselineMethod> methods = [] {
        std::vector<BaselineMethod> out;
        for (const auto& m : kMethodNames) out.push_back(m.method);
        return out;
    }();
    return methods;
}

DilutionRecord random_url(const std::string& source_id, const std::string& preprocessed_text, std::uint64_t seed) {
    static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    std::mt19937_64 rng(mix_seed(seed, source_id));
    std::uniform_int_distribution<std::size_t> pick(0, kAlphabet.size() - 1);
    std::string url = "https://t.co/";
    for (int i = 0; i < 6; ++i) url += kAlphabet[pick(rng)];
    return make_record(source_id, "random_url", preprocessed_text, url);
}

DilutionRecord keyword_append(const std::string& source_id, const std::string& preprocessed_text, const KeywordSet& kw, KeywordMode mode) {
    std::vector<std::string> words;
    std::string method;
    switch (mode) {
        case KeywordMode::image:
            words = kw.image_keywords;
            method = "image_kw";
            break;
        case KeywordMode::text:
            words = kw.text_keywords;
            method = "text_kw";
            break;
        case KeywordMode::both:
            words = merge_keywords(kw.text_keywords, kw.image_keywords);
            method = "text_image_kw";
            break;
    }
    auto rec = make_record(source_id, method, preprocessed_text, join(words));
    rec.keywords_used = words;
    if (words.empty()) rec.flags.emplace_back("empty_keywords");
    return rec;
}

std::vector<DilutionRecord> similar_image_descriptions(const std::vector<std::string>& ids, const std::vector<std::string>& preprocessed_texts,
                                                       const nn::Matrix& embeddings) {
    const auto n = ids.size();
    if (preprocessed_texts.size() != n || static_cast<std::size_t>(embeddings.rows()) != n)
        throw InvalidArgument("similar_image_descriptions: ids, texts and embeddings must align");
    if (n < 2) throw InvalidArgument("similar_image_descriptions: need at least two examples");

    nn::Matrix unit = embeddings;
    for (Eigen::Index i = 0; i < unit.rows(); ++i) {
        const double norm = unit.row(i).norm();
        if (norm > 0) unit.row(i) /= norm;
    }
    const nn::Matrix sims = unit * unit.transpose();

    std::vector<DilutionRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (best == n) {
                best = j;
                continue;
            }
            const double s = sims(i, j), b = sims(i, best);
            if (s > b || (s == b && ids[j] < ids[best])) best = j;
        }
        auto rec = make_record(ids[i], "similar_image_desc", preprocessed_texts[i], preprocessed_texts[best]);
        rec.score = sims(i, best);
        out.push_back(std::move(rec));
    }
    return out;
}

NgramLM::NgramLM(const std::vector<std::string>& corpus, Weights weights) : weights_(weights) {
    for (const auto& sentence : corpus) {
        const auto toks = padded(sentence);
        for (std::size_t i = 2; i < toks.size(); ++i) {
            unigram_[toks[i]] += 1;
            for (Counts* c : {&bigram_[toks[i - 1]], &trigram_[{toks[i - 2], toks[i - 1]}]}) {
                c->next[toks[i]] += 1;
                c->total += 1;
            }
            total_ += 1;
        }
    }
}

double NgramLM::probability(const std::string& w2, const std::string& w1, const std::string& word) const {
    // Add-one unigram so unseen words keep some mass.
    const double v = static_cast<double>(unigram_.size()) + 1;
    const auto uit = unigram_.find(word);
    const double p1 = ((uit == unigram_.end() ? 0.0 : uit->second) + 1) / (total_ + v);

    auto conditional = [&](const Counts* row) -> std::pair<double, bool> {
        if (!row) return {0.0, false};
        const auto it = row->next.find(word);
        return {it == row->next.end() ? 0.0 : it->second / row->total, true};
    };
    const auto bit = bigram_.find(w1);
    const auto [p2, has2] = conditional(bit == bigram_.end() ? nullptr : &bit->second);
    const auto tit = trigram_.find({w2, w1});
    const auto [p3, has3] = conditional(tit == trigram_.end() ? nullptr : &tit->second);

    // Unseen histories hand their weight down to the next order.
    double w3 = has3 ? weights_.trigram : 0.0;
    double wb = weights_.bigram + (has3 ? 0.0 : weights_.trigram);
    double wu = weights_.unigram;
    if (!has2) {
        wu += wb;
        wb = 0;
    }
    return w3 * p3 + wb * p2 + wu * p1;
}

double NgramLM::perplexity(const std::vector<std::string>& texts) const {
    double log_sum = 0;
    std::size_t count = 0;
    for (const auto& text : texts) {
        const auto toks = padded(text);
        for (std::size_t i = 2; i < toks.size(); ++i) {
            log_sum += std::log(probability(toks[i - 2], toks[i - 1], toks[i]));
            ++count;
        }
    }
    if (count == 0) throw InvalidArgument("perplexity: no tokens");
    return std::exp(-log_sum / static_cast<double>(count));
}

std::vector<std::string> NgramLM::continue_text(const std::string& prompt, int max_new_words, std::uint64_t seed) const {
    if (unigram_.empty()) throw InvalidArgument("NgramLM: model is empty");
    auto ctx = tokenize(prompt);
    std::string w2 = ctx.size() >= 2 ? ctx[ctx.size() - 2] : kBos;
    std::string w1 = ctx.empty() ? kBos : ctx.back();
    // A finished prompt starts a fresh sentence.
    if (!ctx.empty() && (w1 == "." || w1 == "!" || w1 == "?")) {
        w2 = kBos;
        w1 = kBos;
    }

    std::mt19937_64 rng(seed);
    std::vector<std::string> out;
    std::vector<std::string> candidates;
    std::vector<double> weights;
    for (const auto& [w, _] : unigram_) candidates.push_back(w);
    while (static_cast<int>(out.size()) < max_new_words) {
        weights.clear();
        for (const auto& w : candidates) weights.push_back(probability(w2, w1, w));
        std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
        const auto& next = candidates[pick(rng)];
        if (next == kEos) {
            if (!out.empty()) break;
            w2 = kBos;
            w1 = kBos;
            continue;
        }
        out.push_back(next);
        w2 = w1;
        w1 = next;
    }
    return out;
}

const std::vector<std::string>& generic_corpus() {
    static const std::vector<std::string> corpus = {
        "I had coffee with my sister this morning before work.",
        "The new cafe on the corner makes great pastries.",
        "We are going to the beach this weekend if the weather is nice.",
        "My phone battery died in the middle of the meeting.",
        "Just finished reading a really good book about travel.",
        "The kids are playing in the park after school.",
        "Can not wait for the concert next week!",
        "Our team won the game last night.",
        "I love cooking pasta on a quiet evening at home.",
        "The train was late again today.",
        "She bought a new bike for her commute.",
        "Happy birthday to my best friend!",
        "We watched a movie and ate popcorn on the couch.",
        "The museum has a new exhibit about ancient art.",
        "I need to clean my room before my parents visit.",
        "This song has been stuck in my head all day.",
        "He is learning to play the guitar.",
        "The garden looks beautiful in the spring.",
        "Lunch with the whole office was fun today.",
        "My cat sleeps on the keyboard every afternoon.",
        "The store was out of milk so I got juice instead.",
        "We are planning a trip to visit our grandparents.",
        "I finally fixed the leaking kitchen tap.",
        "The sunset over the hills was amazing tonight.",
        "Our neighbours had a party until midnight.",
        "I am trying a new recipe for bread this weekend.",
        "The library is my favourite place to study.",
        "Traffic downtown was terrible this morning.",
        "We adopted a puppy from the local shelter.",
        "The new season of the show starts on friday.",
        "I went for a long walk along the river path.",
        "She painted the living room a light blue.",
        "Does anyone know a good place to get pizza?",
        "My brother just started his first job.",
        "The market has fresh fruit every saturday.",
        "I forgot my umbrella at the office again.",
        "We played board games with friends all evening.",
        "The coffee machine at work is broken.",
        "He ran his first marathon last sunday.",
        "Thanks to everyone who came to the show!",
        "The weather has been warm and sunny all week.",
        "I am so tired after a long day of meetings.",
        "Our class went on a field trip to the zoo.",
        "The bakery smells wonderful in the morning.",
        "I just signed up for a yoga class.",
        "My favourite team plays tonight at home.",
        "We had a picnic in the garden with the family.",
        "The new phone has a really good camera.",
        "I spent the afternoon reading in the sun.",
        "Dinner was delicious, thank you for cooking!",
        "The city lights look great from the rooftop.",
        "My grandmother told stories about her childhood.",
        "Work was busy but the team did a great job.",
        "I am looking forward to the holidays.",
        "The bus driver was very friendly today.",
        "We painted the fence over the weekend.",
        "This is the best ice cream in town.",
        "My friend is moving to a new apartment next month.",
        "I watched the game with my dad.",
        "The festival in the square was crowded and fun.",
    };
    return corpus;
}

DilutionRecord lm_continuation(const std::string& source_id, const std::string& preprocessed_text, const ContinuationModel& lm,
                               bool finetuned, std::uint64_t seed, int max_new_words) {
    const auto words = lm.continue_text(preprocessed_text, max_new_words, mix_seed(seed, source_id));
    return make_record(source_id, finetuned ? "lm_continuation_ft" : "lm_continuation", preprocessed_text, detokenize(words));
}

TemplateCaptioner::TemplateCaptioner(std::shared_ptr<const ObjectDetector> detector, int max_objects)
    : detector_(std::move(detector)), max_objects_(max_objects) {
    if (!detector_) throw InvalidArgument("TemplateCaptioner: null detector");
    if (max_objects_ < 1) throw InvalidArgument("TemplateCaptioner: max_objects must be positive");
}

std::string TemplateCaptioner::render(const std::vector<std::string>& labels) {
    if (labels.empty()) return {};
    std::string out = "a photo of " + labels.front();
    for (std::size_t i = 1; i < labels.size(); ++i) out += (i + 1 == labels.size() ? " and " : ", ") + labels[i];
    return out;
}

std::string TemplateCaptioner::caption(const ImageTensor& image) const {
    auto objects = detector_->detect(image);
    std::stable_sort(objects.begin(), objects.end(), [](const DetectedObject& a, const DetectedObject& b) {
        return a.box.area() > b.box.area();
    });
    std::vector<std::string> labels;
    for (const auto& o : objects) {
        if (static_cast<int>(labels.size()) >= max_objects_) break;
        if (std::find(labels.begin(), labels.end(), o.label) == labels.end()) labels.push_back(o.label);
    }
    return render(labels);
}

DilutionRecord caption_append(const std::string& source_id, const std::string& preprocessed_text, const std::string& caption) {
    if (caption.empty()) {
        auto rec = make_record(source_id, "caption_append", preprocessed_text, "a photo");
        rec.flags.emplace_back("no_objects");
        return rec;
    }
    return make_record(source_id, "caption_append", preprocessed_text, caption);
}

}  // namespace xmd
