#include "xmd/metrics.hpp"

#include "xmd/common.hpp"
#include "xmd/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace xmd {

using nn::Matrix;
using nn::RowVector;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// --- relevance ------------------------------------------------------------------

double sim_text(const std::string& original, const std::string& dilution, const TextEmbedder& encoder, bool* degenerate) {
    if (tokenize(original).empty() || tokenize(dilution).empty()) {
        if (degenerate != nullptr) *degenerate = true;
        return 0.0;
    }
    return cosine(encoder.encode(original), encoder.encode(dilution), degenerate);
}

double sim_img(const std::string& dilution, const Matrix& stem, const JointEmbedder& joint, bool* degenerate) {
    if (!joint.has_signal(dilution)) {
        if (degenerate != nullptr) *degenerate = true;
        return 0.0;
    }
    return cosine(joint.embed_text(dilution), joint.embed_stem(stem), degenerate);
}

std::vector<CorrespondencePair> build_correspondence_pairs(const std::vector<PreparedExample>& examples, int neg_ratio,
                                                           std::uint64_t seed) {
    if (neg_ratio < 0) throw InvalidArgument("neg_ratio must be non-negative");
    std::vector<std::size_t> first_of_text;  // one index per distinct text
    {
        std::unordered_map<std::string, std::size_t> seen;
        for (std::size_t i = 0; i < examples.size(); ++i)
            if (seen.emplace(examples[i].text, i).second) first_of_text.push_back(i);
    }
    if (first_of_text.size() < 2) throw InvalidArgument("correspondence pairs need at least two distinct texts");

    std::mt19937_64 rng(mix_seed(seed, "correspondence-pairs"));
    std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
    std::vector<CorrespondencePair> pairs;
    pairs.reserve(examples.size() * static_cast<std::size_t>(neg_ratio + 1));
    for (std::size_t i = 0; i < examples.size(); ++i) {
        pairs.push_back({i, i, 1});
        for (int k = 0; k < neg_ratio; ++k) {
            std::size_t j = pick(rng);
            while (examples[j].text == examples[i].text) j = pick(rng);
            pairs.push_back({i, j, 0});
        }
    }
    return pairs;
}

double CorrespondenceModel::match_probability(const RowVector& text_repr, const RowVector& image_repr) const {
    const Matrix probs = nn::softmax_rows(net.forward(fuse_representations(text_repr, image_repr)));
    return probs(0, 1);
}

void CorrespondenceModel::save(const std::filesystem::path& dir) {
    save_checkpoint(dir, "correspondence", parameters(),
                    json{{"widths", net.widths()}, {"heldout_accuracy", heldout_accuracy},
                         {"heldout_positive_accuracy", heldout_positive_accuracy}});
}

CorrespondenceModel CorrespondenceModel::load(const std::filesystem::path& dir) {
    const json dims = read_checkpoint_manifest(dir, "correspondence");
    CorrespondenceModel model;
    std::mt19937_64 rng(0);
    model.net = nn::Mlp(dims.at("widths").get<std::vector<int>>(), false, rng, "correspondence");
    model.heldout_accuracy = dims.at("heldout_accuracy").get<double>();
    model.heldout_positive_accuracy = dims.at("heldout_positive_accuracy").get<double>();
    load_checkpoint_parameters(dir, model.parameters());
    return model;
}

CorrespondenceModel train_correspondence_model(const std::vector<PreparedExample>& train, const ClassifierBundle& bundle,
                                               const CorrespondenceConfig& config) {
    if (config.holdout_fraction < 0 || config.holdout_fraction >= 1) throw InvalidArgument("holdout_fraction must be in [0, 1)");
    const auto pairs = build_correspondence_pairs(train, config.neg_ratio, config.seed);

    // Hold out whole images so validation pairs never share an image with training.
    std::mt19937_64 rng(mix_seed(config.seed, "correspondence-holdout"));
    const auto order = nn::shuffled_indices(train.size(), rng);
    const auto n_hold = static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(train.size())));
    std::vector<bool> held(train.size(), false);
    for (std::size_t k = 0; k < n_hold; ++k) held[order[k]] = true;

    const int td = bundle.text.encoder().dim();
    const int id = bundle.image.encoder().dim();
    Matrix text_reprs(static_cast<Eigen::Index>(train.size()), td);
    Matrix image_reprs(static_cast<Eigen::Index>(train.size()), id);
    {
        std::vector<std::vector<int>> bags;
        std::vector<const Matrix*> stems;
        for (const auto& ex : train) {
            bags.push_back(bundle.text.encoder().token_ids(ex.text));
            stems.push_back(&ex.stem);
        }
        text_reprs = bundle.text.encoder().encode_bags(bags);
        image_reprs = bundle.image.encoder().encode_stems(stems);
    }
    auto assemble = [&](const std::vector<CorrespondencePair>& ps, Matrix& x, std::vector<int>& y) {
        x.resize(static_cast<Eigen::Index>(ps.size()), td + id);
        y.clear();
        for (std::size_t r = 0; r < ps.size(); ++r) {
            x.row(static_cast<Eigen::Index>(r)).head(td) = text_reprs.row(static_cast<Eigen::Index>(ps[r].text));
            x.row(static_cast<Eigen::Index>(r)).tail(id) = image_reprs.row(static_cast<Eigen::Index>(ps[r].image));
            y.push_back(ps[r].label);
        }
    };
    std::vector<CorrespondencePair> fit_pairs;
    std::vector<CorrespondencePair> val_pairs;
    for (const auto& p : pairs) (held[p.image] ? val_pairs : fit_pairs).push_back(p);
    Matrix train_x, val_x;
    std::vector<int> train_y, val_y;
    assemble(fit_pairs, train_x, train_y);
    assemble(val_pairs, val_x, val_y);

    CorrespondenceModel model;
    std::vector<int> widths{td + id};
    widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
    widths.push_back(2);
    std::mt19937_64 init(mix_seed(config.seed, "correspondence-init"));
    model.net = nn::Mlp(widths, false, init, "correspondence");

    const nn::ParameterList params = model.parameters();
    nn::Adam opt(params, config.lr);
    auto step = [&](std::span<const std::size_t> batch) {
        std::vector<int> labels;
        for (auto i : batch) labels.push_back(train_y[i]);
        opt.zero_grad();
        nn::MlpCache cache;
        const Matrix logits = model.net.forward(nn::gather_rows(train_x, batch), cache);
        Matrix grad;
        const double loss = nn::softmax_cross_entropy(logits, labels, &grad);
        model.net.backward(cache, grad, true);
        opt.step();
        return loss;
    };
    auto val_loss = [&] {
        if (val_y.empty()) return 0.0;
        return nn::softmax_cross_entropy(model.net.forward(val_x), val_y, nullptr);
    };
    fit_with_early_stopping(fit_pairs.size(), config, params, step, val_loss);

    if (!val_y.empty()) {
        const Matrix logits = model.net.forward(val_x);
        std::size_t correct = 0, positives = 0, positive_correct = 0;
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            const int pred = logits(r, 1) > logits(r, 0) ? 1 : 0;
            correct += pred == val_y[static_cast<std::size_t>(r)];
            if (val_y[static_cast<std::size_t>(r)] == 1) {
                ++positives;
                positive_correct += pred == 1;
            }
        }
        model.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(val_y.size());
        model.heldout_positive_accuracy = positives == 0 ? 0.0 : static_cast<double>(positive_correct) / static_cast<double>(positives);
    }
    return model;
}

namespace {

std::unordered_map<std::string, const PreparedExample*> index_examples(const std::vector<PreparedExample>& examples) {
    std::unordered_map<std::string, const PreparedExample*> out;
    for (const auto& ex : examples) out.emplace(ex.id, &ex);
    return out;
}

const PreparedExample& find_example(const std::unordered_map<std::string, const PreparedExample*>& index, const std::string& id) {
    const auto it = index.find(id);
    if (it == index.end()) throw InvalidArgument("no test example with id '" + id + "'");
    return *it->second;
}

}  // namespace

double sim_corr(const CorrespondenceModel& model, const std::vector<DilutionRecord>& records, const std::vector<PreparedExample>& examples,
                const ClassifierBundle& bundle) {
    if (records.empty()) throw InvalidArgument("sim_corr: no records");
    const auto index = index_examples(examples);
    double total = 0;
    for (const auto& r : records) {
        const PreparedExample& ex = find_example(index, r.source_id);
        total += model.match_probability(bundle.text_repr(r.final_text), bundle.image_repr(ex.stem));
    }
    return total / static_cast<double>(records.size());
}

// --- topic model --------------------------------------------------------------------

namespace {

std::vector<std::string> content_tokens(const std::string& text) {
    std::vector<std::string> out;
    for (auto& t : tokenize(text))
        if (!is_stopword(t) && !is_punctuation(t)) out.push_back(std::move(t));
    return out;
}

int sample_index(const std::vector<double>& weights, std::mt19937_64& rng) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    for (std::size_t k = 0; k < weights.size(); ++k) {
        u -= weights[k];
        if (u < 0) return static_cast<int>(k);
    }
    return static_cast<int>(weights.size()) - 1;
}

}  // namespace

TopicModel fit_topic_model(const std::vector<std::string>& train_texts, const TopicModelConfig& config) {
    if (config.n_topics < 1) throw InvalidArgument("n_topics must be positive");
    if (config.alpha <= 0 || config.beta <= 0) throw InvalidArgument("topic model priors must be positive");
    {
        std::set<std::string> distinct(train_texts.begin(), train_texts.end());
        if (distinct.size() < static_cast<std::size_t>(config.n_topics))
            throw InvalidArgument("topic model corpus too small: " + std::to_string(distinct.size()) + " distinct documents for " +
                                  std::to_string(config.n_topics) + " topics");
    }

    TopicModel tm;
    tm.config_ = config;
    std::vector<std::vector<int>> docs;
    for (const auto& text : train_texts) {
        std::vector<int> doc;
        for (const auto& t : content_tokens(text)) {
            const auto [it, _] = tm.word_ids_.emplace(t, static_cast<int>(tm.word_ids_.size()));
            doc.push_back(it->second);
        }
        docs.push_back(std::move(doc));
    }
    const int k_topics = config.n_topics;
    const int v = static_cast<int>(tm.word_ids_.size());
    if (v == 0) throw InvalidArgument("topic model corpus has no content words");

    std::mt19937_64 rng(mix_seed(config.seed, "lda"));
    std::uniform_int_distribution<int> any_topic(0, k_topics - 1);
    Eigen::MatrixXd ndk = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(docs.size()), k_topics);
    Eigen::MatrixXd nkw = Eigen::MatrixXd::Zero(k_topics, v);
    Eigen::VectorXd nk = Eigen::VectorXd::Zero(k_topics);
    auto& z = tm.assignments_;
    z.resize(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
        for (int w : docs[d]) {
            const int k = any_topic(rng);
            z[d].push_back(k);
            ndk(static_cast<Eigen::Index>(d), k) += 1;
            nkw(k, w) += 1;
            nk(k) += 1;
        }
    }
    const double vbeta = v * config.beta;
    std::vector<double> weights(static_cast<std::size_t>(k_topics));
    for (int it = 0; it < config.iterations; ++it) {
        for (std::size_t d = 0; d < docs.size(); ++d) {
            const auto di = static_cast<Eigen::Index>(d);
            for (std::size_t n = 0; n < docs[d].size(); ++n) {
                const int w = docs[d][n];
                int k = z[d][n];
                ndk(di, k) -= 1;
                nkw(k, w) -= 1;
                nk(k) -= 1;
                for (int t = 0; t < k_topics; ++t)
                    weights[static_cast<std::size_t>(t)] = (ndk(di, t) + config.alpha) * (nkw(t, w) + config.beta) / (nk(t) + vbeta);
                k = sample_index(weights, rng);
                z[d][n] = k;
                ndk(di, k) += 1;
                nkw(k, w) += 1;
                nk(k) += 1;
            }
        }
    }
    tm.topic_word_.resize(k_topics, v);
    for (int t = 0; t < k_topics; ++t)
        for (int w = 0; w < v; ++w) tm.topic_word_(t, w) = (nkw(t, w) + config.beta) / (nk(t) + vbeta);
    return tm;
}

std::vector<double> TopicModel::infer(const std::string& text) const {
    const int k_topics = config_.n_topics;
    std::vector<int> doc;
    for (const auto& t : content_tokens(text)) {
        const auto it = word_ids_.find(t);
        if (it != word_ids_.end()) doc.push_back(it->second);
    }
    if (doc.empty()) return std::vector<double>(static_cast<std::size_t>(k_topics), 1.0 / k_topics);

    std::mt19937_64 rng(mix_seed(config_.seed, text));
    std::uniform_int_distribution<int> any_topic(0, k_topics - 1);
    std::vector<double> counts(static_cast<std::size_t>(k_topics), 0.0);
    std::vector<int> z;
    for (std::size_t n = 0; n < doc.size(); ++n) {
        z.push_back(any_topic(rng));
        counts[static_cast<std::size_t>(z.back())] += 1;
    }
    // Average theta over the second half of the chain.
    std::vector<double> theta(static_cast<std::size_t>(k_topics), 0.0);
    std::vector<double> weights(static_cast<std::size_t>(k_topics));
    const int iters = std::max(config_.inference_iterations, 2);
    int samples = 0;
    for (int it = 0; it < iters; ++it) {
        for (std::size_t n = 0; n < doc.size(); ++n) {
            counts[static_cast<std::size_t>(z[n])] -= 1;
            for (int t = 0; t < k_topics; ++t)
                weights[static_cast<std::size_t>(t)] = (counts[static_cast<std::size_t>(t)] + config_.alpha) * topic_word_(t, doc[n]);
            z[n] = sample_index(weights, rng);
            counts[static_cast<std::size_t>(z[n])] += 1;
        }
        if (it >= iters / 2) {
            const double denom = static_cast<double>(doc.size()) + k_topics * config_.alpha;
            for (int t = 0; t < k_topics; ++t) theta[static_cast<std::size_t>(t)] += (counts[static_cast<std::size_t>(t)] + config_.alpha) / denom;
            ++samples;
        }
    }
    for (auto& p : theta) p /= samples;
    return theta;
}

void TopicModel::save(const std::filesystem::path& path) const {
    ordered_json j;
    j["kind"] = "topic-model";
    j["n_topics"] = config_.n_topics;
    j["alpha"] = config_.alpha;
    j["beta"] = config_.beta;
    j["iterations"] = config_.iterations;
    j["inference_iterations"] = config_.inference_iterations;
    j["seed"] = config_.seed;
    std::vector<std::string> words(word_ids_.size());
    for (const auto& [w, i] : word_ids_) words[static_cast<std::size_t>(i)] = w;
    j["words"] = words;
    std::vector<std::vector<double>> rows;
    for (Eigen::Index t = 0; t < topic_word_.rows(); ++t) rows.emplace_back(topic_word_.row(t).begin(), topic_word_.row(t).end());
    j["topic_word"] = rows;
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    out << j.dump() << '\n';
}

TopicModel TopicModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read " + path.string());
    json j;
    try {
        in >> j;
        if (j.at("kind") != "topic-model") throw ParseError(path.string() + ": not a topic model");
        TopicModel tm;
        tm.config_.n_topics = j.at("n_topics").get<int>();
        tm.config_.alpha = j.at("alpha").get<double>();
        tm.config_.beta = j.at("beta").get<double>();
        tm.config_.iterations = j.at("iterations").get<int>();
        tm.config_.inference_iterations = j.at("inference_iterations").get<int>();
        tm.config_.seed = j.at("seed").get<std::uint64_t>();
        const auto words = j.at("words").get<std::vector<std::string>>();
        for (std::size_t i = 0; i < words.size(); ++i) tm.word_ids_.emplace(words[i], static_cast<int>(i));
        const auto rows = j.at("topic_word").get<std::vector<std::vector<double>>>();
        tm.topic_word_.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(words.size()));
        for (std::size_t t = 0; t < rows.size(); ++t) {
            if (rows[t].size() != words.size()) throw ParseError(path.string() + ": topic row width mismatch");
            for (std::size_t w = 0; w < words.size(); ++w) tm.topic_word_(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(w)) = rows[t][w];
        }
        return tm;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q, double eps) {
    if (p.size() != q.size() || p.empty()) throw InvalidArgument("kl_divergence: distributions must have equal nonzero length");
    const double zp = std::accumulate(p.begin(), p.end(), 0.0) + eps * static_cast<double>(p.size());
    const double zq = std::accumulate(q.begin(), q.end(), 0.0) + eps * static_cast<double>(q.size());
    double kl = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = (p[i] + eps) / zp;
        const double qi = (q[i] + eps) / zq;
        kl += pi * std::log(pi / qi);
    }
    return std::max(kl, 0.0);
}

double topic_kl(const TopicModel& tm, const std::string& dilution, const std::string& original) {
    return kl_divergence(tm.infer(dilution), tm.infer(original));
}

// --- diversity ----------------------------------------------------------------------

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const std::vector<std::string>& tokens, int n) {
    NgramCounts out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
        ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    return out;
}

}  // namespace

double sentence_bleu(const std::vector<std::string>& hypothesis, const std::vector<std::vector<std::string>>& references, int max_ngram) {
    if (max_ngram < 1) throw InvalidArgument("max_ngram must be positive");
    if (hypothesis.empty() || references.empty()) return 0.0;
    double log_sum = 0;
    for (int n = 1; n <= max_ngram; ++n) {
        const NgramCounts hyp = ngrams(hypothesis, n);
        NgramCounts max_ref;
        for (const auto& ref : references)
            for (const auto& [g, c] : ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], c);
        int total = 0;
        int clipped = 0;
        for (const auto& [g, c] : hyp) {
            total += c;
            const auto it = max_ref.find(g);
            if (it != max_ref.end()) clipped += std::min(c, it->second);
        }
        const double p = (clipped == 0 ? kBleuEpsilon : clipped) / static_cast<double>(std::max(total, 1));
        log_sum += std::log(p);
    }
    // Closest reference length, shorter on ties.
    const auto c = static_cast<double>(hypothesis.size());
    double r = static_cast<double>(references.front().size());
    for (const auto& ref : references) {
        const auto len = static_cast<double>(ref.size());
        if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
    }
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return std::clamp(bp * std::exp(log_sum / max_ngram), 0.0, 1.0);
}

SelfBleu self_bleu(const std::vector<std::string>& sentences, int max_ngram) {
    if (sentences.size() < 2) return {0.0, true};
    std::vector<std::vector<std::string>> toks;
    for (const auto& s : sentences) toks.push_back(tokenize(s));
    double total = 0;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        std::vector<std::vector<std::string>> refs;
        for (std::size_t j = 0; j < toks.size(); ++j)
            if (j != i) refs.push_back(toks[j]);
        total += sentence_bleu(toks[i], refs, max_ngram);
    }
    return {total / static_cast<double>(toks.size()), false};
}

// --- length control -----------------------------------------------------------------

LengthMode parse_length_mode(const std::string& s) {
    if (s == "none") return LengthMode::none;
    if (s == "repeat") return LengthMode::repeat;
    if (s == "truncate") return LengthMode::truncate;
    throw InvalidArgument("unknown length-control mode '" + s + "'");
}

std::string to_string(LengthMode mode) {
    switch (mode) {
        case LengthMode::none: return "none";
        case LengthMode::repeat: return "repeat";
        case LengthMode::truncate: return "truncate";
    }
    return "none";
}

DilutionRecord length_control(const DilutionRecord& record, int target_words, LengthMode mode) {
    if (target_words < 1) throw InvalidArgument("target_words must be positive");
    if (mode == LengthMode::none) return record;
    const auto words = split_words(record.dilution_text);
    if (words.empty()) return record;
    std::vector<std::string> out;
    for (std::size_t i = 0; out.size() < static_cast<std::size_t>(target_words); ++i) out.push_back(words[i % words.size()]);
    DilutionRecord r = record;
    set_dilution(r, join(out));
    r.flags.push_back("length_" + to_string(mode));
    return r;
}

// --- reports --------------------------------------------------------------------------

namespace {

struct Mean {
    double sum = 0;
    std::size_t n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    [[nodiscard]] std::optional<double> value() const {
        if (n == 0) return std::nullopt;
        return sum / static_cast<double>(n);
    }
};

template <typename T>
const T& require(const T* dep, const char* name) {
    if (dep == nullptr) throw InvalidArgument(std::string("metrics: missing dependency '") + name + "'");
    return *dep;
}

std::vector<std::string> sentence_strings(const std::string& text) {
    std::vector<std::string> out;
    for (const auto& s : split_sentences(tokenize(text))) out.push_back(join(s));
    return out;
}

double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

MetricValues evaluate_records(const std::string& method, const std::vector<DilutionRecord>& records,
                              const std::vector<PreparedExample>& testset, const MetricDeps& deps) {
    const ClassifierBundle& bundle = require(deps.bundle, "classifier bundle");
    const JointEmbedder& joint = require(deps.joint, "joint embedder");
    const CorrespondenceModel& corr = require(deps.correspondence, "correspondence model");
    const TopicModel& topics = require(deps.topics, "topic model");
    if (testset.empty()) throw InvalidArgument("evaluate_records: empty test set");
    const bool original = method == kOriginalMethod;

    std::unordered_map<std::string, const DilutionRecord*> by_id;
    for (const auto& r : records) by_id.emplace(r.source_id, &r);

    std::vector<int> predicted;
    std::vector<int> truth;
    Mean st, si, sc, kl, sb;
    std::vector<double> words;
    for (const auto& ex : testset) {
        const DilutionRecord* rec = nullptr;
        if (!original) {
            const auto it = by_id.find(ex.id);
            if (it == by_id.end()) throw InvalidArgument("method " + method + ": no dilution for test example '" + ex.id + "'");
            rec = it->second;
        }
        const std::string& final_text = original ? ex.text : rec->final_text;
        const std::string& inserted = original ? ex.text : rec->dilution_text;

        const nn::RowVector text_repr = bundle.text_repr(final_text);
        const nn::RowVector image_repr = bundle.image_repr(ex.stem);
        predicted.push_back(bundle.predict_from_reprs(text_repr, image_repr).predicted());
        truth.push_back(ex.label);
        sc.add(corr.match_probability(text_repr, image_repr));

        bool degenerate = false;
        const double img = sim_img(inserted, ex.stem, joint, &degenerate);
        if (!degenerate) si.add(img);
        if (!original) {
            const double txt = sim_text(ex.text, rec->dilution_text, bundle.text.encoder(), &degenerate);
            if (!degenerate) st.add(txt);
            kl.add(topic_kl(topics, rec->dilution_text, ex.text));
            words.push_back(static_cast<double>(rec->inserted_words()));
        } else {
            words.push_back(0.0);
        }
        const SelfBleu b = self_bleu(sentence_strings(inserted));
        if (!b.insufficient) sb.add(b.value);
    }

    MetricValues v;
    v.classification = classification_metrics(predicted, truth, bundle.num_classes, deps.averaging);
    v.sim_text = st.value();
    v.sim_img = si.value();
    v.sim_corr = sc.value();
    v.kl_div = kl.value();
    v.self_bleu = sb.value();
    v.words_mean = std::accumulate(words.begin(), words.end(), 0.0) / static_cast<double>(words.size());
    double ss = 0;
    for (double w : words) ss += (w - v.words_mean) * (w - v.words_mean);
    v.words_std = std::sqrt(ss / static_cast<double>(words.size()));
    return v;
}

MetricReport aggregate_report(const std::string& method, const std::vector<MetricValues>& per_seed, const std::vector<std::int64_t>& seeds) {
    if (seeds.empty()) throw InvalidArgument("report needs at least one seed");
    if (per_seed.size() != seeds.size()) throw InvalidArgument("report: per-seed values do not match the seed list");
    MetricReport r;
    r.method = method;
    r.seeds = seeds;
    r.per_seed = per_seed;

    const auto n = static_cast<double>(per_seed.size());
    Mean st, si, sc, kl, sb;
    std::vector<double> f1s, sts;
    for (const auto& v : per_seed) {
        r.mean.classification.f1 += v.classification.f1 / n;
        r.mean.classification.precision += v.classification.precision / n;
        r.mean.classification.recall += v.classification.recall / n;
        r.mean.classification.accuracy += v.classification.accuracy / n;
        r.mean.words_mean += v.words_mean / n;
        r.mean.words_std += v.words_std / n;
        f1s.push_back(v.classification.f1);
        if (v.sim_text) {
            st.add(*v.sim_text);
            sts.push_back(*v.sim_text);
        }
        if (v.sim_img) si.add(*v.sim_img);
        if (v.sim_corr) sc.add(*v.sim_corr);
        if (v.kl_div) kl.add(*v.kl_div);
        if (v.self_bleu) sb.add(*v.self_bleu);
    }
    r.mean.sim_text = st.value();
    r.mean.sim_img = si.value();
    r.mean.sim_corr = sc.value();
    r.mean.kl_div = kl.value();
    r.mean.self_bleu = sb.value();
    r.f1_std = sample_std(f1s);
    r.sim_text_std = sample_std(sts);
    return r;
}

MetricReport build_report(const std::string& method, const std::vector<std::vector<DilutionRecord>>& per_seed_records,
                          const std::vector<PreparedExample>& testset, const MetricDeps& deps, const std::vector<std::int64_t>& seeds) {
    if (per_seed_records.size() != seeds.size()) throw InvalidArgument("build_report: one record list per seed is required");
    std::vector<MetricValues> values;
    for (const auto& records : per_seed_records) values.push_back(evaluate_records(method, records, testset, deps));
    return aggregate_report(method, values, seeds);
}

namespace {

ordered_json optional_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

MetricValues values_from_json(const json& j) {
    MetricValues v;
    const json& c = j.at("classification");
    v.classification.f1 = c.at("f1").get<double>();
    v.classification.precision = c.at("precision").get<double>();
    v.classification.recall = c.at("recall").get<double>();
    v.classification.accuracy = c.at("accuracy").get<double>();
    v.sim_text = optional_from(j, "sim_text");
    v.sim_img = optional_from(j, "sim_img");
    v.sim_corr = optional_from(j, "sim_corr");
    v.kl_div = optional_from(j, "kl_div");
    v.self_bleu = optional_from(j, "self_bleu");
    v.words_mean = j.at("n_words_inserted").at("mean").get<double>();
    v.words_std = j.at("n_words_inserted").at("std").get<double>();
    return v;
}

}  // namespace

ordered_json to_json(const MetricValues& v) {
    ordered_json j;
    j["classification"] = {{"f1", v.classification.f1},
                           {"precision", v.classification.precision},
                           {"recall", v.classification.recall},
                           {"accuracy", v.classification.accuracy}};
    j["sim_text"] = optional_json(v.sim_text);
    j["sim_img"] = optional_json(v.sim_img);
    j["sim_corr"] = optional_json(v.sim_corr);
    j["kl_div"] = optional_json(v.kl_div);
    j["self_bleu"] = optional_json(v.self_bleu);
    j["n_words_inserted"] = {{"mean", v.words_mean}, {"std", v.words_std}};
    return j;
}

ordered_json to_json(const MetricReport& r) {
    ordered_json j;
    j["method"] = r.method;
    j["seeds"] = r.seeds;
    ordered_json mean = to_json(r.mean);
    j["mean"] = mean;
    j["f1_std"] = r.f1_std;
    j["sim_text_std"] = r.sim_text_std;
    j["per_seed"] = ordered_json::array();
    for (const auto& v : r.per_seed) j["per_seed"].push_back(to_json(v));
    return j;
}

MetricReport report_from_json(const json& j) {
    try {
        MetricReport r;
        r.method = j.at("method").get<std::string>();
        r.seeds = j.at("seeds").get<std::vector<std::int64_t>>();
        r.mean = values_from_json(j.at("mean"));
        r.f1_std = j.at("f1_std").get<double>();
        r.sim_text_std = j.at("sim_text_std").get<double>();
        for (const auto& v : j.at("per_seed")) r.per_seed.push_back(values_from_json(v));
        if (r.per_seed.size() != r.seeds.size()) throw ParseError("report: per_seed length does not match seeds");
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed metric report: ") + e.what());
    }
}

std::string display_name(const std::string& method) {
    static const std::map<std::string, std::string> names = {
        {"original", "Original"},
        {"random_url", "Random URL"},
        {"image_kw", "Image KW"},
        {"text_kw", "Text KW"},
        {"text_image_kw", "Text+Image KW"},
        {"similar_image_desc", "Similar image's desc"},
        {"lm_continuation", "LM"},
        {"lm_continuation_ft", "LM-FT"},
        {"caption_append", "Captions"},
        {"xmd", "XMD"},
        {"xmd_plain", "XMD-Plain"},
        {"xmd_adv", "XMD-Adv"},
        {"xmd_full", "XMD-Full"},
    };
    const auto it = names.find(method);
    return it == names.end() ? method : it->second;
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
}

std::string fmt(const std::optional<double>& v, const char* missing) { return v ? fmt(*v) : missing; }

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string render_csv(const std::vector<MetricReport>& reports) {
    std::ostringstream os;
    os << "method,f1,precision,recall,accuracy,sim_text,sim_img,sim_corr,self_bleu,kl_div,words_mean,words_std,f1_std\n";
    for (const auto& r : reports) {
        const auto& m = r.mean;
        os << csv_field(display_name(r.method)) << ',' << fmt(m.classification.f1) << ',' << fmt(m.classification.precision) << ','
           << fmt(m.classification.recall) << ',' << fmt(m.classification.accuracy) << ',' << fmt(m.sim_text, "") << ','
           << fmt(m.sim_img, "") << ',' << fmt(m.sim_corr, "") << ',' << fmt(m.self_bleu, "") << ',' << fmt(m.kl_div, "") << ','
           << fmt(m.words_mean) << ',' << fmt(m.words_std) << ',' << fmt(r.f1_std) << '\n';
    }
    return os.str();
}

std::string render_markdown(const std::vector<MetricReport>& reports) {
    std::ostringstream os;
    os << "| | Classification ↓ | | | | Relevance ↑ | | | Diversity ↓ | Topical Diff. ↓ | |\n";
    os << "|---|---|---|---|---|---|---|---|---|---|---|\n";
    os << "| **Method** | **F1** | **Prec.** | **Recall** | **Acc.** | **Sim_text** | **Sim_img** | **Sim_corr** | **Self-BLEU** | **KL Div** "
          "| **# Words** |\n";
    for (const auto& r : reports) {
        const auto& m = r.mean;
        os << "| " << display_name(r.method) << " | " << fmt(m.classification.f1) << " | " << fmt(m.classification.precision) << " | "
           << fmt(m.classification.recall) << " | " << fmt(m.classification.accuracy) << " | " << fmt(m.sim_text, "--") << " | "
           << fmt(m.sim_img, "--") << " | " << fmt(m.sim_corr, "--") << " | " << fmt(m.self_bleu, "--") << " | " << fmt(m.kl_div, "--")
           << " | " << std::setprecision(1) << std::fixed << m.words_mean << " ± " << m.words_std << " |\n";
    }
    return os.str();
}

}  // namespace xmd
