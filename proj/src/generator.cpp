#include "xmd/generator.hpp"

#include "xmd/common.hpp"
#include "xmd/encoders.hpp"
#include "xmd/text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace xmd {

using nn::Matrix;
using nn::RowVector;

namespace {

constexpr double kMaskedLogit = -1e9;

}  // namespace

// --- model --------------------------------------------------------------------

InsertionLM::InsertionLM(Vocabulary vocab, const InsertionLMConfig& config, std::uint64_t seed)
    : vocab_(std::move(vocab)), config_(config) {
    if (config.embed_dim < 1 || config.hidden < 1) throw InvalidArgument("insertion model widths must be positive");
    if (config.max_len < 1 || config.max_rounds < 0) throw InvalidArgument("insertion model caps must be positive");
    std::mt19937_64 rng(mix_seed(seed, "insertion-lm"));
    std::normal_distribution<double> normal(0.0, 0.1);
    embedding_.name = "lm.embedding";
    embedding_.value = Matrix(vocab_.size(), config.embed_dim);
    for (Eigen::Index i = 0; i < embedding_.value.size(); ++i) embedding_.value.data()[i] = normal(rng);
    embedding_.zero_grad();
    hidden_ = nn::Linear(feature_dim(), config.hidden, rng, "lm.hidden");
    output_ = nn::Linear(config.hidden, vocab_.size(), rng, "lm.output");
}

Matrix InsertionLM::slot_logits(const std::vector<std::vector<int>>& seqs) const {
    Cache scratch;
    return slot_logits(seqs, scratch);
}

Matrix InsertionLM::slot_logits(const std::vector<std::vector<int>>& seqs, Cache& cache) const {
    const int d = config_.embed_dim;
    std::size_t rows = 0;
    for (const auto& s : seqs) rows += s.size() + 1;
    cache.seqs = seqs;
    cache.slots.clear();
    cache.slots.reserve(rows);
    cache.features = Matrix::Zero(static_cast<Eigen::Index>(rows), feature_dim());
    const auto& E = embedding_.value;
    Eigen::Index r = 0;
    for (std::size_t q = 0; q < seqs.size(); ++q) {
        const auto& ids = seqs[q];
        const int len = static_cast<int>(ids.size());
        RowVector mean = RowVector::Zero(d);
        for (int id : ids) mean += E.row(id);
        if (len > 0) mean /= len;
        auto at = [&](int i) {
            if (i < 0) return Vocabulary::kBos;
            if (i >= len) return Vocabulary::kEos;
            return ids[static_cast<std::size_t>(i)];
        };
        for (int s = 0; s <= len; ++s, ++r) {
            cache.slots.emplace_back(static_cast<int>(q), s);
            cache.features.block(r, 0, 1, d) = E.row(at(s - 2));
            cache.features.block(r, d, 1, d) = E.row(at(s - 1));
            cache.features.block(r, 2 * d, 1, d) = E.row(at(s));
            cache.features.block(r, 3 * d, 1, d) = E.row(at(s + 1));
            cache.features.block(r, 4 * d, 1, d) = mean;
            cache.features(r, 5 * d) = static_cast<double>(s) / std::max(len, 1);
            cache.features(r, 5 * d + 1) = 1.0 / (len + 1);
            cache.features(r, 5 * d + 2) = static_cast<double>(len) / config_.max_len;
        }
    }
    cache.hidden_pre = hidden_.forward(cache.features);
    cache.hidden = nn::relu(cache.hidden_pre);
    Matrix logits = output_.forward(cache.hidden);
    for (int v = 0; v < vocab_.size(); ++v) {
        if (!is_output(v)) logits.col(v).setConstant(kMaskedLogit);
    }
    return logits;
}

void InsertionLM::backward(const Cache& cache, const Matrix& grad_logits) {
    const int d = config_.embed_dim;
    Matrix g = grad_logits;
    for (int v = 0; v < vocab_.size(); ++v) {
        if (!is_output(v)) g.col(v).setZero();
    }
    Matrix gh = output_.backward(cache.hidden, g, true);
    gh = (cache.hidden_pre.array() > 0.0).select(gh, 0.0);
    const Matrix gx = hidden_.backward(cache.features, gh, true);
    auto& G = embedding_.grad;
    for (Eigen::Index r = 0; r < gx.rows(); ++r) {
        const auto [q, s] = cache.slots[static_cast<std::size_t>(r)];
        const auto& ids = cache.seqs[static_cast<std::size_t>(q)];
        const int len = static_cast<int>(ids.size());
        auto at = [&](int i) {
            if (i < 0) return Vocabulary::kBos;
            if (i >= len) return Vocabulary::kEos;
            return ids[static_cast<std::size_t>(i)];
        };
        G.row(at(s - 2)) += gx.block(r, 0, 1, d);
        G.row(at(s - 1)) += gx.block(r, d, 1, d);
        G.row(at(s)) += gx.block(r, 2 * d, 1, d);
        G.row(at(s + 1)) += gx.block(r, 3 * d, 1, d);
        if (len > 0) {
            const RowVector gm = gx.block(r, 4 * d, 1, d) / len;
            for (int id : ids) G.row(id) += gm;
        }
    }
}

Matrix InsertionLM::slot_probabilities(const TokenSeq& seq) const {
    Matrix probs = nn::softmax_rows(slot_logits({encode(seq)}));
    // Vectorized exp clamps very negative inputs, leaving denormals on masked ids.
    for (int v = 0; v < Vocabulary::kReservedCount; ++v) {
        if (!is_output(v)) probs.col(v).setZero();
    }
    return probs;
}

nn::ParameterList InsertionLM::parameters() {
    nn::ParameterList out{&embedding_};
    hidden_.collect(out);
    output_.collect(out);
    return out;
}

std::uint64_t InsertionLM::parameter_hash() { return nn::hash_parameters(parameters()); }

void InsertionLM::save(const std::filesystem::path& dir) {
    save_checkpoint(dir, "insertion-lm", parameters(),
                    nlohmann::json{{"embed_dim", config_.embed_dim},
                                   {"hidden", config_.hidden},
                                   {"max_rounds", config_.max_rounds},
                                   {"max_len", config_.max_len}},
                    &vocab_);
}

InsertionLM InsertionLM::load(const std::filesystem::path& dir) {
    const auto dims = read_checkpoint_manifest(dir, "insertion-lm");
    InsertionLMConfig config{dims.at("embed_dim").get<int>(), dims.at("hidden").get<int>(), dims.at("max_rounds").get<int>(),
                             dims.at("max_len").get<int>()};
    InsertionLM lm(Vocabulary::load(dir / "vocab.txt"), config, 0);
    load_checkpoint_parameters(dir, lm.parameters());
    return lm;
}

// --- decoding -----------------------------------------------------------------

ExpandResult expand_once(const SlotPredictor& lm, const TokenSeq& seq, Decode decode, int max_len, std::mt19937_64* rng) {
    if (seq.empty()) throw InvalidArgument("expand_once needs a non-empty sequence");
    if (static_cast<int>(seq.size()) >= max_len) return {seq, false, true};
    if (decode.kind == Decode::Kind::sample && rng == nullptr) throw InvalidArgument("sampled decoding needs a random stream");
    const Matrix probs = lm.slot_probabilities(seq);
    const auto& vocab = lm.vocabulary();

    std::vector<int> chosen(seq.size() + 1, Vocabulary::kNoInsert);
    for (Eigen::Index s = 0; s < probs.rows(); ++s) {
        int pick = Vocabulary::kNoInsert;
        if (decode.kind == Decode::Kind::greedy) {
            Eigen::Index best = 0;
            probs.row(s).maxCoeff(&best);
            pick = static_cast<int>(best);
        } else {
            std::discrete_distribution<int> dist(probs.row(s).data(), probs.row(s).data() + probs.cols());
            pick = dist(*rng);
        }
        if (pick != Vocabulary::kNoInsert && Vocabulary::is_reserved(pick)) pick = Vocabulary::kNoInsert;
        chosen[static_cast<std::size_t>(s)] = pick;
    }

    ExpandResult out;
    out.all_noi = std::all_of(chosen.begin(), chosen.end(), [](int id) { return id == Vocabulary::kNoInsert; });
    int room = max_len - static_cast<int>(seq.size());
    for (std::size_t s = 0; s <= seq.size(); ++s) {
        if (chosen[s] != Vocabulary::kNoInsert) {
            if (room > 0) {
                out.seq.push_back(vocab.token(chosen[s]));
                --room;
            } else {
                out.truncated = true;
            }
        }
        if (s < seq.size()) out.seq.push_back(seq[s]);
    }
    return out;
}

std::vector<TokenSeq> GenerationTrace::expanded_sequences() const {
    return {rounds.begin(), rounds.begin() + std::min<std::ptrdiff_t>(expansions, static_cast<std::ptrdiff_t>(rounds.size()))};
}

GenerationTrace generate_from_keywords(const SlotPredictor& lm, const TokenSeq& keywords, Decode decode, int max_rounds,
                                       int max_len) {
    GenerationTrace trace;
    trace.rounds.push_back(keywords);
    if (keywords.empty()) {
        trace.terminated = true;
        return trace;
    }
    std::mt19937_64 rng(mix_seed(decode.seed, "decode"));
    for (int r = 0; r < max_rounds; ++r) {
        if (static_cast<int>(trace.rounds.back().size()) >= max_len) {
            trace.truncated = true;
            return trace;
        }
        ExpandResult step = expand_once(lm, trace.rounds.back(), decode, max_len, &rng);
        ++trace.expansions;
        if (step.all_noi) {
            trace.terminated = true;
            return trace;
        }
        trace.rounds.push_back(std::move(step.seq));
        if (step.truncated) {
            trace.truncated = true;
            return trace;
        }
    }
    trace.truncated = true;
    return trace;
}

// --- curriculum and stage 1 -----------------------------------------------------

std::vector<CurriculumStep> build_curriculum(const TokenSeq& tokens, const TokenSeq& keywords, const Vocabulary& vocab) {
    struct Entry {
        std::string token;
        bool keep;
    };
    std::vector<Entry> current;
    for (const auto& t : tokens) current.push_back({t, false});
    std::size_t cursor = 0;
    for (const auto& k : keywords) {
        auto mark = [&](std::size_t from) {
            for (std::size_t i = from; i < current.size(); ++i) {
                if (!current[i].keep && current[i].token == k) {
                    current[i].keep = true;
                    cursor = i + 1;
                    return true;
                }
            }
            return false;
        };
        if (!mark(cursor)) mark(0);
    }

    std::vector<CurriculumStep> steps;
    steps.push_back({tokens, std::vector<int>(tokens.size() + 1, Vocabulary::kNoInsert)});
    while (std::any_of(current.begin(), current.end(), [](const Entry& e) { return !e.keep; })) {
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < current.size(); ++i) {
            if (!current[i].keep) candidates.push_back(i);
        }
        auto importance = [&](std::size_t i) {
            const auto& t = current[i].token;
            return (is_stopword(t) || is_punctuation(t)) ? 0 : 1;
        };
        std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return importance(a) < importance(b); });
        std::vector<bool> removed(current.size(), false);
        for (std::size_t c : candidates) {
            if ((c > 0 && removed[c - 1]) || (c + 1 < current.size() && removed[c + 1])) continue;
            removed[c] = true;
        }
        CurriculumStep step;
        std::vector<Entry> smaller;
        std::vector<int> pending;  // target per slot of `smaller`, filled as we walk
        int slot_target = Vocabulary::kNoInsert;
        for (std::size_t i = 0; i < current.size(); ++i) {
            if (removed[i]) {
                slot_target = vocab.id(current[i].token);
            } else {
                pending.push_back(slot_target);
                slot_target = Vocabulary::kNoInsert;
                smaller.push_back(current[i]);
            }
        }
        pending.push_back(slot_target);
        for (const auto& e : smaller) step.input.push_back(e.token);
        step.targets = std::move(pending);
        steps.push_back(std::move(step));
        current = std::move(smaller);
    }
    std::reverse(steps.begin(), steps.end());
    return steps;
}

double generation_loss(InsertionLM& lm, const std::vector<const CurriculumStep*>& steps, bool grad, double scale) {
    if (steps.empty()) return 0.0;
    std::vector<std::vector<int>> seqs;
    std::vector<int> targets;
    for (const auto* s : steps) {
        seqs.push_back(lm.encode(s->input));
        targets.insert(targets.end(), s->targets.begin(), s->targets.end());
    }
    InsertionLM::Cache cache;
    const Matrix logits = lm.slot_logits(seqs, cache);
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        if (lm.is_output(targets[r])) {
            rows.push_back(r);
            labels.push_back(targets[r]);
        }
    }
    if (rows.empty()) return 0.0;
    const Matrix picked = nn::gather_rows(logits, rows);
    Matrix g;
    const double loss = nn::softmax_cross_entropy(picked, labels, grad ? &g : nullptr);
    if (grad) {
        Matrix full = Matrix::Zero(logits.rows(), logits.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) full.row(static_cast<Eigen::Index>(rows[i])) = scale * g.row(static_cast<Eigen::Index>(i));
        lm.backward(cache, full);
    }
    return loss;
}

TokenSeq reconstruction_keywords(const std::string& preprocessed_text, const TextKeywordParams& params) {
    return order_by_occurrence(extract_text_keywords(preprocessed_text, params), preprocessed_text);
}

Stage1Result stage1_finetune(InsertionLM& lm, const std::vector<std::string>& train_texts, const Stage1Config& config) {
    if (train_texts.empty()) throw InvalidArgument("stage-1 needs at least one training text");
    Stage1Result result;
    std::vector<CurriculumStep> steps;
    for (const auto& text : train_texts) {
        const TokenSeq kws = reconstruction_keywords(text, config.keywords);
        if (kws.empty()) {
            ++result.skipped;
            continue;
        }
        auto c = build_curriculum(tokenize(text), kws, lm.vocabulary());
        steps.insert(steps.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
    }
    if (config.epochs <= 0 || steps.empty()) return result;

    nn::Adam opt(lm.parameters(), config.lr);
    std::mt19937_64 rng(mix_seed(config.seed, "stage1"));
    const auto batch = static_cast<std::size_t>(std::max(config.batch_size, 1));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = nn::shuffled_indices(steps.size(), rng);
        double total = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            std::vector<const CurriculumStep*> chunk;
            for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) chunk.push_back(&steps[order[i]]);
            opt.zero_grad();
            total += generation_loss(lm, chunk, true);
            opt.step();
            ++batches;
        }
        result.epoch_loss.push_back(total / static_cast<double>(batches));
    }
    return result;
}

// --- adversarial objective ------------------------------------------------------

AdvObjective parse_adv_objective(const std::string& name) {
    if (name == "paper_bce") return AdvObjective::paper_bce;
    if (name == "maximize_incorrect") return AdvObjective::maximize_incorrect;
    throw InvalidArgument("unknown adv_objective '" + name + "' (expected paper_bce or maximize_incorrect)");
}

std::string to_string(AdvObjective objective) {
    return objective == AdvObjective::paper_bce ? "paper_bce" : "maximize_incorrect";
}

double adversarial_loss(const ClassDistribution& dist, int true_label, AdvObjective objective, std::vector<double>* grad_probs) {
    dist.validate();
    const int classes = static_cast<int>(dist.probs.size());
    if (true_label < 0 || true_label >= classes) throw InvalidArgument("true label out of range");
    constexpr double eps = 1e-12;
    double yhat = 0;
    for (int c = 0; c < classes; ++c) {
        if (c != true_label) yhat += dist.probs[static_cast<std::size_t>(c)];
    }
    const bool clamped = yhat <= eps || yhat >= 1.0 - eps;
    const double q = std::clamp(yhat, eps, 1.0 - eps);
    double loss = 0;
    double dq = 0;
    if (objective == AdvObjective::maximize_incorrect) {
        loss = -std::log(q);
        dq = -1.0 / q;
    } else {
        const double y = dist.predicted() != true_label ? 1.0 : 0.0;
        loss = -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
        dq = -y / q + (1.0 - y) / (1.0 - q);
    }
    if (grad_probs != nullptr) {
        grad_probs->assign(dist.probs.size(), 0.0);
        if (!clamped) {
            for (int c = 0; c < classes; ++c) {
                if (c != true_label) (*grad_probs)[static_cast<std::size_t>(c)] = dq;
            }
        }
    }
    return loss;
}

double combined_loss(double l_gen, double l_adv, double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be a finite non-negative number");
    if (!std::isfinite(l_gen) || !std::isfinite(l_adv)) throw InvalidArgument("losses must be finite");
    return l_gen + lambda * l_adv;
}

AdversarialRelaxation::AdversarialRelaxation(const ClassifierBundle& bundle, const Vocabulary& generator_vocab, AdvObjective objective)
    : bundle_(bundle), objective_(objective) {
    const auto& enc = bundle_.text.encoder();
    const Matrix& table = enc.embedding_table();
    token_embeddings_ = Matrix::Zero(generator_vocab.size(), table.cols());
    for (int v = Vocabulary::kReservedCount; v < generator_vocab.size(); ++v) {
        token_embeddings_.row(v) = table.row(enc.vocabulary().id(generator_vocab.token(v)));
    }
}

AdversarialRelaxation::Input AdversarialRelaxation::prepare(const std::string& original_text, const TokenSeq& keywords,
                                                            const Matrix& stem, int label) const {
    Input in;
    const auto& enc = bundle_.text.encoder();
    in.fixed_ids = enc.token_ids(original_text);
    for (int id : enc.vocabulary().encode(keywords)) in.fixed_ids.push_back(id);
    in.image_repr = bundle_.image_repr(stem);
    in.label = label;
    return in;
}

double AdversarialRelaxation::loss(const Matrix& slot_logits, const Input& input, Matrix* grad) const {
    const auto& enc = bundle_.text.encoder();
    const Matrix& table = enc.embedding_table();
    const Eigen::Index vocab = token_embeddings_.rows();
    if (slot_logits.cols() != vocab) throw InvalidArgument("slot logits do not match the generator vocabulary");

    Matrix probs = slot_logits.rows() > 0 ? nn::softmax_rows(slot_logits) : Matrix(0, vocab);
    Matrix inserted = probs;
    inserted.leftCols(Vocabulary::kReservedCount).setZero();

    RowVector sum = RowVector::Zero(table.cols());
    for (int id : input.fixed_ids) sum += table.row(id);
    double count = static_cast<double>(input.fixed_ids.size());
    if (inserted.rows() > 0) {
        sum += inserted.colwise().sum() * token_embeddings_;
        count += inserted.sum();
    }
    const RowVector mean = count > 0 ? RowVector(sum / count) : RowVector(RowVector::Zero(table.cols()));

    nn::MlpCache text_cache;
    const Matrix text_repr = enc.forward_from_mean(mean, text_cache);
    nn::MlpCache fusion_cache;
    const Matrix fused = fuse_representations(text_repr.row(0), input.image_repr);
    const Matrix fusion_logits = bundle_.fusion.forward(fused, fusion_cache);
    const Matrix class_probs = nn::softmax_rows(fusion_logits);
    const ClassDistribution dist{std::vector<double>(class_probs.data(), class_probs.data() + class_probs.size())};
    std::vector<double> grad_probs;
    const double value = adversarial_loss(dist, input.label, objective_, grad ? &grad_probs : nullptr);
    if (grad == nullptr) return value;

    const Matrix g_probs = Eigen::Map<const Matrix>(grad_probs.data(), 1, static_cast<Eigen::Index>(grad_probs.size()));
    const Matrix g_fused = bundle_.fusion.backward(fusion_cache, nn::softmax_backward(class_probs, g_probs), false);
    const Matrix g_mean = bundle_.text.encoder().backward_to_mean(text_cache, g_fused.leftCols(text_repr.cols()));
    // d mean / d p(v) = (E[v] - mean) / count for inserted tokens, 0 for reserved ids.
    RowVector g_p = ((token_embeddings_ * g_mean.transpose()).array() - mean.dot(g_mean.row(0))).matrix().transpose() / count;
    g_p.head(Vocabulary::kReservedCount).setZero();
    *grad = probs.rows() > 0 ? nn::softmax_backward(probs, g_p.replicate(probs.rows(), 1)) : Matrix(0, vocab);
    return value;
}

// --- stage 2 --------------------------------------------------------------------

TokenSeq generation_keywords(const KeywordSet& kw, const std::string& preprocessed_text, KeywordSource source) {
    switch (source) {
        case KeywordSource::image:
            return merge_keywords({}, kw.image_keywords);
        case KeywordSource::text:
            return merge_keywords(order_by_occurrence(kw.text_keywords, preprocessed_text), {});
        case KeywordSource::merged:
        default:
            return merge_keywords(order_by_occurrence(kw.text_keywords, preprocessed_text), kw.image_keywords);
    }
}

namespace {

std::unordered_map<std::string, const KeywordSet*> index_keywords(const std::vector<KeywordSet>& keywords) {
    std::unordered_map<std::string, const KeywordSet*> out;
    for (const auto& k : keywords) out.emplace(k.source_id, &k);
    return out;
}

const KeywordSet& lookup(const std::unordered_map<std::string, const KeywordSet*>& index, const std::string& id) {
    const auto it = index.find(id);
    if (it == index.end()) throw InvalidArgument("no keyword set for example '" + id + "'");
    return *it->second;
}

}  // namespace

Stage2Result stage2_adversarial_finetune(InsertionLM& lm, const ClassifierBundle& bundle, const std::vector<PreparedExample>& train,
                                         const std::vector<KeywordSet>& keywords, const Stage2Config& config) {
    if (!(config.lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");
    if (train.empty()) throw InvalidArgument("stage-2 needs training examples");
    const auto index = index_keywords(keywords);
    const AdversarialRelaxation relax(bundle, lm.vocabulary(), config.objective);
    const auto& lm_config = lm.config();

    struct Item {
        std::vector<CurriculumStep> curriculum;
        TokenSeq merged;
        AdversarialRelaxation::Input input;
    };
    std::vector<Item> items;
    for (const auto& ex : train) {
        const KeywordSet& kw = lookup(index, ex.id);
        Item item;
        const TokenSeq text_kws = generation_keywords(kw, ex.text, KeywordSource::text);
        if (!text_kws.empty()) item.curriculum = build_curriculum(tokenize(ex.text), text_kws, lm.vocabulary());
        item.merged = generation_keywords(kw, ex.text, KeywordSource::merged);
        item.input = relax.prepare(ex.text, item.merged, ex.stem, ex.label);
        items.push_back(std::move(item));
    }

    Stage2Result result;
    if (config.epochs <= 0) return result;
    nn::Adam opt(lm.parameters(), config.lr);
    std::mt19937_64 rng(mix_seed(config.seed, "stage2"));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double gen_sum = 0;
        double adv_sum = 0;
        double total_sum = 0;
        for (std::size_t i : nn::shuffled_indices(items.size(), rng)) {
            const Item& item = items[i];
            opt.zero_grad();
            std::vector<const CurriculumStep*> steps;
            for (const auto& s : item.curriculum) steps.push_back(&s);
            const double l_gen = generation_loss(lm, steps, true);
            double l_adv = 0;
            // With lambda = 0 the adversarial term has no effect, so it is not computed.
            if (config.lambda > 0 && !item.merged.empty()) {
                const GenerationTrace trace =
                    generate_from_keywords(lm, item.merged, Decode::greedy(), lm_config.max_rounds, lm_config.max_len);
                std::vector<std::vector<int>> seqs;
                for (const auto& s : trace.expanded_sequences()) seqs.push_back(lm.encode(s));
                InsertionLM::Cache cache;
                const Matrix logits = lm.slot_logits(seqs, cache);
                Matrix g;
                l_adv = relax.loss(logits, item.input, &g);
                lm.backward(cache, config.lambda * g);
            }
            opt.step();
            gen_sum += l_gen;
            adv_sum += l_adv;
            total_sum += combined_loss(l_gen, l_adv, config.lambda);
        }
        const auto n = static_cast<double>(items.size());
        result.gen_loss.push_back(gen_sum / n);
        if (config.lambda > 0) result.adv_loss.push_back(adv_sum / n);
        result.total_loss.push_back(total_sum / n);
    }
    return result;
}

// --- inference --------------------------------------------------------------------

DilutionRecord dilute(const SlotPredictor& lm, const std::string& source_id, const std::string& preprocessed_text, const KeywordSet& kw,
                      Decode decode, int max_rounds, int max_len, KeywordSource source, const std::string& method) {
    const TokenSeq kws = generation_keywords(kw, preprocessed_text, source);
    if (kws.empty()) {
        DilutionRecord r = make_record(source_id, method, preprocessed_text, "");
        r.flags.push_back("empty_keywords");
        return r;
    }
    Decode d = decode;
    d.seed = mix_seed(decode.seed, source_id);
    const GenerationTrace trace = generate_from_keywords(lm, kws, d, max_rounds, max_len);
    DilutionRecord r = make_record(source_id, method, preprocessed_text, detokenize(trace.final_sequence()));
    r.keywords_used = kws;
    if (trace.truncated) r.flags.push_back("truncated");
    return r;
}

double mean_adversarial_loss(const SlotPredictor& lm, const ClassifierBundle& bundle, const std::vector<PreparedExample>& examples,
                             const std::vector<KeywordSet>& keywords, AdvObjective objective, int max_rounds, int max_len) {
    if (examples.empty()) throw InvalidArgument("mean_adversarial_loss: no examples");
    const auto index = index_keywords(keywords);
    double total = 0;
    for (const auto& ex : examples) {
        const DilutionRecord r = dilute(lm, ex.id, ex.text, lookup(index, ex.id), Decode::greedy(), max_rounds, max_len);
        total += adversarial_loss(bundle.predict(r.final_text, ex.stem), ex.label, objective);
    }
    return total / static_cast<double>(examples.size());
}

}  // namespace xmd
