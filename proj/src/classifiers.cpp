#include "xmd/classifiers.hpp"

#include "xmd/common.hpp"
#include "xmd/text.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

namespace xmd {

using nn::Matrix;
using nn::RowVector;
using nlohmann::json;

std::vector<PreparedExample> prepare_examples(const std::vector<MultimodalExample>& examples, const ChannelNorm& norm) {
    std::vector<PreparedExample> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        out.push_back({ex.id, preprocess_text(ex.text), image_stem(preprocess_image(ex.image, norm, ex.id)), ex.label});
    }
    return out;
}

int ClassDistribution::predicted() const {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

void ClassDistribution::validate() const {
    if (probs.empty()) throw InvalidArgument("empty class distribution");
    double sum = 0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidArgument("class distribution has a negative or non-finite entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw InvalidArgument("class distribution does not sum to 1");
}

ClassDistribution distribution_from_logits(const RowVector& logits) {
    const Matrix p = nn::softmax_rows(logits);
    return {std::vector<double>(p.data(), p.data() + p.size())};
}

bool EarlyStopping::update(double val_loss) {
    ++epochs_;
    if (epochs_ == 1 || val_loss < best_) {
        best_ = val_loss;
        best_epoch_ = epochs_;
        bad_epochs_ = 0;
        return true;
    }
    ++bad_epochs_;
    return false;
}

bool EarlyStopping::should_stop() const { return epochs_ >= max_epochs_ || bad_epochs_ >= patience_; }

namespace {

std::vector<Matrix> snapshot(const nn::ParameterList& params) {
    std::vector<Matrix> out;
    for (const auto* p : params) out.push_back(p->value);
    return out;
}

void restore(const nn::ParameterList& params, const std::vector<Matrix>& values) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

void require_two_classes(const std::vector<PreparedExample>& train) {
    std::set<int> labels;
    for (const auto& ex : train) labels.insert(ex.label);
    if (labels.size() < 2) throw InvalidArgument("training set must contain at least two classes");
}

std::vector<int> labels_of(const std::vector<PreparedExample>& xs) {
    std::vector<int> out;
    for (const auto& x : xs) out.push_back(x.label);
    return out;
}

}  // namespace

void fit_with_early_stopping(std::size_t n, const TrainConfig& config, const nn::ParameterList& params,
                             const std::function<double(std::span<const std::size_t>)>& step,
                             const std::function<double()>& val_loss, TrainingHistory* history) {
    std::mt19937_64 rng(mix_seed(config.seed, "minibatches"));
    EarlyStopping stopper(config.patience, config.max_epochs);
    std::vector<Matrix> best = snapshot(params);
    TrainingHistory local;
    TrainingHistory& h = history != nullptr ? *history : local;
    h = {};
    do {
        const auto order = nn::shuffled_indices(n, rng);
        double total = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
            total += step(std::span<const std::size_t>(order.data() + start, end - start));
            ++batches;
        }
        const double vl = val_loss();
        h.train_loss.push_back(total / static_cast<double>(std::max<std::size_t>(batches, 1)));
        h.val_loss.push_back(vl);
        if (stopper.update(vl)) best = snapshot(params);
    } while (!stopper.should_stop());
    h.best_epoch = stopper.best_epoch();
    restore(params, best);
}

// --- unimodal classifiers -----------------------------------------------------

TextClassifier::TextClassifier(Vocabulary vocab, const TextEncoderConfig& encoder, int num_classes, std::uint64_t seed)
    : encoder_(std::move(vocab), encoder, seed) {
    std::mt19937_64 rng(mix_seed(seed, "text-output"));
    output_ = nn::Linear(encoder.output_dim, num_classes, rng, "text.output");
}

Matrix TextClassifier::logits(const std::vector<std::vector<int>>& bags) const {
    return output_.forward(encoder_.encode_bags(bags));
}

nn::ParameterList TextClassifier::parameters() {
    nn::ParameterList out = encoder_.parameters();
    output_.collect(out);
    return out;
}

ImageClassifier::ImageClassifier(const ImageEncoderConfig& encoder, int num_classes, std::uint64_t seed)
    : encoder_(encoder, seed) {
    std::mt19937_64 rng(mix_seed(seed, "image-output"));
    output_ = nn::Linear(encoder.output_dim, num_classes, rng, "image.output");
}

nn::ParameterList ImageClassifier::parameters() {
    nn::ParameterList out = encoder_.parameters();
    output_.collect(out);
    return out;
}

TextClassifier train_text_classifier(const std::vector<PreparedExample>& train, const std::vector<PreparedExample>& val,
                                     const Vocabulary& vocab, const TextEncoderConfig& encoder, int num_classes,
                                     const TrainConfig& config, TrainingHistory* history) {
    require_two_classes(train);
    TextClassifier model(vocab, encoder, num_classes, config.seed);
    std::vector<std::vector<int>> train_bags;
    std::vector<std::vector<int>> val_bags;
    for (const auto& ex : train) train_bags.push_back(model.encoder().token_ids(ex.text));
    for (const auto& ex : val) val_bags.push_back(model.encoder().token_ids(ex.text));
    const auto train_labels = labels_of(train);
    const auto val_labels = labels_of(val);

    const nn::ParameterList params = model.parameters();
    nn::Adam opt(params, config.lr);
    auto step = [&](std::span<const std::size_t> batch) {
        std::vector<std::vector<int>> bags;
        std::vector<int> labels;
        for (auto i : batch) {
            bags.push_back(train_bags[i]);
            labels.push_back(train_labels[i]);
        }
        opt.zero_grad();
        TextEncoder::Cache cache;
        const Matrix repr = model.encoder().forward(bags, cache);
        Matrix grad;
        const double loss = nn::softmax_cross_entropy(model.output().forward(repr), labels, &grad);
        model.encoder().backward(cache, model.output().backward(repr, grad, true));
        opt.step();
        return loss;
    };
    auto val_loss = [&] {
        if (val.empty()) return 0.0;
        return nn::softmax_cross_entropy(model.logits(val_bags), val_labels, nullptr);
    };
    fit_with_early_stopping(train.size(), config, params, step, val_loss, history);
    return model;
}

ImageClassifier train_image_classifier(const std::vector<PreparedExample>& train, const std::vector<PreparedExample>& val,
                                       const ImageEncoderConfig& encoder, int num_classes, const ImageTrainConfig& config,
                                       TrainingHistory* history) {
    require_two_classes(train);
    ImageClassifier model(encoder, num_classes, config.seed);
    const auto train_labels = labels_of(train);
    const auto val_labels = labels_of(val);
    std::vector<const Matrix*> train_stems;
    std::vector<const Matrix*> val_stems;
    for (const auto& ex : train) train_stems.push_back(&ex.stem);
    for (const auto& ex : val) val_stems.push_back(&ex.stem);

    // Frozen backbone: features are fixed, so compute them once.
    Matrix train_features;
    if (config.freeze_backbone) train_features = model.encoder().backbone(train_stems);

    nn::ParameterList params = model.encoder().head_parameters();
    model.output().collect(params);
    if (!config.freeze_backbone) {
        const auto bb = model.encoder().backbone_parameters();
        params.insert(params.begin(), bb.begin(), bb.end());
    }
    nn::Adam opt(params, config.lr);

    auto step = [&](std::span<const std::size_t> batch) {
        std::vector<int> labels;
        for (auto i : batch) labels.push_back(train_labels[i]);
        opt.zero_grad();
        ImageEncoder::Cache cache;
        Matrix features;
        if (config.freeze_backbone) {
            features = nn::gather_rows(train_features, batch);
        } else {
            std::vector<const Matrix*> stems;
            for (auto i : batch) stems.push_back(train_stems[i]);
            features = model.encoder().backbone(stems, cache);
        }
        const Matrix repr = model.encoder().head(features, cache);
        Matrix grad;
        const double loss = nn::softmax_cross_entropy(model.output().forward(repr), labels, &grad);
        const Matrix g_features = model.encoder().backward_head(cache, model.output().backward(repr, grad, true));
        if (!config.freeze_backbone) model.encoder().backward_backbone(cache, g_features);
        opt.step();
        return loss;
    };
    auto val_loss = [&] {
        if (val.empty()) return 0.0;
        const Matrix logits = model.output().forward(model.encoder().encode_stems(val_stems));
        return nn::softmax_cross_entropy(logits, val_labels, nullptr);
    };
    fit_with_early_stopping(train.size(), config, params, step, val_loss, history);
    return model;
}

// --- fusion -------------------------------------------------------------------

RowVector fuse_representations(const RowVector& text_repr, const RowVector& image_repr) {
    RowVector out(text_repr.size() + image_repr.size());
    out << text_repr, image_repr;
    return out;
}

std::size_t dense_parameter_count(const std::vector<int>& widths) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        n += static_cast<std::size_t>(widths[i]) * static_cast<std::size_t>(widths[i + 1]) + static_cast<std::size_t>(widths[i + 1]);
    }
    return n;
}

RowVector ClassifierBundle::text_repr(const std::string& preprocessed) const {
    const auto& enc = text.encoder();
    return enc.encode_bags({enc.token_ids(preprocessed)}).row(0);
}

RowVector ClassifierBundle::image_repr(const Matrix& stem) const { return image.encoder().encode_stems({&stem}).row(0); }

ClassDistribution ClassifierBundle::predict_from_reprs(const RowVector& t, const RowVector& i) const {
    return distribution_from_logits(fusion.forward(fuse_representations(t, i)).row(0));
}

ClassDistribution ClassifierBundle::predict(const std::string& preprocessed_text, const Matrix& stem) const {
    return predict_from_reprs(text_repr(preprocessed_text), image_repr(stem));
}

nn::ParameterList ClassifierBundle::unimodal_parameters() {
    nn::ParameterList out = text.parameters();
    const auto img = image.parameters();
    out.insert(out.end(), img.begin(), img.end());
    return out;
}

nn::ParameterList ClassifierBundle::fusion_parameters() {
    nn::ParameterList out;
    fusion.collect(out);
    return out;
}

void train_fusion_classifier(ClassifierBundle& bundle, const std::vector<PreparedExample>& train,
                             const std::vector<PreparedExample>& val, const FusionConfig& fusion, const TrainConfig& config,
                             TrainingHistory* history) {
    require_two_classes(train);
    const int in = bundle.fusion_input_dim();
    if (fusion.input_dim != 0 && fusion.input_dim != in) {
        throw InvalidArgument("fusion input width " + std::to_string(in) + " does not match declared " +
                              std::to_string(fusion.input_dim));
    }
    std::vector<int> widths{in};
    widths.insert(widths.end(), fusion.hidden.begin(), fusion.hidden.end());
    widths.push_back(bundle.num_classes);
    std::mt19937_64 rng(mix_seed(config.seed, "fusion"));
    bundle.fusion = nn::Mlp(widths, false, rng, "fusion");

    auto reprs = [&](const std::vector<PreparedExample>& xs) {
        Matrix out(static_cast<Eigen::Index>(xs.size()), in);
        std::vector<std::vector<int>> bags;
        std::vector<const Matrix*> stems;
        for (const auto& ex : xs) {
            bags.push_back(bundle.text.encoder().token_ids(ex.text));
            stems.push_back(&ex.stem);
        }
        if (xs.empty()) return out;
        out.leftCols(bundle.text.encoder().dim()) = bundle.text.encoder().encode_bags(bags);
        out.rightCols(bundle.image.encoder().dim()) = bundle.image.encoder().encode_stems(stems);
        return out;
    };
    const Matrix train_x = reprs(train);
    const Matrix val_x = reprs(val);
    const auto train_labels = labels_of(train);
    const auto val_labels = labels_of(val);

    const nn::ParameterList params = bundle.fusion_parameters();
    nn::Adam opt(params, config.lr);
    auto step = [&](std::span<const std::size_t> batch) {
        std::vector<int> labels;
        for (auto i : batch) labels.push_back(train_labels[i]);
        opt.zero_grad();
        const Matrix x = nn::gather_rows(train_x, batch);
        nn::MlpCache cache;
        const Matrix logits = bundle.fusion.forward(x, cache);
        Matrix grad;
        const double loss = nn::softmax_cross_entropy(logits, labels, &grad);
        bundle.fusion.backward(cache, grad, true);
        opt.step();
        return loss;
    };
    auto val_loss = [&] {
        if (val.empty()) return 0.0;
        return nn::softmax_cross_entropy(bundle.fusion.forward(val_x), val_labels, nullptr);
    };
    fit_with_early_stopping(train.size(), config, params, step, val_loss, history);
}

void ClassifierBundle::save(const std::filesystem::path& dir) {
    const auto& te = text.encoder().config();
    const auto& ie = image.encoder().config();
    save_checkpoint(dir / "text", "text-classifier", text.parameters(),
                    json{{"embed_dim", te.embed_dim}, {"hidden", te.hidden}, {"output_dim", te.output_dim}, {"num_classes", num_classes}},
                    &text.encoder().vocabulary());
    save_checkpoint(dir / "image", "image-classifier", image.parameters(),
                    json{{"conv_channels", ie.conv_channels}, {"hidden", ie.hidden}, {"output_dim", ie.output_dim}, {"num_classes", num_classes}});
    save_checkpoint(dir / "fusion", "fusion-head", fusion_parameters(), json{{"widths", fusion.widths()}});
}

ClassifierBundle ClassifierBundle::load(const std::filesystem::path& dir) {
    ClassifierBundle b;
    const json td = read_checkpoint_manifest(dir / "text", "text-classifier");
    const json id = read_checkpoint_manifest(dir / "image", "image-classifier");
    const json fd = read_checkpoint_manifest(dir / "fusion", "fusion-head");
    b.num_classes = td.at("num_classes").get<int>();
    TextEncoderConfig tc{td.at("embed_dim").get<int>(), td.at("hidden").get<int>(), td.at("output_dim").get<int>()};
    ImageEncoderConfig ic{id.at("conv_channels").get<int>(), id.at("hidden").get<int>(), id.at("output_dim").get<int>()};
    b.text = TextClassifier(Vocabulary::load(dir / "text" / "vocab.txt"), tc, b.num_classes, 0);
    b.image = ImageClassifier(ic, b.num_classes, 0);
    std::mt19937_64 rng(0);
    b.fusion = nn::Mlp(fd.at("widths").get<std::vector<int>>(), false, rng, "fusion");
    load_checkpoint_parameters(dir / "text", b.text.parameters());
    load_checkpoint_parameters(dir / "image", b.image.parameters());
    load_checkpoint_parameters(dir / "fusion", b.fusion_parameters());
    return b;
}

// --- metrics ------------------------------------------------------------------

ClassificationMetrics classification_metrics(std::span<const int> predicted, std::span<const int> truth, int num_classes,
                                             Averaging averaging) {
    if (predicted.size() != truth.size()) throw InvalidArgument("prediction/label count mismatch");
    if (truth.empty()) throw InvalidArgument("classification metrics need at least one example");
    std::vector<double> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0), support(num_classes, 0);
    std::vector<bool> present(num_classes, false);
    double correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int p = predicted[i];
        const int t = truth[i];
        if (p < 0 || p >= num_classes || t < 0 || t >= num_classes) throw InvalidArgument("class index out of range");
        present[p] = present[t] = true;
        support[t] += 1;
        if (p == t) {
            tp[t] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn[t] += 1;
        }
    }
    ClassificationMetrics m;
    m.accuracy = correct / static_cast<double>(truth.size());
    if (averaging == Averaging::micro) {
        m.precision = m.recall = m.f1 = m.accuracy;
        return m;
    }
    double weight_sum = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (!present[c]) continue;
        const double prec = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
        const double rec = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
        const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        const double w = averaging == Averaging::weighted ? support[c] : 1.0;
        m.precision += w * prec;
        m.recall += w * rec;
        m.f1 += w * f1;
        weight_sum += w;
    }
    m.precision /= weight_sum;
    m.recall /= weight_sum;
    m.f1 /= weight_sum;
    return m;
}

ClassificationMetrics evaluate_classifier(const ClassifierBundle& bundle, const std::vector<PreparedExample>& testset,
                                          Averaging averaging) {
    if (testset.empty()) throw InvalidArgument("evaluate_classifier: empty test set");
    std::vector<int> pred;
    std::vector<int> truth;
    for (const auto& ex : testset) {
        pred.push_back(bundle.predict(ex.text, ex.stem).predicted());
        truth.push_back(ex.label);
    }
    return classification_metrics(pred, truth, bundle.num_classes, averaging);
}

}  // namespace xmd
