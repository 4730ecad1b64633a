#include "xmd/encoders.hpp"

#include "xmd/common.hpp"
#include "xmd/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace xmd {

using nn::Matrix;
using nn::RowVector;
using nlohmann::json;

Matrix image_stem(const ImageTensor& image) {
    constexpr int kBlock = kImageSide / kStemSide;
    Matrix stem = Matrix::Zero(kStemSide * kStemSide, 3);
    for (int y = 0; y < kImageSide; ++y) {
        for (int x = 0; x < kImageSide; ++x) {
            const Eigen::Index row = (y / kBlock) * kStemSide + (x / kBlock);
            for (int c = 0; c < 3; ++c) stem(row, c) += image.at(x, y, c);
        }
    }
    stem /= static_cast<double>(kBlock * kBlock);
    return stem;
}

double cosine(const RowVector& a, const RowVector& b, bool* degenerate) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        if (degenerate != nullptr) *degenerate = true;
        return 0.0;
    }
    if (degenerate != nullptr) *degenerate = false;
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

// --- text encoder -------------------------------------------------------------

TextEncoder::TextEncoder(Vocabulary vocab, const TextEncoderConfig& config, std::uint64_t seed)
    : vocab_(std::move(vocab)), config_(config) {
    std::mt19937_64 rng(mix_seed(seed, "text-encoder"));
    embedding_ = nn::EmbeddingBag(vocab_.size(), config.embed_dim, rng, "text.embedding");
    ffn_ = nn::Mlp({config.embed_dim, config.hidden, config.output_dim}, true, rng, "text.ffn");
}

std::vector<int> TextEncoder::token_ids(const std::string& text) const { return vocab_.encode(tokenize(text)); }

Matrix TextEncoder::encode_bags(const std::vector<std::vector<int>>& bags) const {
    return ffn_.forward(embedding_.forward(bags));
}

RowVector TextEncoder::encode(const std::string& text) const { return encode_bags({token_ids(text)}).row(0); }

Matrix TextEncoder::forward(const std::vector<std::vector<int>>& bags, Cache& cache) const {
    cache.bags = bags;
    return ffn_.forward(embedding_.forward(bags), cache.ffn);
}

void TextEncoder::backward(const Cache& cache, const Matrix& grad_out) {
    const Matrix g = ffn_.backward(cache.ffn, grad_out, true);
    embedding_.backward(cache.bags, g);
}

Matrix TextEncoder::forward_from_mean(const Matrix& mean_embedding, nn::MlpCache& cache) const {
    return ffn_.forward(mean_embedding, cache);
}

Matrix TextEncoder::backward_to_mean(const nn::MlpCache& cache, const Matrix& grad_out) {
    return ffn_.backward(cache, grad_out, false);
}

nn::ParameterList TextEncoder::parameters() {
    nn::ParameterList out;
    embedding_.collect(out);
    ffn_.collect(out);
    return out;
}

// --- image encoder ------------------------------------------------------------

namespace {
}

ImageEncoder::ImageEncoder(const ImageEncoderConfig& config, std::uint64_t seed) : config_(config) {
    std::mt19937_64 rng(mix_seed(seed, "image-encoder"));
    conv_ = nn::Conv3x3(3, config.conv_channels, rng, "image.conv");
    head_ = nn::Mlp({backbone_dim(), config.hidden, config.output_dim}, true, rng, "image.head");
}

int ImageEncoder::backbone_dim() const { return 2 * config_.conv_channels; }

Matrix ImageEncoder::backbone(const std::vector<const Matrix*>& stems) const {
    Cache scratch;
    return backbone(stems, scratch);
}

// Global average and global max pooling of the rectified conv map, so the
// features do not depend on where a motif sits in the frame.
Matrix ImageEncoder::backbone(const std::vector<const Matrix*>& stems, Cache& cache) const {
    const int ch = config_.conv_channels;
    Matrix out(static_cast<Eigen::Index>(stems.size()), backbone_dim());
    cache.cols.clear();
    cache.conv_pre.clear();
    for (std::size_t b = 0; b < stems.size(); ++b) {
        Matrix cols = conv_.im2col(*stems[b], kStemSide, kStemSide);
        Matrix pre = conv_.forward_cols(cols);
        const Matrix act = nn::relu(pre);
        const auto row = static_cast<Eigen::Index>(b);
        out.block(row, 0, 1, ch) = act.colwise().mean();
        out.block(row, ch, 1, ch) = act.colwise().maxCoeff();
        cache.cols.push_back(std::move(cols));
        cache.conv_pre.push_back(std::move(pre));
    }
    return out;
}

Matrix ImageEncoder::head(const Matrix& features) const { return head_.forward(features); }
Matrix ImageEncoder::head(const Matrix& features, Cache& cache) const { return head_.forward(features, cache.head); }

Matrix ImageEncoder::encode_stems(const std::vector<const Matrix*>& stems) const { return head(backbone(stems)); }

RowVector ImageEncoder::encode(const ImageTensor& image) const {
    const Matrix stem = image_stem(image);
    return encode_stems({&stem}).row(0);
}

Matrix ImageEncoder::backward_head(const Cache& cache, const Matrix& grad_out) {
    return head_.backward(cache.head, grad_out, true);
}

void ImageEncoder::backward_backbone(const Cache& cache, const Matrix& grad_features) {
    const int ch = config_.conv_channels;
    const double positions = static_cast<double>(kStemSide * kStemSide);
    for (std::size_t b = 0; b < cache.cols.size(); ++b) {
        const auto row = static_cast<Eigen::Index>(b);
        const Matrix& pre = cache.conv_pre[b];
        Matrix g = grad_features.block(row, 0, 1, ch).replicate(pre.rows(), 1) / positions;
        for (int c = 0; c < ch; ++c) {
            // The max was taken over rectified values; ties go to the first position.
            Eigen::Index at = 0;
            pre.col(c).maxCoeff(&at);
            g(at, c) += grad_features(row, ch + c);
        }
        g = (pre.array() > 0.0).select(g, 0.0);
        conv_.backward_cols(cache.cols[b], g);
    }
}

nn::ParameterList ImageEncoder::backbone_parameters() {
    nn::ParameterList out;
    conv_.collect(out);
    return out;
}

nn::ParameterList ImageEncoder::head_parameters() {
    nn::ParameterList out;
    head_.collect(out);
    return out;
}

nn::ParameterList ImageEncoder::parameters() {
    nn::ParameterList out = backbone_parameters();
    head_.collect(out);
    return out;
}

// --- joint embedder -----------------------------------------------------------

namespace {

Matrix l2_normalize_rows(const Matrix& x, std::vector<double>* norms = nullptr) {
    Matrix y = x;
    if (norms != nullptr) norms->clear();
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double n = std::max(x.row(r).norm(), 1e-12);
        y.row(r) /= n;
        if (norms != nullptr) norms->push_back(n);
    }
    return y;
}

Matrix l2_normalize_backward(const Matrix& y, const std::vector<double>& norms, const Matrix& grad_y) {
    Matrix g(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double dot = y.row(r).dot(grad_y.row(r));
        g.row(r) = (grad_y.row(r) - dot * y.row(r)) / norms[static_cast<std::size_t>(r)];
    }
    return g;
}

}  // namespace

JointEmbedder::JointEmbedder(Vocabulary vocab, const JointEmbedderConfig& config)
    : vocab_(std::move(vocab)), config_(config) {
    std::mt19937_64 rng(mix_seed(config.seed, "joint-embedder"));
    text_embedding_ = nn::EmbeddingBag(vocab_.size(), config.embed_dim, rng, "joint.text.embedding");
    text_proj_ = nn::Linear(config.embed_dim, config.joint_dim, rng, "joint.text.proj");
    image_proj_ = nn::Mlp({kStemSide * kStemSide * 3, config.image_hidden, config.joint_dim}, false, rng, "joint.image");
}

void JointEmbedder::save(const std::filesystem::path& dir) {
    save_checkpoint(dir, "joint-embedder", parameters(),
                    nlohmann::json{{"embed_dim", config_.embed_dim},
                                   {"image_hidden", config_.image_hidden},
                                   {"joint_dim", config_.joint_dim},
                                   {"temperature", config_.temperature}},
                    &vocab_);
}

JointEmbedder JointEmbedder::load(const std::filesystem::path& dir) {
    const nlohmann::json dims = read_checkpoint_manifest(dir, "joint-embedder");
    JointEmbedderConfig config;
    config.embed_dim = dims.at("embed_dim").get<int>();
    config.image_hidden = dims.at("image_hidden").get<int>();
    config.joint_dim = dims.at("joint_dim").get<int>();
    config.temperature = dims.at("temperature").get<double>();
    JointEmbedder joint(Vocabulary::load(dir / "vocab.txt"), config);
    load_checkpoint_parameters(dir, joint.parameters());
    return joint;
}

Matrix JointEmbedder::text_raw(const std::vector<std::vector<int>>& bags) const {
    return text_proj_.forward(text_embedding_.forward(bags));
}

bool JointEmbedder::has_signal(const std::string& text) const {
    for (int id : vocab_.encode(tokenize(text))) {
        if (id != Vocabulary::kUnk) return true;
    }
    return false;
}

RowVector JointEmbedder::embed_text(const std::string& text) const {
    std::vector<int> ids;
    for (int id : vocab_.encode(tokenize(text))) {
        if (id != Vocabulary::kUnk) ids.push_back(id);
    }
    if (ids.empty()) return RowVector::Zero(config_.joint_dim);
    return l2_normalize_rows(text_raw({ids})).row(0);
}

RowVector JointEmbedder::embed_stem(const Matrix& stem) const {
    const Matrix flat = Eigen::Map<const Matrix>(stem.data(), 1, stem.size());
    return l2_normalize_rows(image_proj_.forward(flat)).row(0);
}

RowVector JointEmbedder::embed_image(const ImageTensor& image) const { return embed_stem(image_stem(image)); }

double JointEmbedder::train_step(const std::vector<std::vector<int>>& bags, const std::vector<const Matrix*>& stems,
                                 nn::Adam& opt) {
    const auto n = static_cast<Eigen::Index>(bags.size());
    Matrix flat(n, kStemSide * kStemSide * 3);
    for (Eigen::Index i = 0; i < n; ++i) flat.row(i) = Eigen::Map<const RowVector>(stems[static_cast<std::size_t>(i)]->data(), flat.cols());

    const Matrix text_mean = text_embedding_.forward(bags);
    const Matrix t_raw = text_proj_.forward(text_mean);
    nn::MlpCache img_cache;
    const Matrix i_raw = image_proj_.forward(flat, img_cache);
    std::vector<double> t_norms;
    std::vector<double> i_norms;
    const Matrix t = l2_normalize_rows(t_raw, &t_norms);
    const Matrix im = l2_normalize_rows(i_raw, &i_norms);

    const double inv_tau = 1.0 / config_.temperature;
    const Matrix logits = t * im.transpose() * inv_tau;
    std::vector<int> diag(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = static_cast<int>(i);
    Matrix g_rows;
    Matrix g_cols;
    const Matrix logits_t = logits.transpose();
    const double loss = 0.5 * (nn::softmax_cross_entropy(logits, diag, &g_rows) + nn::softmax_cross_entropy(logits_t, diag, &g_cols));
    const Matrix g_logits = 0.5 * (g_rows + g_cols.transpose());

    const Matrix g_t = g_logits * im * inv_tau;
    const Matrix g_i = g_logits.transpose() * t * inv_tau;
    opt.zero_grad();
    const Matrix g_t_raw = l2_normalize_backward(t, t_norms, g_t);
    const Matrix g_i_raw = l2_normalize_backward(im, i_norms, g_i);
    const Matrix g_mean = text_proj_.backward(text_mean, g_t_raw, true);
    text_embedding_.backward(bags, g_mean);
    image_proj_.backward(img_cache, g_i_raw, true);
    opt.step();
    return loss;
}

nn::ParameterList JointEmbedder::parameters() {
    nn::ParameterList out;
    text_embedding_.collect(out);
    text_proj_.collect(out);
    image_proj_.collect(out);
    return out;
}

JointEmbedder train_joint_embedder(const std::vector<MultimodalExample>& train, const JointEmbedderConfig& config,
                                   const ChannelNorm& norm) {
    if (train.size() < 2) throw InvalidArgument("train_joint_embedder needs at least 2 examples");
    std::vector<std::string> texts;
    for (const auto& ex : train) texts.push_back(preprocess_text(ex.text));
    JointEmbedder joint(build_vocabulary(texts, 1 << 20, 1), config);

    std::vector<std::vector<int>> bags;
    std::vector<Matrix> stems;
    for (std::size_t i = 0; i < train.size(); ++i) {
        bags.push_back(joint.vocabulary().encode(tokenize(texts[i])));
        stems.push_back(image_stem(preprocess_image(train[i].image, norm, train[i].id)));
    }
    nn::Adam opt(joint.parameters(), config.lr);
    std::mt19937_64 rng(mix_seed(config.seed, "joint-train"));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = nn::shuffled_indices(train.size(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<std::vector<int>> b;
            std::vector<const Matrix*> s;
            for (std::size_t k = start; k < end; ++k) {
                b.push_back(bags[order[k]]);
                s.push_back(&stems[order[k]]);
            }
            joint.train_step(b, s, opt);
        }
    }
    return joint;
}

PairSeparation joint_pair_separation(const JointEmbedder& joint, const std::vector<MultimodalExample>& examples,
                                     const ChannelNorm& norm) {
    std::vector<RowVector> t;
    std::vector<RowVector> im;
    for (const auto& ex : examples) {
        t.push_back(joint.embed_text(preprocess_text(ex.text)));
        im.push_back(joint.embed_image(preprocess_image(ex.image, norm, ex.id)));
    }
    PairSeparation sep;
    double mism = 0;
    std::size_t n_mism = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t j = 0; j < im.size(); ++j) {
            const double c = cosine(t[i], im[j]);
            if (i == j) {
                sep.matched += c;
            } else {
                mism += c;
                ++n_mism;
            }
        }
    }
    sep.matched /= static_cast<double>(t.size());
    sep.mismatched = n_mism ? mism / static_cast<double>(n_mism) : 0.0;
    return sep;
}

// --- checkpoints --------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const nn::ParameterList& params,
                     const json& dims, const Vocabulary* vocab) {
    std::filesystem::create_directories(dir);
    nn::save_parameters(dir / "params.bin", params);
    json manifest = {{"format", "xmd-checkpoint"},
                     {"version", kCheckpointVersion},
                     {"kind", kind},
                     {"dims", dims},
                     {"parameter_count", nn::count_parameters(params)},
                     {"parameter_hash", to_hex(nn::hash_parameters(params))}};
    if (vocab != nullptr) {
        vocab->save(dir / "vocab.txt");
        manifest["vocab_hash"] = to_hex(vocab->hash());
    }
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

json read_checkpoint_manifest(const std::filesystem::path& dir, const std::string& kind) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw LoadError("missing checkpoint manifest in " + dir.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("bad checkpoint manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "xmd-checkpoint" || manifest.value("version", 0) != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint format in " + dir.string());
    }
    if (manifest.value("kind", "") != kind) throw ParseError("checkpoint in " + dir.string() + " is not a " + kind);
    if (manifest.contains("vocab_hash")) {
        const Vocabulary vocab = Vocabulary::load(dir / "vocab.txt");
        if (to_hex(vocab.hash()) != manifest.at("vocab_hash").get<std::string>()) {
            throw ParseError("vocabulary hash mismatch in " + dir.string());
        }
    }
    return manifest.at("dims");
}

void load_checkpoint_parameters(const std::filesystem::path& dir, const nn::ParameterList& params) {
    nn::load_parameters(dir / "params.bin", params);
}

}  // namespace xmd
