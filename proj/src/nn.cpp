#include "xmd/nn.hpp"

#include "xmd/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace xmd::nn {

namespace {

Matrix uniform_matrix(int rows, int cols, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Parameter make_param(std::string name, Matrix value) {
    Parameter p{std::move(name), std::move(value), {}};
    p.zero_grad();
    return p;
}

}  // namespace

Linear::Linear(int in, int out, std::mt19937_64& rng, const std::string& name) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = make_param(name + ".weight", uniform_matrix(out, in, bound, rng));
    bias = make_param(name + ".bias", uniform_matrix(1, out, bound, rng));
}

Matrix Linear::forward(const Matrix& x) const {
    Matrix y = x * weight.value.transpose();
    y.rowwise() += bias.value.row(0);
    return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& grad_out, bool accumulate) {
    if (accumulate) {
        weight.grad.noalias() += grad_out.transpose() * x;
        bias.grad.row(0) += grad_out.colwise().sum();
    }
    return grad_out * weight.value;
}

Mlp::Mlp(const std::vector<int>& widths, bool relu_output, std::mt19937_64& rng, const std::string& name)
    : relu_output_(relu_output) {
    if (widths.size() < 2) throw InvalidArgument("Mlp needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        layers_.emplace_back(widths[i], widths[i + 1], rng, name + "." + std::to_string(i));
    }
}

Matrix Mlp::forward(const Matrix& x) const {
    Matrix h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(h);
        if (i + 1 < layers_.size() || relu_output_) h = relu(h);
    }
    return h;
}

Matrix Mlp::forward(const Matrix& x, MlpCache& cache) const {
    cache.inputs.clear();
    cache.pre_activations.clear();
    Matrix h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        cache.inputs.push_back(h);
        Matrix z = layers_[i].forward(h);
        const bool act = i + 1 < layers_.size() || relu_output_;
        h = act ? relu(z) : z;
        cache.pre_activations.push_back(std::move(z));
    }
    return h;
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& grad_out, bool accumulate) {
    Matrix g = grad_out;
    for (std::size_t k = layers_.size(); k-- > 0;) {
        const bool act = k + 1 < layers_.size() || relu_output_;
        if (act) g = (cache.pre_activations[k].array() > 0.0).select(g, 0.0);
        g = layers_[k].backward(cache.inputs[k], g, accumulate);
    }
    return g;
}

std::vector<int> Mlp::widths() const {
    std::vector<int> w;
    if (layers_.empty()) return w;
    w.push_back(layers_.front().in_dim());
    for (const auto& l : layers_) w.push_back(l.out_dim());
    return w;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.value.size() + l.bias.value.size());
    return n;
}

void Mlp::collect(ParameterList& out) {
    for (auto& l : layers_) l.collect(out);
}

EmbeddingBag::EmbeddingBag(int vocab, int dim, std::mt19937_64& rng, const std::string& name) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix t(vocab, dim);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
    table = make_param(name + ".table", std::move(t));
}

Matrix EmbeddingBag::forward(const std::vector<std::vector<int>>& bags) const {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(bags.size()), dim());
    for (std::size_t r = 0; r < bags.size(); ++r) {
        if (bags[r].empty()) continue;
        for (int id : bags[r]) out.row(static_cast<Eigen::Index>(r)) += table.value.row(id);
        out.row(static_cast<Eigen::Index>(r)) /= static_cast<double>(bags[r].size());
    }
    return out;
}

void EmbeddingBag::backward(const std::vector<std::vector<int>>& bags, const Matrix& grad_out) {
    for (std::size_t r = 0; r < bags.size(); ++r) {
        if (bags[r].empty()) continue;
        const double scale = 1.0 / static_cast<double>(bags[r].size());
        for (int id : bags[r]) table.grad.row(id) += scale * grad_out.row(static_cast<Eigen::Index>(r));
    }
}

Conv3x3::Conv3x3(int in_channels, int out_channels, std::mt19937_64& rng, const std::string& name)
    : in_channels_(in_channels) {
    const double bound = 1.0 / std::sqrt(9.0 * in_channels);
    weight = make_param(name + ".weight", uniform_matrix(out_channels, 9 * in_channels, bound, rng));
    bias = make_param(name + ".bias", uniform_matrix(1, out_channels, bound, rng));
}

Matrix Conv3x3::im2col(const Matrix& image, int height, int width) const {
    Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(height) * width, 9 * in_channels_);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const Eigen::Index row = static_cast<Eigen::Index>(y) * width + x;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy;
                    const int xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                    const int k = (dy + 1) * 3 + (dx + 1);
                    cols.block(row, k * in_channels_, 1, in_channels_) =
                        image.row(static_cast<Eigen::Index>(yy) * width + xx);
                }
            }
        }
    }
    return cols;
}

Matrix Conv3x3::forward_cols(const Matrix& cols) const {
    Matrix y = cols * weight.value.transpose();
    y.rowwise() += bias.value.row(0);
    return y;
}

void Conv3x3::backward_cols(const Matrix& cols, const Matrix& grad_out) {
    weight.grad.noalias() += grad_out.transpose() * cols;
    bias.grad.row(0) += grad_out.colwise().sum();
}

Adam::Adam(ParameterList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        p->zero_grad();
    }
}

void Adam::zero_grad() {
    for (auto* p : params_) p->grad.setZero();
}

void Adam::step() {
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
        p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - mx).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad) {
    const Matrix probs = softmax_rows(logits);
    const auto n = static_cast<double>(logits.rows());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        loss -= std::log(std::max(probs(r, labels[static_cast<std::size_t>(r)]), 1e-300));
    }
    if (grad != nullptr) {
        *grad = probs;
        for (Eigen::Index r = 0; r < logits.rows(); ++r) (*grad)(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
        *grad /= n;
    }
    return loss / n;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
    Matrix out(probs.rows(), probs.cols());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const double dot = probs.row(r).dot(grad_probs.row(r));
        out.row(r) = probs.row(r).array() * (grad_probs.row(r).array() - dot);
    }
    return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

std::uint64_t hash_parameters(const ParameterList& params) {
    Fnv1a h;
    for (const auto* p : params) {
        h.update(p->name);
        h.update_pod(p->value.rows());
        h.update_pod(p->value.cols());
        h.update(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
    }
    return h.digest();
}

std::size_t count_parameters(const ParameterList& params) {
    std::size_t n = 0;
    for (const auto* p : params) n += static_cast<std::size_t>(p->value.size());
    return n;
}

namespace {
constexpr char kMagic[4] = {'X', 'M', 'D', 'P'};
constexpr std::uint32_t kBlobVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("truncated parameter blob");
    return v;
}
}  // namespace

void save_parameters(const std::filesystem::path& path, const ParameterList& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write parameters: " + path.string());
    out.write(kMagic, 4);
    write_pod(out, kBlobVersion);
    write_pod(out, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        write_pod(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_pod(out, static_cast<std::uint32_t>(p->value.rows()));
        write_pod(out, static_cast<std::uint32_t>(p->value.cols()));
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
}

void load_parameters(const std::filesystem::path& path, const ParameterList& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot read parameters: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("not a parameter blob: " + path.string());
    if (read_pod<std::uint32_t>(in) != kBlobVersion) throw ParseError("unsupported parameter blob version");
    if (read_pod<std::uint32_t>(in) != params.size()) throw ParseError("parameter count mismatch in " + path.string());
    for (auto* p : params) {
        const auto len = read_pod<std::uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto rows = read_pod<std::uint32_t>(in);
        const auto cols = read_pod<std::uint32_t>(in);
        if (name != p->name || rows != p->value.rows() || cols != p->value.cols()) {
            throw ParseError("parameter layout mismatch at '" + name + "' in " + path.string());
        }
        in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
        if (!in) throw ParseError("truncated parameter blob: " + path.string());
        p->zero_grad();
    }
}

void copy_parameters(const ParameterList& from, const ParameterList& to) {
    if (from.size() != to.size()) throw InvalidArgument("copy_parameters: structure mismatch");
    for (std::size_t i = 0; i < from.size(); ++i) to[i]->value = from[i]->value;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

}  // namespace xmd::nn
