#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace xmd::nn {

/// Row-major batch matrix: one sample per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterList = std::vector<Parameter*>;

/// Fully connected layer, y = x W^T + b.
class Linear {
public:
    Linear() = default;
    Linear(int in, int out, std::mt19937_64& rng, const std::string& name);

    [[nodiscard]] Matrix forward(const Matrix& x) const;
    /// Returns dL/dx. Parameter gradients accumulate only when `accumulate` is set.
    Matrix backward(const Matrix& x, const Matrix& grad_out, bool accumulate);

    [[nodiscard]] int in_dim() const { return static_cast<int>(weight.value.cols()); }
    [[nodiscard]] int out_dim() const { return static_cast<int>(weight.value.rows()); }
    void collect(ParameterList& out) { out.push_back(&weight); out.push_back(&bias); }

    Parameter weight;
    Parameter bias;
};

struct MlpCache {
    std::vector<Matrix> inputs;       // input to each layer
    std::vector<Matrix> pre_activations;
};

/// Stack of Linear layers with ReLU between them. `relu_output` also applies
/// ReLU after the last layer (used for penultimate representations).
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::vector<int>& widths, bool relu_output, std::mt19937_64& rng, const std::string& name);

    [[nodiscard]] Matrix forward(const Matrix& x) const;
    Matrix forward(const Matrix& x, MlpCache& cache) const;
    Matrix backward(const MlpCache& cache, const Matrix& grad_out, bool accumulate);

    [[nodiscard]] int in_dim() const { return layers_.front().in_dim(); }
    [[nodiscard]] int out_dim() const { return layers_.back().out_dim(); }
    [[nodiscard]] std::vector<int> widths() const;
    [[nodiscard]] std::size_t parameter_count() const;
    void collect(ParameterList& out);
    [[nodiscard]] bool empty() const { return layers_.empty(); }

private:
    std::vector<Linear> layers_;
    bool relu_output_ = false;
};

/// Mean of token embeddings per row; rows with no ids yield zeros.
class EmbeddingBag {
public:
    EmbeddingBag() = default;
    EmbeddingBag(int vocab, int dim, std::mt19937_64& rng, const std::string& name);

    [[nodiscard]] Matrix forward(const std::vector<std::vector<int>>& bags) const;
    void backward(const std::vector<std::vector<int>>& bags, const Matrix& grad_out);

    [[nodiscard]] int dim() const { return static_cast<int>(table.value.cols()); }
    [[nodiscard]] int vocab() const { return static_cast<int>(table.value.rows()); }
    void collect(ParameterList& out) { out.push_back(&table); }

    Parameter table;
};

/// 3x3 convolution, stride 1, zero padding 1, on a single HWC image stored as
/// an (H*W) x C matrix.
class Conv3x3 {
public:
    Conv3x3() = default;
    Conv3x3(int in_channels, int out_channels, std::mt19937_64& rng, const std::string& name);

    [[nodiscard]] Matrix im2col(const Matrix& image, int height, int width) const;
    [[nodiscard]] Matrix forward_cols(const Matrix& cols) const;
    void backward_cols(const Matrix& cols, const Matrix& grad_out);

    void collect(ParameterList& out) { out.push_back(&weight); out.push_back(&bias); }
    [[nodiscard]] int in_channels() const { return in_channels_; }
    [[nodiscard]] int out_channels() const { return static_cast<int>(weight.value.rows()); }

    Parameter weight;  // out x (9 * in)
    Parameter bias;    // 1 x out

private:
    int in_channels_ = 0;
};

class Adam {
public:
    Adam() = default;
    Adam(ParameterList params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void zero_grad();
    void step();
    [[nodiscard]] double learning_rate() const { return lr_; }

private:
    ParameterList params_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    double lr_ = 1e-3;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long step_ = 0;
};

Matrix relu(const Matrix& x);
Matrix softmax_rows(const Matrix& logits);

/// Mean softmax cross-entropy over rows; writes dL/dlogits (already divided by
/// the row count) when `grad` is non-null.
double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad);

/// Back-propagates dL/dprobs through a row softmax given the probabilities.
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs);

/// Gathers rows (a minibatch) from a matrix.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

std::uint64_t hash_parameters(const ParameterList& params);
std::size_t count_parameters(const ParameterList& params);

/// Binary parameter blob: names and shapes are checked on load.
void save_parameters(const std::filesystem::path& path, const ParameterList& params);
void load_parameters(const std::filesystem::path& path, const ParameterList& params);

/// Copies values between structurally identical parameter lists.
void copy_parameters(const ParameterList& from, const ParameterList& to);

/// Deterministic minibatch order for one epoch.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

}  // namespace xmd::nn
