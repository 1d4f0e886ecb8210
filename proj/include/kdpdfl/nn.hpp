#pragma once

// Dense classifier engine: optional input batch normalization, ReLU hidden
// layers, linear output layer, mean cross-entropy loss and analytic gradients.
//
// All trainable parameters of one model live in a single flat vector so that
// peers can exchange, compare and mix models without knowing their layout.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdpdfl/matrix.hpp"

namespace kdpdfl::nn {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Activation { relu };

struct Architecture {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t output_dim = 0;
    bool use_batchnorm = false;
    Activation activation = Activation::relu;

    // Throws std::invalid_argument when any dimension is zero or output_dim < 2.
    void validate() const;

    // Trainable parameters: batchnorm scale/shift on the input plus every
    // linear layer's weights and biases.
    std::size_t param_count() const;

    // Non-trainable batchnorm running mean and variance.
    std::size_t buffer_count() const;

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

std::string describe(const Architecture& arch);

// Flat parameters of one model plus its batchnorm running statistics.
class ParamVector {
public:
    ParamVector(Architecture arch, std::vector<double> values, std::vector<double> buffers);

    const Architecture& arch() const { return arch_; }
    std::size_t param_count() const { return values_.size(); }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::span<const double> buffers() const { return buffers_; }
    std::span<double> buffers() { return buffers_; }

    friend bool operator==(const ParamVector&, const ParamVector&) = default;

private:
    Architecture arch_;
    std::vector<double> values_;
    std::vector<double> buffers_;
};

struct Batch {
    Matrix features;
    std::vector<std::size_t> labels;

    std::size_t size() const { return labels.size(); }
    // Throws std::invalid_argument on row-count mismatch or label >= n_classes.
    void validate(std::size_t n_classes) const;
};

enum class Mode { train, eval };

struct ForwardResult {
    Matrix logits;  // pre-softmax, one row per sample
    double loss = 0.0;
};

struct GradResult {
    double loss = 0.0;
    std::vector<double> grad;
    // Biased batch statistics of the input normalization (empty without batchnorm).
    std::size_t batch_size = 0;
    std::vector<double> batch_mean;
    std::vector<double> batch_var;
};

// Rows that are probability vectors: nonnegative, each summing to one.
class ProbMatrix {
public:
    // Throws std::invalid_argument unless every row is a probability vector (1e-9).
    explicit ProbMatrix(Matrix probabilities);
    static ProbMatrix from_logits(const Matrix& logits);

    const Matrix& matrix() const { return rows_; }
    std::size_t rows() const { return rows_.rows; }
    std::size_t cols() const { return rows_.cols; }

    friend bool operator==(const ProbMatrix&, const ProbMatrix&) = default;

private:
    Matrix rows_;
};

ParamVector init_model(const Architecture& arch, std::uint64_t seed);

// Pre-softmax logits for a feature matrix.
Matrix predict_logits(const ParamVector& model, const Matrix& features, Mode mode);

ForwardResult forward(const ParamVector& model, const Batch& batch, Mode mode);

// Train-mode loss and gradient of the mean cross-entropy.
GradResult loss_and_grad(const ParamVector& model, const Batch& batch);

ParamVector sgd_step(const ParamVector& model, std::span<const double> grad, double lr);

void update_running_stats(ParamVector& model, const GradResult& stats,
                          double momentum = kBatchNormMomentum);

// One minibatch SGD step including the running-statistics update. Returns the loss.
double train_step(ParamVector& model, const Batch& batch, double lr);

struct WeightedModel {
    double weight;
    std::reference_wrapper<const ParamVector> model;
};

// Elementwise weighted sum of models (trainable values and running statistics).
ParamVector combine(std::span<const WeightedModel> terms);

Matrix softmax_rows(const Matrix& logits);

double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels);

}  // namespace kdpdfl::nn
