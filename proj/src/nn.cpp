#include "kdpdfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace kdpdfl::nn {

namespace {

struct LinearSlot {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight_offset = 0;  // out x in, row-major
    std::size_t bias_offset = 0;
};

struct Layout {
    bool batchnorm = false;
    std::size_t input_dim = 0;
    std::size_t gamma_offset = 0;
    std::size_t beta_offset = 0;
    std::vector<LinearSlot> layers;
    std::size_t total = 0;
};

Layout make_layout(const Architecture& arch) {
    Layout layout;
    layout.batchnorm = arch.use_batchnorm;
    layout.input_dim = arch.input_dim;
    std::size_t offset = 0;
    if (arch.use_batchnorm) {
        layout.gamma_offset = 0;
        layout.beta_offset = arch.input_dim;
        offset = 2 * arch.input_dim;
    }
    std::size_t in = arch.input_dim;
    auto add_layer = [&](std::size_t out) {
        LinearSlot slot{in, out, offset, offset + in * out};
        offset += in * out + out;
        layout.layers.push_back(slot);
        in = out;
    };
    for (std::size_t h : arch.hidden_dims) add_layer(h);
    add_layer(arch.output_dim);
    layout.total = offset;
    return layout;
}

// Intermediate values kept for backpropagation.
struct Trace {
    Matrix normalized;  // x_hat, only with batchnorm
    std::vector<double> mean;
    std::vector<double> var;
    std::vector<Matrix> layer_inputs;
    std::vector<Matrix> pre_activations;
};

void check_features(const Architecture& arch, const Matrix& features) {
    if (features.cols != arch.input_dim) {
        std::ostringstream os;
        os << "feature dimension " << features.cols << " does not match model input_dim "
           << arch.input_dim;
        throw std::invalid_argument(os.str());
    }
    if (features.rows == 0) throw std::invalid_argument("empty batch");
}

Matrix run_forward(const ParamVector& model, const Matrix& features, Mode mode, Trace* trace) {
    const Architecture& arch = model.arch();
    check_features(arch, features);
    const Layout layout = make_layout(arch);
    const auto theta = model.values();
    const std::size_t n = features.rows;
    const std::size_t d = arch.input_dim;

    Matrix current = features;
    if (layout.batchnorm) {
        std::vector<double> mean(d, 0.0);
        std::vector<double> var(d, 0.0);
        if (mode == Mode::train) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) mean[c] += features(r, c);
            for (double& m : mean) m /= static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) {
                    const double diff = features(r, c) - mean[c];
                    var[c] += diff * diff;
                }
            for (double& v : var) v /= static_cast<double>(n);
        } else {
            const auto buf = model.buffers();
            std::copy(buf.begin(), buf.begin() + d, mean.begin());
            std::copy(buf.begin() + d, buf.begin() + 2 * d, var.begin());
        }
        Matrix normalized(n, d);
        for (std::size_t c = 0; c < d; ++c) {
            const double inv_std = 1.0 / std::sqrt(var[c] + kBatchNormEps);
            const double gamma = theta[layout.gamma_offset + c];
            const double beta = theta[layout.beta_offset + c];
            for (std::size_t r = 0; r < n; ++r) {
                const double xh = (features(r, c) - mean[c]) * inv_std;
                normalized(r, c) = xh;
                current(r, c) = gamma * xh + beta;
            }
        }
        if (trace) {
            trace->normalized = std::move(normalized);
            trace->mean = std::move(mean);
            trace->var = std::move(var);
        }
    }

    for (std::size_t l = 0; l < layout.layers.size(); ++l) {
        const LinearSlot& slot = layout.layers[l];
        Matrix z(n, slot.out);
        for (std::size_t r = 0; r < n; ++r) {
            const auto x = current.row(r);
            for (std::size_t o = 0; o < slot.out; ++o) {
                const double* w = theta.data() + slot.weight_offset + o * slot.in;
                double acc = theta[slot.bias_offset + o];
                for (std::size_t i = 0; i < slot.in; ++i) acc += w[i] * x[i];
                z(r, o) = acc;
            }
        }
        const bool last = l + 1 == layout.layers.size();
        if (trace) trace->layer_inputs.push_back(current);
        if (last) {
            current = std::move(z);
        } else {
            Matrix a = z;
            for (double& v : a.data) v = v > 0.0 ? v : 0.0;
            if (trace) trace->pre_activations.push_back(std::move(z));
            current = std::move(a);
        }
    }

    for (double v : current.data) {
        if (!std::isfinite(v)) throw NumericError("non-finite activation in forward pass");
    }
    return current;
}

}  // namespace

void Architecture::validate() const {
    if (input_dim == 0) throw std::invalid_argument("architecture: input_dim must be >= 1");
    if (output_dim < 2) throw std::invalid_argument("architecture: output_dim must be >= 2");
    for (std::size_t h : hidden_dims) {
        if (h == 0) throw std::invalid_argument("architecture: hidden layer width must be >= 1");
    }
}

std::size_t Architecture::param_count() const { return make_layout(*this).total; }

std::size_t Architecture::buffer_count() const { return use_batchnorm ? 2 * input_dim : 0; }

std::string describe(const Architecture& arch) {
    std::ostringstream os;
    os << arch.input_dim;
    for (std::size_t h : arch.hidden_dims) os << "-" << h;
    os << "-" << arch.output_dim << (arch.use_batchnorm ? " (bn)" : "");
    return os.str();
}

ParamVector::ParamVector(Architecture arch, std::vector<double> values, std::vector<double> buffers)
    : arch_(std::move(arch)), values_(std::move(values)), buffers_(std::move(buffers)) {
    arch_.validate();
    if (values_.size() != arch_.param_count()) {
        throw std::invalid_argument("ParamVector: value count does not match architecture");
    }
    if (buffers_.size() != arch_.buffer_count()) {
        throw std::invalid_argument("ParamVector: buffer count does not match architecture");
    }
    for (double v : values_) {
        if (!std::isfinite(v)) throw NumericError("ParamVector: non-finite parameter");
    }
}

void Batch::validate(std::size_t n_classes) const {
    if (features.rows != labels.size()) {
        throw std::invalid_argument("batch: feature rows and label count differ");
    }
    for (std::size_t y : labels) {
        if (y >= n_classes) throw std::invalid_argument("batch: label out of range");
    }
}

ProbMatrix::ProbMatrix(Matrix probabilities) : rows_(std::move(probabilities)) {
    for (std::size_t r = 0; r < rows_.rows; ++r) {
        double sum = 0.0;
        for (double p : rows_.row(r)) {
            if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("ProbMatrix: entry outside [0,1]");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("ProbMatrix: row does not sum to 1");
    }
}

ProbMatrix ProbMatrix::from_logits(const Matrix& logits) { return ProbMatrix(softmax_rows(logits)); }

ParamVector init_model(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    const Layout layout = make_layout(arch);
    std::vector<double> values(layout.total, 0.0);
    std::vector<double> buffers(arch.buffer_count(), 0.0);
    std::mt19937_64 rng(seed);
    if (layout.batchnorm) {
        for (std::size_t c = 0; c < arch.input_dim; ++c) {
            values[layout.gamma_offset + c] = 1.0;
            values[layout.beta_offset + c] = 0.0;
            buffers[arch.input_dim + c] = 1.0;  // running variance
        }
    }
    for (const LinearSlot& slot : layout.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(slot.in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t k = 0; k < slot.in * slot.out; ++k) values[slot.weight_offset + k] = dist(rng);
        for (std::size_t o = 0; o < slot.out; ++o) values[slot.bias_offset + o] = dist(rng);
    }
    return ParamVector(arch, std::move(values), std::move(buffers));
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows, logits.cols);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const auto z = logits.row(r);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        auto p = out.row(r);
        for (std::size_t c = 0; c < z.size(); ++c) {
            p[c] = std::exp(z[c] - zmax);
            sum += p[c];
        }
        for (double& v : p) v /= sum;
    }
    return out;
}

double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
    if (logits.rows != labels.size()) throw std::invalid_argument("cross_entropy: row/label mismatch");
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const auto z = logits.row(r);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - zmax);
        total += zmax + std::log(sum) - z[labels[r]];
    }
    return total / static_cast<double>(logits.rows);
}

Matrix predict_logits(const ParamVector& model, const Matrix& features, Mode mode) {
    return run_forward(model, features, mode, nullptr);
}

ForwardResult forward(const ParamVector& model, const Batch& batch, Mode mode) {
    batch.validate(model.arch().output_dim);
    ForwardResult result;
    result.logits = run_forward(model, batch.features, mode, nullptr);
    result.loss = cross_entropy(result.logits, batch.labels);
    return result;
}

GradResult loss_and_grad(const ParamVector& model, const Batch& batch) {
    const Architecture& arch = model.arch();
    batch.validate(arch.output_dim);
    Trace trace;
    const Matrix logits = run_forward(model, batch.features, Mode::train, &trace);
    const Layout layout = make_layout(arch);
    const auto theta = model.values();
    const std::size_t n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    GradResult result;
    result.loss = cross_entropy(logits, batch.labels);
    result.batch_size = n;
    result.grad.assign(layout.total, 0.0);
    auto& grad = result.grad;

    // d loss / d logits = (softmax - onehot) / n
    Matrix delta = softmax_rows(logits);
    for (std::size_t r = 0; r < n; ++r) delta(r, batch.labels[r]) -= 1.0;
    for (double& v : delta.data) v *= inv_n;

    for (std::size_t l = layout.layers.size(); l-- > 0;) {
        const LinearSlot& slot = layout.layers[l];
        const Matrix& input = trace.layer_inputs[l];
        for (std::size_t r = 0; r < n; ++r) {
            const auto x = input.row(r);
            const auto dz = delta.row(r);
            for (std::size_t o = 0; o < slot.out; ++o) {
                const double g = dz[o];
                if (g == 0.0) continue;
                double* gw = grad.data() + slot.weight_offset + o * slot.in;
                for (std::size_t i = 0; i < slot.in; ++i) gw[i] += g * x[i];
                grad[slot.bias_offset + o] += g;
            }
        }
        const bool need_input_grad = l > 0 || layout.batchnorm;
        if (!need_input_grad) break;

        Matrix d_input(n, slot.in);
        for (std::size_t r = 0; r < n; ++r) {
            const auto dz = delta.row(r);
            auto dx = d_input.row(r);
            for (std::size_t o = 0; o < slot.out; ++o) {
                const double g = dz[o];
                if (g == 0.0) continue;
                const double* w = theta.data() + slot.weight_offset + o * slot.in;
                for (std::size_t i = 0; i < slot.in; ++i) dx[i] += g * w[i];
            }
        }
        if (l > 0) {
            const Matrix& z = trace.pre_activations[l - 1];
            for (std::size_t k = 0; k < d_input.data.size(); ++k) {
                if (z.data[k] <= 0.0) d_input.data[k] = 0.0;
            }
            delta = std::move(d_input);
        } else {
            // Batchnorm scale and shift; the input itself carries no parameters.
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < arch.input_dim; ++c) {
                    grad[layout.gamma_offset + c] += d_input(r, c) * trace.normalized(r, c);
                    grad[layout.beta_offset + c] += d_input(r, c);
                }
            }
        }
    }

    if (layout.batchnorm) {
        result.batch_mean = std::move(trace.mean);
        result.batch_var = std::move(trace.var);
    }
    return result;
}

ParamVector sgd_step(const ParamVector& model, std::span<const double> grad, double lr) {
    if (grad.size() != model.param_count()) throw std::invalid_argument("sgd_step: gradient length mismatch");
    if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step: learning rate must be nonnegative");
    ParamVector next = model;
    auto values = next.values();
    for (std::size_t k = 0; k < values.size(); ++k) values[k] -= lr * grad[k];
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError("sgd_step produced a non-finite parameter");
    }
    return next;
}

void update_running_stats(ParamVector& model, const GradResult& stats, double momentum) {
    if (!model.arch().use_batchnorm) return;
    const std::size_t d = model.arch().input_dim;
    if (stats.batch_mean.size() != d || stats.batch_var.size() != d) {
        throw std::invalid_argument("update_running_stats: missing batch statistics");
    }
    // Running variance tracks the unbiased estimate.
    const double n = static_cast<double>(stats.batch_size);
    const double correction = n > 1.0 ? n / (n - 1.0) : 1.0;
    auto buf = model.buffers();
    for (std::size_t c = 0; c < d; ++c) {
        buf[c] = (1.0 - momentum) * buf[c] + momentum * stats.batch_mean[c];
        buf[d + c] = (1.0 - momentum) * buf[d + c] + momentum * correction * stats.batch_var[c];
    }
}

double train_step(ParamVector& model, const Batch& batch, double lr) {
    const GradResult g = loss_and_grad(model, batch);
    ParamVector next = sgd_step(model, g.grad, lr);
    update_running_stats(next, g);
    model = std::move(next);
    return g.loss;
}

ParamVector combine(std::span<const WeightedModel> terms) {
    if (terms.empty()) throw std::invalid_argument("combine: no terms");
    const ParamVector& first = terms.front().model.get();
    std::vector<double> values(first.param_count(), 0.0);
    std::vector<double> buffers(first.buffers().size(), 0.0);
    for (const WeightedModel& term : terms) {
        const ParamVector& m = term.model.get();
        if (!(m.arch() == first.arch())) throw std::invalid_argument("combine: mixed architectures");
        if (!(term.weight >= 0.0)) throw std::invalid_argument("combine: negative weight");
        const auto v = m.values();
        for (std::size_t k = 0; k < values.size(); ++k) values[k] += term.weight * v[k];
        const auto b = m.buffers();
        for (std::size_t k = 0; k < buffers.size(); ++k) buffers[k] += term.weight * b[k];
    }
    return ParamVector(first.arch(), std::move(values), std::move(buffers));
}

}  // namespace kdpdfl::nn
