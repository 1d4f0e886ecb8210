#pragma once

// Per-client collaboration state: the connectivity vector each client keeps
// privately, the cache of peers' last received models, the projected update
// of the connectivity vector, confidence, and personalized model mixing.

#include <cstddef>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "kdpdfl/distillation.hpp"
#include "kdpdfl/nn.hpp"

namespace kdpdfl::collab {

// Row i of the collaboration graph. weights[owner] stays 0: a client's own
// share is its confidence, applied at mixing time.
struct ConnectivityVector {
    std::size_t owner = 0;
    std::vector<double> weights;

    // 1/M to every peer, 0 to self.
    static ConnectivityVector uniform(std::size_t owner, std::size_t M);
    void validate() const;
    double off_diagonal_sum() const;
};

struct Footprint {
    nn::ParamVector model;
    std::size_t received_at = 0;
};

class FootprintCache {
public:
    explicit FootprintCache(std::size_t owner = 0) : owner_(owner) {}

    std::size_t owner() const { return owner_; }
    // Replaces any earlier footprint of `peer`.
    void store(std::size_t peer, nn::ParamVector model, std::size_t t);
    const std::map<std::size_t, Footprint>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

private:
    std::size_t owner_;
    std::map<std::size_t, Footprint> entries_;
};

enum class StepMode { literal_elementwise, normalized_scalar };

struct RegularizerConfig {
    double mu1 = 1.0;
    double mu2 = 0.2;
    double epsilon = 1e-8;
    StepMode step_mode = StepMode::normalized_scalar;
    double eta_w = 0.1;

    void validate() const;
};

// g(w) = -log(sum_{j != owner} w_j + epsilon)
double regularizer(const ConnectivityVector& w, double epsilon);

// Gradient of regularizer(): -1/(sum + epsilon) off the diagonal, 0 on it.
std::vector<double> reg_grad(const ConnectivityVector& w, double epsilon);

// Projected step on the neighbors' coordinates:
//   grad_j = mu1 * d_j + mu2 * reg_grad_j
//   w_j   <- max(0, w_j - eta_j * grad_j)
// literal_elementwise: eta_j = 1 / (|grad_j| + eps)
// normalized_scalar:   eta   = eta_w / (max_j |grad_j| + eps)
// Coordinates outside `d` are left as they are.
ConnectivityVector conn_vector_update(const ConnectivityVector& w, const distill::DistanceVector& d,
                                      const RegularizerConfig& cfg);

// min(n_train / c_base, 1 / (n_neighbors + 1))
double confidence(std::size_t n_train, std::size_t n_neighbors, double c_base);

struct MixingWeights {
    double self = 0.0;
    std::vector<std::pair<std::size_t, double>> peers;  // ascending peer id

    double sum() const;
};

// Normalized mixing vector over self (weight `conf`) and every cached peer
// (raw weight w_j). Footprints older than `staleness_horizon` iterations at
// time `now` are ignored. Throws std::invalid_argument if there is no mass.
MixingWeights mixing_weights(const ConnectivityVector& w, const FootprintCache& cache, double conf,
                             std::size_t now = 0, std::optional<std::size_t> staleness_horizon = std::nullopt);

nn::ParamVector mix_models(const nn::ParamVector& own, const MixingWeights& weights, const FootprintCache& cache);

nn::ParamVector mix_models(const nn::ParamVector& own, const ConnectivityVector& w, const FootprintCache& cache,
                           double conf);

}  // namespace kdpdfl::collab
