#pragma once

// Similarity between two models measured on the owner's local samples: both
// models score the same probe batch and their output distributions are compared.

#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <utility>

#include "kdpdfl/data.hpp"
#include "kdpdfl/nn.hpp"

namespace kdpdfl::distill {

// Which layer's outputs are compared. Only the output layer is supported; the
// enum leaves room for hidden-layer probing.
enum class LayerSelector { output_layer };

struct DistillationProbe {
    nn::Batch batch;  // drawn from the probing client's own training set
    LayerSelector layer = LayerSelector::output_layer;
    // Compare pre-softmax logits instead of probability rows.
    bool compare_raw_logits = false;
};

// Draws min(train.size(), batch_size) distinct rows of `train`, in sampled order.
DistillationProbe draw_probe(const data::Dataset& train, std::size_t batch_size, std::mt19937_64& rng,
                             bool compare_raw_logits = false);

// Outputs of the owner's model (own@owner) and a peer's model (peer@owner) on
// the owner's probe batch, evaluated in eval mode.
std::pair<nn::ProbMatrix, nn::ProbMatrix> mid_getter(const nn::ParamVector& own_model,
                                                     const nn::ParamVector& peer_model,
                                                     const DistillationProbe& probe);

std::pair<Matrix, Matrix> mid_getter_logits(const nn::ParamVector& own_model, const nn::ParamVector& peer_model,
                                            const DistillationProbe& probe);

// Mean over rows of the squared Euclidean distance between corresponding rows.
double mean_squared_row_distance(const Matrix& a, const Matrix& b);

// Batched distance between two probability matrices:
//   (1/n) * sum_x sum_l (p_own[x][l] - p_peer[x][l])^2
// The name follows the literature this protocol comes from; the quantity is a
// squared L2 distance between probability rows, not an optimal-transport cost.
double wasserstein2d(const nn::ProbMatrix& z_own, const nn::ProbMatrix& z_peer);

struct DistanceVector {
    std::size_t owner = 0;
    std::map<std::size_t, double> entries;  // peer -> distance
};

using ModelRef = std::reference_wrapper<const nn::ParamVector>;

DistanceVector distance_vector(std::size_t owner, const std::map<std::size_t, ModelRef>& neighbor_models,
                               const nn::ParamVector& own_model, const DistillationProbe& probe);

}  // namespace kdpdfl::distill
