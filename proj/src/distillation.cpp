#include "kdpdfl/distillation.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace kdpdfl::distill {

DistillationProbe draw_probe(const data::Dataset& train, std::size_t batch_size, std::mt19937_64& rng,
                             bool compare_raw_logits) {
    if (train.size() == 0) throw std::invalid_argument("draw_probe: empty training set");
    if (batch_size == 0) throw std::invalid_argument("draw_probe: batch_size must be >= 1");
    const std::size_t n = std::min(train.size(), batch_size);
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first n positions hold the sample.
    for (std::size_t k = 0; k < n; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
        std::swap(idx[k], idx[pick(rng)]);
    }
    idx.resize(n);
    DistillationProbe probe;
    probe.batch = train.subset(idx).as_batch();
    probe.compare_raw_logits = compare_raw_logits;
    return probe;
}

std::pair<Matrix, Matrix> mid_getter_logits(const nn::ParamVector& own_model, const nn::ParamVector& peer_model,
                                            const DistillationProbe& probe) {
    if (probe.batch.size() == 0) throw std::invalid_argument("mid_getter: empty probe batch");
    if (own_model.arch().output_dim != peer_model.arch().output_dim) {
        throw std::invalid_argument("mid_getter: models disagree on the number of outputs");
    }
    return {nn::predict_logits(own_model, probe.batch.features, nn::Mode::eval),
            nn::predict_logits(peer_model, probe.batch.features, nn::Mode::eval)};
}

std::pair<nn::ProbMatrix, nn::ProbMatrix> mid_getter(const nn::ParamVector& own_model,
                                                     const nn::ParamVector& peer_model,
                                                     const DistillationProbe& probe) {
    auto [own, peer] = mid_getter_logits(own_model, peer_model, probe);
    return {nn::ProbMatrix::from_logits(own), nn::ProbMatrix::from_logits(peer)};
}

double mean_squared_row_distance(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("distance: shape mismatch");
    if (a.rows == 0) throw std::invalid_argument("distance: empty matrices");
    double total = 0.0;
    for (std::size_t k = 0; k < a.data.size(); ++k) {
        const double d = a.data[k] - b.data[k];
        total += d * d;
    }
    return total / static_cast<double>(a.rows);
}

double wasserstein2d(const nn::ProbMatrix& z_own, const nn::ProbMatrix& z_peer) {
    return mean_squared_row_distance(z_own.matrix(), z_peer.matrix());
}

DistanceVector distance_vector(std::size_t owner, const std::map<std::size_t, ModelRef>& neighbor_models,
                               const nn::ParamVector& own_model, const DistillationProbe& probe) {
    if (neighbor_models.empty()) throw std::invalid_argument("distance_vector: no neighbors");
    DistanceVector out;
    out.owner = owner;
    for (const auto& [peer, model] : neighbor_models) {
        try {
            if (probe.compare_raw_logits) {
                auto [own, other] = mid_getter_logits(own_model, model.get(), probe);
                out.entries[peer] = mean_squared_row_distance(own, other);
            } else {
                auto [own, other] = mid_getter(own_model, model.get(), probe);
                out.entries[peer] = wasserstein2d(own, other);
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("distance to peer " + std::to_string(peer) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace kdpdfl::distill
