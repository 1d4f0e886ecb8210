#include "kdpdfl/collab.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kdpdfl::collab {

ConnectivityVector ConnectivityVector::uniform(std::size_t owner, std::size_t M) {
    if (owner >= M) throw std::invalid_argument("ConnectivityVector: owner out of range");
    ConnectivityVector w;
    w.owner = owner;
    w.weights.assign(M, 1.0 / static_cast<double>(M));
    w.weights[owner] = 0.0;
    return w;
}

void ConnectivityVector::validate() const {
    if (owner >= weights.size()) throw std::invalid_argument("ConnectivityVector: owner out of range");
    for (double v : weights) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("ConnectivityVector: negative weight");
    }
    if (weights[owner] != 0.0) throw std::invalid_argument("ConnectivityVector: self weight must be 0");
}

double ConnectivityVector::off_diagonal_sum() const {
    double s = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (j != owner) s += weights[j];
    }
    return s;
}

void FootprintCache::store(std::size_t peer, nn::ParamVector model, std::size_t t) {
    if (peer == owner_) throw std::invalid_argument("FootprintCache: a client does not cache itself");
    entries_.insert_or_assign(peer, Footprint{std::move(model), t});
}

void RegularizerConfig::validate() const {
    if (!(mu1 >= 0.0)) throw std::invalid_argument("regularizer: mu1 must be >= 0");
    if (!(mu2 >= 0.0)) throw std::invalid_argument("regularizer: mu2 must be >= 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("regularizer: epsilon must be > 0");
    if (!(eta_w > 0.0)) throw std::invalid_argument("regularizer: eta_w must be > 0");
}

double regularizer(const ConnectivityVector& w, double epsilon) {
    return -std::log(w.off_diagonal_sum() + epsilon);
}

std::vector<double> reg_grad(const ConnectivityVector& w, double epsilon) {
    const double g = -1.0 / (w.off_diagonal_sum() + epsilon);
    std::vector<double> grad(w.weights.size(), g);
    grad[w.owner] = 0.0;
    return grad;
}

ConnectivityVector conn_vector_update(const ConnectivityVector& w, const distill::DistanceVector& d,
                                      const RegularizerConfig& cfg) {
    if (d.owner != w.owner) throw std::invalid_argument("conn_vector_update: distance owner mismatch");
    cfg.validate();
    const std::vector<double> rg = reg_grad(w, cfg.epsilon);

    std::vector<std::pair<std::size_t, double>> grads;
    double max_abs = 0.0;
    for (const auto& [j, dist] : d.entries) {
        if (j >= w.weights.size() || j == w.owner) {
            throw std::invalid_argument("conn_vector_update: distance entry is not a peer");
        }
        const double g = cfg.mu1 * dist + cfg.mu2 * rg[j];
        grads.emplace_back(j, g);
        max_abs = std::max(max_abs, std::abs(g));
    }

    ConnectivityVector next = w;
    for (const auto& [j, g] : grads) {
        const double eta = cfg.step_mode == StepMode::literal_elementwise
                               ? 1.0 / (std::abs(g) + cfg.epsilon)
                               : cfg.eta_w / (max_abs + cfg.epsilon);
        next.weights[j] = std::max(0.0, w.weights[j] - eta * g);
    }
    return next;
}

double confidence(std::size_t n_train, std::size_t n_neighbors, double c_base) {
    if (!(c_base > 0.0)) throw std::invalid_argument("confidence: c_base must be > 0");
    return std::min(static_cast<double>(n_train) / c_base, 1.0 / (static_cast<double>(n_neighbors) + 1.0));
}

double MixingWeights::sum() const {
    double s = self;
    for (const auto& [j, v] : peers) s += v;
    return s;
}

MixingWeights mixing_weights(const ConnectivityVector& w, const FootprintCache& cache, double conf, std::size_t now,
                             std::optional<std::size_t> staleness_horizon) {
    if (!(conf >= 0.0)) throw std::invalid_argument("mixing_weights: negative confidence");
    MixingWeights mw;
    double total = conf;
    for (const auto& [j, fp] : cache.entries()) {
        if (staleness_horizon && now >= fp.received_at && now - fp.received_at > *staleness_horizon) continue;
        if (j >= w.weights.size()) throw std::invalid_argument("mixing_weights: cached peer out of range");
        mw.peers.emplace_back(j, w.weights[j]);
        total += w.weights[j];
    }
    if (!(total > 0.0)) throw std::invalid_argument("mixing_weights: no mass to mix (zero confidence, no weighted peers)");
    mw.self = conf / total;
    for (auto& [j, v] : mw.peers) v /= total;
    return mw;
}

nn::ParamVector mix_models(const nn::ParamVector& own, const MixingWeights& weights, const FootprintCache& cache) {
    if (weights.peers.empty()) {
        if (weights.self <= 0.0) throw std::invalid_argument("mix_models: no mass to mix");
        return own;
    }
    std::vector<nn::WeightedModel> terms;
    terms.reserve(weights.peers.size() + 1);
    terms.push_back({weights.self, own});
    for (const auto& [j, v] : weights.peers) {
        const auto it = cache.entries().find(j);
        if (it == cache.entries().end()) throw std::invalid_argument("mix_models: peer missing from cache");
        terms.push_back({v, it->second.model});
    }
    return nn::combine(terms);
}

nn::ParamVector mix_models(const nn::ParamVector& own, const ConnectivityVector& w, const FootprintCache& cache,
                           double conf) {
    return mix_models(own, mixing_weights(w, cache, conf), cache);
}

}  // namespace kdpdfl::collab
