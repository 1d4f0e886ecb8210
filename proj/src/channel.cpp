#include "kdpdfl/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace kdpdfl::sim {

void ChannelModel::validate() const {
    if (!(threshold >= 0.0)) throw std::invalid_argument("channel: threshold must be >= 0");
    if (max_neighbors && *max_neighbors == 0) throw std::invalid_argument("channel: max_neighbors must be >= 1");
    if (!(packet_loss >= 0.0 && packet_loss < 1.0)) throw std::invalid_argument("channel: packet_loss must be in [0,1)");
}

double calibrate_threshold(std::size_t M, double target_mean) {
    if (M < 2) throw std::invalid_argument("calibrate_threshold: M must be >= 2");
    if (!(target_mean > 0.0)) throw std::invalid_argument("calibrate_threshold: target mean must be > 0");
    const double peers = static_cast<double>(M - 1);
    if (target_mean >= peers) return 0.0;
    return std::log(peers / target_mean);
}

ChannelModel make_channel(std::size_t M, double target_mean, std::optional<std::size_t> max_neighbors,
                          double packet_loss) {
    ChannelModel ch{calibrate_threshold(M, target_mean), max_neighbors, packet_loss};
    ch.validate();
    return ch;
}

NeighborDraw sample_neighbors(const ChannelModel& channel, std::size_t star, std::size_t M, std::mt19937_64& rng) {
    if (M < 2) throw std::invalid_argument("sample_neighbors: M must be >= 2");
    if (star >= M) throw std::invalid_argument("sample_neighbors: star out of range");
    std::exponential_distribution<double> power_gain(1.0);
    std::vector<std::pair<double, std::size_t>> reached;
    for (std::size_t j = 0; j < M; ++j) {
        if (j == star) continue;
        const double gain = power_gain(rng);
        if (gain >= channel.threshold) reached.emplace_back(gain, j);
    }
    NeighborDraw draw;
    draw.reachable = reached.size();
    if (channel.max_neighbors && reached.size() > *channel.max_neighbors) {
        std::stable_sort(reached.begin(), reached.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        reached.resize(*channel.max_neighbors);
    }
    for (const auto& [gain, j] : reached) draw.neighbors.push_back(j);
    std::sort(draw.neighbors.begin(), draw.neighbors.end());
    return draw;
}

}  // namespace kdpdfl::sim
