#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <vector>

namespace kdpdfl::sim {

// Rayleigh block fading between every pair of clients, redrawn at every
// exchange event. A peer is reachable when its power gain (Exp(1), the squared
// Rayleigh amplitude) reaches `threshold`.
struct ChannelModel {
    double threshold = 0.0;
    std::optional<std::size_t> max_neighbors;  // keep the strongest K peers
    double packet_loss = 0.0;                   // i.i.d. per-message drop probability

    void validate() const;
};

// Threshold giving `target_mean` reachable peers on average out of M-1:
// P(gain >= tau) = exp(-tau) = target_mean / (M-1). Zero when target >= M-1.
double calibrate_threshold(std::size_t M, double target_mean);

ChannelModel make_channel(std::size_t M, double target_mean, std::optional<std::size_t> max_neighbors,
                          double packet_loss = 0.0);

struct NeighborDraw {
    std::vector<std::size_t> neighbors;  // ascending client id, after the cap
    std::size_t reachable = 0;           // before the cap
};

NeighborDraw sample_neighbors(const ChannelModel& channel, std::size_t star, std::size_t M, std::mt19937_64& rng);

}  // namespace kdpdfl::sim
