#pragma once

// Discrete-time simulation of decentralized personalized learning.
//
// Iterations t = 1..T follow a fixed cycle of length T_ex:
//   t % T_ex == 0  exchange   a random star collects its reachable peers'
//                             models, scores them on its own data, updates its
//                             connectivity vector and mixes a new model;
//   t % T_ex == 1  broadcast  the previous star sends its new model to the
//                             peers it sampled in the exchange;
//   otherwise      local      every client takes one SGD minibatch step.
//
// Clients only ever exchange model parameters (ModelMessage). Datasets, label
// statistics and connectivity vectors never leave their owner.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdpdfl/channel.hpp"
#include "kdpdfl/collab.hpp"
#include "kdpdfl/data.hpp"
#include "kdpdfl/nn.hpp"

namespace kdpdfl::sim {

class SimulationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Phase { exchange, broadcast, local };
enum class Baseline { local_only, fedavg, fedavg_plus };
enum class BroadcastRule { overwrite, blend };
enum class StarSelection { uniform, permutation };
// data_size: min(|X_i|/c_base, 1/(|N|+1)); equal_share: 1/(|N|+1).
enum class ConfidenceMode { data_size, equal_share };
enum class InitMode { shared, per_client };
enum class Split { train, validation, test };

Phase phase_at(std::size_t t, std::size_t T_ex);
const char* to_string(Phase p);
const char* to_string(Split s);

struct SimConfig {
    std::size_t T = 2000;
    std::size_t T_ex = 5;
    std::size_t batch_size = 32;
    std::size_t probe_batch_size = 32;
    bool compare_raw_logits = false;
    collab::RegularizerConfig regularizer;
    std::optional<double> c_base;  // default: 4 x mean client train size
    ChannelModel channel;
    BroadcastRule broadcast_rule = BroadcastRule::overwrite;
    StarSelection star_selection = StarSelection::uniform;
    ConfidenceMode confidence_mode = ConfidenceMode::data_size;
    std::optional<std::size_t> staleness_horizon;  // unlimited when empty
    std::size_t metric_every = 0;                  // 0 means every T_ex iterations
    // fedavg_plus: exchanges stop after t_switch and clients fine-tune locally
    // with a Reptile interpolation every reptile_inner_steps steps.
    std::size_t t_switch = 1500;
    double reptile_beta = 0.5;
    std::size_t reptile_inner_steps = 10;
    bool log_transmissions = true;

    void validate() const;
};

struct ClientRuntime {
    std::size_t id = 0;
    data::ClientData data;
    nn::ParamVector model;
    collab::ConnectivityVector collab;
    collab::FootprintCache cache;
    std::mt19937_64 rng;
    double local_lr = 0.05;
    double last_confidence = 0.0;
};

// Independent generator for stream `stream_id` under `master_seed`.
std::mt19937_64 derive_stream(std::uint64_t master_seed, std::uint64_t stream_id);

// Client i gets data[i], an initial model, uniform connectivity and the
// random stream derive_stream(master_seed, i). With InitMode::shared every
// client starts from the same model.
std::vector<ClientRuntime> make_clients(std::vector<data::ClientData> data, const nn::Architecture& arch,
                                        std::uint64_t master_seed, double local_lr,
                                        InitMode init = InitMode::shared);

double default_c_base(const std::vector<ClientRuntime>& clients);

enum class PayloadKind { model_parameters };
const char* to_string(PayloadKind k);

// The only message type clients exchange.
struct ModelMessage {
    std::size_t t = 0;
    std::size_t from = 0;
    std::size_t to = 0;
    nn::ParamVector payload;

    static constexpr PayloadKind kind = PayloadKind::model_parameters;
};

struct Transmission {
    std::size_t t = 0;
    std::size_t from = 0;
    std::size_t to = 0;
    PayloadKind kind = PayloadKind::model_parameters;
};

struct MetricsRecord {
    std::size_t t = 0;
    std::size_t client_id = 0;
    Split split = Split::test;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct ExchangeEvent {
    std::size_t t = 0;
    std::size_t star = 0;
    std::size_t reachable = 0;           // peers above the fading threshold
    std::vector<std::size_t> sampled;    // after the neighbor cap
    std::vector<std::size_t> received;   // models that arrived
    std::map<std::size_t, double> distances;
    collab::MixingWeights mixing;
    double confidence = 0.0;
};

struct SimResult {
    std::vector<MetricsRecord> metrics;
    std::vector<nn::ParamVector> final_models;
    std::optional<Matrix> final_W;  // absent without collaboration state
    std::vector<ExchangeEvent> exchanges;
    std::vector<Transmission> transmissions;
    std::vector<Phase> phases;  // phases[t-1] is what ran at iteration t
    std::vector<ClientRuntime> final_clients;
};

SimResult run_kd_pdfl(std::vector<ClientRuntime> clients, const SimConfig& cfg, std::uint64_t master_seed);

SimResult run_baseline(std::vector<ClientRuntime> clients, const SimConfig& cfg, Baseline variant,
                       std::uint64_t master_seed);

struct ClientEval {
    double accuracy = 0.0;
    double loss = 0.0;
};

ClientEval evaluate_split(const nn::ParamVector& model, const data::Dataset& split);

// Test-set accuracy and loss of every client, eval mode.
std::vector<ClientEval> evaluate(const std::vector<ClientRuntime>& clients);

// Row i = client i's connectivity vector with its latest confidence on the diagonal.
Matrix collaboration_matrix(const std::vector<ClientRuntime>& clients);

}  // namespace kdpdfl::sim
