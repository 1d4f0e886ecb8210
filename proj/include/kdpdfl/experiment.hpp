#pragma once

// Configuration-driven experiment runner: builds the client datasets, runs a
// method for n_repeats seeds and writes metrics, collaboration matrices,
// partition manifests and summary tables.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "kdpdfl/data.hpp"
#include "kdpdfl/simulation.hpp"

namespace kdpdfl::experiment {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Method { local_only, fedavg, fedavg_plus, kd_pdfl };
const char* to_string(Method m);

struct DatasetConfig {
    enum class Kind { synthetic, csv };
    Kind kind = Kind::synthetic;
    data::SyntheticSpec synthetic;  // samples_per_class is resolved at parse time when omitted
    std::string csv_path;
    std::string label_column = "label";
    bool normalize = true;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    data::PartitionSpec partition;  // partition.M is the client count; seed comes from master_seed
    std::vector<std::size_t> hidden_dims{128};
    bool batchnorm = true;
    sim::InitMode init = sim::InitMode::shared;
    double local_lr = 0.1;
    sim::SimConfig sim;  // channel is derived from the three fields below; t_switch defaults to 3T/4
    double target_mean_neighbors = 5.0;
    std::optional<std::size_t> max_neighbors;
    double packet_loss = 0.0;
    Method method = Method::kd_pdfl;
    std::size_t n_repeats = 3;
    std::uint64_t master_seed = 1;
    std::string output_dir = "runs/experiment";

    std::size_t M() const { return partition.M; }
};

// Parses and validates. Unknown keys, wrong types and violated constraints
// raise ConfigError naming the key.
ExperimentConfig parse_config_json(const nlohmann::json& doc);
ExperimentConfig parse_config(const std::filesystem::path& path);

// Fully expanded configuration with every default filled in.
nlohmann::ordered_json effective_config(const ExperimentConfig& cfg);

// Dataset, partition and channel for repeat `r`; seeds are master_seed + r.
struct RepeatSetup {
    std::vector<data::ClientData> clients;
    std::vector<std::size_t> class_cluster;  // empty for CSV data
    nn::Architecture arch;
    sim::SimConfig sim;
    std::uint64_t seed = 0;
};
RepeatSetup prepare_repeat(const ExperimentConfig& cfg, std::size_t r);

sim::SimResult run_method(const ExperimentConfig& cfg, RepeatSetup setup);

struct BlockStats {
    double within = 0.0;  // mean off-diagonal weight between clients of the same dominant cluster
    double cross = 0.0;   // ... of different dominant clusters
    bool defined = false;
};
BlockStats block_stats(const Matrix& W, std::span<const std::size_t> client_cluster);

struct RunRecord {
    Method method = Method::kd_pdfl;
    std::size_t M = 0;
    std::vector<std::vector<double>> final_test_accuracy;  // [repeat][client]
    std::vector<BlockStats> blocks;                        // per repeat, when W and clusters exist
    std::optional<Matrix> mean_W;                          // average final W over repeats
};

// Runs every repeat and writes into cfg.output_dir:
//   effective_config.json, summary.json, summary.txt and per repeat
//   repeat_<r>/{metrics.csv, W.csv, partition.json, transmissions.jsonl, exchanges.jsonl}
RunRecord run_experiment(const ExperimentConfig& cfg);

struct SummaryRow {
    Method method = Method::kd_pdfl;
    std::size_t M = 0;
    double mean = 0.0;
    double std = 0.0;  // population std over all (repeat, client) pairs
    std::size_t n = 0;
};

struct SummaryTable {
    std::vector<SummaryRow> rows;  // ordered by method, then M ascending
};

SummaryTable emit_summary(std::span<const RunRecord> runs);
nlohmann::ordered_json summary_json(const SummaryTable& table, std::span<const RunRecord> runs = {});
std::string summary_text(const SummaryTable& table);

// Recomputes the summary of every run directory below `dir` from its metrics
// CSVs and writes summary.json / summary.txt into `dir`.
SummaryTable summarize_directory(const std::filesystem::path& dir);

enum class SweepAxis { neighbor_cap, mu_grid };
SweepAxis parse_axis(const std::string& name);

struct SweepPoint {
    std::string label;
    std::optional<std::size_t> max_neighbors;
    double mu1 = 0.0;
    double mu2 = 0.0;
    RunRecord record;
};

// neighbor_cap values are integers. mu_grid values are either "mu1:mu2" pairs
// or plain numbers, in which case the full grid values x values is swept.
// Each point runs in <output_dir>/<label> with the base master seed; the
// long-format table goes to <output_dir>/sweep_<axis>.csv and, for mu_grid,
// every cell's mean final W to <output_dir>/heatmap_<label>.csv.
std::vector<SweepPoint> sweep(const ExperimentConfig& base, SweepAxis axis, std::span<const std::string> values);

}  // namespace kdpdfl::experiment
