#pragma once

// Datasets, the synthetic clustered-blob generator, Dirichlet label-skew
// partitioning into per-client train/validation/test splits, and CSV ingestion.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdpdfl/matrix.hpp"
#include "kdpdfl/nn.hpp"

namespace kdpdfl::data {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Dataset {
    Matrix features;
    std::vector<std::size_t> labels;
    std::size_t n_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t n_features() const { return features.cols; }

    // Throws DataError on label/row mismatch, out-of-range labels or NaN features.
    void validate() const;
    Dataset subset(std::span<const std::size_t> indices) const;
    nn::Batch as_batch() const { return {features, labels}; }
    std::vector<std::size_t> class_histogram() const;
};

struct SyntheticSpec {
    std::size_t n_classes = 9;
    std::size_t n_features = 20;
    std::size_t n_clusters = 2;
    std::size_t samples_per_class = 1000;
    std::uint64_t seed = 0;
    // Per-coordinate std of the shared centroid template.
    double class_sep = 1.0;
    // Isotropic within-class noise.
    double noise_std = 0.9;
    // Cluster c is the template rotated by c * rotation_deg in every coordinate plane.
    double rotation_deg = 20.0;
};

struct SyntheticData {
    Dataset dataset;
    std::vector<std::size_t> class_cluster;  // class -> cluster id
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

struct PartitionSpec {
    std::size_t M = 10;
    double dirichlet_alpha = 0.1;
    std::size_t min_train = 15;
    std::size_t max_train = 100;
    std::size_t test_per_client = 100;
    double validation_fraction = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ClientIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

struct ClientData {
    std::size_t client_id = 0;
    Dataset train;
    Dataset validation;
    Dataset test;
    ClientIndices pool_indices;
    std::vector<double> class_proportions;  // the Dirichlet draw that produced the allocation
};

// Sampling is without replacement from the pool. A client whose drawn class
// proportions cannot be met by what is left is redrawn up to 100 times.
std::vector<ClientData> dirichlet_partition(const Dataset& pool, const PartitionSpec& spec);

// Splits `total` items over categories proportionally to `weights` using the
// largest-remainder rule; ties go to the lower index.
std::vector<std::size_t> apportion(std::span<const double> weights, std::size_t total);

// client id -> pool indices of each split, as a JSON document.
std::string partition_manifest_json(std::span<const ClientData> clients);

struct CsvDataset {
    Dataset dataset;
    std::vector<std::string> feature_names;
    std::vector<std::string> label_names;  // contiguous label id -> original value
};

// Header row required. Every column except `label_column` must be numeric.
// Labels are mapped to 0..K-1 in lexicographic order of their original values.
CsvDataset load_csv(const std::string& path, const std::string& label_column, bool normalize);

// Z-score each column in place (population std). Constant columns become zero.
void normalize_columns(Matrix& features);

// Cluster with the largest share of the client's training labels.
std::size_t dominant_cluster(const Dataset& train, std::span<const std::size_t> class_cluster);

}  // namespace kdpdfl::data
