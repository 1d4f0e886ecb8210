#include "kdpdfl/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace kdpdfl::data {

void Dataset::validate() const {
    if (features.rows != labels.size()) throw DataError("dataset: feature rows and label count differ");
    for (std::size_t y : labels) {
        if (y >= n_classes) throw DataError("dataset: label out of range");
    }
    for (double v : features.data) {
        if (std::isnan(v)) throw DataError("dataset: NaN feature");
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.features = gather_rows(features, indices);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels[i]);
    out.n_classes = n_classes;
    return out;
}

std::vector<std::size_t> Dataset::class_histogram() const {
    std::vector<std::size_t> h(n_classes, 0);
    for (std::size_t y : labels) ++h[y];
    return h;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_classes < 2) throw DataError("generate_synthetic: n_classes must be >= 2");
    if (spec.n_features == 0) throw DataError("generate_synthetic: n_features must be >= 1");
    if (spec.n_clusters == 0 || spec.n_clusters > spec.n_classes) {
        throw DataError("generate_synthetic: n_clusters must be in [1, n_classes]");
    }
    if (spec.samples_per_class == 0) throw DataError("generate_synthetic: samples_per_class must be >= 1");
    if (!(spec.noise_std > 0.0) || !(spec.class_sep > 0.0)) {
        throw DataError("generate_synthetic: class_sep and noise_std must be positive");
    }

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Classes are split into contiguous blocks, one block per cluster.
    SyntheticData out;
    out.class_cluster.resize(spec.n_classes);
    std::vector<std::size_t> slot(spec.n_classes);
    std::vector<std::size_t> cluster_size(spec.n_clusters, 0);
    for (std::size_t k = 0; k < spec.n_classes; ++k) {
        const std::size_t c = k * spec.n_clusters / spec.n_classes;
        out.class_cluster[k] = c;
        slot[k] = cluster_size[c]++;
    }
    const std::size_t n_slots = *std::max_element(cluster_size.begin(), cluster_size.end());

    Matrix templ(n_slots, spec.n_features);
    for (double& v : templ.data) v = spec.class_sep * normal(rng);

    const double step = spec.rotation_deg * std::numbers::pi / 180.0;
    Matrix centroids(spec.n_classes, spec.n_features);
    for (std::size_t k = 0; k < spec.n_classes; ++k) {
        const double angle = step * static_cast<double>(out.class_cluster[k]);
        const double cs = std::cos(angle);
        const double sn = std::sin(angle);
        const auto src = templ.row(slot[k]);
        auto dst = centroids.row(k);
        std::size_t f = 0;
        for (; f + 1 < spec.n_features; f += 2) {
            dst[f] = cs * src[f] - sn * src[f + 1];
            dst[f + 1] = sn * src[f] + cs * src[f + 1];
        }
        if (f < spec.n_features) dst[f] = src[f];
    }

    Dataset& ds = out.dataset;
    ds.n_classes = spec.n_classes;
    ds.features = Matrix(spec.n_classes * spec.samples_per_class, spec.n_features);
    ds.labels.resize(ds.features.rows);
    std::size_t r = 0;
    for (std::size_t k = 0; k < spec.n_classes; ++k) {
        for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++r) {
            ds.labels[r] = k;
            for (std::size_t f = 0; f < spec.n_features; ++f) {
                ds.features(r, f) = centroids(k, f) + spec.noise_std * normal(rng);
            }
        }
    }
    return out;
}

void PartitionSpec::validate() const {
    if (M < 2) throw DataError("partition: M must be >= 2");
    if (!(dirichlet_alpha > 0.0)) throw DataError("partition: dirichlet_alpha must be > 0");
    if (min_train == 0) throw DataError("partition: min_train must be >= 1");
    if (min_train > max_train) throw DataError("partition: min_train must be <= max_train");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw DataError("partition: validation_fraction must be in [0, 1)");
    }
}

std::vector<std::size_t> apportion(std::span<const double> weights, std::size_t total) {
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::size_t> counts(weights.size(), 0);
    if (weights.empty() || !(sum > 0.0)) return counts;
    std::vector<double> remainder(weights.size());
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double exact = weights[k] / sum * static_cast<double>(total);
        counts[k] = static_cast<std::size_t>(std::floor(exact));
        remainder[k] = exact - static_cast<double>(counts[k]);
        assigned += counts[k];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size(), ++assigned) {
        ++counts[order[k]];
    }
    return counts;
}

namespace {

std::vector<double> draw_dirichlet(std::size_t k, double alpha, std::mt19937_64& rng) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> p(k);
    for (;;) {
        double sum = 0.0;
        for (double& v : p) {
            v = gamma(rng);
            sum += v;
        }
        if (sum > 0.0 && std::isfinite(sum)) {
            for (double& v : p) v /= sum;
            return p;
        }
    }
}

}  // namespace

std::vector<ClientData> dirichlet_partition(const Dataset& pool, const PartitionSpec& spec) {
    spec.validate();
    pool.validate();
    const std::size_t K = pool.n_classes;
    const std::size_t needed_min = spec.M * (spec.min_train + spec.test_per_client);
    if (pool.size() < needed_min) {
        std::ostringstream os;
        os << "dirichlet_partition: pool has " << pool.size() << " samples but at least " << needed_min
           << " are required (shortfall " << needed_min - pool.size() << ")";
        throw DataError(os.str());
    }

    std::mt19937_64 rng(spec.seed);
    std::vector<std::vector<std::size_t>> available(K);
    for (std::size_t i = 0; i < pool.size(); ++i) available[pool.labels[i]].push_back(i);
    for (auto& bucket : available) std::shuffle(bucket.begin(), bucket.end(), rng);

    constexpr int kMaxRetries = 100;
    std::vector<ClientData> clients;
    clients.reserve(spec.M);
    std::uniform_int_distribution<std::size_t> train_size(spec.min_train, spec.max_train);

    for (std::size_t id = 0; id < spec.M; ++id) {
        const std::size_t n_train = train_size(rng);
        std::vector<double> proportions;
        std::vector<std::size_t> train_counts;
        std::vector<std::size_t> test_counts;
        bool satisfied = false;
        std::vector<std::size_t> worst_need;
        for (int attempt = 0; attempt <= kMaxRetries && !satisfied; ++attempt) {
            proportions = draw_dirichlet(K, spec.dirichlet_alpha, rng);
            train_counts = apportion(proportions, n_train);
            test_counts = apportion(proportions, spec.test_per_client);
            satisfied = true;
            for (std::size_t k = 0; k < K; ++k) {
                if (train_counts[k] + test_counts[k] > available[k].size()) satisfied = false;
            }
            if (!satisfied) {
                worst_need.assign(K, 0);
                for (std::size_t k = 0; k < K; ++k) worst_need[k] = train_counts[k] + test_counts[k];
            }
        }
        if (!satisfied) {
            std::ostringstream os;
            os << "dirichlet_partition: client " << id << " could not be satisfied after " << kMaxRetries
               << " redraws; last shortfall:";
            for (std::size_t k = 0; k < K; ++k) {
                if (worst_need[k] > available[k].size()) {
                    os << " class " << k << " needs " << worst_need[k] << " has " << available[k].size() << ";";
                }
            }
            throw DataError(os.str());
        }

        ClientData client;
        client.client_id = id;
        client.class_proportions = proportions;
        std::vector<std::size_t> train_alloc;
        for (std::size_t k = 0; k < K; ++k) {
            auto& bucket = available[k];
            for (std::size_t c = 0; c < train_counts[k]; ++c) {
                train_alloc.push_back(bucket.back());
                bucket.pop_back();
            }
            for (std::size_t c = 0; c < test_counts[k]; ++c) {
                client.pool_indices.test.push_back(bucket.back());
                bucket.pop_back();
            }
        }
        std::shuffle(train_alloc.begin(), train_alloc.end(), rng);
        std::size_t n_val = static_cast<std::size_t>(
            std::llround(spec.validation_fraction * static_cast<double>(n_train)));
        n_val = std::min(n_val, n_train - 1);
        client.pool_indices.validation.assign(train_alloc.begin(), train_alloc.begin() + n_val);
        client.pool_indices.train.assign(train_alloc.begin() + n_val, train_alloc.end());
        std::sort(client.pool_indices.train.begin(), client.pool_indices.train.end());
        std::sort(client.pool_indices.validation.begin(), client.pool_indices.validation.end());
        std::sort(client.pool_indices.test.begin(), client.pool_indices.test.end());

        client.train = pool.subset(client.pool_indices.train);
        client.validation = pool.subset(client.pool_indices.validation);
        client.test = pool.subset(client.pool_indices.test);
        clients.push_back(std::move(client));
    }
    return clients;
}

std::string partition_manifest_json(std::span<const ClientData> clients) {
    nlohmann::json doc = nlohmann::json::object();
    nlohmann::json entries = nlohmann::json::array();
    for (const ClientData& c : clients) {
        entries.push_back({{"client_id", c.client_id},
                           {"train", c.pool_indices.train},
                           {"validation", c.pool_indices.validation},
                           {"test", c.pool_indices.test},
                           {"class_proportions", c.class_proportions}});
    }
    doc["clients"] = std::move(entries);
    return doc.dump(2) + "\n";
}

namespace {

// Splits one CSV record. Returns false when a quoted field continues past the
// end of `line` (the caller appends the next physical line and retries).
bool split_record(const std::string& line, std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(ch);
        }
    }
    if (quoted) return false;
    fields.push_back(std::move(field));
    return true;
}

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

}  // namespace

void normalize_columns(Matrix& features) {
    const std::size_t n = features.rows;
    if (n == 0) return;
    for (std::size_t c = 0; c < features.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += features(r, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double d = features(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double sd = std::sqrt(var);
        for (std::size_t r = 0; r < n; ++r) {
            features(r, c) = sd > 0.0 ? (features(r, c) - mean) / sd : 0.0;
        }
    }
}

CsvDataset load_csv(const std::string& path, const std::string& label_column, bool normalize) {
    std::ifstream in(path);
    if (!in) throw DataError("load_csv: cannot open '" + path + "'");

    std::vector<std::vector<std::string>> records;
    std::vector<std::size_t> record_lines;
    std::string line;
    std::string pending;
    std::size_t line_no = 0;
    std::size_t record_start = 0;
    std::vector<std::string> fields;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (pending.empty()) {
            record_start = line_no;
            if (line.empty()) continue;
            pending = line;
        } else {
            pending += "\n" + line;
        }
        if (!split_record(pending, fields)) continue;
        records.push_back(fields);
        record_lines.push_back(record_start);
        pending.clear();
    }
    if (!pending.empty()) {
        throw DataError("load_csv: unterminated quoted field starting at line " + std::to_string(record_start));
    }
    if (records.empty()) throw DataError("load_csv: missing header row in '" + path + "'");

    std::vector<std::string> header = records.front();
    for (auto& h : header) h = trim(h);
    // Tolerate a UTF-8 byte-order mark on the first column name.
    if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
    const auto label_it = std::find(header.begin(), header.end(), label_column);
    if (label_it == header.end()) throw DataError("load_csv: label column '" + label_column + "' not found");
    const std::size_t label_idx = static_cast<std::size_t>(label_it - header.begin());

    CsvDataset out;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c != label_idx) out.feature_names.push_back(header[c]);
    }
    const std::size_t n_rows = records.size() - 1;
    const std::size_t n_feat = out.feature_names.size();
    if (n_feat == 0) throw DataError("load_csv: no feature columns");
    out.dataset.features = Matrix(n_rows, n_feat);
    std::vector<std::string> raw_labels(n_rows);

    for (std::size_t r = 0; r < n_rows; ++r) {
        const auto& rec = records[r + 1];
        const std::size_t ln = record_lines[r + 1];
        if (rec.size() != header.size()) {
            throw DataError("load_csv: line " + std::to_string(ln) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(rec.size()));
        }
        std::size_t f = 0;
        for (std::size_t c = 0; c < rec.size(); ++c) {
            if (c == label_idx) {
                raw_labels[r] = trim(rec[c]);
                continue;
            }
            const std::string cell = trim(rec[c]);
            double value = 0.0;
            std::size_t used = 0;
            try {
                value = std::stod(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (cell.empty() || used != cell.size() || std::isnan(value)) {
                throw DataError("load_csv: line " + std::to_string(ln) + ": non-numeric value '" + cell +
                                "' in column '" + header[c] + "'");
            }
            out.dataset.features(r, f++) = value;
        }
    }

    std::map<std::string, std::size_t> mapping;
    for (const auto& l : raw_labels) mapping.emplace(l, 0);
    std::size_t next = 0;
    for (auto& [name, id] : mapping) {
        id = next++;
        out.label_names.push_back(name);
    }
    out.dataset.labels.reserve(n_rows);
    for (const auto& l : raw_labels) out.dataset.labels.push_back(mapping.at(l));
    out.dataset.n_classes = mapping.size();

    if (normalize) normalize_columns(out.dataset.features);
    out.dataset.validate();
    return out;
}

std::size_t dominant_cluster(const Dataset& train, std::span<const std::size_t> class_cluster) {
    if (class_cluster.empty()) return 0;
    const std::size_t n_clusters = *std::max_element(class_cluster.begin(), class_cluster.end()) + 1;
    std::vector<std::size_t> mass(n_clusters, 0);
    for (std::size_t y : train.labels) ++mass[class_cluster[y]];
    return static_cast<std::size_t>(std::max_element(mass.begin(), mass.end()) - mass.begin());
}

}  // namespace kdpdfl::data
