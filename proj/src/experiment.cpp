#include "kdpdfl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "kdpdfl/io.hpp"

namespace kdpdfl::experiment {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(Method m) {
    switch (m) {
        case Method::local_only: return "local_only";
        case Method::fedavg: return "fedavg";
        case Method::fedavg_plus: return "fedavg_plus";
        case Method::kd_pdfl: return "kd_pdfl";
    }
    return "?";
}

namespace {

template <typename E>
struct EnumName {
    const char* name;
    E value;
};

constexpr EnumName<Method> kMethods[] = {{"local_only", Method::local_only},
                                         {"fedavg", Method::fedavg},
                                         {"fedavg_plus", Method::fedavg_plus},
                                         {"kd_pdfl", Method::kd_pdfl}};
constexpr EnumName<collab::StepMode> kStepModes[] = {{"literal_elementwise", collab::StepMode::literal_elementwise},
                                                     {"normalized_scalar", collab::StepMode::normalized_scalar}};
constexpr EnumName<sim::BroadcastRule> kBroadcastRules[] = {{"overwrite", sim::BroadcastRule::overwrite},
                                                            {"blend", sim::BroadcastRule::blend}};
constexpr EnumName<sim::StarSelection> kStarSelections[] = {{"uniform", sim::StarSelection::uniform},
                                                            {"permutation", sim::StarSelection::permutation}};
constexpr EnumName<sim::ConfidenceMode> kConfidenceModes[] = {{"data_size", sim::ConfidenceMode::data_size},
                                                              {"equal_share", sim::ConfidenceMode::equal_share}};
constexpr EnumName<sim::InitMode> kInitModes[] = {{"shared", sim::InitMode::shared},
                                                  {"per_client", sim::InitMode::per_client}};
constexpr EnumName<DatasetConfig::Kind> kDatasetKinds[] = {{"synthetic", DatasetConfig::Kind::synthetic},
                                                           {"csv", DatasetConfig::Kind::csv}};

template <typename E, std::size_t N>
const char* enum_name(const EnumName<E> (&table)[N], E v) {
    for (const auto& e : table) {
        if (e.value == v) return e.name;
    }
    return "?";
}

bool is_count(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(where("") + "expected an object");
    }

    bool has(const std::string& key) const { return obj_.contains(key); }

    void read(const std::string& key, std::size_t& out) {
        if (const json* v = take(key)) {
            if (!is_count(*v)) {
                throw ConfigError(where(key) + "expected a nonnegative integer, got " + v->dump());
            }
            out = v->get<std::size_t>();
        }
    }

    void read(const std::string& key, std::uint64_t& out, int) {
        std::size_t tmp = out;
        read(key, tmp);
        out = tmp;
    }

    void read(const std::string& key, double& out) {
        if (const json* v = take(key)) {
            if (!v->is_number()) throw ConfigError(where(key) + "expected a number, got " + v->dump());
            out = v->get<double>();
        }
    }

    void read(const std::string& key, bool& out) {
        if (const json* v = take(key)) {
            if (!v->is_boolean()) throw ConfigError(where(key) + "expected true/false, got " + v->dump());
            out = v->get<bool>();
        }
    }

    void read(const std::string& key, std::string& out) {
        if (const json* v = take(key)) {
            if (!v->is_string()) throw ConfigError(where(key) + "expected a string, got " + v->dump());
            out = v->get<std::string>();
        }
    }

    void read(const std::string& key, std::vector<std::size_t>& out) {
        if (const json* v = take(key)) {
            if (!v->is_array()) throw ConfigError(where(key) + "expected an array of integers");
            out.clear();
            for (const auto& e : *v) {
                if (!is_count(e)) throw ConfigError(where(key) + "expected nonnegative integers");
                out.push_back(e.get<std::size_t>());
            }
        }
    }

    template <typename T>
    void read_optional(const std::string& key, std::optional<T>& out) {
        if (!has(key)) return;
        if (obj_.at(key).is_null()) {
            seen_.insert(key);
            out.reset();
            return;
        }
        T tmp{};
        read(key, tmp);
        out = tmp;
    }

    template <typename E, std::size_t N>
    void read_enum(const std::string& key, const EnumName<E> (&table)[N], E& out) {
        if (const json* v = take(key)) {
            if (!v->is_string()) throw ConfigError(where(key) + "expected a string");
            const std::string s = v->get<std::string>();
            for (const auto& e : table) {
                if (s == e.name) {
                    out = e.value;
                    return;
                }
            }
            std::string allowed;
            for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
            throw ConfigError(where(key) + "unknown value '" + s + "' (allowed: " + allowed + ")");
        }
    }

    // Nested object, or nullopt when absent.
    std::optional<ObjectReader> child(const std::string& key) {
        if (const json* v = take(key)) return ObjectReader(*v, path_.empty() ? key : path_ + "." + key);
        return std::nullopt;
    }

    void finish() const {
        for (const auto& [k, v] : obj_.items()) {
            if (!seen_.count(k)) throw ConfigError(where(k) + "unknown key");
        }
    }

private:
    const json* take(const std::string& key) {
        if (!obj_.contains(key)) return nullptr;
        seen_.insert(key);
        return &obj_.at(key);
    }

    std::string where(const std::string& key) const {
        std::string p = path_;
        if (!key.empty()) p += (p.empty() ? "" : ".") + key;
        return p.empty() ? "config: " : "config key '" + p + "': ";
    }

    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& key, const std::string& constraint) {
    if (!ok) throw ConfigError("config key '" + key + "': constraint violated: " + constraint);
}

std::size_t auto_samples_per_class(const ExperimentConfig& cfg) {
    const auto& p = cfg.partition;
    const std::size_t k = std::max<std::size_t>(cfg.dataset.synthetic.n_classes, 1);
    const std::size_t need = 3 * p.M * (p.max_train + p.test_per_client);
    return std::max<std::size_t>(1000, (need + k - 1) / k);
}

void validate(const ExperimentConfig& cfg) {
    const auto& ds = cfg.dataset;
    if (ds.kind == DatasetConfig::Kind::synthetic) {
        const auto& s = ds.synthetic;
        require(s.n_classes >= 2, "dataset.n_classes", ">= 2");
        require(s.n_features >= 1, "dataset.n_features", ">= 1");
        require(s.n_clusters >= 1 && s.n_clusters <= s.n_classes, "dataset.n_clusters", "in [1, n_classes]");
        require(s.samples_per_class >= 1, "dataset.samples_per_class", ">= 1");
        require(s.class_sep > 0.0, "dataset.class_sep", "> 0");
        require(s.noise_std > 0.0, "dataset.noise_std", "> 0");
    } else {
        require(!ds.csv_path.empty(), "dataset.path", "required for csv datasets");
        require(!ds.label_column.empty(), "dataset.label_column", "nonempty");
    }
    const auto& p = cfg.partition;
    require(p.M >= 2, "M", ">= 2");
    require(p.dirichlet_alpha > 0.0, "partition.dirichlet_alpha", "> 0");
    require(p.min_train >= 1, "partition.min_train", ">= 1");
    require(p.min_train <= p.max_train, "partition.min_train", "<= partition.max_train");
    require(p.test_per_client >= 1, "partition.test_per_client", ">= 1");
    require(p.validation_fraction >= 0.0 && p.validation_fraction < 1.0, "partition.validation_fraction", "in [0, 1)");
    for (std::size_t h : cfg.hidden_dims) require(h >= 1, "model.hidden_dims", "every width >= 1");
    require(cfg.local_lr > 0.0, "local_lr", "> 0");
    const auto& s = cfg.sim;
    require(s.T >= 1, "T", ">= 1");
    require(s.T_ex >= 2, "T_ex", ">= 2 (exchange at t = 0 mod T_ex and broadcast at t = 1 mod T_ex must differ)");
    require(s.batch_size >= 1, "batch_size", ">= 1");
    require(s.probe_batch_size >= 1, "probe_batch_size", ">= 1");
    require(s.regularizer.mu1 >= 0.0, "regularizer.mu1", ">= 0");
    require(s.regularizer.mu2 >= 0.0, "regularizer.mu2", ">= 0");
    require(s.regularizer.epsilon > 0.0, "regularizer.epsilon", "> 0");
    require(s.regularizer.eta_w > 0.0, "regularizer.eta_w", "> 0");
    require(!s.c_base || *s.c_base > 0.0, "c_base", "> 0");
    require(cfg.target_mean_neighbors > 0.0, "channel.target_mean_neighbors", "> 0");
    require(!cfg.max_neighbors || *cfg.max_neighbors >= 1, "channel.max_neighbors", ">= 1");
    require(cfg.packet_loss >= 0.0 && cfg.packet_loss < 1.0, "channel.packet_loss", "in [0, 1)");
    require(s.reptile_beta > 0.0 && s.reptile_beta <= 1.0, "reptile.beta", "in (0, 1]");
    require(s.reptile_inner_steps >= 1, "reptile.inner_steps", ">= 1");
    require(cfg.method != Method::fedavg_plus || s.t_switch < s.T, "t_switch", "< T for fedavg_plus");
    require(cfg.n_repeats >= 1, "n_repeats", ">= 1");
    require(!cfg.output_dir.empty(), "output_dir", "nonempty");
}

}  // namespace

ExperimentConfig parse_config_json(const json& doc) {
    ExperimentConfig cfg;
    ObjectReader root(doc, "");

    bool samples_given = false;
    if (auto ds = root.child("dataset")) {
        ds->read_enum("kind", kDatasetKinds, cfg.dataset.kind);
        auto& s = cfg.dataset.synthetic;
        ds->read("n_classes", s.n_classes);
        ds->read("n_features", s.n_features);
        ds->read("n_clusters", s.n_clusters);
        if (ds->has("samples_per_class")) {
            std::optional<std::size_t> spc;
            ds->read_optional("samples_per_class", spc);
            if (spc) {
                s.samples_per_class = *spc;
                samples_given = true;
            }
        }
        ds->read("seed", s.seed, 0);
        ds->read("class_sep", s.class_sep);
        ds->read("noise_std", s.noise_std);
        ds->read("rotation_deg", s.rotation_deg);
        ds->read("path", cfg.dataset.csv_path);
        ds->read("label_column", cfg.dataset.label_column);
        ds->read("normalize", cfg.dataset.normalize);
        ds->finish();
    } else {
        throw ConfigError("config key 'dataset': required");
    }

    if (!root.has("M")) throw ConfigError("config key 'M': required");
    root.read("M", cfg.partition.M);
    if (auto p = root.child("partition")) {
        p->read("dirichlet_alpha", cfg.partition.dirichlet_alpha);
        p->read("min_train", cfg.partition.min_train);
        p->read("max_train", cfg.partition.max_train);
        p->read("test_per_client", cfg.partition.test_per_client);
        p->read("validation_fraction", cfg.partition.validation_fraction);
        p->finish();
    }
    if (auto m = root.child("model")) {
        m->read("hidden_dims", cfg.hidden_dims);
        m->read("batchnorm", cfg.batchnorm);
        m->read_enum("init", kInitModes, cfg.init);
        m->finish();
    }

    auto& s = cfg.sim;
    root.read("T", s.T);
    root.read("T_ex", s.T_ex);
    root.read("local_lr", cfg.local_lr);
    root.read("batch_size", s.batch_size);
    root.read("probe_batch_size", s.probe_batch_size);
    root.read("compare_raw_logits", s.compare_raw_logits);
    if (auto r = root.child("regularizer")) {
        r->read("mu1", s.regularizer.mu1);
        r->read("mu2", s.regularizer.mu2);
        r->read("epsilon", s.regularizer.epsilon);
        r->read_enum("step_mode", kStepModes, s.regularizer.step_mode);
        r->read("eta_w", s.regularizer.eta_w);
        r->finish();
    }
    root.read_optional("c_base", s.c_base);
    if (auto ch = root.child("channel")) {
        ch->read("target_mean_neighbors", cfg.target_mean_neighbors);
        ch->read_optional("max_neighbors", cfg.max_neighbors);
        ch->read("packet_loss", cfg.packet_loss);
        ch->finish();
    }
    root.read_enum("method", kMethods, cfg.method);
    std::optional<std::size_t> t_switch;
    root.read_optional("t_switch", t_switch);
    if (auto rp = root.child("reptile")) {
        rp->read("beta", s.reptile_beta);
        rp->read("inner_steps", s.reptile_inner_steps);
        rp->finish();
    }
    root.read_enum("broadcast_rule", kBroadcastRules, s.broadcast_rule);
    root.read_enum("star_selection", kStarSelections, s.star_selection);
    root.read_enum("confidence_mode", kConfidenceModes, s.confidence_mode);
    root.read_optional("staleness_horizon", s.staleness_horizon);
    root.read("metric_every", s.metric_every);
    root.read("log_transmissions", s.log_transmissions);
    root.read("n_repeats", cfg.n_repeats);
    root.read("master_seed", cfg.master_seed, 0);
    root.read("output_dir", cfg.output_dir);
    root.finish();

    s.t_switch = t_switch.value_or(3 * s.T / 4);
    if (!samples_given) cfg.dataset.synthetic.samples_per_class = auto_samples_per_class(cfg);
    validate(cfg);
    return cfg;
}

ExperimentConfig parse_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
    json doc;
    try {
        doc = json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path.string() + "': " + e.what());
    }
    return parse_config_json(doc);
}

ordered_json effective_config(const ExperimentConfig& cfg) {
    ordered_json j;
    const auto& s = cfg.dataset.synthetic;
    ordered_json ds;
    ds["kind"] = enum_name(kDatasetKinds, cfg.dataset.kind);
    ds["n_classes"] = s.n_classes;
    ds["n_features"] = s.n_features;
    ds["n_clusters"] = s.n_clusters;
    ds["samples_per_class"] = s.samples_per_class;
    ds["seed"] = s.seed;
    ds["class_sep"] = s.class_sep;
    ds["noise_std"] = s.noise_std;
    ds["rotation_deg"] = s.rotation_deg;
    ds["path"] = cfg.dataset.csv_path;
    ds["label_column"] = cfg.dataset.label_column;
    ds["normalize"] = cfg.dataset.normalize;
    j["dataset"] = ds;
    j["M"] = cfg.partition.M;
    j["partition"] = {{"dirichlet_alpha", cfg.partition.dirichlet_alpha},
                      {"min_train", cfg.partition.min_train},
                      {"max_train", cfg.partition.max_train},
                      {"test_per_client", cfg.partition.test_per_client},
                      {"validation_fraction", cfg.partition.validation_fraction}};
    j["model"] = {{"hidden_dims", cfg.hidden_dims},
                  {"batchnorm", cfg.batchnorm},
                  {"init", enum_name(kInitModes, cfg.init)}};
    const auto& sc = cfg.sim;
    j["T"] = sc.T;
    j["T_ex"] = sc.T_ex;
    j["local_lr"] = cfg.local_lr;
    j["batch_size"] = sc.batch_size;
    j["probe_batch_size"] = sc.probe_batch_size;
    j["compare_raw_logits"] = sc.compare_raw_logits;
    j["regularizer"] = {{"mu1", sc.regularizer.mu1},
                        {"mu2", sc.regularizer.mu2},
                        {"epsilon", sc.regularizer.epsilon},
                        {"step_mode", enum_name(kStepModes, sc.regularizer.step_mode)},
                        {"eta_w", sc.regularizer.eta_w}};
    j["c_base"] = sc.c_base ? ordered_json(*sc.c_base) : ordered_json(nullptr);
    j["channel"] = {{"target_mean_neighbors", cfg.target_mean_neighbors},
                    {"max_neighbors", cfg.max_neighbors ? ordered_json(*cfg.max_neighbors) : ordered_json(nullptr)},
                    {"packet_loss", cfg.packet_loss}};
    j["method"] = to_string(cfg.method);
    j["t_switch"] = sc.t_switch;
    j["reptile"] = {{"beta", sc.reptile_beta}, {"inner_steps", sc.reptile_inner_steps}};
    j["broadcast_rule"] = enum_name(kBroadcastRules, sc.broadcast_rule);
    j["star_selection"] = enum_name(kStarSelections, sc.star_selection);
    j["confidence_mode"] = enum_name(kConfidenceModes, sc.confidence_mode);
    j["staleness_horizon"] = sc.staleness_horizon ? ordered_json(*sc.staleness_horizon) : ordered_json(nullptr);
    j["metric_every"] = sc.metric_every;
    j["log_transmissions"] = sc.log_transmissions;
    j["n_repeats"] = cfg.n_repeats;
    j["master_seed"] = cfg.master_seed;
    j["output_dir"] = cfg.output_dir;
    return j;
}

RepeatSetup prepare_repeat(const ExperimentConfig& cfg, std::size_t r) {
    RepeatSetup setup;
    setup.seed = cfg.master_seed + r;
    data::Dataset pool;
    if (cfg.dataset.kind == DatasetConfig::Kind::synthetic) {
        data::SyntheticSpec spec = cfg.dataset.synthetic;
        spec.seed += r;
        data::SyntheticData syn = data::generate_synthetic(spec);
        pool = std::move(syn.dataset);
        setup.class_cluster = std::move(syn.class_cluster);
    } else {
        pool = data::load_csv(cfg.dataset.csv_path, cfg.dataset.label_column, cfg.dataset.normalize).dataset;
    }
    data::PartitionSpec part = cfg.partition;
    part.seed = setup.seed;
    setup.clients = data::dirichlet_partition(pool, part);

    setup.arch.input_dim = pool.n_features();
    setup.arch.hidden_dims = cfg.hidden_dims;
    setup.arch.output_dim = pool.n_classes;
    setup.arch.use_batchnorm = cfg.batchnorm;
    setup.arch.validate();

    setup.sim = cfg.sim;
    setup.sim.channel = sim::make_channel(cfg.M(), cfg.target_mean_neighbors, cfg.max_neighbors, cfg.packet_loss);
    return setup;
}

sim::SimResult run_method(const ExperimentConfig& cfg, RepeatSetup setup) {
    auto clients = sim::make_clients(std::move(setup.clients), setup.arch, setup.seed, cfg.local_lr, cfg.init);
    switch (cfg.method) {
        case Method::kd_pdfl: return sim::run_kd_pdfl(std::move(clients), setup.sim, setup.seed);
        case Method::local_only:
            return sim::run_baseline(std::move(clients), setup.sim, sim::Baseline::local_only, setup.seed);
        case Method::fedavg: return sim::run_baseline(std::move(clients), setup.sim, sim::Baseline::fedavg, setup.seed);
        case Method::fedavg_plus:
            return sim::run_baseline(std::move(clients), setup.sim, sim::Baseline::fedavg_plus, setup.seed);
    }
    throw std::logic_error("unhandled method");
}

BlockStats block_stats(const Matrix& W, std::span<const std::size_t> client_cluster) {
    BlockStats b;
    double within = 0.0, cross = 0.0;
    std::size_t n_within = 0, n_cross = 0;
    for (std::size_t i = 0; i < W.rows; ++i) {
        for (std::size_t j = 0; j < W.cols; ++j) {
            if (i == j) continue;
            if (client_cluster[i] == client_cluster[j]) {
                within += W(i, j);
                ++n_within;
            } else {
                cross += W(i, j);
                ++n_cross;
            }
        }
    }
    if (n_within > 0 && n_cross > 0) {
        b.within = within / static_cast<double>(n_within);
        b.cross = cross / static_cast<double>(n_cross);
        b.defined = true;
    }
    return b;
}

namespace {

std::vector<double> final_test_accuracy(std::span<const sim::MetricsRecord> metrics, std::size_t M) {
    std::size_t last_t = 0;
    for (const auto& m : metrics) last_t = std::max(last_t, m.t);
    std::vector<double> acc(M, 0.0);
    for (const auto& m : metrics) {
        if (m.t == last_t && m.split == sim::Split::test) acc.at(m.client_id) = m.accuracy;
    }
    return acc;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir);
    io::write_file_atomic(out_dir / "effective_config.json", effective_config(cfg).dump(2) + "\n");

    RunRecord record;
    record.method = cfg.method;
    record.M = cfg.M();
    std::optional<Matrix> w_sum;
    for (std::size_t r = 0; r < cfg.n_repeats; ++r) {
        RepeatSetup setup = prepare_repeat(cfg, r);
        const fs::path rdir = out_dir / ("repeat_" + std::to_string(r));
        fs::create_directories(rdir);
        io::write_file_atomic(rdir / "partition.json", data::partition_manifest_json(setup.clients));

        std::vector<std::size_t> client_cluster;
        if (!setup.class_cluster.empty()) {
            for (const auto& c : setup.clients) {
                client_cluster.push_back(data::dominant_cluster(c.train, setup.class_cluster));
            }
        }

        sim::SimResult result;
        try {
            result = run_method(cfg, std::move(setup));
        } catch (const std::exception& e) {
            throw std::runtime_error("repeat " + std::to_string(r) + ": " + e.what());
        }

        io::write_file_atomic(rdir / "metrics.csv", io::metrics_csv(result.metrics));
        io::write_file_atomic(rdir / "exchanges.jsonl", io::exchanges_jsonl(result.exchanges));
        if (cfg.sim.log_transmissions) {
            io::write_file_atomic(rdir / "transmissions.jsonl", io::transmissions_jsonl(result.transmissions));
        }
        if (result.final_W) {
            io::write_file_atomic(rdir / "W.csv", io::collaboration_csv(*result.final_W));
            if (!client_cluster.empty()) record.blocks.push_back(block_stats(*result.final_W, client_cluster));
            if (!w_sum) {
                w_sum = *result.final_W;
            } else {
                for (std::size_t k = 0; k < w_sum->data.size(); ++k) w_sum->data[k] += result.final_W->data[k];
            }
        }
        record.final_test_accuracy.push_back(final_test_accuracy(result.metrics, cfg.M()));
    }
    if (w_sum) {
        for (double& v : w_sum->data) v /= static_cast<double>(cfg.n_repeats);
        record.mean_W = std::move(w_sum);
    }

    const std::vector<RunRecord> runs{record};
    const SummaryTable table = emit_summary(runs);
    io::write_file_atomic(out_dir / "summary.json", summary_json(table, runs).dump(2) + "\n");
    io::write_file_atomic(out_dir / "summary.txt", summary_text(table));
    return record;
}

SummaryTable emit_summary(std::span<const RunRecord> runs) {
    if (runs.empty()) throw std::invalid_argument("emit_summary: no completed runs");
    std::map<std::pair<Method, std::size_t>, std::vector<double>> groups;
    for (const auto& run : runs) {
        auto& acc = groups[{run.method, run.M}];
        for (const auto& rep : run.final_test_accuracy) acc.insert(acc.end(), rep.begin(), rep.end());
    }
    SummaryTable table;
    for (const auto& [key, values] : groups) {
        if (values.empty()) throw std::invalid_argument("emit_summary: run without per-client accuracies");
        const auto [mean, sd] = mean_std(values);
        table.rows.push_back({key.first, key.second, mean, sd, values.size()});
    }
    return table;
}

ordered_json summary_json(const SummaryTable& table, std::span<const RunRecord> runs) {
    ordered_json j;
    ordered_json rows = ordered_json::array();
    for (const auto& r : table.rows) {
        rows.push_back({{"method", to_string(r.method)}, {"M", r.M}, {"mean", r.mean}, {"std", r.std}, {"n", r.n}});
    }
    j["rows"] = rows;
    if (!runs.empty()) {
        ordered_json blocks = ordered_json::array();
        for (const auto& run : runs) {
            for (std::size_t r = 0; r < run.blocks.size(); ++r) {
                if (!run.blocks[r].defined) continue;
                blocks.push_back({{"method", to_string(run.method)},
                                  {"M", run.M},
                                  {"repeat", r},
                                  {"within_cluster_weight", run.blocks[r].within},
                                  {"cross_cluster_weight", run.blocks[r].cross}});
            }
        }
        j["collaboration_blocks"] = blocks;
    }
    return j;
}

std::string summary_text(const SummaryTable& table) {
    std::ostringstream os;
    os << "Per-client final test accuracy (mean +- population std over clients and repeats)\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %5s  %-17s %6s\n", "method", "M", "accuracy", "n");
    os << line;
    for (const auto& r : table.rows) {
        std::snprintf(line, sizeof line, "%-12s %5zu  %.3f +- %.3f     %6zu\n", to_string(r.method), r.M, r.mean, r.std,
                      r.n);
        os << line;
    }
    return os.str();
}

SummaryTable summarize_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("summarize: '" + dir.string() + "' is not a directory");
    std::vector<fs::path> configs;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().filename() == "effective_config.json") {
            configs.push_back(entry.path());
        }
    }
    std::sort(configs.begin(), configs.end());
    std::vector<RunRecord> runs;
    for (const auto& cfg_path : configs) {
        const ExperimentConfig cfg = parse_config(cfg_path);
        RunRecord rec;
        rec.method = cfg.method;
        rec.M = cfg.M();
        std::vector<fs::path> repeats;
        for (const auto& entry : fs::directory_iterator(cfg_path.parent_path())) {
            if (entry.is_directory() && entry.path().filename().string().rfind("repeat_", 0) == 0 &&
                fs::exists(entry.path() / "metrics.csv")) {
                repeats.push_back(entry.path());
            }
        }
        std::sort(repeats.begin(), repeats.end());
        for (const auto& rp : repeats) {
            const auto rows = io::parse_metrics_csv(io::read_file(rp / "metrics.csv"));
            std::size_t last_t = 0;
            for (const auto& row : rows) last_t = std::max(last_t, row.t);
            std::vector<double> acc(cfg.M(), 0.0);
            for (const auto& row : rows) {
                if (row.t == last_t && row.split == "test") acc.at(row.client_id) = row.accuracy;
            }
            rec.final_test_accuracy.push_back(std::move(acc));
        }
        if (!rec.final_test_accuracy.empty()) runs.push_back(std::move(rec));
    }
    if (runs.empty()) throw std::runtime_error("summarize: no completed runs below '" + dir.string() + "'");
    const SummaryTable table = emit_summary(runs);
    io::write_file_atomic(dir / "summary.json", summary_json(table).dump(2) + "\n");
    io::write_file_atomic(dir / "summary.txt", summary_text(table));
    return table;
}

SweepAxis parse_axis(const std::string& name) {
    if (name == "neighbor_cap") return SweepAxis::neighbor_cap;
    if (name == "mu_grid") return SweepAxis::mu_grid;
    throw ConfigError("unknown sweep axis '" + name + "' (allowed: neighbor_cap, mu_grid)");
}

namespace {

double parse_number(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size()) throw ConfigError("sweep: bad value '" + s + "'");
    return v;
}

}  // namespace

std::vector<SweepPoint> sweep(const ExperimentConfig& base, SweepAxis axis, std::span<const std::string> values) {
    if (values.empty()) throw ConfigError("sweep: no values given");
    std::vector<SweepPoint> points;
    if (axis == SweepAxis::neighbor_cap) {
        for (const auto& v : values) {
            const double k = parse_number(v);
            if (k < 1.0 || k != std::floor(k)) throw ConfigError("sweep: neighbor cap must be a positive integer");
            SweepPoint p;
            p.max_neighbors = static_cast<std::size_t>(k);
            p.mu1 = base.sim.regularizer.mu1;
            p.mu2 = base.sim.regularizer.mu2;
            p.label = "cap_" + v;
            points.push_back(std::move(p));
        }
    } else {
        std::vector<std::pair<double, double>> cells;
        const bool pairs = std::all_of(values.begin(), values.end(),
                                       [](const std::string& v) { return v.find(':') != std::string::npos; });
        if (pairs) {
            for (const auto& v : values) {
                const auto colon = v.find(':');
                cells.emplace_back(parse_number(v.substr(0, colon)), parse_number(v.substr(colon + 1)));
            }
        } else {
            std::vector<double> grid;
            for (const auto& v : values) grid.push_back(parse_number(v));
            for (double a : grid)
                for (double b : grid) cells.emplace_back(a, b);
        }
        for (const auto& [a, b] : cells) {
            if (a < 0.0 || b < 0.0) throw ConfigError("sweep: mu values must be >= 0");
            SweepPoint p;
            p.max_neighbors = base.max_neighbors;
            p.mu1 = a;
            p.mu2 = b;
            p.label = "mu1_" + io::format_double(a) + "_mu2_" + io::format_double(b);
            points.push_back(std::move(p));
        }
    }

    const fs::path root(base.output_dir);
    const char* axis_name = axis == SweepAxis::neighbor_cap ? "neighbor_cap" : "mu_grid";
    std::string table = "axis,value,mu1,mu2,max_neighbors,method,M,mean_accuracy,std_accuracy,"
                        "within_cluster_weight,cross_cluster_weight\r\n";
    for (auto& p : points) {
        ExperimentConfig cfg = base;
        cfg.max_neighbors = p.max_neighbors;
        cfg.sim.regularizer.mu1 = p.mu1;
        cfg.sim.regularizer.mu2 = p.mu2;
        cfg.output_dir = (root / p.label).string();
        p.record = run_experiment(cfg);

        const std::vector<RunRecord> one{p.record};
        const SummaryRow row = emit_summary(one).rows.front();
        double within = std::nan(""), cross = std::nan("");
        std::size_t n_blocks = 0;
        double sw = 0.0, sc = 0.0;
        for (const auto& b : p.record.blocks) {
            if (!b.defined) continue;
            sw += b.within;
            sc += b.cross;
            ++n_blocks;
        }
        if (n_blocks > 0) {
            within = sw / static_cast<double>(n_blocks);
            cross = sc / static_cast<double>(n_blocks);
        }
        const std::string value = axis == SweepAxis::neighbor_cap ? std::to_string(*p.max_neighbors)
                                                                  : io::format_double(p.mu1) + ":" + io::format_double(p.mu2);
        table += std::string(axis_name) + "," + value + "," + io::format_double(p.mu1) + "," +
                 io::format_double(p.mu2) + "," + (p.max_neighbors ? std::to_string(*p.max_neighbors) : "") + "," +
                 to_string(cfg.method) + "," + std::to_string(cfg.M()) + "," + io::format_double(row.mean) + "," +
                 io::format_double(row.std) + "," + (n_blocks ? io::format_double(within) : "") + "," +
                 (n_blocks ? io::format_double(cross) : "") + "\r\n";
        if (axis == SweepAxis::mu_grid && p.record.mean_W) {
            io::write_file_atomic(root / ("heatmap_" + p.label + ".csv"), io::collaboration_csv(*p.record.mean_W));
        }
    }
    io::write_file_atomic(root / (std::string("sweep_") + axis_name + ".csv"), table);
    return points;
}

}  // namespace kdpdfl::experiment
