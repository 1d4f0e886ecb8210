// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <string>

#include "json.hpp"
#include "kdpdfl/channel.hpp"
#include "kdpdfl/collab.hpp"
#include "kdpdfl/distillation.hpp"
#include "kdpdfl/experiment.hpp"
#include "kdpdfl/io.hpp"
#include "kdpdfl/nn.hpp"
#include "kdpdfl/simulation.hpp"

using namespace kdpdfl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& check) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %2d %s: %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// ---- 1 ---------------------------------------------------------------------

Outcome gradient_fidelity() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> in_dim(1, 6), hid(1, 8), out_dim(2, 5), layers(0, 2), batch(2, 12);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    for (int m = 0; m < 10; ++m) {
        nn::Architecture arch;
        do {
            arch = {in_dim(rng), {}, out_dim(rng), (m % 2) == 0};
            for (std::size_t l = layers(rng); l > 0; --l) arch.hidden_dims.push_back(hid(rng));
        } while (arch.param_count() > 200);
        nn::ParamVector model = nn::init_model(arch, 10 + m);
        for (double& v : model.values()) v += 0.1 * normal(rng);
        nn::Batch b;
        const std::size_t n = batch(rng);
        b.features = Matrix(n, arch.input_dim);
        for (double& v : b.features.data) v = normal(rng);
        std::uniform_int_distribution<std::size_t> lab(0, arch.output_dim - 1);
        for (std::size_t i = 0; i < n; ++i) b.labels.push_back(lab(rng));

        const auto analytic = nn::loss_and_grad(model, b).grad;
        const double h = 1e-5;
        for (std::size_t k = 0; k < model.param_count(); ++k) {
            nn::ParamVector p = model, q = model;
            p.values()[k] += h;
            q.values()[k] -= h;
            const double fd =
                (nn::forward(p, b, nn::Mode::train).loss - nn::forward(q, b, nn::Mode::train).loss) / (2 * h);
            const double denom = std::max({std::abs(fd), std::abs(analytic[k]), 1e-6});
            worst = std::max(worst, std::abs(fd - analytic[k]) / denom);
        }
    }
    const double secs = elapsed_since(t0);
    return {worst <= 1e-4 && secs < 10.0, fmt("max relative error %.3g (<= 1e-4), %.2fs (< 10s)", worst, secs)};
}

// ---- 2 ---------------------------------------------------------------------

Outcome distance_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> rows(1, 32), cols(2, 10);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = rows(rng), k = cols(rng);
        Matrix a(n, k), b(n, k);
        for (double& v : a.data) v = u(rng);
        for (double& v : b.data) v = u(rng);
        const auto pa = nn::ProbMatrix::from_logits(a), pb = nn::ProbMatrix::from_logits(b);
        double ref = 0.0;
        for (std::size_t x = 0; x < n; ++x) {
            for (std::size_t l = 0; l < k; ++l) {
                const double d = pa.matrix()(x, l) - pb.matrix()(x, l);
                ref += d * d;
            }
        }
        ref /= static_cast<double>(n);
        worst = std::max(worst, std::abs(distill::wasserstein2d(pa, pb) - ref));
    }
    Matrix one(1, 2), two(1, 2);
    one(0, 0) = 1.0;
    two(0, 1) = 1.0;
    const double hand = distill::wasserstein2d(nn::ProbMatrix(one), nn::ProbMatrix(two));
    const double secs = elapsed_since(t0);
    return {worst <= 1e-12 && hand == 2.0 && secs < 1.0,
            fmt("max |diff| %.3g (<= 1e-12), one-hot case %.17g (== 2), %.3fs (< 1s)", worst, hand, secs)};
}

// ---- 3 ---------------------------------------------------------------------

Outcome update_properties() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(0.0, 2.0), mu(0.0, 5.0), unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> msize(2, 12), steps(1, 20);
    std::bernoulli_distribution coin(0.5);
    std::size_t negatives = 0, order_violations = 0, sequences = 0;
    for (int s = 0; s < 1000; ++s, ++sequences) {
        const std::size_t M = msize(rng);
        collab::RegularizerConfig cfg;
        cfg.mu1 = mu(rng);
        cfg.mu2 = mu(rng);
        cfg.eta_w = unit(rng) + 1e-3;
        cfg.step_mode = coin(rng) ? collab::StepMode::normalized_scalar : collab::StepMode::literal_elementwise;
        collab::ConnectivityVector w{0, std::vector<double>(M, 0.0)};
        for (std::size_t j = 1; j < M; ++j) w.weights[j] = unit(rng);
        for (std::size_t k = steps(rng); k > 0; --k) {
            distill::DistanceVector d{0, {}};
            for (std::size_t j = 1; j < M; ++j)
                if (coin(rng)) d.entries[j] = dist(rng);
            w = collab::conn_vector_update(w, d, cfg);
            for (double v : w.weights) negatives += v < 0.0;
        }

        // Single update from equal weights without the regularizer.
        collab::RegularizerConfig plain = cfg;
        plain.mu2 = 0.0;
        plain.mu1 = mu(rng) + 0.01;
        const double start = unit(rng);
        collab::ConnectivityVector eq{0, std::vector<double>(M, start)};
        eq.weights[0] = 0.0;
        distill::DistanceVector d{0, {}};
        for (std::size_t j = 1; j < M; ++j) d.entries[j] = dist(rng);
        const auto after = collab::conn_vector_update(eq, d, plain);
        for (const auto& [a, da] : d.entries)
            for (const auto& [b, db] : d.entries)
                if (da < db && after.weights[a] < after.weights[b]) ++order_violations;
    }
    const double secs = elapsed_since(t0);
    return {negatives == 0 && order_violations == 0 && secs < 5.0,
            "sequences " + std::to_string(sequences) + ", negative weights " + std::to_string(negatives) +
                ", ordering violations " + std::to_string(order_violations) + fmt(", %.2fs (< 5s)", secs)};
}

// ---- shared end-to-end runs --------------------------------------------------

experiment::ExperimentConfig e2e_config(experiment::Method method, const fs::path& out) {
    nlohmann::json j = {{"dataset", {{"kind", "synthetic"}, {"n_classes", 9}, {"n_features", 20}, {"n_clusters", 2}}},
                        {"M", 10},
                        {"partition", {{"dirichlet_alpha", 0.1}}},
                        {"T", 2000},
                        {"T_ex", 5},
                        {"n_repeats", 3},
                        {"method", experiment::to_string(method)},
                        {"output_dir", out.string()}};
    return experiment::parse_config_json(j);
}

double mean_accuracy(const experiment::RunRecord& r) {
    const std::vector<experiment::RunRecord> one{r};
    return experiment::emit_summary(one).rows.front().mean;
}

struct EndToEnd {
    experiment::RunRecord kd, fedavg, local;
    double seconds = 0.0;
};

// ---- 4 ---------------------------------------------------------------------

Outcome mixing_normalization(const fs::path& kd_dir) {
    std::size_t events = 0;
    double worst = 0.0;
    for (int r = 0; r < 3; ++r) {
        std::ifstream in(kd_dir / ("repeat_" + std::to_string(r)) / "exchanges.jsonl");
        std::string line;
        while (std::getline(in, line)) {
            const auto ev = nlohmann::json::parse(line);
            double sum = 0.0;
            for (const auto& [k, v] : ev["mixing"].items()) sum += v.get<double>();
            worst = std::max(worst, std::abs(sum - 1.0));
            ++events;
        }
    }

    // Empty cache: the mixed model must be the prior model bit for bit.
    const auto model = nn::init_model({20, {64}, 9, true}, 4);
    const collab::FootprintCache empty(0);
    const auto w = collab::ConnectivityVector::uniform(0, 10);
    const bool identity = collab::mix_models(model, w, empty, 0.2) == model;

    // And a solitary exchange inside a simulation leaves the star untouched.
    data::SyntheticSpec syn;
    syn.samples_per_class = 200;
    const auto pool = data::generate_synthetic(syn).dataset;
    data::PartitionSpec part;
    part.M = 3;
    part.test_per_client = 20;
    auto clients = sim::make_clients(data::dirichlet_partition(pool, part), {20, {8}, 9, true}, 4, 0.05);
    sim::SimConfig cfg;
    cfg.T = 5;
    cfg.channel.threshold = std::numeric_limits<double>::infinity();
    const auto res = sim::run_kd_pdfl(clients, cfg, 4);
    // Same run stopped just before the exchange at t = 5.
    sim::SimConfig shorter = cfg;
    shorter.T = 4;
    const auto ref = sim::run_kd_pdfl(std::move(clients), shorter, 4);
    const std::size_t star = res.exchanges.at(0).star;
    const nn::ParamVector& expected = ref.final_models[star];
    const bool solitary = res.final_models[star] == expected && res.exchanges[0].mixing.self == 1.0;

    return {events > 0 && worst <= 1e-9 && identity && solitary,
            "events " + std::to_string(events) + fmt(", max |sum-1| %.3g (<= 1e-9)", worst) +
                ", empty-cache identity " + (identity ? "yes" : "no") + ", solitary exchange identity " +
                (solitary ? "yes" : "no")};
}

// ---- 5 ---------------------------------------------------------------------

Outcome channel_calibration() {
    const std::size_t M = 40;
    const auto ch = sim::make_channel(M, 5.0, std::nullopt);
    const double tau = std::log(39.0 / 5.0);
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> star(0, M - 1);
    double total = 0.0;
    for (int i = 0; i < 10000; ++i) total += static_cast<double>(sim::sample_neighbors(ch, star(rng), M, rng).neighbors.size());
    const double mean = total / 10000.0;
    const double closed_form = 39.0 * std::exp(-tau);
    return {std::abs(ch.threshold - tau) < 1e-12 && std::abs(mean - 5.0) <= 0.2,
            fmt("tau %.6f, closed form %.4f, empirical mean %.4f (5 +- 0.2)", ch.threshold, closed_form, mean)};
}

// ---- 6 ---------------------------------------------------------------------

Outcome fedavg_reduction() {
    // Every peer is reachable at every exchange, so the cache only ever holds
    // fresh models and the uniform connectivity 1/M equals 1/(|N|+1).
    const std::size_t M = 10;
    data::SyntheticSpec syn;
    const auto pool = data::generate_synthetic(syn).dataset;
    data::PartitionSpec part;
    part.M = M;
    part.seed = 6;
    const auto parts = data::dirichlet_partition(pool, part);
    const nn::Architecture arch{20, {64}, 9, true};
    sim::SimConfig cfg;
    cfg.T = 500;
    cfg.channel = sim::make_channel(M, static_cast<double>(M - 1), std::nullopt);
    cfg.regularizer.mu1 = cfg.regularizer.mu2 = 0.0;
    cfg.confidence_mode = sim::ConfidenceMode::equal_share;
    const auto kd = sim::run_kd_pdfl(sim::make_clients(parts, arch, 6, 0.05), cfg, 6);
    const auto fa = sim::run_baseline(sim::make_clients(parts, arch, 6, 0.05), cfg, sim::Baseline::fedavg, 6);
    std::size_t mismatches = 0;
    double worst = 0.0;
    if (kd.exchanges.size() != fa.exchanges.size()) ++mismatches;
    for (std::size_t e = 0; e < std::min(kd.exchanges.size(), fa.exchanges.size()); ++e) {
        const auto& a = kd.exchanges[e].mixing;
        const auto& b = fa.exchanges[e].mixing;
        if (kd.exchanges[e].star != fa.exchanges[e].star || a.peers.size() != b.peers.size()) {
            ++mismatches;
            continue;
        }
        worst = std::max(worst, std::abs(a.self - b.self));
        for (std::size_t k = 0; k < a.peers.size(); ++k) {
            if (a.peers[k].first != b.peers[k].first) ++mismatches;
            worst = std::max(worst, std::abs(a.peers[k].second - b.peers[k].second));
        }
    }
    return {mismatches == 0 && worst <= 1e-12 && !kd.exchanges.empty(),
            "events " + std::to_string(kd.exchanges.size()) + ", structural mismatches " + std::to_string(mismatches) +
                fmt(", max weight difference %.3g (<= 1e-12)", worst)};
}

// ---- 7 ---------------------------------------------------------------------

// Required margins. Calibration run with the defaults (master_seed 1,
// 3 repeats): kd_pdfl 0.9390, fedavg 0.9153, local_only 0.9550.
constexpr double kRequiredGainOverFedavg = 0.05;
constexpr double kRequiredGainOverLocal = 0.0;

Outcome ordering(const EndToEnd& e) {
    const double kd = mean_accuracy(e.kd), fa = mean_accuracy(e.fedavg), lo = mean_accuracy(e.local);
    const bool pass = kd >= fa + kRequiredGainOverFedavg && kd >= lo + kRequiredGainOverLocal && e.seconds < 300.0;
    return {pass, fmt("kd_pdfl %.4f, fedavg %.4f, local_only %.4f; need kd >= fedavg + 0.05 and kd >= local", kd, fa,
                      lo) +
                      fmt(", %.1fs for the three methods (< 300s)", e.seconds)};
}

// ---- 8 ---------------------------------------------------------------------

Outcome block_structure(const EndToEnd& e) {
    int good = 0;
    std::string detail;
    for (std::size_t r = 0; r < e.kd.blocks.size(); ++r) {
        const auto& b = e.kd.blocks[r];
        good += b.defined && b.within > b.cross;
        detail += fmt("r%.0f within %.3f cross %.3f; ", static_cast<double>(r), b.within, b.cross);
    }
    return {good >= 2, detail + std::to_string(good) + "/3 repeats with within > cross (need >= 2)"};
}

// ---- 9 ---------------------------------------------------------------------

Outcome determinism(const fs::path& first, const fs::path& second) {
    experiment::run_experiment(e2e_config(experiment::Method::kd_pdfl, second));
    std::size_t identical = 0;
    for (int r = 0; r < 3; ++r) {
        const std::string rep = "repeat_" + std::to_string(r);
        identical += io::read_file(first / rep / "metrics.csv") == io::read_file(second / rep / "metrics.csv");
    }
    return {identical == 3, std::to_string(identical) + "/3 metrics CSVs byte-identical"};
}

// ---- 10 --------------------------------------------------------------------

Outcome privacy_audit(const fs::path& kd_dir) {
    std::size_t records = 0, other = 0;
    for (int r = 0; r < 3; ++r) {
        std::ifstream in(kd_dir / ("repeat_" + std::to_string(r)) / "transmissions.jsonl");
        std::string line;
        while (std::getline(in, line)) {
            const auto j = nlohmann::json::parse(line);
            const bool ok = j.size() == 4 && j.contains("t") && j.contains("from") && j.contains("to") &&
                            j.value("payload_kind", "") == "model_parameters";
            other += !ok;
            ++records;
        }
    }
    return {records > 0 && other == 0, std::to_string(records) + " records, " + std::to_string(other) +
                                           " with a payload other than model parameters"};
}

}  // namespace

int main() {
    const fs::path root = fs::current_path() / "acceptance_runs";
    fs::remove_all(root);

    report(1, "gradient fidelity", gradient_fidelity);
    report(2, "distance oracle", distance_oracle);
    report(3, "connectivity update properties", update_properties);

    EndToEnd e2e;
    std::string e2e_error;
    try {
        const auto t0 = std::chrono::steady_clock::now();
        e2e.kd = experiment::run_experiment(e2e_config(experiment::Method::kd_pdfl, root / "kd_pdfl"));
        e2e.fedavg = experiment::run_experiment(e2e_config(experiment::Method::fedavg, root / "fedavg"));
        e2e.local = experiment::run_experiment(e2e_config(experiment::Method::local_only, root / "local_only"));
        e2e.seconds = elapsed_since(t0);
    } catch (const std::exception& ex) {
        e2e_error = ex.what();
    }
    const auto needs_e2e = [&](const std::function<Outcome()>& f) {
        return [&, f]() -> Outcome {
            if (!e2e_error.empty()) return {false, "end-to-end run failed: " + e2e_error};
            return f();
        };
    };

    report(4, "mixing normalization", needs_e2e([&] { return mixing_normalization(root / "kd_pdfl"); }));
    report(5, "channel calibration", channel_calibration);
    report(6, "fedavg reduction", fedavg_reduction);
    report(7, "end-to-end ordering", needs_e2e([&] { return ordering(e2e); }));
    report(8, "collaboration block structure", needs_e2e([&] { return block_structure(e2e); }));
    report(9, "determinism", needs_e2e([&] { return determinism(root / "kd_pdfl", root / "kd_pdfl_again"); }));
    report(10, "privacy audit", needs_e2e([&] { return privacy_audit(root / "kd_pdfl"); }));

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
