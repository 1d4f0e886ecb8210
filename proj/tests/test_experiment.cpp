#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "kdpdfl/experiment.hpp"
#include "kdpdfl/io.hpp"

using namespace kdpdfl;
using namespace kdpdfl::experiment;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "kdpdfl_test_experiment" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small, fast experiment.
json tiny(const fs::path& out) {
    return {{"dataset", {{"kind", "synthetic"}, {"samples_per_class", 200}}},
            {"M", 4},
            {"partition", {{"min_train", 20}, {"max_train", 30}, {"test_per_client", 20}}},
            {"model", {{"hidden_dims", {8}}}},
            {"T", 40},
            {"n_repeats", 2},
            {"output_dir", out.string()}};
}

std::string read(const fs::path& p) { return io::read_file(p); }

}  // namespace

TEST_CASE("minimal config fills defaults and round-trips") {
    const auto cfg = parse_config_json(json{{"dataset", {{"kind", "synthetic"}}}, {"M", 10}});
    CHECK(cfg.sim.T == 2000);
    CHECK(cfg.sim.T_ex == 5);
    CHECK(cfg.sim.t_switch == 1500);
    CHECK(cfg.n_repeats == 3);
    CHECK(cfg.method == Method::kd_pdfl);
    CHECK(cfg.sim.broadcast_rule == sim::BroadcastRule::overwrite);
    CHECK(cfg.dataset.synthetic.samples_per_class == 1000);
    const auto eff = effective_config(cfg);
    CHECK(eff["regularizer"]["step_mode"] == "normalized_scalar");
    CHECK(eff["c_base"].is_null());
    const auto again = parse_config_json(json::parse(eff.dump()));
    CHECK(effective_config(again) == eff);
}

TEST_CASE("samples per class grow with the client count") {
    const auto cfg = parse_config_json(json{{"dataset", {{"kind", "synthetic"}}}, {"M", 40}});
    // 3 * 40 * (100 + 100) / 9, rounded up
    CHECK(cfg.dataset.synthetic.samples_per_class == 2667);
}

TEST_CASE("invalid configs name the offending key") {
    const json base{{"dataset", {{"kind", "synthetic"}}}, {"M", 10}};
    auto with = [&](const json& patch) {
        json j = base;
        j.merge_patch(patch);
        return j;
    };
    CHECK_THROWS_WITH_AS(parse_config_json(with({{"regularizer", {{"mu1", -1}}}})),
                         doctest::Contains("regularizer.mu1"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_json(with({{"T_ex", 1}})), doctest::Contains("T_ex"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_json(with({{"bogus", 1}})), doctest::Contains("bogus"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_json(with({{"channel", {{"typo", 1}}}})), doctest::Contains("channel.typo"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_json(with({{"method", "sgd"}})), doctest::Contains("method"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_json(with({{"T", "many"}})), doctest::Contains("'T'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_json(with({{"n_repeats", 0}})), doctest::Contains("n_repeats"), ConfigError);
    CHECK_THROWS_AS(parse_config_json(json{{"M", 10}}), ConfigError);
    CHECK_THROWS_AS(parse_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("experiment writes its artifacts and is byte-reproducible") {
    const auto dir = scratch("repro");
    auto j = tiny(dir / "a");
    run_experiment(parse_config_json(j));
    j["output_dir"] = (dir / "b").string();
    run_experiment(parse_config_json(j));
    for (const char* f : {"metrics.csv", "W.csv", "partition.json", "transmissions.jsonl", "exchanges.jsonl"}) {
        CHECK(fs::exists(dir / "a" / "repeat_0" / f));
        CHECK(read(dir / "a" / "repeat_1" / f) == read(dir / "b" / "repeat_1" / f));
    }
    CHECK(fs::exists(dir / "a" / "effective_config.json"));
    CHECK(fs::exists(dir / "a" / "summary.txt"));
    const auto summary = json::parse(read(dir / "a" / "summary.json"));
    CHECK(summary["rows"][0]["method"] == "kd_pdfl");
    CHECK(summary["rows"][0]["n"] == 8);
    // Repeats differ.
    CHECK(read(dir / "a" / "repeat_0" / "metrics.csv") != read(dir / "a" / "repeat_1" / "metrics.csv"));
    // The effective config reproduces the run.
    const auto eff = parse_config(dir / "a" / "effective_config.json");
    CHECK(effective_config(eff).dump(2) + "\n" == read(dir / "a" / "effective_config.json"));
}

TEST_CASE("local-only runs have no collaboration matrix") {
    const auto dir = scratch("local");
    auto j = tiny(dir);
    j["method"] = "local_only";
    j["n_repeats"] = 1;
    const auto rec = run_experiment(parse_config_json(j));
    CHECK_FALSE(fs::exists(dir / "repeat_0" / "W.csv"));
    CHECK(fs::exists(dir / "repeat_0" / "metrics.csv"));
    CHECK_FALSE(rec.mean_W.has_value());
}

TEST_CASE("summary arithmetic") {
    RunRecord r;
    r.method = Method::fedavg;
    r.M = 2;
    r.final_test_accuracy = {{0.5, 0.7}};
    const std::vector<RunRecord> runs{r};
    const auto table = emit_summary(runs);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0].mean == doctest::Approx(0.6));
    CHECK(table.rows[0].std == doctest::Approx(0.1));
    CHECK(table.rows[0].n == 2);
    CHECK(summary_text(table).find("fedavg") != std::string::npos);
    CHECK_THROWS_AS(emit_summary(std::span<const RunRecord>{}), std::invalid_argument);
}

TEST_CASE("summary rows are ordered by method then M") {
    std::vector<RunRecord> runs(3);
    runs[0].method = Method::kd_pdfl;
    runs[0].M = 10;
    runs[1].method = Method::local_only;
    runs[1].M = 20;
    runs[2].method = Method::local_only;
    runs[2].M = 10;
    for (auto& r : runs) r.final_test_accuracy = {{1.0}};
    const auto t = emit_summary(runs);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0].method == Method::local_only);
    CHECK(t.rows[0].M == 10);
    CHECK(t.rows[1].M == 20);
    CHECK(t.rows[2].method == Method::kd_pdfl);
}

TEST_CASE("summarize recomputes from the metrics files") {
    const auto dir = scratch("summarize");
    auto j = tiny(dir / "kd");
    const auto rec = run_experiment(parse_config_json(j));
    j["method"] = "fedavg";
    j["output_dir"] = (dir / "fa").string();
    run_experiment(parse_config_json(j));
    const auto table = summarize_directory(dir);
    REQUIRE(table.rows.size() == 2);
    CHECK(table.rows[0].method == Method::fedavg);
    const std::vector<RunRecord> one{rec};
    CHECK(table.rows[1].mean == doctest::Approx(emit_summary(one).rows[0].mean).epsilon(1e-12));
    CHECK(fs::exists(dir / "summary.json"));
    CHECK_THROWS(summarize_directory(scratch("empty")));
}

TEST_CASE("block statistics") {
    Matrix W(4, 4);
    W(0, 1) = W(1, 0) = 0.8;
    W(2, 3) = W(3, 2) = 0.6;
    W(0, 2) = W(1, 3) = 0.1;
    const std::vector<std::size_t> cluster{0, 0, 1, 1};
    const auto b = block_stats(W, cluster);
    CHECK(b.defined);
    CHECK(b.within == doctest::Approx(0.7));
    CHECK(b.cross == doctest::Approx(0.2 / 8));
    const std::vector<std::size_t> same{0, 0, 0, 0};
    CHECK_FALSE(block_stats(W, same).defined);
}

TEST_CASE("neighbor cap sweep of one peer") {
    const auto dir = scratch("sweep_cap");
    auto j = tiny(dir);
    j["n_repeats"] = 1;
    j["channel"] = {{"target_mean_neighbors", 3}};
    const std::vector<std::string> values{"1"};
    const auto points = sweep(parse_config_json(j), SweepAxis::neighbor_cap, values);
    REQUIRE(points.size() == 1);
    CHECK(fs::exists(dir / "sweep_neighbor_cap.csv"));
    std::ifstream log(dir / "cap_1" / "repeat_0" / "exchanges.jsonl");
    std::string line;
    std::size_t events = 0;
    while (std::getline(log, line)) {
        const auto ev = json::parse(line);
        CHECK(ev["received"].size() <= 1);
        if (ev["reachable"].get<std::size_t>() >= 1) CHECK(ev["received"].size() == 1);
        ++events;
    }
    CHECK(events == 8);
}

TEST_CASE("mu grid cell at zero keeps the initial weights") {
    const auto dir = scratch("sweep_mu");
    auto j = tiny(dir);
    j["n_repeats"] = 1;
    const std::vector<std::string> values{"0:0", "5:0.1"};
    const auto points = sweep(parse_config_json(j), SweepAxis::mu_grid, values);
    REQUIRE(points.size() == 2);
    REQUIRE(points[0].record.mean_W);
    const Matrix& W = *points[0].record.mean_W;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 4; ++k)
            if (i != k) CHECK(W(i, k) == doctest::Approx(0.25));
    CHECK(fs::exists(dir / ("heatmap_" + points[0].label + ".csv")));
    CHECK(fs::exists(dir / "sweep_mu_grid.csv"));
    CHECK_THROWS_AS(parse_axis("lr"), ConfigError);
}

TEST_CASE("csv datasets run end to end") {
    const auto dir = scratch("csv");
    std::string csv = "f0,f1,label\n";
    for (int i = 0; i < 600; ++i) {
        const int k = i % 3;
        csv += std::to_string(k * 3 + (i % 7) * 0.1) + "," + std::to_string(-k + (i % 5) * 0.1) + ",c" +
               std::to_string(k) + "\n";
    }
    std::ofstream(dir / "data.csv") << csv;
    json j = {{"dataset", {{"kind", "csv"}, {"path", (dir / "data.csv").string()}}},
              {"M", 3},
              {"partition", {{"min_train", 20}, {"max_train", 30}, {"test_per_client", 20}}},
              {"model", {{"hidden_dims", {4}}}},
              {"T", 20},
              {"n_repeats", 1},
              {"output_dir", (dir / "out").string()}};
    const auto rec = run_experiment(parse_config_json(j));
    CHECK(rec.final_test_accuracy.size() == 1);
    CHECK(rec.blocks.empty());
}
