#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdpdfl/matrix.hpp"
#include "kdpdfl/simulation.hpp"

namespace kdpdfl::io {

// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

// Shortest decimal representation that round-trips.
std::string format_double(double v);

std::string csv_escape(std::string_view field);

// Columns: t,client_id,split,loss,accuracy
std::string metrics_csv(std::span<const sim::MetricsRecord> metrics);

struct MetricsRow {
    std::size_t t = 0;
    std::size_t client_id = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
};
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);

// Leading '#' comment line, then a header row, then one row per client.
std::string collaboration_csv(const Matrix& W);

// {"t":..,"from":..,"to":..,"payload_kind":"model_parameters"} per line.
std::string transmissions_jsonl(std::span<const sim::Transmission> log);

std::string exchanges_jsonl(std::span<const sim::ExchangeEvent> events);

}  // namespace kdpdfl::io
