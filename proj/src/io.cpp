#include "kdpdfl/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

#include "json.hpp"

namespace kdpdfl::io {

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error("write to '" + tmp.string() + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    if (res.ec != std::errc{}) throw std::runtime_error("format_double failed");
    return std::string(buf, res.ptr);
}

std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string metrics_csv(std::span<const sim::MetricsRecord> metrics) {
    std::string out = "t,client_id,split,loss,accuracy\r\n";
    for (const auto& m : metrics) {
        out += std::to_string(m.t);
        out += ',';
        out += std::to_string(m.client_id);
        out += ',';
        out += sim::to_string(m.split);
        out += ',';
        out += format_double(m.loss);
        out += ',';
        out += format_double(m.accuracy);
        out += "\r\n";
    }
    return out;
}

namespace {

double parse_double(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("metrics csv: bad number '" + std::string(s) + "'");
    }
    return v;
}

std::size_t parse_size(std::string_view s) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("metrics csv: bad integer '" + std::string(s) + "'");
    }
    return v;
}

}  // namespace

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
    std::vector<MetricsRow> rows;
    std::size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (header) {
            if (line != "t,client_id,split,loss,accuracy") throw std::runtime_error("metrics csv: unexpected header");
            header = false;
            continue;
        }
        std::vector<std::string_view> f;
        std::size_t p = 0;
        for (;;) {
            const std::size_t c = line.find(',', p);
            f.push_back(line.substr(p, c == std::string_view::npos ? std::string_view::npos : c - p));
            if (c == std::string_view::npos) break;
            p = c + 1;
        }
        if (f.size() != 5) throw std::runtime_error("metrics csv: expected 5 fields");
        rows.push_back({parse_size(f[0]), parse_size(f[1]), std::string(f[2]), parse_double(f[3]), parse_double(f[4])});
    }
    return rows;
}

std::string collaboration_csv(const Matrix& W) {
    std::string out =
        "# row i = connectivity weights held by client i; column j = weight on client j; "
        "diagonal = client i's confidence (self weight) at snapshot time\r\n";
    out += "client";
    for (std::size_t j = 0; j < W.cols; ++j) out += ",w" + std::to_string(j);
    out += "\r\n";
    for (std::size_t i = 0; i < W.rows; ++i) {
        out += std::to_string(i);
        for (std::size_t j = 0; j < W.cols; ++j) {
            out += ',';
            out += format_double(W(i, j));
        }
        out += "\r\n";
    }
    return out;
}

std::string transmissions_jsonl(std::span<const sim::Transmission> log) {
    std::string out;
    for (const auto& m : log) {
        nlohmann::ordered_json j;
        j["t"] = m.t;
        j["from"] = m.from;
        j["to"] = m.to;
        j["payload_kind"] = sim::to_string(m.kind);
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::string exchanges_jsonl(std::span<const sim::ExchangeEvent> events) {
    std::string out;
    for (const auto& ev : events) {
        nlohmann::ordered_json j;
        j["t"] = ev.t;
        j["star"] = ev.star;
        j["reachable"] = ev.reachable;
        j["sampled"] = ev.sampled;
        j["received"] = ev.received;
        nlohmann::ordered_json d = nlohmann::ordered_json::object();
        for (const auto& [peer, v] : ev.distances) d[std::to_string(peer)] = v;
        j["distances"] = d;
        j["confidence"] = ev.confidence;
        nlohmann::ordered_json mix = nlohmann::ordered_json::object();
        mix["self"] = ev.mixing.self;
        for (const auto& [peer, v] : ev.mixing.peers) mix[std::to_string(peer)] = v;
        j["mixing"] = mix;
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace kdpdfl::io
