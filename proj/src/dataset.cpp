#include "stjgcn/dataset.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace stjgcn {

namespace {

constexpr char kBinaryMagic[5] = {'S', 'T', 'T', 'S', '1'};

[[noreturn]] void parse_fail(const std::string& path, int64_t line, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_cell(const std::string& s, const std::string& path, int64_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        parse_fail(path, line, "bad numeric cell '" + s + "'");
    if (!std::isfinite(v)) parse_fail(path, line, "non-finite cell '" + s + "'");
    return v;
}

template <typename T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw std::runtime_error("truncated binary dataset");
    return v;
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

void TrafficDataset::validate() const {
    if (readings.rank() != 3)
        throw ShapeError("readings must be (T,N,C), got " + shape_str(readings.shape));
    if (!readings.all_finite()) throw NumericError("dataset contains non-finite readings");
    if (interval_minutes <= 0 || 1440 % interval_minutes != 0)
        throw std::runtime_error("interval of " + std::to_string(interval_minutes) +
                                 " minutes does not divide 24h");
}

void TrafficDataset::default_names() {
    channel_names.clear();
    node_ids.clear();
    for (int64_t c = 0; c < channels(); ++c) channel_names.push_back("ch_" + std::to_string(c));
    for (int64_t i = 0; i < nodes(); ++i) node_ids.push_back("node_" + std::to_string(i));
}

void save_traffic_csv(const TrafficDataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "time";
    for (int64_t i = 0; i < ds.nodes(); ++i)
        for (int64_t c = 0; c < ds.channels(); ++c) os << ",node_" << i << "_ch_" << c;
    os << "\n";
    Calendar cal = ds.calendar();
    for (int64_t t = 0; t < ds.steps(); ++t) {
        os << cal.timestamp(t);
        for (int64_t i = 0; i < ds.nodes(); ++i)
            for (int64_t c = 0; c < ds.channels(); ++c)
                os << ',' << format_double(ds.readings.at3(t, i, c));
        os << "\n";
    }
}

void save_traffic_binary(const TrafficDataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write(kBinaryMagic, sizeof kBinaryMagic);
    write_le<int64_t>(os, ds.steps());
    write_le<int64_t>(os, ds.nodes());
    write_le<int64_t>(os, ds.channels());
    write_le<int64_t>(os, ds.start_epoch_seconds);
    write_le<int64_t>(os, ds.interval_minutes);
    for (double v : ds.readings.data) write_le<double>(os, v);
}

namespace {

TrafficDataset load_traffic_binary(std::ifstream& is, const std::string& path) {
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kBinaryMagic, 5) != 0)
        throw std::runtime_error(path + ": bad binary magic");
    TrafficDataset ds;
    int64_t t = read_le<int64_t>(is);
    int64_t n = read_le<int64_t>(is);
    int64_t c = read_le<int64_t>(is);
    ds.start_epoch_seconds = read_le<int64_t>(is);
    ds.interval_minutes = read_le<int64_t>(is);
    if (t <= 0 || n <= 0 || c <= 0) throw std::runtime_error(path + ": bad dimensions");
    ds.readings = Array<double>({t, n, c});
    for (int64_t i = 0; i < ds.readings.numel(); ++i) ds.readings[i] = read_le<double>(is);
    ds.validate();
    ds.default_names();
    return ds;
}

TrafficDataset load_traffic_csv(std::ifstream& is, const std::string& path) {
    std::string line;
    if (!std::getline(is, line)) parse_fail(path, 1, "empty file");
    auto header = split_csv_line(line);
    if (header.empty() || header[0] != "time")
        parse_fail(path, 1, "header must start with 'time'");
    // header cells are the canonical node_<i>_ch_<j>, node-major
    int64_t n = 0, c = 0;
    {
        int64_t max_node = -1, max_ch = -1;
        for (size_t k = 1; k < header.size(); ++k) {
            int64_t ni = 0, ci = 0;
            if (std::sscanf(header[k].c_str(), "node_%lld_ch_%lld", (long long*)&ni,
                            (long long*)&ci) != 2)
                parse_fail(path, 1, "bad column name '" + header[k] + "'");
            max_node = std::max(max_node, ni);
            max_ch = std::max(max_ch, ci);
        }
        n = max_node + 1;
        c = max_ch + 1;
        if (n <= 0 || c <= 0 || static_cast<int64_t>(header.size()) != 1 + n * c)
            parse_fail(path, 1, "header does not enumerate node_<i>_ch_<j> exhaustively");
    }

    std::vector<double> values;
    std::vector<int64_t> stamps;
    int64_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (static_cast<int64_t>(cells.size()) != 1 + n * c)
            parse_fail(path, lineno,
                       "row has " + std::to_string(cells.size()) + " cells, expected " +
                           std::to_string(1 + n * c));
        stamps.push_back(parse_iso_timestamp(cells[0]));
        for (size_t k = 1; k < cells.size(); ++k) values.push_back(parse_cell(cells[k], path, lineno));
    }
    if (stamps.empty()) parse_fail(path, lineno, "no data rows");

    TrafficDataset ds;
    ds.start_epoch_seconds = stamps[0];
    if (stamps.size() >= 2) {
        int64_t step = stamps[1] - stamps[0];
        if (step <= 0 || step % 60 != 0) parse_fail(path, 3, "timestamps must advance by whole minutes");
        ds.interval_minutes = step / 60;
        for (size_t t = 1; t < stamps.size(); ++t)
            if (stamps[t] - stamps[t - 1] != step)
                parse_fail(path, static_cast<int64_t>(t) + 2, "non-uniform sampling interval");
    }
    ds.readings = Array<double>::from({static_cast<int64_t>(stamps.size()), n, c}, std::move(values));
    ds.validate();
    ds.default_names();
    return ds;
}

}  // namespace

TrafficDataset load_traffic(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[5] = {};
    is.read(magic, 5);
    is.clear();
    is.seekg(0);
    if (std::memcmp(magic, kBinaryMagic, 5) == 0) return load_traffic_binary(is, path);
    return load_traffic_csv(is, path);
}

DistanceGraph load_distances(const std::string& path, int64_t expected_nodes) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) parse_fail(path, 1, "empty file");
    auto header = split_csv_line(line);
    if (header.size() != 3 || header[0] != "from" || header[1] != "to" || header[2] != "cost")
        parse_fail(path, 1, "header must be 'from,to,cost'");

    std::vector<DistanceEdge> edges;
    std::set<std::pair<int64_t, int64_t>> seen;
    int64_t lineno = 1, max_id = -1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 3) parse_fail(path, lineno, "expected 3 cells");
        DistanceEdge e;
        auto parse_id = [&](const std::string& s) {
            int64_t v = 0;
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || ptr != s.data() + s.size() || v < 0)
                parse_fail(path, lineno, "bad node id '" + s + "'");
            return v;
        };
        e.from = parse_id(cells[0]);
        e.to = parse_id(cells[1]);
        e.dist = parse_cell(cells[2], path, lineno);
        if (e.dist < 0) parse_fail(path, lineno, "negative distance");
        if (expected_nodes > 0 && (e.from >= expected_nodes || e.to >= expected_nodes))
            parse_fail(path, lineno,
                       "unknown node id " + std::to_string(std::max(e.from, e.to)) +
                           " (dataset has " + std::to_string(expected_nodes) + " nodes)");
        if (!seen.insert({e.from, e.to}).second)
            parse_fail(path, lineno,
                       "duplicate edge (" + cells[0] + "," + cells[1] + ")");
        max_id = std::max({max_id, e.from, e.to});
        edges.push_back(e);
    }
    if (edges.empty())
        throw std::runtime_error(path + ": no edges; distance standard deviation is undefined");
    int64_t nodes = expected_nodes > 0 ? expected_nodes : max_id + 1;
    return DistanceGraph::make(nodes, std::move(edges));
}

void save_distances_csv(const DistanceGraph& g, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "from,to,cost\n";
    for (auto& e : g.edges)
        os << e.from << ',' << e.to << ',' << format_double(e.dist) << "\n";
}

}  // namespace stjgcn
