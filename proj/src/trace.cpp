#include "cotpred/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "cotpred/error.hpp"
#include "cotpred/format.hpp"

namespace cotpred {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_row(const std::string &line, char delim) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delim) {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

std::optional<bool> parse_bool(std::string_view text) {
    std::string lowered(trim(text));
    std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lowered == "1" || lowered == "true" || lowered == "yes" || lowered == "y") return true;
    if (lowered == "0" || lowered == "false" || lowered == "no" || lowered == "n") return false;
    if (auto num = parse_double(lowered)) return *num != 0.0;
    return std::nullopt;
}

double unit_scale(ThroughputUnit unit) { return unit == ThroughputUnit::kbps ? 1e-3 : 1.0; }

} // namespace

std::vector<double> Trace::dl_series() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto &r : records) out.push_back(r.dl_throughput);
    return out;
}

Trace load_trace(const std::filesystem::path &path, const TraceSchema &schema, std::string scenario) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trace file: " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "missing header row");
    const auto header = split_row(line, schema.delimiter);
    std::unordered_map<std::string, std::size_t> columns;
    for (std::size_t i = 0; i < header.size(); ++i) columns.emplace(std::string(trim(header[i])), i);

    auto column_of = [&](const std::string &name, const char *field) -> std::size_t {
        auto it = columns.find(name);
        if (it == columns.end()) throw SchemaError(field);
        return it->second;
    };
    const std::size_t dl_col = column_of(schema.dl_throughput, "dl_throughput");
    const std::size_t ul_col = column_of(schema.ul_throughput, "ul_throughput");
    const std::size_t rs_col = column_of(schema.rsrp_serving, "rsrp_serving");
    const std::size_t rn_col = column_of(schema.rsrp_neighbor, "rsrp_neighbor");
    const std::size_t mode_col = column_of(schema.network_mode, "network_mode");
    std::optional<std::size_t> ho_col;
    std::optional<std::size_t> cell_col;
    if (auto it = columns.find(schema.handover); it != columns.end()) {
        ho_col = it->second;
    } else if (schema.cell_id && columns.contains(*schema.cell_id)) {
        cell_col = columns.at(*schema.cell_id);
    } else {
        throw SchemaError("handover");
    }

    auto is_missing = [&](std::string_view cell) {
        const auto t = trim(cell);
        return std::find(schema.missing_markers.begin(), schema.missing_markers.end(), t) !=
               schema.missing_markers.end();
    };

    Trace trace;
    trace.scenario = std::move(scenario);
    std::size_t row = 1; // header
    std::optional<std::string> previous_cell;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto cells = split_row(line, schema.delimiter);
        auto cell = [&](std::size_t col) -> std::string_view {
            if (col >= cells.size()) return {};
            return cells[col];
        };
        auto numeric = [&](std::size_t col, const char *field) {
            const auto text = cell(col);
            if (is_missing(text)) return kNaN;
            auto value = parse_double(text);
            if (!value) throw ParseError(row, std::string("unparseable ") + field + " '" + std::string(text) + "'");
            return *value;
        };

        TraceRecord rec;
        rec.t = static_cast<long>(trace.records.size()) + 1;
        rec.dl_throughput = numeric(dl_col, "dl_throughput") * unit_scale(schema.dl_unit);
        rec.ul_throughput = numeric(ul_col, "ul_throughput") * unit_scale(schema.ul_unit);
        rec.rsrp_serving = numeric(rs_col, "rsrp_serving");
        rec.rsrp_neighbor = numeric(rn_col, "rsrp_neighbor");
        if (const auto mode = cell(mode_col); !is_missing(mode)) rec.network_mode = std::string(trim(mode));

        if (ho_col) {
            const auto text = cell(*ho_col);
            if (!is_missing(text)) {
                rec.handover = parse_bool(text);
                if (!rec.handover) throw ParseError(row, "unparseable handover '" + std::string(text) + "'");
            }
        } else {
            const auto text = cell(*cell_col);
            if (!is_missing(text)) {
                std::string id(trim(text));
                if (previous_cell) rec.handover = id != *previous_cell;
                else rec.handover = false;
                previous_cell = std::move(id);
            }
        }
        trace.records.push_back(std::move(rec));
    }
    return trace;
}

void save_trace(const Trace &trace, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write trace file: " + path.string());
    auto num = [](double v) { return std::isnan(v) ? std::string() : format_roundtrip(v); };
    out << "dl_throughput,ul_throughput,rsrp_serving,rsrp_neighbor,network_mode,handover\n";
    for (const auto &r : trace.records) {
        out << num(r.dl_throughput) << ',' << num(r.ul_throughput) << ',' << num(r.rsrp_serving) << ','
            << num(r.rsrp_neighbor) << ',' << r.network_mode.value_or("") << ','
            << (r.handover ? (*r.handover ? "1" : "0") : "") << '\n';
    }
    if (!out) throw IoError("failed writing trace file: " + path.string());
}

CleanedTrace clean_trace(const Trace &trace, const CleaningPolicy &policy) {
    CleanedTrace result;
    result.log.input_records = trace.size();
    result.trace.scenario = trace.scenario;

    // Invalidate values outside their physical range first.
    std::vector<TraceRecord> rows = trace.records;
    for (auto &r : rows) {
        auto invalidate = [&](double &v, bool bad) {
            if (!std::isnan(v) && bad) {
                v = kNaN;
                ++result.log.out_of_range_cells;
            }
        };
        invalidate(r.dl_throughput, !std::isfinite(r.dl_throughput) || r.dl_throughput < 0.0);
        invalidate(r.ul_throughput, !std::isfinite(r.ul_throughput) || r.ul_throughput < 0.0);
        invalidate(r.rsrp_serving, !(r.rsrp_serving >= policy.rsrp_min && r.rsrp_serving <= policy.rsrp_max));
        invalidate(r.rsrp_neighbor, !(r.rsrp_neighbor >= policy.rsrp_min && r.rsrp_neighbor <= policy.rsrp_max));
    }

    struct Column {
        const char *name;
        bool (*valid)(const TraceRecord &);
    };
    static constexpr Column kColumns[] = {
        {"dl_throughput", [](const TraceRecord &r) { return !std::isnan(r.dl_throughput); }},
        {"ul_throughput", [](const TraceRecord &r) { return !std::isnan(r.ul_throughput); }},
        {"rsrp_serving", [](const TraceRecord &r) { return !std::isnan(r.rsrp_serving); }},
        {"rsrp_neighbor", [](const TraceRecord &r) { return !std::isnan(r.rsrp_neighbor); }},
        {"network_mode", [](const TraceRecord &r) { return r.network_mode.has_value(); }},
        {"handover", [](const TraceRecord &r) { return r.handover.has_value(); }},
    };

    // First row at which every column has seen a valid value.
    std::size_t start = 0;
    for (const auto &col : kColumns) {
        auto it = std::find_if(rows.begin(), rows.end(), col.valid);
        if (it == rows.end()) {
            if (rows.empty()) break;
            throw CleaningError(col.name);
        }
        start = std::max(start, static_cast<std::size_t>(it - rows.begin()));
    }
    if (rows.empty()) return result;

    // The fill source for each column is the latest valid value at or before `start`.
    TraceRecord last{};
    for (std::size_t i = 0; i <= start; ++i) {
        const auto &r = rows[i];
        if (!std::isnan(r.dl_throughput)) last.dl_throughput = r.dl_throughput;
        if (!std::isnan(r.ul_throughput)) last.ul_throughput = r.ul_throughput;
        if (!std::isnan(r.rsrp_serving)) last.rsrp_serving = r.rsrp_serving;
        if (!std::isnan(r.rsrp_neighbor)) last.rsrp_neighbor = r.rsrp_neighbor;
        if (r.network_mode) last.network_mode = r.network_mode;
        if (r.handover) last.handover = r.handover;
    }

    result.log.leading_dropped = start;
    result.trace.records.reserve(rows.size() - start);
    for (std::size_t i = start; i < rows.size(); ++i) {
        TraceRecord r = rows[i];
        auto fill = [&](double &v, double &prev) {
            if (std::isnan(v)) {
                v = prev;
                ++result.log.filled_cells;
            } else {
                prev = v;
            }
        };
        fill(r.dl_throughput, last.dl_throughput);
        fill(r.ul_throughput, last.ul_throughput);
        fill(r.rsrp_serving, last.rsrp_serving);
        fill(r.rsrp_neighbor, last.rsrp_neighbor);
        if (r.network_mode) last.network_mode = r.network_mode;
        else {
            r.network_mode = last.network_mode;
            ++result.log.filled_cells;
        }
        if (r.handover) last.handover = r.handover;
        else {
            r.handover = last.handover;
            ++result.log.filled_cells;
        }
        r.t = static_cast<long>(result.trace.records.size()) + 1;
        result.trace.records.push_back(std::move(r));
    }
    result.log.output_records = result.trace.size();
    return result;
}

std::pair<Trace, Trace> split_train_test(const Trace &trace, std::size_t test_horizon, std::size_t window) {
    const std::size_t required = 2 * (test_horizon + window);
    if (trace.size() < required || trace.size() < 2) {
        std::ostringstream msg;
        msg << "trace too short to split: H=" << trace.size() << ", need at least " << std::max<std::size_t>(required, 2)
            << " records (2 * (T + W) with T=" << test_horizon << ", W=" << window << ")";
        throw SplitError(msg.str());
    }
    const std::size_t half = trace.size() / 2;
    Trace train{{trace.records.begin(), trace.records.begin() + static_cast<std::ptrdiff_t>(half)}, trace.scenario};
    Trace test{{trace.records.begin() + static_cast<std::ptrdiff_t>(half), trace.records.end()}, trace.scenario};
    return {std::move(train), std::move(test)};
}

} // namespace cotpred
