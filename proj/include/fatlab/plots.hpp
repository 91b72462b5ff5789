#pragma once

// Plot emission from a metrics log. Every kind writes <out>.csv holding the
// plotted series (values printed in shortest round-trip form, so they parse
// back to the logged doubles) and a best-effort <out>.svg line, bar or heat
// chart.

#include <filesystem>
#include <fstream>
#include <limits>

#include "fatlab/config.hpp"
#include "fatlab/metrics_log.hpp"

namespace fatlab {

enum class PlotKind { co_trace, channel_hist, increment_heat, mask_sweep, noise_sweep };

inline std::string to_string(PlotKind k) {
    switch (k) {
        case PlotKind::co_trace: return "co_trace";
        case PlotKind::channel_hist: return "channel_hist";
        case PlotKind::increment_heat: return "increment_heat";
        case PlotKind::mask_sweep: return "mask_sweep";
        case PlotKind::noise_sweep: return "noise_sweep";
    }
    return "?";
}

inline PlotKind plot_kind_from_string(const std::string& s) {
    for (auto k : {PlotKind::co_trace, PlotKind::channel_hist, PlotKind::increment_heat, PlotKind::mask_sweep,
                   PlotKind::noise_sweep})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown plot kind: " + s);
}

/// Table of named numeric columns; the CSV and the chart read the same cells.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

struct PlotFiles {
    std::filesystem::path csv;
    std::optional<std::filesystem::path> svg;
    Table table;
};

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline void write_csv(const std::filesystem::path& path, const Table& t) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
    out << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_number(row[i]);
        out << '\n';
    }
}

inline Table read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    Table t;
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char ch : s) {
            if (ch == ',') {
                out.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        out.push_back(cur);
        return out;
    };
    if (!std::getline(in, line)) throw FormatError("empty csv " + path.string());
    t.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        for (const auto& cell : split(line))
            row.push_back(cell == "nan" ? std::numeric_limits<double>::quiet_NaN() : parse_level(cell));
        t.rows.push_back(std::move(row));
    }
    return t;
}

namespace svg {

struct Series {
    std::string name;
    std::vector<double> x, y;
    bool right_axis = false;
};

inline const char* colour(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
    return palette[i % 7];
}

inline std::pair<double, double> range_of(const std::vector<Series>& s, bool right, bool want_x) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& series : s) {
        if (!want_x && series.right_axis != right) continue;
        for (double v : want_x ? series.x : series.y)
            if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    }
    if (!(lo <= hi)) return {0.0, 1.0};
    if (lo == hi) return {lo - 0.5, hi + 0.5};
    return {lo, hi};
}

/// Line chart with an optional secondary y axis and vertical markers.
inline std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::string& y2label, const std::vector<Series>& series,
                              const std::vector<double>& markers = {}) {
    const double W = 720, H = 420, L = 70, R = 70, T = 40, B = 50;
    const auto [x0, x1] = range_of(series, false, true);
    const auto [y0, y1] = range_of(series, false, false);
    const auto [r0, r1] = range_of(series, true, false);
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y, bool right) {
        const double lo = right ? r0 : y0, hi = right ? r1 : y1;
        return H - B - (y - lo) / (hi - lo) * (H - T - B);
    };
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4, fy = y0 + (y1 - y0) * i / 4;
        o << "<text x=\"" << px(fx) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << format_number(fx)
          << "</text>\n";
        o << "<text x=\"" << L - 6 << "\" y=\"" << py(fy, false) + 4 << "\" text-anchor=\"end\">"
          << format_number(fy) << "</text>\n";
    }
    o << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
    o << "<text x=\"16\" y=\"" << H / 2 << "\" transform=\"rotate(-90 16 " << H / 2
      << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
    const bool has_right = std::any_of(series.begin(), series.end(), [](const Series& s) { return s.right_axis; });
    if (has_right) {
        o << "<line x1=\"" << W - R << "\" y1=\"" << T << "\" x2=\"" << W - R << "\" y2=\"" << H - B
          << "\" stroke=\"black\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            const double fy = r0 + (r1 - r0) * i / 4;
            o << "<text x=\"" << W - R + 6 << "\" y=\"" << py(fy, true) + 4 << "\">" << format_number(fy)
              << "</text>\n";
        }
        o << "<text x=\"" << W - 12 << "\" y=\"" << H / 2 << "\" transform=\"rotate(90 " << W - 12 << " " << H / 2
          << ")\" text-anchor=\"middle\">" << y2label << "</text>\n";
    }
    for (double m : markers)
        o << "<line x1=\"" << px(m) << "\" y1=\"" << T << "\" x2=\"" << px(m) << "\" y2=\"" << H - B
          << "\" stroke=\"grey\" stroke-dasharray=\"4 3\"/>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        o << "<polyline fill=\"none\" stroke=\"" << colour(i) << "\" stroke-width=\"2\" points=\"";
        for (std::size_t k = 0; k < s.x.size(); ++k)
            if (std::isfinite(s.y[k])) o << px(s.x[k]) << "," << py(s.y[k], s.right_axis) << " ";
        o << "\"/>\n";
        o << "<text x=\"" << L + 10 << "\" y=\"" << T + 14 * (i + 1) << "\" fill=\"" << colour(i) << "\">" << s.name
          << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

inline std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                             const std::vector<double>& values) {
    const double W = 720, H = 420, L = 60, B = 70, T = 40;
    const double top = std::max(1.0, *std::max_element(values.begin(), values.end()));
    const double bw = (W - L - 20) / double(std::max<std::size_t>(values.size(), 1));
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double h = values[i] / top * (H - T - B);
        o << "<rect x=\"" << L + i * bw + 1 << "\" y=\"" << H - B - h << "\" width=\"" << bw - 2 << "\" height=\""
          << h << "\" fill=\"#1f77b4\"/>\n";
        o << "<text x=\"" << L + (i + 0.5) * bw << "\" y=\"" << H - B + 12 << "\" text-anchor=\"end\" transform=\"rotate(-60 "
          << L + (i + 0.5) * bw << " " << H - B + 12 << ")\">" << labels[i] << "</text>\n";
    }
    o << "<text x=\"" << L - 6 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\">" << format_number(top) << "</text>\n";
    o << "</svg>\n";
    return o.str();
}

inline std::string heat_map(const std::string& title, const std::vector<std::vector<double>>& m) {
    const double cell = 14, L = 60, T = 40;
    const std::size_t rows = m.size(), cols = rows ? m.front().size() : 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : m)
        for (double v : r) lo = std::min(lo, v), hi = std::max(hi, v);
    if (!(lo < hi)) hi = lo + 1.0;
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << L + cols * cell + 20 << "\" height=\""
      << T + rows * cell + 40 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << L << "\" y=\"20\">" << title << "</text>\n";
    for (std::size_t i = 0; i < rows; ++i) {
        o << "<text x=\"" << L - 6 << "\" y=\"" << T + i * cell + 11 << "\" text-anchor=\"end\">step " << i + 1
          << "</text>\n";
        for (std::size_t k = 0; k < cols; ++k) {
            const int shade = int(std::lround(255.0 * (1.0 - (m[i][k] - lo) / (hi - lo))));
            o << "<rect x=\"" << L + k * cell << "\" y=\"" << T + i * cell << "\" width=\"" << cell << "\" height=\""
              << cell << "\" fill=\"rgb(255," << shade << "," << shade << ")\"/>\n";
        }
    }
    o << "<text x=\"" << L << "\" y=\"" << T + rows * cell + 20 << "\">channel index (0.." << cols
      << "), shade: " << format_number(lo) << " to " << format_number(hi) << "</text>\n";
    o << "</svg>\n";
    return o.str();
}

}  // namespace svg

namespace detail {

/// Records of `kind` belonging to `run`, or to the run of the last such
/// record when `run` is empty.
inline std::vector<const LogRecord*> select_records(const std::vector<LogRecord>& log, RecordKind kind,
                                                    std::string run) {
    if (run.empty())
        for (auto it = log.rbegin(); it != log.rend(); ++it)
            if (it->kind == kind) {
                run = it->run;
                break;
            }
    std::vector<const LogRecord*> out;
    for (const auto& r : log)
        if (r.kind == kind && r.run == run) out.push_back(&r);
    return out;
}

inline double tag_number(const LogRecord& r, const std::string& key) {
    if (!r.tags.contains(key)) throw Error("eval record lacks the '" + key + "' tag");
    return r.tags.at(key).get<double>();
}

}  // namespace detail

/// co_trace columns: epoch, clean, probe clean/FGSM/PGD accuracy, V_act per
/// node, then co_event (1 on the epoch an event fired).
inline Table co_trace_table(const std::vector<LogRecord>& log, const std::string& run = {},
                            const std::vector<std::string>& nodes = {}) {
    auto recs = detail::select_records(log, RecordKind::epoch, run);
    if (recs.empty()) throw Error("co_trace needs epoch records");
    std::set<int> event_epochs;
    for (const auto* r : detail::select_records(log, RecordKind::co_event, recs.front()->run))
        event_epochs.insert(r->data.get<CoEvent>().epoch);
    std::vector<std::string> names = nodes;
    if (names.empty())
        for (const auto* r : detail::select_records(log, RecordKind::config, recs.front()->run))
            if (r->data.contains("config")) {
                std::istringstream in(r->data.at("config").get<std::string>());
                names = parse_ini(in).train.model.node_names;
            }
    Table t;
    t.header = {"epoch", "clean_accuracy", "probe_clean_accuracy", "probe_fgsm_accuracy", "probe_robust_accuracy"};
    const std::size_t nodes_n = recs.front()->data.get<EpochRecord>().v_act.size();
    for (std::size_t i = 0; i < nodes_n; ++i)
        t.header.push_back("v_act_" + (i < names.size() ? names[i] : std::to_string(i)));
    t.header.push_back("co_event");
    for (const auto* r : recs) {
        const auto e = r->data.get<EpochRecord>();
        std::vector<double> row{double(e.epoch), e.clean_accuracy, e.probe_clean_accuracy, e.probe_fgsm_accuracy,
                                e.probe_robust_accuracy};
        for (std::size_t i = 0; i < nodes_n; ++i)
            row.push_back(i < e.v_act.size() ? e.v_act[i] : std::numeric_limits<double>::quiet_NaN());
        row.push_back(event_epochs.count(e.epoch) ? 1.0 : 0.0);
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Histogram of the per-channel t_values of the last channel_stats record
/// (optionally for one node). All-equal values give one degenerate bin.
inline Table channel_hist_table(const std::vector<LogRecord>& log, const std::string& run = {},
                                const std::string& node = {}, int bins = 20) {
    auto recs = detail::select_records(log, RecordKind::channel_stats, run);
    const LogRecord* pick = nullptr;
    for (const auto* r : recs)
        if (node.empty() || r->data.at("node").get<std::string>() == node) pick = r;
    if (pick == nullptr) throw Error("channel_hist needs a channel_stats record");
    const auto stats = pick->data.get<ChannelStats>();
    Table t;
    t.header = {"bin_low", "bin_high", "count"};
    if (stats.t_values.empty()) return t;
    const auto [mn, mx] = std::minmax_element(stats.t_values.begin(), stats.t_values.end());
    const double lo = *mn, hi = *mx;
    if (lo == hi) {
        t.rows.push_back({lo, hi, double(stats.t_values.size())});
        return t;
    }
    std::vector<double> counts(std::size_t(bins), 0.0);
    for (double v : stats.t_values) {
        auto b = std::size_t((v - lo) / (hi - lo) * bins);
        counts[std::min(b, counts.size() - 1)] += 1.0;
    }
    for (int b = 0; b < bins; ++b)
        t.rows.push_back({lo + (hi - lo) * b / bins, lo + (hi - lo) * (b + 1) / bins, counts[std::size_t(b)]});
    return t;
}

/// Per-channel passthrough of the same record: channel, raw, t_value.
inline Table channel_values_table(const std::vector<LogRecord>& log, const std::string& run = {},
                                  const std::string& node = {}) {
    auto recs = detail::select_records(log, RecordKind::channel_stats, run);
    const LogRecord* pick = nullptr;
    for (const auto* r : recs)
        if (node.empty() || r->data.at("node").get<std::string>() == node) pick = r;
    if (pick == nullptr) throw Error("channel_hist needs a channel_stats record");
    const auto stats = pick->data.get<ChannelStats>();
    Table t;
    t.header = {"channel", "raw", "t_value"};
    for (std::size_t k = 0; k < stats.t_values.size(); ++k)
        t.rows.push_back({double(k), stats.raw[k], stats.t_values[k]});
    return t;
}

inline Table increment_table(const std::vector<LogRecord>& log, const std::string& run = {}) {
    auto recs = detail::select_records(log, RecordKind::increments, run);
    if (recs.empty()) throw Error("increment_heat needs an increments record");
    const auto m = recs.back()->data.get<IncrementMatrix>();
    Table t;
    t.header = {"step"};
    for (std::size_t k = 0; k < m.channels(); ++k) t.header.push_back("ch" + std::to_string(k));
    for (std::size_t s = 0; s < m.steps(); ++s) {
        std::vector<double> row{double(s + 1)};
        row.insert(row.end(), m.rows[s].begin(), m.rows[s].end());
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Sweep over eval records carrying a numeric tag (alpha_2 for masks,
/// noise_level for noise). Columns: tag value, a series code, masked
/// channel count, clean accuracy, then one column per attack.
inline Table sweep_table(const std::vector<LogRecord>& log, const std::string& tag, const std::string& run = {}) {
    std::vector<const LogRecord*> recs;
    for (const auto* r : detail::select_records(log, RecordKind::eval, run))
        if (r->tags.contains(tag)) recs.push_back(r);
    if (recs.empty()) throw Error("sweep plot needs eval records tagged with " + tag);
    std::vector<std::string> attacks;
    for (const auto& a : recs.front()->data.get<EvalReport>().attacks) attacks.push_back(a.name);
    Table t;
    t.header = {tag, "series", "masked_channels", "clean_accuracy"};
    for (const auto& a : attacks) t.header.push_back(a);
    for (const auto* r : recs) {
        const auto rep = r->data.get<EvalReport>();
        const double series = r->tags.contains("series") ? r->tags.at("series").get<double>() : 0.0;
        std::vector<double> row{detail::tag_number(*r, tag), series, double(rep.masked_channels), rep.clean_accuracy};
        for (const auto& a : attacks) row.push_back(rep.attack(a).accuracy);
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Writes <out>.csv (and <out>_channels.csv for channel_hist) plus a
/// best-effort <out>.svg.
inline PlotFiles emit_plots(const std::vector<LogRecord>& log, PlotKind kind, const std::filesystem::path& out,
                            const std::string& run = {}, const std::vector<std::string>& nodes = {}) {
    PlotFiles files;
    files.csv = out;
    files.csv += ".csv";
    std::filesystem::path svg_path = out;
    svg_path += ".svg";
    std::string svg_text;
    auto column = [](const Table& t, std::size_t c) {
        std::vector<double> v;
        for (const auto& r : t.rows) v.push_back(r[c]);
        return v;
    };
    switch (kind) {
        case PlotKind::co_trace: {
            files.table = co_trace_table(log, run, nodes);
            const auto& t = files.table;
            const auto x = column(t, 0);
            std::vector<svg::Series> s{{"clean", x, column(t, 1)},
                                       {"probe FGSM", x, column(t, 3)},
                                       {"probe PGD", x, column(t, 4)}};
            // V_act of node B when present, otherwise the first node
            std::size_t vcol = t.header.size() > 7 ? 6 : 5;
            if (vcol < t.header.size() - 1) s.push_back({t.header[vcol], x, column(t, vcol), true});
            std::vector<double> markers;
            for (const auto& r : t.rows)
                if (r.back() == 1.0) markers.push_back(r[0]);
            svg_text = svg::line_chart("robust accuracy and activation difference", "epoch", "accuracy (%)", "V_act",
                                       s, markers);
            break;
        }
        case PlotKind::channel_hist: {
            files.table = channel_hist_table(log, run);
            std::filesystem::path ch = out;
            ch += "_channels.csv";
            write_csv(ch, channel_values_table(log, run));
            std::vector<std::string> labels;
            for (const auto& r : files.table.rows) labels.push_back(format_number(r[0]));
            svg_text = svg::bar_chart("channel T_act histogram", labels, column(files.table, 2));
            break;
        }
        case PlotKind::increment_heat: {
            files.table = increment_table(log, run);
            std::vector<std::vector<double>> m;
            for (const auto& r : files.table.rows) m.emplace_back(r.begin() + 1, r.end());
            svg_text = svg::heat_map("activation increments per attack step", m);
            break;
        }
        case PlotKind::mask_sweep:
        case PlotKind::noise_sweep: {
            const std::string tag = kind == PlotKind::mask_sweep ? "alpha_2" : "noise_level";
            files.table = sweep_table(log, tag, run);
            auto& t = files.table;
            std::vector<svg::Series> s;
            for (std::size_t c = 3; c < t.header.size(); ++c) {
                svg::Series series{t.header[c], {}, {}};
                for (const auto& r : t.rows)
                    if (r[1] == 0.0) series.x.push_back(r[0]), series.y.push_back(r[c]);
                s.push_back(std::move(series));
            }
            svg_text = svg::line_chart(kind == PlotKind::mask_sweep ? "accuracy under channel masking"
                                                                    : "accuracy under inference noise",
                                       tag, "accuracy (%)", "", s);
            break;
        }
    }
    write_csv(files.csv, files.table);
    std::ofstream svg_out(svg_path, std::ios::trunc);
    if (svg_out && (svg_out << svg_text)) files.svg = svg_path;
    return files;
}

}  // namespace fatlab
