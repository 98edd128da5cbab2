#pragma once

// Static SVG plots for metric series. Output is byte-deterministic for
// identical input: fixed palette, fixed formatting, no timestamps.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lab/report.hpp"

namespace lab {

struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

struct PlotSpec {
    std::string title;
    std::string xlabel = "x";
    std::string ylabel = "y";
    bool log_x = false;
    bool log_y = false;
    int width = 640;
    int height = 480;
};

namespace detail {

inline std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::vector<double> axis_ticks(double lo, double hi, bool log_scale) {
    std::vector<double> ticks;
    if (log_scale) {
        // lo/hi are already log10 values; tick at integer decades
        int a = static_cast<int>(std::ceil(lo - 1e-9));
        int b = static_cast<int>(std::floor(hi + 1e-9));
        int stride = std::max(1, (b - a) / 6);
        for (int p = a; p <= b; p += stride) ticks.push_back(static_cast<double>(p));
        if (ticks.empty()) ticks = {lo, hi};
        return ticks;
    }
    const double span = hi - lo;
    if (!(span > 0.0)) return {lo};
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (mag * m >= raw) {
            step = mag * m;
            break;
        }
    const double first = std::ceil(lo / step) * step;
    for (double v = first; v <= hi + 1e-9 * span; v += step) ticks.push_back(v);
    return ticks;
}

}  // namespace detail

inline std::string render_plot(const std::vector<PlotSeries>& series, const PlotSpec& spec) {
    if (series.empty()) throw std::invalid_argument("render_plot: no series");
    for (const auto& s : series)
        if (s.points.empty())
            throw std::invalid_argument("render_plot: empty series " + s.label);
    auto tx = [&](double v) {
        if (!spec.log_x) return v;
        if (!(v > 0.0)) throw std::invalid_argument("render_plot: nonpositive x on log axis");
        return std::log10(v);
    };
    auto ty = [&](double v) {
        if (!spec.log_y) return v;
        if (!(v > 0.0)) throw std::invalid_argument("render_plot: nonpositive y on log axis");
        return std::log10(v);
    };
    double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            xlo = std::min(xlo, tx(x));
            xhi = std::max(xhi, tx(x));
            ylo = std::min(ylo, ty(y));
            yhi = std::max(yhi, ty(y));
        }
    if (xhi <= xlo) {
        xlo -= 0.5;
        xhi += 0.5;
    }
    if (yhi <= ylo) {
        ylo -= 0.5;
        yhi += 0.5;
    }
    const double xpad = 0.05 * (xhi - xlo), ypad = 0.05 * (yhi - ylo);
    xlo -= xpad;
    xhi += xpad;
    ylo -= ypad;
    yhi += ypad;
    const double ml = 70, mr = 20, mt = 40, mb = 50;
    const double pw = spec.width - ml - mr, ph = spec.height - mt - mb;
    auto px = [&](double v) { return ml + pw * (v - xlo) / (xhi - xlo); };
    auto py = [&](double v) { return mt + ph * (yhi - v) / (yhi - ylo); };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) +
           "\" height=\"" + std::to_string(spec.height) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!spec.title.empty())
        out += "<text x=\"" + detail::fmt6(ml + pw / 2) +
               "\" y=\"24\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\">" +
               detail::xml_escape(spec.title) + "</text>\n";
    // frame
    out += "<rect x=\"" + detail::fmt6(ml) + "\" y=\"" + detail::fmt6(mt) + "\" width=\"" +
           detail::fmt6(pw) + "\" height=\"" + detail::fmt6(ph) +
           "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double v : detail::axis_ticks(xlo + xpad, xhi - xpad, spec.log_x)) {
        const double X = px(v);
        out += "<line x1=\"" + detail::fmt6(X) + "\" y1=\"" + detail::fmt6(mt + ph) + "\" x2=\"" +
               detail::fmt6(X) + "\" y2=\"" + detail::fmt6(mt + ph + 5) +
               "\" stroke=\"black\"/>\n";
        const double shown = spec.log_x ? std::pow(10.0, v) : v;
        out += "<text x=\"" + detail::fmt6(X) + "\" y=\"" + detail::fmt6(mt + ph + 18) +
               "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" +
               detail::fmt6(shown) + "</text>\n";
    }
    for (double v : detail::axis_ticks(ylo + ypad, yhi - ypad, spec.log_y)) {
        const double Y = py(v);
        out += "<line x1=\"" + detail::fmt6(ml - 5) + "\" y1=\"" + detail::fmt6(Y) + "\" x2=\"" +
               detail::fmt6(ml) + "\" y2=\"" + detail::fmt6(Y) + "\" stroke=\"black\"/>\n";
        const double shown = spec.log_y ? std::pow(10.0, v) : v;
        out += "<text x=\"" + detail::fmt6(ml - 8) + "\" y=\"" + detail::fmt6(Y + 4) +
               "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">" +
               detail::fmt6(shown) + "</text>\n";
    }
    out += "<text x=\"" + detail::fmt6(ml + pw / 2) + "\" y=\"" +
           detail::fmt6(spec.height - 12.0) +
           "\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">" +
           detail::xml_escape(spec.xlabel) + "</text>\n";
    out += "<text x=\"16\" y=\"" + detail::fmt6(mt + ph / 2) +
           "\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\" "
           "transform=\"rotate(-90 16 " +
           detail::fmt6(mt + ph / 2) + ")\">" + detail::xml_escape(spec.ylabel) + "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = palette[i % 8];
        std::string pts;
        for (const auto& [x, y] : series[i].points) {
            if (!pts.empty()) pts += ' ';
            pts += detail::fmt6(px(tx(x))) + "," + detail::fmt6(py(ty(y)));
        }
        out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        for (const auto& [x, y] : series[i].points)
            out += "<circle cx=\"" + detail::fmt6(px(tx(x))) + "\" cy=\"" +
                   detail::fmt6(py(ty(y))) + "\" r=\"2.5\" fill=\"" + color + "\"/>\n";
        out += "<text x=\"" + detail::fmt6(ml + pw - 8) + "\" y=\"" +
               detail::fmt6(mt + 16.0 + 14.0 * static_cast<double>(i)) +
               "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\" fill=\"" +
               color + "\">" + detail::xml_escape(series[i].label) + "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

inline void emit_plot(const std::vector<PlotSeries>& series, const PlotSpec& spec,
                      const std::string& path) {
    const std::string body = render_plot(series, spec);  // validate before creating the file
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("emit_plot: cannot open " + path);
    out << body;
}

// one series per distinct group key; rows keep file order within a group
inline void emit_plot_from_csv(const std::string& csv_path, const std::string& xcol,
                               const std::string& ycol, const std::string& group_col,
                               const PlotSpec& spec, const std::string& out_path) {
    const CsvTable t = read_csv(csv_path);
    const std::size_t xi = t.column(xcol), yi = t.column(ycol);
    std::size_t gi = SIZE_MAX;
    if (!group_col.empty()) gi = t.column(group_col);
    std::vector<PlotSeries> series;
    auto series_for = [&](const std::string& key) -> PlotSeries& {
        for (auto& s : series)
            if (s.label == key) return s;
        series.push_back({key, {}});
        return series.back();
    };
    for (const auto& row : t.rows) {
        const std::string key = gi == SIZE_MAX ? ycol : row[gi];
        series_for(key).points.push_back({std::stod(row[xi]), std::stod(row[yi])});
    }
    emit_plot(series, spec, out_path);
}

}  // namespace lab
