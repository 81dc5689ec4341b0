#pragma once

// Deterministic SVG line/scatter plots: stacked panels, optional log axes
// and a secondary right-hand axis. Output is byte-stable for fixed input.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "mmcav/errors.hpp"

namespace mmcav::svg {

struct Series {
    std::vector<double> x, y;
    std::string label;
    bool right_axis = false;
};

enum class Style { line, scatter };

struct Panel {
    std::string title, xlabel, ylabel, y2label;
    bool logx = false, logy = false, logy2 = false;
    Style style = Style::line;
    std::vector<Series> series;
};

struct Figure {
    std::string title;
    int width = 720;
    int panel_height = 300;
    std::vector<Panel> panels;
};

namespace detail {

inline std::string fmt(double v, const char* f = "%.6g") {
    char buf[48];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::string px(double v) { return fmt(v, "%.2f"); }

inline std::string escape(const std::string& s) {
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

struct Axis {
    double lo = 0.0, hi = 1.0;
    bool log = false;

    double map(double v, double a, double b) const {
        const double t = log ? (std::log10(v) - lo) / (hi - lo) : (v - lo) / (hi - lo);
        return a + t * (b - a);
    }
};

inline Axis make_axis(const std::vector<const std::vector<double>*>& data, bool log) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto* d : data)
        for (double v : *d) {
            if (!std::isfinite(v) || (log && !(v > 0.0))) continue;
            const double w = log ? std::log10(v) : v;
            lo = std::min(lo, w);
            hi = std::max(hi, w);
        }
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
        const double pad = log ? 0.5 : std::max(1e-12, 0.5 * std::abs(hi));
        lo -= pad;
        hi += pad;
    }
    Axis ax;
    ax.log = log;
    if (log) {
        ax.lo = std::floor(lo);
        ax.hi = std::ceil(hi);
        if (ax.hi == ax.lo) ax.hi += 1.0;
    } else {
        const double pad = 0.05 * (hi - lo);
        ax.lo = lo - pad;
        ax.hi = hi + pad;
    }
    return ax;
}

inline std::vector<double> ticks(const Axis& ax) {
    std::vector<double> out;
    if (ax.log) {
        const int step = std::max(1, static_cast<int>(std::ceil((ax.hi - ax.lo) / 8.0)));
        for (int e = static_cast<int>(ax.lo); e <= static_cast<int>(ax.hi); e += step) out.push_back(std::pow(10.0, e));
        return out;
    }
    const double raw = (ax.hi - ax.lo) / 6.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    for (double t = std::ceil(ax.lo / step) * step; t <= ax.hi + 1e-9 * step; t += step)
        out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
    return out;
}

/// Keeps the first, lowest, highest and last point of each half-pixel
/// column, so dense traces shrink without losing narrow peaks.
inline std::vector<std::pair<double, double>> decimate(const std::vector<std::pair<double, double>>& xy) {
    std::vector<std::pair<double, double>> out;
    std::size_t i = 0;
    while (i < xy.size()) {
        const double col = std::floor(2.0 * xy[i].first);
        std::size_t j = i, lo = i, hi = i;
        while (j < xy.size() && std::floor(2.0 * xy[j].first) == col) {
            if (xy[j].second < xy[lo].second) lo = j;
            if (xy[j].second > xy[hi].second) hi = j;
            ++j;
        }
        std::size_t keep[4] = {i, std::min(lo, hi), std::max(lo, hi), j - 1};
        for (int k = 0; k < 4; ++k)
            if (k == 0 || keep[k] != keep[k - 1]) out.push_back(xy[keep[k]]);
        i = j;
    }
    return out;
}

inline const char* color(std::size_t i) {
    static const char* palette[] = {"#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d68910", "#117a8b"};
    return palette[i % 6];
}

}  // namespace detail

inline std::string render(const Figure& fig) {
    using namespace detail;
    if (fig.panels.empty()) throw PlotSpecError("plot has no panels");
    const double ml = 80, mr = 80, mt = 40, mb = 50, title_h = fig.title.empty() ? 0.0 : 30.0;
    const double w = fig.width, ph = fig.panel_height;
    const double total_h = title_h + ph * double(fig.panels.size());
    std::string s;
    s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(w) + "\" height=\"" + px(total_h) +
         "\" viewBox=\"0 0 " + px(w) + " " + px(total_h) + "\" font-family=\"DejaVu Sans, Arial, sans-serif\" font-size=\"12\">\n";
    s += "<rect x=\"0\" y=\"0\" width=\"" + px(w) + "\" height=\"" + px(total_h) + "\" fill=\"#ffffff\"/>\n";
    if (!fig.title.empty())
        s += "<text x=\"" + px(w / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" + escape(fig.title) + "</text>\n";

    for (std::size_t pi = 0; pi < fig.panels.size(); ++pi) {
        const Panel& p = fig.panels[pi];
        if (p.series.empty()) throw PlotSpecError("panel " + std::to_string(pi) + " has no series");
        const double top = title_h + ph * double(pi) + mt, bottom = title_h + ph * double(pi + 1) - mb;
        const double left = ml, right = w - mr;
        std::vector<const std::vector<double>*> xs, yl, yr;
        for (const auto& se : p.series) {
            if (se.x.size() != se.y.size()) throw PlotSpecError("series '" + se.label + "' has mismatched x/y lengths");
            xs.push_back(&se.x);
            (se.right_axis ? yr : yl).push_back(&se.y);
        }
        const Axis ax = make_axis(xs, p.logx);
        const Axis ay = make_axis(yl.empty() ? yr : yl, p.logy);
        const Axis ay2 = make_axis(yr.empty() ? yl : yr, p.logy2);
        const bool has_right = !yr.empty();

        s += "<g>\n";
        s += "<rect x=\"" + px(left) + "\" y=\"" + px(top) + "\" width=\"" + px(right - left) + "\" height=\"" +
             px(bottom - top) + "\" fill=\"none\" stroke=\"#000000\"/>\n";
        if (!p.title.empty())
            s += "<text x=\"" + px((left + right) / 2) + "\" y=\"" + px(top - 10) + "\" text-anchor=\"middle\">" +
                 escape(p.title) + "</text>\n";
        for (double t : ticks(ax)) {
            const double X = ax.map(t, left, right);
            if (X < left - 0.5 || X > right + 0.5) continue;
            s += "<line x1=\"" + px(X) + "\" y1=\"" + px(bottom) + "\" x2=\"" + px(X) + "\" y2=\"" + px(bottom + 5) +
                 "\" stroke=\"#000000\"/>\n";
            s += "<text x=\"" + px(X) + "\" y=\"" + px(bottom + 18) + "\" text-anchor=\"middle\">" + fmt(t, "%.4g") +
                 "</text>\n";
        }
        auto yticks = [&](const Axis& a, bool right_side) {
            for (double t : ticks(a)) {
                const double Y = a.map(t, bottom, top);
                if (Y < top - 0.5 || Y > bottom + 0.5) continue;
                const double x0 = right_side ? right : left, dx = right_side ? 5 : -5;
                s += "<line x1=\"" + px(x0) + "\" y1=\"" + px(Y) + "\" x2=\"" + px(x0 + dx) + "\" y2=\"" + px(Y) +
                     "\" stroke=\"#000000\"/>\n";
                s += "<text x=\"" + px(x0 + 2 * dx) + "\" y=\"" + px(Y + 4) + "\" text-anchor=\"" +
                     (right_side ? "start" : "end") + "\">" + fmt(t, "%.4g") + "</text>\n";
            }
        };
        yticks(ay, false);
        if (has_right) yticks(ay2, true);
        if (!p.xlabel.empty())
            s += "<text x=\"" + px((left + right) / 2) + "\" y=\"" + px(bottom + 38) + "\" text-anchor=\"middle\">" +
                 escape(p.xlabel) + "</text>\n";
        if (!p.ylabel.empty())
            s += "<text transform=\"translate(" + px(18) + "," + px((top + bottom) / 2) +
                 ") rotate(-90)\" text-anchor=\"middle\">" + escape(p.ylabel) + "</text>\n";
        if (has_right && !p.y2label.empty())
            s += "<text transform=\"translate(" + px(w - 14) + "," + px((top + bottom) / 2) +
                 ") rotate(90)\" text-anchor=\"middle\">" + escape(p.y2label) + "</text>\n";

        for (std::size_t si = 0; si < p.series.size(); ++si) {
            const Series& se = p.series[si];
            const Axis& a = se.right_axis ? ay2 : ay;
            std::string pts;
            std::vector<std::pair<double, double>> xy;
            for (std::size_t k = 0; k < se.x.size(); ++k) {
                if (!std::isfinite(se.x[k]) || !std::isfinite(se.y[k])) continue;
                if ((p.logx && !(se.x[k] > 0.0)) || (a.log && !(se.y[k] > 0.0))) continue;
                xy.emplace_back(ax.map(se.x[k], left, right), a.map(se.y[k], bottom, top));
            }
            if (p.style == Style::line) {
                for (const auto& [X, Y] : decimate(xy)) pts += px(X) + "," + px(Y) + " ";
                if (!pts.empty()) pts.pop_back();
                s += "<polyline fill=\"none\" stroke=\"" + std::string(color(si)) + "\" stroke-width=\"1.5\" points=\"" +
                     pts + "\"/>\n";
            } else {
                for (const auto& [X, Y] : xy)
                    s += "<circle cx=\"" + px(X) + "\" cy=\"" + px(Y) + "\" r=\"3\" fill=\"" + color(si) + "\"/>\n";
            }
            if (!se.label.empty()) {
                const double ly = top + 16 + 16 * double(si);
                s += "<line x1=\"" + px(right - 150) + "\" y1=\"" + px(ly - 4) + "\" x2=\"" + px(right - 130) +
                     "\" y2=\"" + px(ly - 4) + "\" stroke=\"" + color(si) + "\" stroke-width=\"2\"/>\n";
                s += "<text x=\"" + px(right - 125) + "\" y=\"" + px(ly) + "\">" + escape(se.label) + "</text>\n";
            }
        }
        s += "</g>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace mmcav::svg
