#pragma once

// Minimal static SVG charts: histogram, line chart with gaps, grouped bars.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tts::plot {

struct Series {
    std::string name;
    std::vector<std::pair<double, std::optional<double>>> points;  // absent y leaves a gap
};

namespace detail {

inline constexpr int kW = 640, kH = 400, kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;
inline const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#7f7f7f"};

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

struct Frame {
    double x0, x1, y0, y1;
    double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
    double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

inline std::string open(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                        const Frame& f, int xticks = 5, int yticks = 5) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kW) + "\" height=\"" +
                    std::to_string(kH) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(kW / 2.0) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
         "</text>\n";
    s += "<line x1=\"" + num(f.px(f.x0)) + "\" y1=\"" + num(f.py(f.y0)) + "\" x2=\"" + num(f.px(f.x1)) + "\" y2=\"" +
         num(f.py(f.y0)) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(f.px(f.x0)) + "\" y1=\"" + num(f.py(f.y0)) + "\" x2=\"" + num(f.px(f.x0)) + "\" y2=\"" +
         num(f.py(f.y1)) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= xticks; ++i) {
        const double x = f.x0 + (f.x1 - f.x0) * i / xticks;
        s += "<text x=\"" + num(f.px(x)) + "\" y=\"" + num(f.py(f.y0) + 15) + "\" text-anchor=\"middle\">" + num(x) +
             "</text>\n";
    }
    for (int i = 0; i <= yticks; ++i) {
        const double y = f.y0 + (f.y1 - f.y0) * i / yticks;
        s += "<text x=\"" + num(f.px(f.x0) - 6) + "\" y=\"" + num(f.py(y) + 4) + "\" text-anchor=\"end\">" + num(y) +
             "</text>\n";
    }
    s += "<text x=\"" + num((f.px(f.x0) + f.px(f.x1)) / 2) + "\" y=\"" + num(kH - 12.0) +
         "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
    s += "<text x=\"14\" y=\"" + num((f.py(f.y0) + f.py(f.y1)) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
         num((f.py(f.y0) + f.py(f.y1)) / 2) + ")\">" + escape(ylabel) + "</text>\n";
    return s;
}

inline std::string legend(std::size_t i, const std::string& name) {
    const double y = kTop + 10.0 + 18.0 * static_cast<double>(i);
    const double x = kW - kRight + 15.0;
    return "<rect x=\"" + num(x) + "\" y=\"" + num(y - 8) + "\" width=\"10\" height=\"10\" fill=\"" +
           kColors[i % 7] + "\"/><text x=\"" + num(x + 15) + "\" y=\"" + num(y + 1) + "\">" + escape(name) +
           "</text>\n";
}

}  // namespace detail

/// Histogram of values in [lo, hi] with `bins` equal-width bins; counts as fractions.
inline std::string histogram(const std::vector<double>& values, int bins, double lo, double hi,
                             const std::string& title, const std::string& xlabel) {
    using namespace detail;
    std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
    for (double v : values) {
        int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
        b = std::clamp(b, 0, bins - 1);
        counts[static_cast<std::size_t>(b)] += 1.0;
    }
    for (double& c : counts) c /= values.empty() ? 1.0 : static_cast<double>(values.size());
    const Frame f{lo, hi, 0.0, 1.0};
    std::string s = open(title, xlabel, "fraction of steps", f);
    const double bw = (hi - lo) / bins;
    for (int b = 0; b < bins; ++b) {
        const double x0 = lo + b * bw;
        const double c = counts[static_cast<std::size_t>(b)];
        s += "<rect x=\"" + num(f.px(x0) + 0.5) + "\" y=\"" + num(f.py(c)) + "\" width=\"" +
             num(f.px(x0 + bw) - f.px(x0) - 1) + "\" height=\"" + num(f.py(0) - f.py(c)) + "\" fill=\"" + kColors[0] +
             "\"/>\n";
    }
    return s + "</svg>\n";
}

/// Line chart; missing y values split the line and are drawn as hollow markers on the x axis.
inline std::string lines(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                         const std::string& ylabel, double y0 = 0.0, double y1 = 1.0) {
    using namespace detail;
    double x0 = 0, x1 = 1;
    bool first = true;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            x0 = first ? x : std::min(x0, x);
            x1 = first ? x : std::max(x1, x);
            first = false;
        }
    if (x1 == x0) x1 = x0 + 1;
    const Frame f{x0, x1, y0, y1};
    const int xt = std::clamp(static_cast<int>(x1 - x0), 1, 10);
    std::string out = open(title, xlabel, ylabel, f, xt);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* col = kColors[i % 7];
        std::string path;
        for (const auto& [x, y] : series[i].points) {
            if (!y) {
                path += " ";
                out += "<circle cx=\"" + num(f.px(x)) + "\" cy=\"" + num(f.py(y0)) + "\" r=\"3\" fill=\"none\" stroke=\"" +
                       col + "\"/>\n";
                continue;
            }
            path += (path.empty() || path.back() == ' ' ? "M" : "L") + num(f.px(x)) + "," + num(f.py(*y));
            out += "<circle cx=\"" + num(f.px(x)) + "\" cy=\"" + num(f.py(*y)) + "\" r=\"3\" fill=\"" + col + "\"/>\n";
        }
        out += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + col + "\" stroke-width=\"2\"/>\n";
        out += legend(i, series[i].name);
    }
    return out + "</svg>\n";
}

/// Grouped bars: one group per label, one bar per series value at that label.
inline std::string bars(const std::vector<std::string>& labels, const std::vector<Series>& series,
                        const std::string& title, const std::string& ylabel, double y1 = 1.0) {
    using namespace detail;
    const Frame f{0.0, static_cast<double>(std::max<std::size_t>(labels.size(), 1)), 0.0, y1};
    std::string out = open(title, "", ylabel, f, 1);
    const double group = f.px(1) - f.px(0);
    const double bw = group * 0.8 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
    for (std::size_t g = 0; g < labels.size(); ++g) {
        out += "<text x=\"" + num(f.px(g + 0.5)) + "\" y=\"" + num(f.py(0) + 28) + "\" text-anchor=\"middle\">" +
               escape(labels[g]) + "</text>\n";
        for (std::size_t i = 0; i < series.size(); ++i) {
            if (g >= series[i].points.size() || !series[i].points[g].second) continue;
            const double v = *series[i].points[g].second;
            const double x = f.px(static_cast<double>(g)) + group * 0.1 + bw * static_cast<double>(i);
            out += "<rect x=\"" + num(x) + "\" y=\"" + num(f.py(v)) + "\" width=\"" + num(bw - 1) + "\" height=\"" +
                   num(f.py(0) - f.py(v)) + "\" fill=\"" + kColors[i % 7] + "\"/>\n";
        }
    }
    for (std::size_t i = 0; i < series.size(); ++i) out += legend(i, series[i].name);
    return out + "</svg>\n";
}

}  // namespace tts::plot
