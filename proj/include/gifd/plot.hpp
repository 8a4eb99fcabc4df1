#ifndef GIFD_PLOT_HPP_
#define GIFD_PLOT_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "gifd/error.hpp"

namespace gifd {

struct Series {
    std::string name;
    std::vector<double> values;  // one per x position; NaN leaves a gap
};

/// Minimal SVG chart writer for report figures.
struct ChartSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<std::string> x_ticks;
    std::vector<Series> series;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
    return colors[i % 7];
}

struct Frame {
    double w = 640, h = 400, left = 70, right = 160, top = 40, bottom = 60;
    double lo = 0, hi = 1;

    double px(std::size_t i, std::size_t n, bool centered) const {
        const double span = w - left - right;
        if (centered) return left + span * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        return n <= 1 ? left + span / 2 : left + span * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    double py(double v) const { return top + (h - top - bottom) * (hi - v) / (hi - lo); }
};

inline Frame make_frame(const ChartSpec& spec, bool include_zero) {
    Frame f;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : spec.series) {
        for (double v : s.values) {
            if (!std::isfinite(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (include_zero) lo = std::min(lo, 0.0);
    if (hi - lo < 1e-9) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    f.lo = include_zero && lo == 0.0 ? 0.0 : lo - pad;
    f.hi = hi + pad;
    return f;
}

inline void axes(std::ostringstream& o, const ChartSpec& spec, const Frame& f, bool centered) {
    o << std::fixed << std::setprecision(2);
    o << "<text x=\"" << f.w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << svg_escape(spec.title)
      << "</text>\n";
    o << "<line x1=\"" << f.left << "\" y1=\"" << f.h - f.bottom << "\" x2=\"" << f.w - f.right << "\" y2=\""
      << f.h - f.bottom << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\"" << f.h - f.bottom
      << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = f.lo + (f.hi - f.lo) * t / 4.0;
        o << "<text x=\"" << f.left - 6 << "\" y=\"" << f.py(v) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << v
          << "</text>\n";
        o << "<line x1=\"" << f.left << "\" y1=\"" << f.py(v) << "\" x2=\"" << f.w - f.right << "\" y2=\"" << f.py(v)
          << "\" stroke=\"#ddd\"/>\n";
    }
    for (std::size_t i = 0; i < spec.x_ticks.size(); ++i) {
        o << "<text x=\"" << f.px(i, spec.x_ticks.size(), centered) << "\" y=\"" << f.h - f.bottom + 16
          << "\" text-anchor=\"middle\" font-size=\"11\">" << svg_escape(spec.x_ticks[i]) << "</text>\n";
    }
    o << "<text x=\"" << (f.left + f.w - f.right) / 2 << "\" y=\"" << f.h - 18
      << "\" text-anchor=\"middle\" font-size=\"13\">" << svg_escape(spec.x_label) << "</text>\n";
    o << "<text x=\"18\" y=\"" << (f.top + f.h - f.bottom) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
      << (f.top + f.h - f.bottom) / 2 << ")\">" << svg_escape(spec.y_label) << "</text>\n";
    for (std::size_t s = 0; s < spec.series.size(); ++s) {
        const double y = f.top + 10 + 18.0 * static_cast<double>(s);
        o << "<rect x=\"" << f.w - f.right + 12 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
          << palette(s) << "\"/>\n";
        o << "<text x=\"" << f.w - f.right + 30 << "\" y=\"" << y + 1 << "\" font-size=\"12\">"
          << svg_escape(spec.series[s].name) << "</text>\n";
    }
}

inline void write_svg(const std::filesystem::path& path, const std::string& body, const Frame& f) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write plot " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.w << "\" height=\"" << f.h << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << body << "</svg>\n";
}

}  // namespace detail

/// Line chart, one polyline per series over categorical x positions.
inline void write_line_chart(const std::filesystem::path& path, const ChartSpec& spec) {
    const auto f = detail::make_frame(spec, false);
    std::ostringstream o;
    detail::axes(o, spec, f, false);
    const auto n = spec.x_ticks.size();
    for (std::size_t s = 0; s < spec.series.size(); ++s) {
        std::string points;
        for (std::size_t i = 0; i < spec.series[s].values.size() && i < n; ++i) {
            const double v = spec.series[s].values[i];
            if (!std::isfinite(v)) continue;
            std::ostringstream pt;
            pt << std::fixed << std::setprecision(2) << f.px(i, n, false) << "," << f.py(v);
            points += pt.str() + " ";
            o << "<circle cx=\"" << f.px(i, n, false) << "\" cy=\"" << f.py(v) << "\" r=\"3\" fill=\""
              << detail::palette(s) << "\"/>\n";
        }
        o << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << detail::palette(s) << "\" points=\"" << points
          << "\"/>\n";
    }
    detail::write_svg(path, o.str(), f);
}

/// Grouped bar chart: one group per x tick, one bar per series.
inline void write_bar_chart(const std::filesystem::path& path, const ChartSpec& spec) {
    const auto f = detail::make_frame(spec, true);
    std::ostringstream o;
    detail::axes(o, spec, f, true);
    const auto n = std::max<std::size_t>(spec.x_ticks.size(), 1);
    const double group = (f.w - f.left - f.right) / static_cast<double>(n);
    const double bar = 0.8 * group / static_cast<double>(std::max<std::size_t>(spec.series.size(), 1));
    for (std::size_t s = 0; s < spec.series.size(); ++s) {
        for (std::size_t i = 0; i < spec.series[s].values.size() && i < n; ++i) {
            const double v = spec.series[s].values[i];
            if (!std::isfinite(v)) continue;
            const double x = f.left + group * static_cast<double>(i) + 0.1 * group + bar * static_cast<double>(s);
            const double y0 = f.py(std::max(f.lo, 0.0));
            o << "<rect x=\"" << x << "\" y=\"" << std::min(f.py(v), y0) << "\" width=\"" << bar << "\" height=\""
              << std::abs(y0 - f.py(v)) << "\" fill=\"" << detail::palette(s) << "\"/>\n";
        }
    }
    detail::write_svg(path, o.str(), f);
}

}  // namespace gifd

#endif  // GIFD_PLOT_HPP_
