#pragma once

// Minimal SVG chart emitter: line charts and bar charts, no external deps,
// deterministic output so files are diffable in tests.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cftlab/error.hpp"

namespace cftlab::svg {

struct Series {
    std::string label;
    std::vector<double> values;
    std::string color = "#1f77b4";
};

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::vector<Series>& series, const std::string& x_label,
                             const std::string& y_label) {
    require(!series.empty(), "svg line chart: no series");
    const int W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    double ymin = 0.0, ymax = 1e-12;
    size_t n = 1;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    auto px = [&](size_t i) {
        return ml + (W - ml - mr) * (n > 1 ? static_cast<double>(i) / (n - 1) : 0.5);
    };
    auto py = [&](double v) { return H - mb - (H - mt - mb) * (v - ymin) / (ymax - ymin); };

    std::ofstream out(path);
    require(out.good(), "cannot write svg: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << title << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
        << H - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
        << "\" stroke=\"black\"/>\n";
    for (int g = 0; g <= 4; ++g) {
        double v = ymin + (ymax - ymin) * g / 4.0;
        out << "<text x=\"" << ml - 6 << "\" y=\"" << fmt(py(v) + 4)
            << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(v) << "</text>\n";
    }
    out << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    out << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
        << (mt + H - mb) / 2 << ")\">" << y_label << "</text>\n";
    int li = 0;
    for (const auto& s : series) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < s.values.size(); ++i)
            out << fmt(px(i)) << ',' << fmt(py(s.values[i])) << ' ';
        out << "\"/>\n";
        out << "<text x=\"" << W - mr - 4 << "\" y=\"" << mt + 14 * li
            << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << s.color << "\">" << s.label
            << "</text>\n";
        ++li;
    }
    out << "</svg>\n";
}

inline void write_bar_chart(const std::string& path, const std::string& title,
                            const std::vector<std::string>& labels,
                            const std::vector<Series>& groups, const std::string& y_label) {
    require(!groups.empty() && !labels.empty(), "svg bar chart: empty input");
    const int W = 720, H = 420, ml = 70, mr = 20, mt = 40, mb = 80;
    double ymin = 0.0, ymax = 1e-12;
    for (const auto& g : groups)
        for (double v : g.values) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    auto py = [&](double v) { return H - mb - (H - mt - mb) * (v - ymin) / (ymax - ymin); };
    const double slot = static_cast<double>(W - ml - mr) / labels.size();
    const double bw = slot * 0.8 / groups.size();

    std::ofstream out(path);
    require(out.good(), "cannot write svg: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << title << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << fmt(py(0.0)) << "\" x2=\"" << W - mr
        << "\" y2=\"" << fmt(py(0.0)) << "\" stroke=\"black\"/>\n";
    for (int g = 0; g <= 4; ++g) {
        double v = ymin + (ymax - ymin) * g / 4.0;
        out << "<text x=\"" << ml - 6 << "\" y=\"" << fmt(py(v) + 4)
            << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(v) << "</text>\n";
    }
    out << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
        << (mt + H - mb) / 2 << ")\">" << y_label << "</text>\n";
    for (size_t i = 0; i < labels.size(); ++i) {
        double x0 = ml + slot * (static_cast<double>(i) + 0.1);
        for (size_t g = 0; g < groups.size(); ++g) {
            if (i >= groups[g].values.size()) continue;
            double v = groups[g].values[i];
            double ytop = std::min(py(v), py(0.0));
            double h = std::abs(py(v) - py(0.0));
            out << "<rect x=\"" << fmt(x0 + bw * static_cast<double>(g)) << "\" y=\"" << fmt(ytop)
                << "\" width=\"" << fmt(bw * 0.95) << "\" height=\"" << fmt(h) << "\" fill=\""
                << groups[g].color << "\"/>\n";
        }
        out << "<text x=\"" << fmt(ml + slot * (static_cast<double>(i) + 0.5)) << "\" y=\""
            << H - mb + 14 << "\" text-anchor=\"end\" font-size=\"10\" transform=\"rotate(-35 "
            << fmt(ml + slot * (static_cast<double>(i) + 0.5)) << ' ' << H - mb + 14 << ")\">"
            << labels[i] << "</text>\n";
    }
    for (size_t g = 0; g < groups.size(); ++g)
        out << "<text x=\"" << W - mr - 4 << "\" y=\"" << mt + 14 * static_cast<int>(g)
            << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << groups[g].color << "\">"
            << groups[g].label << "</text>\n";
    out << "</svg>\n";
}

}  // namespace cftlab::svg
