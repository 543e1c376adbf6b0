#include "fipo/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fipo/errors.hpp"

namespace fipo {
namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<':
                out += "&lt;";
                break;
            case '>':
                out += "&gt;";
                break;
            case '&':
                out += "&amp;";
                break;
            default:
                out += c;
        }
    }
    return out;
}

}  // namespace

std::string canonical_metric_key(const std::string& key) {
    std::string k = key;
    std::replace(k.begin(), k.end(), '.', '/');
    return k;
}

Series extract_series(std::span<const nlohmann::json> records, const std::string& key) {
    Series s;
    s.key = canonical_metric_key(key);
    for (const auto& r : records) {
        const auto it = r.find(s.key);
        if (it == r.end() || !it->is_number()) {
            continue;
        }
        s.x.push_back(r.contains("step") ? r.at("step").get<double>() : static_cast<double>(s.x.size()));
        s.y.push_back(it->get<double>());
    }
    return s;
}

std::string render_svg(const Series& series, int width, int height) {
    if (series.x.empty()) {
        throw InputError("render_svg: series '" + series.key + "' is empty");
    }
    const double left = 70.0;
    const double right = 20.0;
    const double top = 30.0;
    const double bottom = 45.0;
    const double pw = width - left - right;
    const double ph = height - top - bottom;

    auto [xmin_it, xmax_it] = std::minmax_element(series.x.begin(), series.x.end());
    auto [ymin_it, ymax_it] = std::minmax_element(series.y.begin(), series.y.end());
    double xmin = *xmin_it;
    double xmax = *xmax_it;
    double ymin = *ymin_it;
    double ymax = *ymax_it;
    if (xmax == xmin) {
        xmax = xmin + 1.0;
    }
    if (ymax == ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"14\">" << escape(series.key) << "</text>\n";
    // axes
    svg << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">step</text>\n";
    svg << "<text x=\"14\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"12\" transform=\"rotate(-90 14 " << top + ph / 2 << ")\">" << escape(series.key)
        << "</text>\n";
    // ticks
    const auto tick = [&](double x, double y, const std::string& label, const char* anchor) {
        svg << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"" << anchor
            << "\" font-family=\"sans-serif\" font-size=\"10\">" << label << "</text>\n";
    };
    tick(left, top + ph + 14, fmt(xmin), "middle");
    tick(left + pw, top + ph + 14, fmt(xmax), "middle");
    tick(left - 6, top + ph + 3, fmt(ymin), "end");
    tick(left - 6, top + 3, fmt(ymax), "end");

    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series.x.size(); ++i) {
        svg << (i ? " " : "") << fmt(px(series.x[i])) << ',' << fmt(py(series.y[i]));
    }
    svg << "\"/>\n</svg>\n";
    return svg.str();
}

}  // namespace fipo
