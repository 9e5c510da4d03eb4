#include "bsdgan/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace bsdgan::plot {

namespace {

const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        default: out += c;
        }
    }
    return out;
}

// Chart body at (x0, y0) of size w x h.
std::string chart(double x0, double y0, double w, double h, const std::string& title, const std::vector<Series>& series,
                  const std::string& x_label, const std::string& y_label, bool legend)
{
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t n = 0;
    for (const auto& s : series) {
        n = std::max(n, s.y.size());
        for (double v : s.y)
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    }
    if (!std::isfinite(lo)) {
        lo = 0;
        hi = 1;
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double left = x0 + 55, right = x0 + w - 10, top = y0 + 28, bottom = y0 + h - 35;
    auto px = [&](std::size_t i) { return left + (n > 1 ? (right - left) * static_cast<double>(i) / (n - 1) : 0.0); };
    auto py = [&](double v) { return bottom - (bottom - top) * (v - lo) / (hi - lo); };

    std::string out;
    out += "<text x=\"" + fmt("%.1f", x0 + w / 2) + "\" y=\"" + fmt("%.1f", y0 + 18) +
           "\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) + "</text>\n";
    out += "<rect x=\"" + fmt("%.1f", left) + "\" y=\"" + fmt("%.1f", top) + "\" width=\"" + fmt("%.1f", right - left) +
           "\" height=\"" + fmt("%.1f", bottom - top) + "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        out += "<text x=\"" + fmt("%.1f", left - 4) + "\" y=\"" + fmt("%.1f", py(v) + 4) +
               "\" text-anchor=\"end\" font-size=\"10\">" + fmt("%.3g", v) + "</text>\n";
    }
    if (n > 1)
        out += "<text x=\"" + fmt("%.1f", right) + "\" y=\"" + fmt("%.1f", bottom + 14) +
               "\" text-anchor=\"end\" font-size=\"10\">" + std::to_string(n - 1) + "</text>\n";
    if (!x_label.empty())
        out += "<text x=\"" + fmt("%.1f", (left + right) / 2) + "\" y=\"" + fmt("%.1f", bottom + 28) +
               "\" text-anchor=\"middle\" font-size=\"11\">" + escape(x_label) + "</text>\n";
    if (!y_label.empty())
        out += "<text x=\"" + fmt("%.1f", x0 + 12) + "\" y=\"" + fmt("%.1f", (top + bottom) / 2) +
               "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 " + fmt("%.1f", x0 + 12) + " " +
               fmt("%.1f", (top + bottom) / 2) + ")\">" + escape(y_label) + "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* colour = palette[s % std::size(palette)];
        std::string points;
        for (std::size_t i = 0; i < series[s].y.size(); ++i)
            if (std::isfinite(series[s].y[i]))
                points += fmt("%.2f", px(i)) + "," + fmt("%.2f", py(series[s].y[i])) + " ";
        out += "<polyline fill=\"none\" stroke-width=\"1.2\" stroke=\"" + std::string(colour) + "\" points=\"" +
               points + "\"/>\n";
        if (legend)
            out += "<text x=\"" + fmt("%.1f", left + 6) + "\" y=\"" + fmt("%.1f", top + 14 + 13.0 * s) +
                   "\" font-size=\"11\" fill=\"" + colour + "\">" + escape(series[s].name) + "</text>\n";
    }
    return out;
}

std::string document(double w, double h, const std::string& body)
{
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", w) + "\" height=\"" + fmt("%.0f", h) +
           "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" + body +
           "</svg>\n";
}

} // namespace

std::string line_chart(const std::string& title, const std::vector<Series>& series, const std::string& x_label,
                       const std::string& y_label)
{
    return document(720, 420, chart(0, 0, 720, 420, title, series, x_label, y_label, true));
}

std::string panel_grid(const std::vector<std::pair<std::string, std::vector<Series>>>& panels, int columns)
{
    columns = std::max(1, columns);
    const double pw = 300, ph = 200;
    const int rows = static_cast<int>((panels.size() + columns - 1) / columns);
    std::string body;
    for (std::size_t i = 0; i < panels.size(); ++i)
        body += chart(pw * static_cast<double>(i % columns), ph * static_cast<double>(i / columns), pw, ph,
                      panels[i].first, panels[i].second, "", "", false);
    return document(pw * columns, ph * std::max(rows, 1), body);
}

std::string pie_chart(const std::string& title, const std::vector<std::pair<std::string, double>>& slices)
{
    double total = 0;
    for (const auto& s : slices)
        total += s.second;
    const double cx = 200, cy = 220, r = 150;
    std::string body = "<text x=\"300\" y=\"30\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) + "</text>\n";
    double angle = -std::numbers::pi / 2;
    for (std::size_t i = 0; i < slices.size(); ++i) {
        const char* colour = palette[i % std::size(palette)];
        const double frac = total > 0 ? slices[i].second / total : 0.0;
        const double next = angle + 2 * std::numbers::pi * frac;
        if (frac >= 1.0 - 1e-12) {
            body += "<circle cx=\"" + fmt("%.1f", cx) + "\" cy=\"" + fmt("%.1f", cy) + "\" r=\"" + fmt("%.1f", r) +
                    "\" fill=\"" + colour + "\"/>\n";
        } else if (frac > 0) {
            body += "<path d=\"M" + fmt("%.2f", cx) + "," + fmt("%.2f", cy) + " L" + fmt("%.2f", cx + r * std::cos(angle)) +
                    "," + fmt("%.2f", cy + r * std::sin(angle)) + " A" + fmt("%.1f", r) + "," + fmt("%.1f", r) + " 0 " +
                    (frac > 0.5 ? "1" : "0") + ",1 " + fmt("%.2f", cx + r * std::cos(next)) + "," +
                    fmt("%.2f", cy + r * std::sin(next)) + " Z\" fill=\"" + colour + "\" stroke=\"white\"/>\n";
        }
        body += "<rect x=\"390\" y=\"" + fmt("%.1f", 80.0 + 22.0 * i) + "\" width=\"14\" height=\"14\" fill=\"" + colour +
                "\"/>\n<text x=\"410\" y=\"" + fmt("%.1f", 92.0 + 22.0 * i) + "\" font-size=\"12\">" +
                escape(slices[i].first) + " " + fmt("%.1f", 100.0 * frac) + "%</text>\n";
        angle = next;
    }
    return document(620, 400, body);
}

} // namespace bsdgan::plot
