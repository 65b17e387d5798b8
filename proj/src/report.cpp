#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "cohortforge/error.hpp"
#include "cohortforge/pipeline.hpp"
#include "cohortforge/textio.hpp"

namespace cohortforge::report {

namespace {

constexpr double kWidth = 720.0, kHeight = 480.0;
constexpr double kLeft = 80.0, kRight = 20.0, kTop = 48.0, kBottom = 56.0;

struct Scale {
    double lo = 0.0, hi = 1.0, px0 = 0.0, px1 = 1.0;
    double operator()(double v) const {
        return px0 + (v - lo) / (hi - lo) * (px1 - px0);
    }
};

std::string px(double v) { return format_fixed(v, 2); }

std::string polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                     const Scale& sx, const Scale& sy, const std::string& color) {
    std::string s = "  <polyline fill=\"none\" stroke=\"" + color +
                    "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ' ';
        s += px(sx(xs[i])) + "," + px(sy(ys[i]));
    }
    return s + "\"/>\n";
}

std::string band_polygon(const BandSeries& b, const Scale& sx, const Scale& sy,
                         const std::string& color) {
    std::string s = "  <polygon fill=\"" + color + "\" fill-opacity=\"0.18\" "
                    "stroke=\"none\" points=\"";
    for (size_t i = 0; i < b.ages.size(); ++i) {
        if (i) s += ' ';
        s += px(sx(b.ages[i])) + "," + px(sy(b.upper[i]));
    }
    for (size_t i = b.ages.size(); i-- > 0;)
        s += " " + px(sx(b.ages[i])) + "," + px(sy(b.lower[i]));
    return s + "\"/>\n";
}

std::string text(double x, double y, const std::string& body, int size,
                 const std::string& anchor = "start") {
    return "  <text x=\"" + px(x) + "\" y=\"" + px(y) + "\" font-family=\"sans-serif\" " +
           "font-size=\"" + std::to_string(size) + "\" text-anchor=\"" + anchor + "\">" +
           body + "</text>\n";
}

}  // namespace

std::string centile_svg(const std::string& metric,
                        const std::map<int, BandSeries>& series_by_group, double q_value,
                        double rate) {
    if (series_by_group.empty()) fail("NO_DATA", "no band series to plot");

    double age_lo = 1e300, age_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
    for (const auto& [g, b] : series_by_group) {
        for (double a : b.ages) {
            age_lo = std::min(age_lo, a);
            age_hi = std::max(age_hi, a);
        }
        for (size_t i = 0; i < b.ages.size(); ++i) {
            y_lo = std::min({y_lo, b.lower[i], b.point[i]});
            y_hi = std::max({y_hi, b.upper[i], b.point[i]});
        }
    }
    double pad = (y_hi - y_lo) * 0.08;
    if (!(pad > 0.0)) pad = std::fabs(y_hi) * 0.1 + 1e-12;
    y_lo -= pad;
    y_hi += pad;

    Scale sx{age_lo, age_hi, kLeft, kWidth - kRight};
    Scale sy{y_lo, y_hi, kHeight - kBottom, kTop};  // y grows downward in SVG

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(kWidth) +
           "\" height=\"" + px(kHeight) + "\" viewBox=\"0 0 " + px(kWidth) + " " +
           px(kHeight) + "\">\n";
    svg += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // Axes.
    svg += "  <line x1=\"" + px(kLeft) + "\" y1=\"" + px(kHeight - kBottom) + "\" x2=\"" +
           px(kWidth - kRight) + "\" y2=\"" + px(kHeight - kBottom) +
           "\" stroke=\"black\"/>\n";
    svg += "  <line x1=\"" + px(kLeft) + "\" y1=\"" + px(kTop) + "\" x2=\"" + px(kLeft) +
           "\" y2=\"" + px(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        double age = age_lo + (age_hi - age_lo) * t / 5.0;
        double x = sx(age);
        svg += "  <line x1=\"" + px(x) + "\" y1=\"" + px(kHeight - kBottom) + "\" x2=\"" +
               px(x) + "\" y2=\"" + px(kHeight - kBottom + 5) + "\" stroke=\"black\"/>\n";
        svg += text(x, kHeight - kBottom + 20, format_fixed(age, 0), 12, "middle");
        double yv = y_lo + (y_hi - y_lo) * t / 5.0;
        double y = sy(yv);
        svg += "  <line x1=\"" + px(kLeft - 5) + "\" y1=\"" + px(y) + "\" x2=\"" +
               px(kLeft) + "\" y2=\"" + px(y) + "\" stroke=\"black\"/>\n";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4g", yv);
        svg += text(kLeft - 8, y + 4, buf, 12, "end");
    }
    svg += text(kWidth / 2, kHeight - 12, "age (years)", 13, "middle");
    svg += text(kWidth / 2, 22, metric, 15, "middle");

    const std::map<int, std::string> colors = {{0, "#1f77b4"}, {1, "#d62728"}};
    const std::map<int, std::string> labels = {{0, "control"}, {1, "case"}};
    for (const auto& [g, b] : series_by_group) {
        const std::string& color = colors.at(g);
        svg += band_polygon(b, sx, sy, color);
        svg += polyline(b.ages, b.point, sx, sy, color);
    }
    double legend_y = kTop + 8.0;
    for (const auto& [g, b] : series_by_group) {
        const std::string& color = colors.at(g);
        svg += "  <line x1=\"" + px(kLeft + 12) + "\" y1=\"" + px(legend_y) + "\" x2=\"" +
               px(kLeft + 40) + "\" y2=\"" + px(legend_y) + "\" stroke=\"" + color +
               "\" stroke-width=\"2\"/>\n";
        svg += text(kLeft + 46, legend_y + 4, labels.at(g), 12);
        legend_y += 16.0;
    }

    char annotation[96];
    std::snprintf(annotation, sizeof annotation, "q=%.3f, %ssignificant at %.2g", q_value,
                  q_value <= rate ? "" : "not ", rate);
    svg += text(kWidth - kRight - 6, kTop + 8, annotation, 13, "end");
    svg += "</svg>\n";
    return svg;
}

}  // namespace cohortforge::report
