#include "combolab/analysis/contribution.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace combolab::analysis {

std::string to_string(Metric m) { return m == Metric::Mi ? "mi" : "tp"; }

Metric parse_metric(std::string_view text) {
    if (text == "mi" || text == "MI") return Metric::Mi;
    if (text == "tp" || text == "TP") return Metric::Tp;
    throw std::invalid_argument(fmt::format("unknown metric '{}' (expected mi or tp)", text));
}

ContributionReport contribution_ratio(const std::vector<std::string>& sites, const std::vector<double>& values,
                                      Metric metric) {
    if (sites.size() != values.size()) throw std::invalid_argument("contribution_ratio: sites and values differ in length");
    if (sites.size() < 3 || sites.size() % 2 == 0 || sites[0] != "embed") {
        throw std::invalid_argument("contribution_ratio: expected embed followed by mha/ffn pairs");
    }
    ContributionReport r;
    r.metric = metric;
    r.sites = sites;
    r.values = values;
    const std::size_t layers = (sites.size() - 1) / 2;
    double clamped_mha = 0.0, clamped_ffn = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t m = 1 + 2 * l, f = m + 1;
        if (sites[m] != fmt::format("L{}.mha", l + 1) || sites[f] != fmt::format("L{}.ffn", l + 1)) {
            throw std::invalid_argument(fmt::format("contribution_ratio: unexpected sites '{}', '{}' at layer {}",
                                                    sites[m], sites[f], l + 1));
        }
        const double dm = values[m] - values[m - 1];
        const double df = values[f] - values[m];
        r.delta_mha.push_back(dm);
        r.delta_ffn.push_back(df);
        r.signed_mha_sum += dm;
        r.signed_ffn_sum += df;
        clamped_mha += std::max(dm, 0.0);
        clamped_ffn += std::max(df, 0.0);
        r.cumulative_mha.push_back(clamped_mha);
        r.cumulative_ffn.push_back(clamped_ffn);
    }
    const double total = clamped_mha + clamped_ffn;
    if (total == 0.0) {
        throw UndefinedRatioError(
            fmt::format("{} contribution ratio is undefined: no layer increases the metric", to_string(metric)));
    }
    r.ffn_ratio = clamped_ffn / total;
    r.mha_ratio = 1.0 - r.ffn_ratio;
    const double signed_total = r.signed_mha_sum + r.signed_ffn_sum;
    if (signed_total != 0.0) r.signed_ffn_ratio = r.signed_ffn_sum / signed_total;
    return r;
}

std::string report_csv(const ContributionReport& report) {
    const std::string metric = to_string(report.metric);
    std::string out = "site,metric,value,delta,kind\n";
    out += fmt::format("embed,{},{:.17g},,\n", metric, report.values[0]);
    for (std::size_t l = 0; l < report.layers(); ++l) {
        out += fmt::format("{},{},{:.17g},{:.17g},mha\n", report.sites[1 + 2 * l], metric, report.values[1 + 2 * l],
                           report.delta_mha[l]);
        out += fmt::format("{},{},{:.17g},{:.17g},ffn\n", report.sites[2 + 2 * l], metric, report.values[2 + 2 * l],
                           report.delta_ffn[l]);
    }
    out += fmt::format("summary,{},{:.17g},{:.17g},ffn_ratio\n", metric, report.ffn_ratio, report.signed_ffn_sum);
    out += fmt::format("summary,{},{:.17g},{:.17g},mha_ratio\n", metric, report.mha_ratio, report.signed_mha_sum);
    return out;
}

void write_report_csv(const std::filesystem::path& path, const ContributionReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << report_csv(report);
}

std::string line_chart_svg(const std::string& title, const std::vector<SvgSeries>& series,
                           const std::vector<std::string>& x_labels) {
    constexpr double w = 480, h = 320, left = 50, right = 20, top = 40, bottom = 40;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::size_t points = 0;
    double lo = 0.0, hi = 0.0;
    for (const auto& s : series) {
        points = std::max(points, s.values.size());
        for (double v : s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi == lo) hi = lo + 1.0;
    const double span_x = points > 1 ? static_cast<double>(points - 1) : 1.0;
    auto px = [&](std::size_t i) { return left + (w - left - right) * static_cast<double>(i) / span_x; };
    auto py = [&](double v) { return top + (h - top - bottom) * (hi - v) / (hi - lo); };

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
        "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>\n",
        w, h, w / 2, title);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left, h - bottom,
                       w - right);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top, h - bottom);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", left - 4, top + 4, hi);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", left - 4, h - bottom, lo);
    for (std::size_t i = 0; i < points; ++i) {
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px(i), h - bottom + 16,
                           i < x_labels.size() ? x_labels[i] : std::to_string(i));
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = colors[s % std::size(colors)];
        std::string pts;
        for (std::size_t i = 0; i < series[s].values.size(); ++i) {
            pts += fmt::format("{}{:.1f},{:.1f}", pts.empty() ? "" : " ", px(i), py(series[s].values[i]));
        }
        svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", color, pts);
        svg += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", left + 10, top + 14 * (s + 1), color,
                           series[s].label);
    }
    svg += "</svg>\n";
    return svg;
}

std::string contribution_svg(const ContributionReport& report) {
    SvgSeries mha{"MHA", {0.0}}, ffn{"FFN", {0.0}};
    mha.values.insert(mha.values.end(), report.cumulative_mha.begin(), report.cumulative_mha.end());
    ffn.values.insert(ffn.values.end(), report.cumulative_ffn.begin(), report.cumulative_ffn.end());
    return line_chart_svg(fmt::format("cumulative {} increments (FFN share {:.3f})", to_string(report.metric),
                                      report.ffn_ratio),
                          {mha, ffn});
}

}  // namespace combolab::analysis
