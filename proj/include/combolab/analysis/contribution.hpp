#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace combolab::analysis {

enum class Metric { Mi, Tp };
std::string to_string(Metric m);
Metric parse_metric(std::string_view text);

class UndefinedRatioError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct ContributionReport {
    Metric metric = Metric::Mi;
    std::vector<std::string> sites;
    std::vector<double> values;
    std::vector<double> delta_mha;  // per layer
    std::vector<double> delta_ffn;
    std::vector<double> cumulative_mha;  // running sums of clamped increments
    std::vector<double> cumulative_ffn;
    double ffn_ratio = 0.0;
    double mha_ratio = 0.0;
    double signed_mha_sum = 0.0;
    double signed_ffn_sum = 0.0;
    // Signed share; empty when the signed sums cancel out.
    std::optional<double> signed_ffn_ratio;

    std::size_t layers() const { return delta_ffn.size(); }
};

// Sites must read "embed", "L1.mha", "L1.ffn", ..., "LL.ffn". Negative
// increments are clamped to zero in the ratio. Throws UndefinedRatioError
// when both clamped sums are zero.
ContributionReport contribution_ratio(const std::vector<std::string>& sites, const std::vector<double>& values,
                                      Metric metric);

// Columns: site, metric, value, delta, kind; then a summary row.
void write_report_csv(const std::filesystem::path& path, const ContributionReport& report);
std::string report_csv(const ContributionReport& report);

struct SvgSeries {
    std::string label;
    std::vector<double> values;
};

// Line chart with one polyline per series; x positions are point indices,
// labelled by `x_labels` when given.
std::string line_chart_svg(const std::string& title, const std::vector<SvgSeries>& series,
                           const std::vector<std::string>& x_labels = {});
// Cumulative clamped MHA and FFN increments per layer.
std::string contribution_svg(const ContributionReport& report);

}  // namespace combolab::analysis
