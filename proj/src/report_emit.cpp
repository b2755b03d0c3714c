#include "opsim/orchestrator.hpp"

#include <cstdio>
#include <fstream>

namespace opsim {

namespace {

std::string xml_escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        case '\'': out += "&apos;"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

std::string fmt(double value, int digits = 2) {
    char buffer[48];
    std::snprintf(buffer, sizeof buffer, "%.*f", digits, value);
    return buffer;
}

const std::vector<std::string>& palette() {
    static const std::vector<std::string> colors = {"#4e79a7", "#f28e2b", "#59a14f",
                                                    "#e15759", "#76b7b2", "#b07aa1",
                                                    "#edc948", "#9c755f"};
    return colors;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
}

/// Grouped bar chart: one group per option, one bar per series (models then
/// the expected distribution). Fixed layout and formatting keep the bytes
/// stable for identical input.
std::string render_chart_svg(const QuestionSpec& question,
                             const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    const double width = 960.0;
    const double height = 420.0;
    const double left = 60.0;
    const double top = 50.0;
    const double plot_w = width - left - 30.0;
    const double plot_h = height - top - 80.0;

    double max_value = 0.0;
    for (const auto& [_, values] : series) {
        for (double v : values) max_value = std::max(max_value, v);
    }
    double y_max = 0.1;
    while (y_max < max_value - 1e-12) y_max += 0.1;

    const std::size_t groups = static_cast<std::size_t>(question.option_count());
    const double group_w = plot_w / static_cast<double>(groups);
    const double bar_w = group_w * 0.8 / static_cast<double>(series.size());

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width, 0) + "\" height=\"" +
           fmt(height, 0) + "\" viewBox=\"0 0 " + fmt(width, 0) + " " + fmt(height, 0) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + fmt(width / 2.0) + "\" y=\"24\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"16\">" +
           xml_escape(question.question_id()) + "</text>\n";

    // y axis with 5 gridlines
    for (int tick = 0; tick <= 4; ++tick) {
        const double frac = static_cast<double>(tick) / 4.0;
        const double y = top + plot_h * (1.0 - frac);
        svg += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(y) + "\" x2=\"" + fmt(left + plot_w) +
               "\" y2=\"" + fmt(y) + "\" stroke=\"#dddddd\"/>\n";
        svg += "<text x=\"" + fmt(left - 8.0) + "\" y=\"" + fmt(y + 4.0) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               fmt(y_max * frac) + "</text>\n";
    }

    for (std::size_t g = 0; g < groups; ++g) {
        const double group_x = left + group_w * static_cast<double>(g) + group_w * 0.1;
        for (std::size_t s = 0; s < series.size(); ++s) {
            const double value = series[s].second[g];
            const double bar_h = plot_h * (value / y_max);
            const double x = group_x + bar_w * static_cast<double>(s);
            const double y = top + plot_h - bar_h;
            svg += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(bar_w) +
                   "\" height=\"" + fmt(bar_h) + "\" fill=\"" +
                   palette()[s % palette().size()] + "\"/>\n";
        }
        const std::string label = question.options()[g].short_label;
        svg += "<text x=\"" + fmt(group_x + group_w * 0.4) + "\" y=\"" +
               fmt(top + plot_h + 18.0) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               xml_escape(label) + "</text>\n";
    }

    // legend
    double legend_x = left;
    const double legend_y = height - 28.0;
    for (std::size_t s = 0; s < series.size(); ++s) {
        svg += "<rect x=\"" + fmt(legend_x) + "\" y=\"" + fmt(legend_y - 10.0) +
               "\" width=\"12\" height=\"12\" fill=\"" + palette()[s % palette().size()] +
               "\"/>\n";
        svg += "<text x=\"" + fmt(legend_x + 16.0) + "\" y=\"" + fmt(legend_y) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + xml_escape(series[s].first) +
               "</text>\n";
        legend_x += 18.0 + 7.0 * static_cast<double>(series[s].first.size()) + 24.0;
    }

    svg += "</svg>\n";
    return svg;
}

} // namespace

std::vector<std::filesystem::path> emit_report(const MetricReport& report,
                                               const ExperimentResult& result,
                                               const ReferenceDataset& reference,
                                               const QuestionRegistry& registry,
                                               const std::set<std::string>& formats,
                                               const std::filesystem::path& out_dir) {
    for (const auto& format : formats) {
        if (format != "csv" && format != "json" && format != "svg") {
            throw ValidationError("unknown report format: " + format);
        }
    }
    std::vector<std::filesystem::path> written;
    if (formats.empty()) return written;

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw IoError("cannot create output directory: " + out_dir.string());
    }

    if (formats.count("csv")) {
        const auto per_question = out_dir / "metrics_per_question.csv";
        write_text_file(per_question, report.rows_csv());
        written.push_back(per_question);
        const auto summary = out_dir / "metrics_summary.csv";
        write_text_file(summary, report.aggregates_csv());
        written.push_back(summary);
    }
    if (formats.count("json")) {
        const auto path = out_dir / "metrics.json";
        write_text_file(path, report.to_json().dump(2) + "\n");
        written.push_back(path);
    }
    if (formats.count("svg")) {
        for (const auto& question : registry.all()) {
            std::vector<std::pair<std::string, std::vector<double>>> series;
            for (const auto& [label, questions_map] : result.distributions) {
                auto cell = questions_map.find(question.question_id());
                if (cell == questions_map.end() || cell->second.aborted) continue;
                series.emplace_back(label, cell->second.distribution.proportions);
            }
            if (series.empty()) continue;
            const ReferenceEntry* entry = reference.find(question.question_id());
            if (entry) series.emplace_back("Expected", entry->distribution.proportions);
            const auto path = out_dir / ("chart_" + question.question_id() + ".svg");
            write_text_file(path, render_chart_svg(question, series));
            written.push_back(path);
        }
    }
    return written;
}

} // namespace opsim
