#include "opsim/orchestrator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace opsim {

namespace {

constexpr double kMeanTolerance = 0.005;
constexpr double kChiSquareTolerance = 0.02;

double mean_of(const std::vector<double>& values) {
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

ConsistencyCheck make_check(std::string name, double computed, double reported, double pass_tol,
                            double flag_tol) {
    ConsistencyCheck check;
    check.name = std::move(name);
    check.computed = computed;
    check.reported = reported;
    check.residual = std::abs(computed - reported);
    check.tolerance = flag_tol;
    if (check.residual <= pass_tol) {
        check.status = CheckStatus::pass;
    } else if (check.residual <= flag_tol) {
        check.status = CheckStatus::flag;
    } else {
        check.status = CheckStatus::fail;
    }
    return check;
}

} // namespace

std::string_view to_string(CheckStatus status) {
    switch (status) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::flag: return "flag";
    case CheckStatus::fail: return "FAIL";
    }
    return "unknown";
}

bool ConsistencyReport::hard_failure() const {
    for (const auto& check : checks) {
        if (check.status == CheckStatus::fail) return true;
    }
    return false;
}

std::string ConsistencyReport::to_text() const {
    std::ostringstream out;
    for (const auto& check : checks) {
        char line[256];
        std::snprintf(line, sizeof line,
                      "%-4s %-42s computed=%.6f reported=%.6f residual=%.6f tol=%.3f",
                      std::string(to_string(check.status)).c_str(), check.name.c_str(),
                      check.computed, check.reported, check.residual, check.tolerance);
        out << line << '\n';
    }
    return out.str();
}

nlohmann::json ConsistencyReport::to_json() const {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& check : checks) {
        doc.push_back({{"name", check.name},
                       {"computed", check.computed},
                       {"reported", check.reported},
                       {"residual", check.residual},
                       {"tolerance", check.tolerance},
                       {"status", std::string(to_string(check.status))}});
    }
    return doc;
}

ConsistencyReport consistency_check(const std::filesystem::path& reported_metrics_path) {
    const std::filesystem::path path =
        reported_metrics_path.empty() ? bundled_reported_metrics_path() : reported_metrics_path;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("bundled metric tables not found: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError("invalid metric tables " + path.string() + ": " + ex.what());
    }

    const auto question_order = doc.at("question_order").get<std::vector<std::string>>();
    const auto& per_question = doc.at("per_question");
    const auto& summary = doc.at("summary_means");

    static const std::vector<std::string> kMetrics = {"chi_square", "cosine", "jaccard", "kl"};

    ConsistencyReport report;
    for (const auto& [regime, models] : per_question.items()) {
        for (const auto& [model, columns] : models.items()) {
            for (const auto& metric : kMetrics) {
                const auto values = columns.at(metric).get<std::vector<double>>();
                if (values.size() != question_order.size()) {
                    throw ValidationError("column " + regime + "/" + model + "/" + metric +
                                          " has " + std::to_string(values.size()) + " entries");
                }
                const double computed = mean_of(values);
                const double reported = summary.at(regime).at(model).at(metric).get<double>();
                const double flag_tol =
                    metric == "chi_square" ? kChiSquareTolerance : kMeanTolerance;
                report.checks.push_back(make_check(regime + "/" + model + "/" + metric, computed,
                                                   reported, kMeanTolerance, flag_tol));
            }
        }
    }

    // Binary-question Jaccard means across the three models.
    const auto& binary = doc.at("binary_jaccard_means");
    for (const auto& [question_id, regimes] : binary.items()) {
        std::size_t index = question_order.size();
        for (std::size_t i = 0; i < question_order.size(); ++i) {
            if (question_order[i] == question_id) {
                index = i;
                break;
            }
        }
        if (index == question_order.size()) {
            throw ValidationError("binary jaccard check names unknown question: " + question_id);
        }
        for (const auto& [regime, reported_value] : regimes.items()) {
            std::vector<double> per_model;
            for (const auto& [model, columns] : per_question.at(regime).items()) {
                (void)model;
                per_model.push_back(columns.at("jaccard").at(index).get<double>());
            }
            report.checks.push_back(make_check("binary_jaccard/" + question_id + "/" + regime,
                                               mean_of(per_model), reported_value.get<double>(),
                                               kMeanTolerance, kMeanTolerance));
        }
    }
    return report;
}

} // namespace opsim
