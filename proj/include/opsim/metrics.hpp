#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "opsim/survey_data.hpp"

namespace opsim {

/// Rescaling applied to both vectors before the chi-square sum. `percent`
/// scales to sum 100 (the default reporting convention), `fraction` to sum 1,
/// `counts` keeps the observed vector raw and scales expected to its total.
enum class ChiSquareScale { percent, fraction, counts };

enum class JaccardMode { weighted, support_threshold };

std::string_view to_string(ChiSquareScale scale);
std::string_view to_string(JaccardMode mode);

struct MetricModes {
    ChiSquareScale chi_scale = ChiSquareScale::percent;
    JaccardMode jaccard_mode = JaccardMode::weighted;
    double jaccard_threshold = 0.05; // support_threshold mode only
    double kl_epsilon = 1e-9;
};

/// Sum (O_i - E_i)^2 / E_i after rescaling. Expected entries are floored at
/// 1e-9 of total mass and renormalized so printed 0% cells stay finite.
double chi_square_statistic(std::span<const double> observed, std::span<const double> expected,
                            ChiSquareScale scale = ChiSquareScale::percent);

/// Upper-tail probability of the chi-square distribution,
/// Q(df/2, statistic/2) via the regularized incomplete gamma function.
double chi_square_pvalue(double statistic, int degrees_of_freedom);

/// Q(a, x) = Gamma(a, x) / Gamma(a). Exposed so tests can pit it against an
/// independent quadrature oracle.
double regularized_gamma_q(double a, double x);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Weighted mode: sum(min)/sum(max) over the raw vectors. Threshold mode:
/// options with proportion >= tau form the two sets, |A&B|/|A|B| on them.
double jaccard_index(std::span<const double> a, std::span<const double> b,
                     JaccardMode mode = JaccardMode::weighted, double threshold = 0.05);

/// D_KL(P||Q) in nats. Both vectors are normalized, floored by epsilon and
/// renormalized before the sum.
double kl_divergence(std::span<const double> p, std::span<const double> q,
                     double epsilon = 1e-9);

struct MetricRow {
    std::string model_label;
    std::string question_id;
    int option_count = 0;
    double chi_square = 0.0;
    double p_value = 0.0;
    double cosine = 0.0;
    double jaccard = 0.0;
    double kl_divergence = 0.0;
};

struct MetricAggregate {
    std::string model_label;
    int question_count = 0;
    double chi_square = 0.0;
    double p_value = 0.0;
    double cosine = 0.0;
    double jaccard = 0.0;
    double kl_divergence = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    std::vector<MetricAggregate> aggregates;
    MetricModes modes;

    std::string rows_csv() const;
    std::string aggregates_csv() const;
    nlohmann::json to_json() const;
};

/// All four metrics plus the p-value (df = option count - 1) in one pass.
MetricRow evaluate_question(const ResponseDistribution& synthetic,
                            const ResponseDistribution& reference,
                            const MetricModes& modes = {});

/// Unweighted arithmetic mean per metric over one model's question rows.
MetricAggregate aggregate_model_scores(const std::vector<MetricRow>& rows);

} // namespace opsim
