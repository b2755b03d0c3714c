#include "opsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace opsim {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b,
                         const char* operation) {
    if (a.size() != b.size()) {
        throw ValidationError(std::string(operation) + ": length mismatch (" +
                              std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
    if (a.empty()) throw ValidationError(std::string(operation) + ": empty input");
}

void require_non_negative(std::span<const double> v, const char* operation) {
    for (double x : v) {
        if (!std::isfinite(x) || x < 0.0) {
            throw ValidationError(std::string(operation) +
                                  ": entries must be finite and non-negative");
        }
    }
}

double sum_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

std::string format_fixed(double value, int digits) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.*f", digits, value);
    return buffer;
}

} // namespace

std::string_view to_string(ChiSquareScale scale) {
    switch (scale) {
    case ChiSquareScale::percent: return "percent";
    case ChiSquareScale::fraction: return "fraction";
    case ChiSquareScale::counts: return "counts";
    }
    return "unknown";
}

std::string_view to_string(JaccardMode mode) {
    return mode == JaccardMode::weighted ? "weighted" : "support_threshold";
}

double chi_square_statistic(std::span<const double> observed, std::span<const double> expected,
                            ChiSquareScale scale) {
    require_same_length(observed, expected, "chi_square_statistic");
    require_non_negative(observed, "chi_square_statistic");
    require_non_negative(expected, "chi_square_statistic");

    const double observed_sum = sum_of(observed);
    const double expected_sum = sum_of(expected);
    if (expected_sum <= 0.0) {
        throw ValidationError("chi_square_statistic: expected vector is all zero");
    }
    if (observed_sum <= 0.0) {
        throw ValidationError("chi_square_statistic: observed vector is all zero");
    }

    // Expected as fractions, floored at 1e-9 of total mass, renormalized.
    std::vector<double> expected_frac(expected.begin(), expected.end());
    for (double& e : expected_frac) e = std::max(e / expected_sum, 1e-9);
    const double floored_sum = sum_of(expected_frac);
    for (double& e : expected_frac) e /= floored_sum;

    double observed_target = 100.0;
    double expected_target = 100.0;
    switch (scale) {
    case ChiSquareScale::percent: break;
    case ChiSquareScale::fraction:
        observed_target = 1.0;
        expected_target = 1.0;
        break;
    case ChiSquareScale::counts:
        observed_target = observed_sum;
        expected_target = observed_sum;
        break;
    }

    double statistic = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const double o = observed[i] / observed_sum * observed_target;
        const double e = expected_frac[i] * expected_target;
        const double d = o - e;
        statistic += d * d / e;
    }
    return statistic;
}

// ---------------------------------------------------------------------------
// Regularized incomplete gamma (series + Lentz continued fraction)
// ---------------------------------------------------------------------------

namespace {

constexpr double kGammaEps = 1e-16;
constexpr int kGammaMaxIter = 10000;

// Lower regularized P(a, x) by power series; valid for x < a + 1.
double gamma_p_series(double a, double x) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int i = 0; i < kGammaMaxIter; ++i) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * kGammaEps) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper regularized Q(a, x) by continued fraction; valid for x >= a + 1.
double gamma_q_continued_fraction(double a, double x) {
    const double fpmin = std::numeric_limits<double>::min() / kGammaEps;
    double b = x + 1.0 - a;
    double c = 1.0 / fpmin;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= kGammaMaxIter; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < fpmin) d = fpmin;
        c = b + an / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kGammaEps) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace

double regularized_gamma_q(double a, double x) {
    if (!(a > 0.0) || !std::isfinite(a)) {
        throw ValidationError("regularized_gamma_q: shape must be positive");
    }
    if (!(x >= 0.0) || !std::isfinite(x)) {
        throw ValidationError("regularized_gamma_q: x must be non-negative");
    }
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_continued_fraction(a, x);
}

double chi_square_pvalue(double statistic, int degrees_of_freedom) {
    if (degrees_of_freedom < 1) {
        throw ValidationError("chi_square_pvalue: degrees of freedom must be >= 1");
    }
    if (!(statistic >= 0.0) || !std::isfinite(statistic)) {
        throw ValidationError("chi_square_pvalue: statistic must be non-negative");
    }
    double p = regularized_gamma_q(degrees_of_freedom / 2.0, statistic / 2.0);
    return std::clamp(p, 0.0, 1.0);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    require_same_length(a, b, "cosine_similarity");
    double dot = 0.0;
    double norm_a = 0.0;
    double norm_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
            throw ValidationError("cosine_similarity: entries must be finite");
        }
        dot += a[i] * b[i];
        norm_a += a[i] * a[i];
        norm_b += b[i] * b[i];
    }
    if (norm_a <= 0.0 || norm_b <= 0.0) {
        throw ValidationError("cosine_similarity: zero-norm vector");
    }
    return dot / (std::sqrt(norm_a) * std::sqrt(norm_b));
}

double jaccard_index(std::span<const double> a, std::span<const double> b, JaccardMode mode,
                     double threshold) {
    require_same_length(a, b, "jaccard_index");
    require_non_negative(a, "jaccard_index");
    require_non_negative(b, "jaccard_index");

    if (mode == JaccardMode::weighted) {
        double min_sum = 0.0;
        double max_sum = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            min_sum += std::min(a[i], b[i]);
            max_sum += std::max(a[i], b[i]);
        }
        if (max_sum <= 0.0) throw ValidationError("jaccard_index: both vectors are all zero");
        return min_sum / max_sum;
    }

    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ValidationError("jaccard_index: support threshold must be in (0,1)");
    }
    std::vector<double> pa = normalize_distribution(a);
    std::vector<double> pb = normalize_distribution(b);
    int intersection = 0;
    int union_size = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const bool in_a = pa[i] >= threshold;
        const bool in_b = pb[i] >= threshold;
        if (in_a && in_b) ++intersection;
        if (in_a || in_b) ++union_size;
    }
    if (union_size == 0) throw ValidationError("jaccard_index: empty union in threshold mode");
    return static_cast<double>(intersection) / static_cast<double>(union_size);
}

double kl_divergence(std::span<const double> p, std::span<const double> q, double epsilon) {
    require_same_length(p, q, "kl_divergence");
    if (!(epsilon > 0.0)) throw ValidationError("kl_divergence: epsilon must be positive");

    std::vector<double> pf = normalize_distribution(p);
    std::vector<double> qf = normalize_distribution(q);
    double p_sum = 0.0;
    double q_sum = 0.0;
    for (std::size_t i = 0; i < pf.size(); ++i) {
        pf[i] = std::max(pf[i], epsilon);
        qf[i] = std::max(qf[i], epsilon);
        p_sum += pf[i];
        q_sum += qf[i];
    }
    double divergence = 0.0;
    for (std::size_t i = 0; i < pf.size(); ++i) {
        const double pi = pf[i] / p_sum;
        const double qi = qf[i] / q_sum;
        divergence += pi * std::log(pi / qi);
    }
    // Gibbs: the exact value is >= 0; tiny negative residue is rounding.
    return divergence < 0.0 && divergence > -1e-15 ? 0.0 : divergence;
}

MetricRow evaluate_question(const ResponseDistribution& synthetic,
                            const ResponseDistribution& reference, const MetricModes& modes) {
    if (!synthetic.question_id.empty() && !reference.question_id.empty() &&
        synthetic.question_id != reference.question_id) {
        throw ValidationError("evaluate_question: question mismatch (" + synthetic.question_id +
                              " vs " + reference.question_id + ")");
    }
    MetricRow row;
    row.question_id =
        synthetic.question_id.empty() ? reference.question_id : synthetic.question_id;
    row.option_count = static_cast<int>(synthetic.proportions.size());
    row.chi_square =
        chi_square_statistic(synthetic.proportions, reference.proportions, modes.chi_scale);
    row.p_value = chi_square_pvalue(row.chi_square, std::max(1, row.option_count - 1));
    row.cosine = cosine_similarity(synthetic.proportions, reference.proportions);
    row.jaccard = jaccard_index(synthetic.proportions, reference.proportions, modes.jaccard_mode,
                                modes.jaccard_threshold);
    row.kl_divergence =
        kl_divergence(synthetic.proportions, reference.proportions, modes.kl_epsilon);
    return row;
}

MetricAggregate aggregate_model_scores(const std::vector<MetricRow>& rows) {
    if (rows.empty()) throw ValidationError("aggregate_model_scores: no rows");
    MetricAggregate aggregate;
    aggregate.model_label = rows.front().model_label;
    aggregate.question_count = static_cast<int>(rows.size());
    for (const auto& row : rows) {
        aggregate.chi_square += row.chi_square;
        aggregate.p_value += row.p_value;
        aggregate.cosine += row.cosine;
        aggregate.jaccard += row.jaccard;
        aggregate.kl_divergence += row.kl_divergence;
    }
    const double n = static_cast<double>(rows.size());
    aggregate.chi_square /= n;
    aggregate.p_value /= n;
    aggregate.cosine /= n;
    aggregate.jaccard /= n;
    aggregate.kl_divergence /= n;
    return aggregate;
}

std::string MetricReport::rows_csv() const {
    std::string out = "model,question,options,chi_square,p_value,cosine_similarity,"
                      "jaccard_index,kl_divergence\n";
    for (const auto& row : rows) {
        out += row.model_label + "," + row.question_id + "," + std::to_string(row.option_count) +
               "," + format_fixed(row.chi_square, 6) + "," + format_fixed(row.p_value, 6) + "," +
               format_fixed(row.cosine, 6) + "," + format_fixed(row.jaccard, 6) + "," +
               format_fixed(row.kl_divergence, 6) + "\n";
    }
    return out;
}

std::string MetricReport::aggregates_csv() const {
    std::string out = "model,questions,chi_square,p_value,cosine_similarity,"
                      "jaccard_index,kl_divergence\n";
    for (const auto& agg : aggregates) {
        out += agg.model_label + "," + std::to_string(agg.question_count) + "," +
               format_fixed(agg.chi_square, 6) + "," + format_fixed(agg.p_value, 6) + "," +
               format_fixed(agg.cosine, 6) + "," + format_fixed(agg.jaccard, 6) + "," +
               format_fixed(agg.kl_divergence, 6) + "\n";
    }
    return out;
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json doc;
    doc["metadata"] = {{"chi_square_scale", to_string(modes.chi_scale)},
                       {"jaccard_mode", to_string(modes.jaccard_mode)},
                       {"kl_epsilon", modes.kl_epsilon},
                       {"kl_log_base", "e"},
                       {"p_value_df", "option_count - 1"}};
    if (modes.jaccard_mode == JaccardMode::support_threshold) {
        doc["metadata"]["jaccard_threshold"] = modes.jaccard_threshold;
    }
    doc["rows"] = nlohmann::json::array();
    for (const auto& row : rows) {
        doc["rows"].push_back({{"model", row.model_label},
                               {"question", row.question_id},
                               {"options", row.option_count},
                               {"chi_square", row.chi_square},
                               {"p_value", row.p_value},
                               {"cosine_similarity", row.cosine},
                               {"jaccard_index", row.jaccard},
                               {"kl_divergence", row.kl_divergence}});
    }
    doc["aggregates"] = nlohmann::json::array();
    for (const auto& agg : aggregates) {
        doc["aggregates"].push_back({{"model", agg.model_label},
                                     {"questions", agg.question_count},
                                     {"chi_square", agg.chi_square},
                                     {"p_value", agg.p_value},
                                     {"cosine_similarity", agg.cosine},
                                     {"jaccard_index", agg.jaccard},
                                     {"kl_divergence", agg.kl_divergence}});
    }
    return doc;
}

} // namespace opsim
