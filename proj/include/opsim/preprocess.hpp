#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "opsim/survey_data.hpp"

namespace opsim {

enum class ImputeStrategy { sample_from_valid, mode };

std::string_view to_string(ImputeStrategy strategy);
ImputeStrategy impute_strategy_from_string(std::string_view text);

/// Stage counters and category histograms for one pipeline run. The counts
/// satisfy: loaded = final_panel_size - oversampled_added + dropped_invalid
/// + duplicates_removed.
struct PanelBuildReport {
    long long loaded = 0;
    long long dropped_invalid = 0;
    long long imputed_fields = 0;
    long long duplicates_removed = 0;
    long long oversampled_added = 0;
    long long final_panel_size = 0;
    std::uint64_t seed = 0;
    std::map<std::string, std::map<std::string, long long>> histograms_before;
    std::map<std::string, std::map<std::string, long long>> histograms_after;
    long long histogram_before_total = 0;
    long long histogram_after_total = 0;

    /// Throws ValidationError when the arithmetic identity does not hold.
    void check_identity() const;
    nlohmann::json to_json() const;
};

struct DroppedRecord {
    SurveyRecord record;
    std::string reason;
};

struct CleanResult {
    std::vector<SurveyRecord> kept;
    std::vector<DroppedRecord> dropped;
};

struct BalanceConfig {
    std::vector<std::string> attributes; // canonical categorical attribute names
    double floor = 0.0;                  // minimum category share of the final panel
};

struct PreprocessConfig {
    ImputeStrategy strategy = ImputeStrategy::sample_from_valid;
    std::uint64_t seed = 0;
    BalanceConfig balance;
};

/// Drops rows with corrupt values (unparseable numerics, out-of-vocabulary
/// categoricals that are not sentinel-tagged, control characters), each with
/// a reason. Kept rows are byte-identical to their input.
CleanResult clean_records(const std::vector<SurveyRecord>& records, const Vocabulary& vocab);

/// Replaces every sentinel-tagged attribute cell with a concrete value. The
/// default strategy draws from the field's empirical distribution of valid
/// values; `mode` takes the most frequent one. Throws when a field has
/// sentinels but no valid values at all.
std::vector<SurveyRecord> impute_invalid(std::vector<SurveyRecord> records,
                                         ImputeStrategy strategy, std::uint64_t seed,
                                         PanelBuildReport* report = nullptr);

/// Removes exact duplicates on the canonical 11-attribute tuple, keeping the
/// first occurrence in stable order.
std::vector<SurveyRecord> dedupe_profiles(const std::vector<SurveyRecord>& records,
                                          const Vocabulary& vocab,
                                          PanelBuildReport* report = nullptr);

/// Categorical oversampling: minority categories of each configured
/// attribute are raised to the floor by duplicating seeded-random minority
/// rows and re-drawing their other attributes from the minority subgroup's
/// marginals. Never removes a row.
std::vector<SurveyRecord> balance_panel(std::vector<SurveyRecord> records,
                                        const BalanceConfig& config, const Vocabulary& vocab,
                                        std::uint64_t seed, PanelBuildReport* report = nullptr);

/// Seeded Fisher-Yates permutation.
std::vector<SurveyRecord> shuffle_panel(std::vector<SurveyRecord> records, std::uint64_t seed);

/// Canonical vocabulary mapping plus Profile construction; one Profile per
/// record. Throws naming field and row when a violation survived upstream.
std::vector<Profile> derive_profiles(const std::vector<SurveyRecord>& records,
                                     const Vocabulary& vocab, const QuestionRegistry& registry,
                                     PanelBuildReport* report = nullptr);

struct PipelineOutput {
    std::vector<Profile> panel;
    PanelBuildReport report;
    std::vector<DroppedRecord> dropped;
};

/// clean -> impute -> dedupe -> balance -> shuffle -> derive.
PipelineOutput run_pipeline(const std::vector<SurveyRecord>& records,
                            const PreprocessConfig& config, const Vocabulary& vocab,
                            const QuestionRegistry& registry);

} // namespace opsim
