#pragma once

#include <set>

#include "opsim/bundled.hpp"
#include "opsim/metrics.hpp"
#include "opsim/preprocess.hpp"
#include "opsim/respondent.hpp"

namespace opsim {

struct PanelSource {
    enum class Kind { file, generated } kind = Kind::generated;
    std::filesystem::path path; // file kind
    int size = 100;             // generated kind
};

struct ExperimentConfig {
    PanelSource panel;
    std::vector<std::string> question_ids; // empty = every registered question
    std::vector<BackendConfig> models;
    std::uint64_t experiment_seed = 0;
    std::filesystem::path output_dir = "out";
    std::filesystem::path reference_path; // empty = bundled reference
    std::filesystem::path data_dir;       // empty = bundled default
    int workers = 8;
    double abort_parse_failure_ratio = 0.5;
    bool write_transcripts = true;

    void validate() const;
    static ExperimentConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

struct QuestionResult {
    ResponseDistribution distribution;
    bool aborted = false;
    std::string abort_reason;
};

struct ExperimentResult {
    nlohmann::json config_snapshot;
    std::string template_version;
    std::uint64_t seed = 0;
    long long panel_size = 0;
    std::map<std::string, std::map<std::string, QuestionResult>> distributions; // model -> question
    std::map<std::string, std::filesystem::path> transcript_files;              // model -> store

    nlohmann::json to_json() const;
    void save(const std::filesystem::path& path) const;
    static ExperimentResult load(const std::filesystem::path& path);
};

/// Seeded synthetic panel drawn uniformly from the vocabulary.
std::vector<Profile> generate_panel(int size, std::uint64_t seed, const Vocabulary& vocab,
                                    const QuestionRegistry& registry);

/// Asks every (profile, question) pair per model through a bounded worker
/// pool, tallies per-question distributions (order-insensitive), persists
/// transcripts after the run barrier, and writes result files to the output
/// directory.
ExperimentResult run_experiment(const ExperimentConfig& config, const Vocabulary& vocab,
                                const QuestionRegistry& registry);

/// Proportions over successfully parsed answers; failures count as excluded.
ResponseDistribution tally_distribution(const std::vector<ParseResult>& answers,
                                        const QuestionSpec& question);

/// Per (model, question) metric rows against the reference, plus per-model
/// aggregates. Never reorders options; mismatches are errors.
MetricReport compare_to_reference(const ExperimentResult& result, const ReferenceDataset& reference,
                                  const QuestionRegistry& registry,
                                  const MetricModes& modes = {});

/// CSV/JSON tables and per-question grouped bar charts (SVG, deterministic
/// bytes). Returns the files written.
std::vector<std::filesystem::path> emit_report(const MetricReport& report,
                                               const ExperimentResult& result,
                                               const ReferenceDataset& reference,
                                               const QuestionRegistry& registry,
                                               const std::set<std::string>& formats,
                                               const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Bundled-table consistency check
// ---------------------------------------------------------------------------

enum class CheckStatus { pass, flag, fail };

std::string_view to_string(CheckStatus status);

struct ConsistencyCheck {
    std::string name;
    double computed = 0.0;
    double reported = 0.0;
    double residual = 0.0;
    double tolerance = 0.0;
    CheckStatus status = CheckStatus::pass;
};

struct ConsistencyReport {
    std::vector<ConsistencyCheck> checks;

    bool hard_failure() const;
    std::string to_text() const;
    nlohmann::json to_json() const;
};

/// Recomputes column means of the bundled per-question tables and compares
/// them to the bundled summary means: cosine/Jaccard/KL within 0.005
/// (pass/fail), chi-square within 0.02 with residuals above 0.005 flagged,
/// plus the binary-question Jaccard means.
ConsistencyReport consistency_check(const std::filesystem::path& reported_metrics_path = {});

} // namespace opsim
