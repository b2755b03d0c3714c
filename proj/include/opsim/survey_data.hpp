#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "opsim/errors.hpp"

namespace opsim {

// ---------------------------------------------------------------------------
// Survey schema and raw records
// ---------------------------------------------------------------------------

/// Field declaration for a delimited survey file. Header names are mapped
/// through `aliases` (e.g. UKHLS "qfhigh" -> "highest_qualification") before
/// matching `fields`. Sentinel codes mark reserved negative values.
struct SurveySchema {
    std::vector<std::string> fields;
    std::map<std::string, std::string> aliases;
    std::map<long long, std::string> sentinel_codes = default_sentinel_codes();

    static std::map<long long, std::string> default_sentinel_codes() {
        return {{-1, "don't know"}, {-2, "refusal"}, {-8, "inapplicable"}, {-9, "missing"}};
    }

    std::optional<std::size_t> field_index(std::string_view name) const {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (fields[i] == name) return i;
        }
        return std::nullopt;
    }
};

/// One cell: source text kept byte-exact, plus the sentinel code it matched.
struct FieldValue {
    std::string raw;
    std::optional<long long> sentinel;
};

/// One survey row, round-trippable to its source bytes.
struct SurveyRecord {
    std::shared_ptr<const SurveySchema> schema;
    std::vector<FieldValue> values;
    std::size_t row_number = 0; // 1-based data row in the source file
    bool synthetic_oversample = false;

    const FieldValue* find(std::string_view field) const {
        auto idx = schema->field_index(field);
        if (!idx) return nullptr;
        return &values[*idx];
    }

    const FieldValue& at(std::string_view field) const {
        const FieldValue* v = find(field);
        if (!v) throw ValidationError("unknown survey field: " + std::string(field));
        return *v;
    }
};

/// The eleven canonical profile attributes, in prompt order.
const std::vector<std::string>& profile_attribute_names();

/// The categorical subset checked against the vocabulary (excludes the two
/// numeric attributes and includes the pattern-validated age group).
const std::vector<std::string>& categorical_attribute_names();

/// Reads one record per data row of a comma- or tab-delimited UTF-8 file with
/// a header row. Sentinel codes are tagged, never coerced; all other values
/// are kept byte-exact. Throws IoError / ValidationError naming the row on
/// structural problems.
std::vector<SurveyRecord> load_survey_records(const std::filesystem::path& path,
                                              const SurveySchema& schema);

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Declared category sets per attribute plus a synonym table. Lookup is
/// case-folded and whitespace-collapsed; age groups are validated against a
/// decade-band pattern instead of an enumerated list.
class Vocabulary {
  public:
    static Vocabulary from_json(const nlohmann::json& doc);
    static Vocabulary load(const std::filesystem::path& path);

    bool is_categorical(std::string_view field) const;
    bool is_valid(std::string_view field, std::string_view value) const;

    /// Canonical label for a raw cell (case-fold, whitespace collapse,
    /// synonyms). Empty optional when the value maps to nothing.
    std::optional<std::string> canonicalize(std::string_view field, std::string_view raw) const;

    const std::vector<std::string>& categories(std::string_view field) const;

  private:
    std::map<std::string, std::vector<std::string>, std::less<>> categories_;
    std::map<std::string, std::map<std::string, std::string>, std::less<>> lookup_;
    std::string age_pattern_;

    bool age_group_matches(std::string_view value) const;
};

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

struct SeedAttitude {
    std::string question_id;
    std::string option_label;
};

/// One synthetic respondent. Construct through make_profile so the
/// vocabulary and seed-attitude invariants hold.
struct Profile {
    std::string profile_id;
    std::string voting_intention;
    std::string ethnic_group;
    std::string gender;
    std::string marital_status;
    std::string highest_qualification;
    int num_children = 0;
    std::string region;
    std::string living_area;
    std::string age_group;
    std::string profession;
    std::optional<double> monthly_income_gbp;
    std::optional<SeedAttitude> seed_attitude;

    std::string_view attribute(std::string_view name) const;
};

class QuestionRegistry;

/// Validates every categorical field against the vocabulary, the numeric
/// invariants, and the seed attitude against the registry. Throws
/// ValidationError naming the offending field.
Profile make_profile(Profile candidate, const Vocabulary& vocab, const QuestionRegistry& registry);

nlohmann::json profile_to_json(const Profile& profile);
Profile profile_from_json(const nlohmann::json& doc, const Vocabulary& vocab,
                          const QuestionRegistry& registry);

void save_panel(const std::vector<Profile>& panel, const std::filesystem::path& path);
std::vector<Profile> load_panel(const std::filesystem::path& path, const Vocabulary& vocab,
                                const QuestionRegistry& registry);

// ---------------------------------------------------------------------------
// Questions
// ---------------------------------------------------------------------------

enum class QuestionKind { likert5, categorical, binary };

std::string_view to_string(QuestionKind kind);
QuestionKind question_kind_from_string(std::string_view text);

struct QuestionOption {
    std::string label;
    std::string short_label; // printed table form; defaults to label
};

class QuestionSpec {
  public:
    QuestionSpec(std::string question_id, std::string ukhls_code, std::string prompt_text,
                 std::vector<QuestionOption> options, QuestionKind kind);

    const std::string& question_id() const { return question_id_; }
    const std::string& ukhls_code() const { return ukhls_code_; }
    const std::string& prompt_text() const { return prompt_text_; }
    QuestionKind kind() const { return kind_; }
    const std::vector<QuestionOption>& options() const { return options_; }
    int option_count() const { return static_cast<int>(options_.size()); }

    /// 1-based option access.
    const QuestionOption& option(int index) const;
    std::optional<int> index_of_label(std::string_view label) const;

  private:
    std::string question_id_;
    std::string ukhls_code_;
    std::string prompt_text_;
    std::vector<QuestionOption> options_;
    QuestionKind kind_;
};

class QuestionRegistry {
  public:
    void add(QuestionSpec question);
    const QuestionSpec* find(std::string_view question_id) const;
    const QuestionSpec& require(std::string_view question_id) const;
    const std::vector<QuestionSpec>& all() const { return questions_; }
    std::vector<std::string> ids() const;
    bool empty() const { return questions_.empty(); }

    static QuestionRegistry from_json(const nlohmann::json& doc);
    static QuestionRegistry load(const std::filesystem::path& path);

  private:
    std::vector<QuestionSpec> questions_; // insertion order preserved
};

// ---------------------------------------------------------------------------
// Distributions and reference data
// ---------------------------------------------------------------------------

/// Per-option proportions for one question, aligned to option order.
struct ResponseDistribution {
    std::string question_id;
    std::vector<double> proportions;
    long long n_samples = 0;
    long long excluded_count = 0;
};

/// Scales a non-negative vector to sum 1 (within 1e-9), preserving ratios.
/// Throws on empty input, negative entries, or an all-zero vector.
std::vector<double> normalize_distribution(std::span<const double> raw);

/// Length and sum-to-one checks against the question's option count.
void validate_distribution(const ResponseDistribution& dist, const QuestionSpec& question);

struct ReferenceEntry {
    ResponseDistribution distribution;
    std::vector<std::string> labels;      // as printed in the source table
    std::vector<double> raw_percent;      // as printed, before normalization
    double raw_sum = 0.0;
    bool renormalized = false;            // raw sum deviated from 100 by > 0.5
};

struct ReferenceDataset {
    std::map<std::string, ReferenceEntry> entries;
    std::string provenance;
    std::vector<std::string> warnings;

    const ReferenceEntry* find(std::string_view question_id) const;
};

struct ReferenceSourceRow {
    std::string question_id;
    std::vector<std::string> labels;
    std::vector<double> percent;
};

ReferenceDataset build_reference_dataset(const std::vector<ReferenceSourceRow>& source,
                                         const QuestionRegistry& registry,
                                         std::string provenance = {});

/// Reads the bundled JSON reference format: {"entries": {qid: {labels, percent}}}.
ReferenceDataset load_reference_dataset(const std::filesystem::path& path,
                                        const QuestionRegistry& registry);

} // namespace opsim
