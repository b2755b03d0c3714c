#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "opsim/survey_data.hpp"

namespace opsim {

/// Version tag of the frozen sentence-template table, stamped into exports
/// and experiment results.
std::string_view prompt_template_version();

struct PromptPair {
    std::string system_text;
    std::string user_text;
    std::string profile_id;
    std::string question_id;
};

struct FinetuneRecord {
    std::string system_text;
    std::string user_text;
    std::string assistant_text; // ground-truth option label, never free text
};

/// First-person profile description, one sentence per populated attribute:
/// ideology, ethnicity, gender, marital status, qualification, income (when
/// present), children, region, living area, age group, profession, then the
/// seeded-attitude sentence when the profile carries one.
std::string render_system_prompt(const Profile& profile, const QuestionRegistry& registry);

/// Instruction sentence embedding the question text, then "Options:" and the
/// numbered labels, one per line, indices starting at 1.
std::string render_user_prompt(const QuestionSpec& question);

PromptPair make_prompt_pair(const Profile& profile, const QuestionSpec& question,
                            const QuestionRegistry& registry);

/// Ground-truth answer for one (profile, question) cell.
struct AnswerKey {
    std::string profile_id;
    std::string question_id;
    std::string option_label;
};

struct ExportSummary {
    long long total = 0;
    long long train = 0;
    long long validation = 0;
    double split = 0.0;
    std::uint64_t seed = 0;
    std::filesystem::path train_path;
    std::filesystem::path validation_path;
    std::string template_version;

    /// Export metadata: counts, split, templates, and the assistant-message
    /// format (bare option labels).
    nlohmann::json to_json() const;
};

/// Writes line-delimited JSON, one {"messages": [system, user, assistant]}
/// object per answer, seeded-split into train/validation files.
ExportSummary export_finetune_dataset(const std::vector<Profile>& panel,
                                      const std::vector<AnswerKey>& answers,
                                      const QuestionRegistry& registry, double split,
                                      std::uint64_t seed,
                                      const std::filesystem::path& train_path,
                                      const std::filesystem::path& validation_path);

std::vector<FinetuneRecord> load_finetune_dataset(const std::filesystem::path& path);

using TokenCounter = std::function<long long(std::string_view)>;

struct CostEstimate {
    long long tokens = 0;
    double price_per_1k_tokens = 0.0;
    double estimate = 0.0;
    std::string method;
};

/// Fine-tuning price ballpark: token count times price. The default counter
/// approximates tokens as ceil(chars / 4); plug a real tokenizer for more.
CostEstimate estimate_finetune_cost(const std::vector<std::filesystem::path>& dataset_files,
                                    double price_per_1k_tokens, TokenCounter counter = nullptr);

/// Default price used by the CLI when none is configured (USD per 1k tokens).
inline constexpr double kDefaultFinetunePricePer1k = 0.03;

} // namespace opsim
