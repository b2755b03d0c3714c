#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "opsim/promptgen.hpp"
#include "opsim/survey_data.hpp"

namespace opsim {

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

enum class ParseStatus { ok, no_match, ambiguous };

std::string_view to_string(ParseStatus status);

struct ParseResult {
    ParseStatus status = ParseStatus::no_match;
    int option_index = 0; // 1-based, valid when status == ok
    std::string detail;   // failure description
};

/// Total, deterministic matching cascade: exact label, normalized label,
/// leading ordinal ("2", "2.", "Option 2"), unique whole-word label
/// containment. Earlier rules shadow later ones.
ParseResult parse_response(std::string_view raw, const QuestionSpec& question);

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

enum class BackendKind { http, mock, replay };

std::string_view to_string(BackendKind kind);
BackendKind backend_kind_from_string(std::string_view text);

/// Mock conditioning table: a base logit per option plus additive offsets
/// keyed "attribute=value". Questions without an entry get uniform logits.
struct QuestionWeights {
    std::map<std::string, double> base;
    std::map<std::string, std::map<std::string, double>> offsets;
};

struct WeightTable {
    std::map<std::string, QuestionWeights> per_question;

    bool empty() const { return per_question.empty(); }
    static WeightTable from_json(const nlohmann::json& doc);
};

struct BackendConfig {
    BackendKind kind = BackendKind::mock;
    std::string label;

    // http
    std::string endpoint;
    std::string model;
    double temperature = 1.0;
    double timeout_seconds = 30.0;
    int max_retries = 3;
    int max_in_flight = 4;
    int requests_per_minute = 0; // 0 = uncapped
    std::string auth_env;        // env var naming the bearer token

    // mock
    std::uint64_t mock_seed = 0;
    WeightTable weight_table;

    // replay
    std::filesystem::path transcript_path;

    bool reask_on_parse_failure = false;

    void validate() const;
    static BackendConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

/// Audit record for one ask: prompts, raw reply, parse outcome, timing, and
/// the sampling temperature when the backend has one.
struct Transcript {
    std::string profile_id;
    std::string question_id;
    std::string system_text;
    std::string user_text;
    std::string raw_reply;
    std::optional<int> parsed_option; // 1-based
    std::string failure_reason;
    int attempts = 1;
    double latency_ms = 0.0;
    std::string backend_id;
    std::optional<double> temperature;

    nlohmann::json to_json() const;
    static Transcript from_json(const nlohmann::json& doc);
};

struct TranscriptStoreError {
    std::size_t line_number = 0;
    std::string message;
};

struct TranscriptLoadResult {
    std::vector<Transcript> entries;
    std::vector<TranscriptStoreError> errors; // corrupt lines, named; good lines stay usable
};

TranscriptLoadResult load_transcripts(const std::filesystem::path& path);
void append_transcripts(const std::filesystem::path& path, const std::vector<Transcript>& entries);

struct AskOutcome {
    std::string raw_reply;
    int attempts = 1;
    double latency_ms = 0.0;
};

/// An answer source. Implementations are safe to share across worker threads.
class Respondent {
  public:
    virtual ~Respondent() = default;
    virtual AskOutcome ask(const PromptPair& pair) = 0;
    virtual const std::string& id() const = 0;
    /// Sampling temperature, for backends that sample (http only).
    virtual std::optional<double> temperature() const { return std::nullopt; }
};

/// Softmax over summed logits, sampled from a stream seeded by
/// hash(experiment_seed, profile_id, question_id); independent of call order
/// and parallel schedule.
std::string mock_answer(const Profile& profile, const QuestionSpec& question,
                        std::uint64_t experiment_seed, const WeightTable& table);

/// Builds the backend described by config. Mock backends need the registry
/// and panel to resolve profiles; http and replay ignore them.
std::unique_ptr<Respondent> make_respondent(const BackendConfig& config,
                                            const QuestionRegistry* registry = nullptr,
                                            const std::vector<Profile>* panel = nullptr);

/// Wraps a backend and appends one Transcript per call to `store` through a
/// single serialized writer. The registry, when given, lets the recorder
/// parse replies into options.
std::unique_ptr<Respondent> make_recording_respondent(std::unique_ptr<Respondent> inner,
                                                      const std::filesystem::path& store,
                                                      const QuestionRegistry* registry = nullptr);

} // namespace opsim
