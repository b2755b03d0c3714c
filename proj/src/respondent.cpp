#include "opsim/respondent.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "httplib.h"

#include "opsim/rng.hpp"
#include "opsim/text.hpp"

namespace opsim {

// ---------------------------------------------------------------------------
// parse_response
// ---------------------------------------------------------------------------

std::string_view to_string(ParseStatus status) {
    switch (status) {
    case ParseStatus::ok: return "ok";
    case ParseStatus::no_match: return "no_match";
    case ParseStatus::ambiguous: return "ambiguous";
    }
    return "unknown";
}

namespace {

std::optional<int> parse_ordinal_token(const std::string& token) {
    std::string_view digits = token;
    if (digits.rfind("option", 0) == 0) digits.remove_prefix(6); // "option2"
    if (digits.empty() || digits.size() > 4) return std::nullopt;
    int value = 0;
    for (char c : digits) {
        if (c < '0' || c > '9') return std::nullopt;
        value = value * 10 + (c - '0');
    }
    return value;
}

bool contains_token_sequence(const std::vector<std::string>& haystack,
                             const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return false;
    for (std::size_t start = 0; start + needle.size() <= haystack.size(); ++start) {
        bool match = true;
        for (std::size_t i = 0; i < needle.size(); ++i) {
            if (haystack[start + i] != needle[i]) {
                match = false;
                break;
            }
        }
        if (match) return true;
    }
    return false;
}

} // namespace

ParseResult parse_response(std::string_view raw, const QuestionSpec& question) {
    // 1. exact label
    for (int i = 1; i <= question.option_count(); ++i) {
        if (raw == question.option(i).label) return {ParseStatus::ok, i, {}};
    }

    // 2. normalized label equality
    const std::string normalized = match_normalize(raw);
    if (!normalized.empty()) {
        for (int i = 1; i <= question.option_count(); ++i) {
            if (normalized == match_normalize(question.option(i).label)) {
                return {ParseStatus::ok, i, {}};
            }
        }
    }

    // 3. leading ordinal
    const std::vector<std::string> reply_tokens = split_tokens(normalized);
    if (!reply_tokens.empty()) {
        std::optional<int> ordinal;
        if (reply_tokens[0] == "option" && reply_tokens.size() >= 2) {
            ordinal = parse_ordinal_token(reply_tokens[1]);
        } else {
            ordinal = parse_ordinal_token(reply_tokens[0]);
        }
        if (ordinal && *ordinal >= 1 && *ordinal <= question.option_count()) {
            return {ParseStatus::ok, *ordinal, {}};
        }
    }

    // 4. unique whole-word label containment
    std::vector<int> hits;
    for (int i = 1; i <= question.option_count(); ++i) {
        const auto label_tokens = split_tokens(match_normalize(question.option(i).label));
        if (contains_token_sequence(reply_tokens, label_tokens)) hits.push_back(i);
    }
    if (hits.size() == 1) return {ParseStatus::ok, hits.front(), {}};
    if (hits.size() > 1) {
        std::string labels;
        for (int i : hits) {
            if (!labels.empty()) labels += " | ";
            labels += question.option(i).label;
        }
        return {ParseStatus::ambiguous, 0, "reply matches several options: " + labels};
    }
    return {ParseStatus::no_match, 0, "no parsing rule matched the reply"};
}

// ---------------------------------------------------------------------------
// BackendConfig / WeightTable
// ---------------------------------------------------------------------------

std::string_view to_string(BackendKind kind) {
    switch (kind) {
    case BackendKind::http: return "http";
    case BackendKind::mock: return "mock";
    case BackendKind::replay: return "replay";
    }
    return "unknown";
}

BackendKind backend_kind_from_string(std::string_view text) {
    if (text == "http") return BackendKind::http;
    if (text == "mock") return BackendKind::mock;
    if (text == "replay") return BackendKind::replay;
    throw ValidationError("unknown backend kind: " + std::string(text));
}

WeightTable WeightTable::from_json(const nlohmann::json& doc) {
    WeightTable table;
    if (!doc.contains("per_question")) return table;
    for (const auto& [question_id, entry] : doc.at("per_question").items()) {
        QuestionWeights weights;
        if (entry.contains("base")) {
            for (const auto& [label, logit] : entry.at("base").items()) {
                weights.base[label] = logit.get<double>();
            }
        }
        if (entry.contains("offsets")) {
            for (const auto& [key, deltas] : entry.at("offsets").items()) {
                for (const auto& [label, delta] : deltas.items()) {
                    weights.offsets[key][label] = delta.get<double>();
                }
            }
        }
        table.per_question[question_id] = std::move(weights);
    }
    return table;
}

void BackendConfig::validate() const {
    if (label.empty()) throw ValidationError("backend config needs a model label");
    if (!(temperature >= 0.0)) throw ValidationError(label + ": temperature must be >= 0");
    if (max_in_flight < 1) throw ValidationError(label + ": max_in_flight must be >= 1");
    if (max_retries < 0) throw ValidationError(label + ": max_retries must be >= 0");
    if (requests_per_minute < 0) throw ValidationError(label + ": requests_per_minute must be >= 0");
    if (kind == BackendKind::http) {
        if (endpoint.empty() || model.empty()) {
            throw ValidationError(label + ": http backend needs endpoint and model");
        }
        if (!(timeout_seconds > 0.0)) throw ValidationError(label + ": timeout must be positive");
    }
    if (kind == BackendKind::replay && transcript_path.empty()) {
        throw ValidationError(label + ": replay backend needs a transcript file");
    }
}

BackendConfig BackendConfig::from_json(const nlohmann::json& doc) {
    BackendConfig config;
    config.kind = backend_kind_from_string(doc.value("kind", std::string("mock")));
    config.label = doc.value("label", std::string{});
    config.endpoint = doc.value("endpoint", std::string{});
    config.model = doc.value("model", std::string{});
    config.temperature = doc.value("temperature", 1.0);
    config.timeout_seconds = doc.value("timeout_seconds", 30.0);
    config.max_retries = doc.value("max_retries", 3);
    config.max_in_flight = doc.value("max_in_flight", 4);
    config.requests_per_minute = doc.value("requests_per_minute", 0);
    config.auth_env = doc.value("auth_env", std::string{});
    config.mock_seed = doc.value("mock_seed", std::uint64_t{0});
    if (doc.contains("weights")) config.weight_table = WeightTable::from_json(doc.at("weights"));
    if (doc.contains("weights_path")) {
        const std::filesystem::path path = doc.at("weights_path").get<std::string>();
        std::ifstream weights_in(path, std::ios::binary);
        if (!weights_in) throw IoError("cannot open weight table: " + path.string());
        nlohmann::json weights_doc;
        try {
            weights_in >> weights_doc;
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError("invalid weight table " + path.string() + ": " + ex.what());
        }
        config.weight_table = WeightTable::from_json(weights_doc);
    }
    if (doc.contains("transcript_path")) {
        config.transcript_path = doc.at("transcript_path").get<std::string>();
    }
    config.reask_on_parse_failure = doc.value("reask_on_parse_failure", false);
    config.validate();
    return config;
}

nlohmann::json BackendConfig::to_json() const {
    nlohmann::json doc{{"kind", std::string(to_string(kind))},
                       {"label", label},
                       {"temperature", temperature},
                       {"timeout_seconds", timeout_seconds},
                       {"max_retries", max_retries},
                       {"max_in_flight", max_in_flight},
                       {"requests_per_minute", requests_per_minute},
                       {"reask_on_parse_failure", reask_on_parse_failure}};
    if (!endpoint.empty()) doc["endpoint"] = endpoint;
    if (!model.empty()) doc["model"] = model;
    if (!auth_env.empty()) doc["auth_env"] = auth_env;
    if (kind == BackendKind::mock) doc["mock_seed"] = mock_seed;
    if (!transcript_path.empty()) doc["transcript_path"] = transcript_path.string();
    if (!weight_table.empty()) {
        nlohmann::json weights{{"per_question", nlohmann::json::object()}};
        for (const auto& [qid, entry] : weight_table.per_question) {
            weights["per_question"][qid] = {{"base", entry.base}, {"offsets", entry.offsets}};
        }
        doc["weights"] = std::move(weights);
    }
    return doc;
}

// ---------------------------------------------------------------------------
// Transcripts
// ---------------------------------------------------------------------------

nlohmann::json Transcript::to_json() const {
    nlohmann::json doc{{"profile_id", profile_id},
                       {"question_id", question_id},
                       {"system_text", system_text},
                       {"user_text", user_text},
                       {"raw_reply", raw_reply},
                       {"attempts", attempts},
                       {"latency_ms", latency_ms},
                       {"backend_id", backend_id}};
    if (temperature) doc["temperature"] = *temperature;
    if (parsed_option) {
        doc["parsed_option"] = *parsed_option;
    } else {
        doc["failure_reason"] = failure_reason;
    }
    return doc;
}

Transcript Transcript::from_json(const nlohmann::json& doc) {
    Transcript t;
    t.profile_id = doc.at("profile_id").get<std::string>();
    t.question_id = doc.at("question_id").get<std::string>();
    t.system_text = doc.value("system_text", std::string{});
    t.user_text = doc.value("user_text", std::string{});
    t.raw_reply = doc.at("raw_reply").get<std::string>();
    if (doc.contains("parsed_option")) t.parsed_option = doc.at("parsed_option").get<int>();
    t.failure_reason = doc.value("failure_reason", std::string{});
    t.attempts = doc.value("attempts", 1);
    t.latency_ms = doc.value("latency_ms", 0.0);
    t.backend_id = doc.value("backend_id", std::string{});
    if (doc.contains("temperature")) t.temperature = doc.at("temperature").get<double>();
    return t;
}

TranscriptLoadResult load_transcripts(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open transcript store: " + path.string());
    TranscriptLoadResult result;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        try {
            result.entries.push_back(Transcript::from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& ex) {
            result.errors.push_back({line_number, std::string("corrupt transcript line ") +
                                                      std::to_string(line_number) + ": " +
                                                      ex.what()});
        }
    }
    return result;
}

void append_transcripts(const std::filesystem::path& path,
                        const std::vector<Transcript>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to transcript store: " + path.string());
    for (const auto& entry : entries) out << entry.to_json().dump() << '\n';
}

// ---------------------------------------------------------------------------
// Mock respondent
// ---------------------------------------------------------------------------

std::string mock_answer(const Profile& profile, const QuestionSpec& question,
                        std::uint64_t experiment_seed, const WeightTable& table) {
    const int k = question.option_count();
    std::vector<double> logits(static_cast<std::size_t>(k), 0.0);

    auto entry = table.per_question.find(question.question_id());
    if (entry != table.per_question.end()) {
        const QuestionWeights& weights = entry->second;
        for (int i = 1; i <= k; ++i) {
            auto logit = weights.base.find(question.option(i).label);
            if (logit == weights.base.end()) {
                throw ValidationError("weight table for question " + question.question_id() +
                                      " is missing option '" + question.option(i).label + "'");
            }
            logits[static_cast<std::size_t>(i - 1)] = logit->second;
        }
        for (const auto& [key, deltas] : weights.offsets) {
            const std::size_t eq = key.find('=');
            if (eq == std::string::npos) {
                throw ValidationError("weight table offset key must be 'attribute=value': " + key);
            }
            const std::string attribute = key.substr(0, eq);
            const std::string value = key.substr(eq + 1);
            if (profile.attribute(attribute) != value) continue;
            for (const auto& [label, delta] : deltas) {
                auto index = question.index_of_label(label);
                if (!index) {
                    throw ValidationError("weight table offset names unknown option '" + label +
                                          "' for question " + question.question_id());
                }
                logits[static_cast<std::size_t>(*index - 1)] += delta;
            }
        }
    }

    double max_logit = logits[0];
    for (double l : logits) max_logit = std::max(max_logit, l);
    std::vector<double> cumulative(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        total += std::exp(logits[i] - max_logit);
        cumulative[i] = total;
    }

    Rng stream(derive_stream_seed(experiment_seed, profile.profile_id, question.question_id()));
    const double u = stream.unit_double() * total;
    for (std::size_t i = 0; i < cumulative.size(); ++i) {
        if (u < cumulative[i]) return question.option(static_cast<int>(i + 1)).label;
    }
    return question.option(k).label;
}

namespace {

class MockRespondent final : public Respondent {
  public:
    MockRespondent(BackendConfig config, const QuestionRegistry& registry,
                   const std::vector<Profile>& panel)
        : config_(std::move(config)), registry_(&registry) {
        for (const auto& profile : panel) profiles_.emplace(profile.profile_id, profile);
    }

    AskOutcome ask(const PromptPair& pair) override {
        auto profile = profiles_.find(pair.profile_id);
        if (profile == profiles_.end()) {
            throw BackendError("mock backend knows no profile '" + pair.profile_id + "'",
                               config_.label + "#mock");
        }
        const QuestionSpec& question = registry_->require(pair.question_id);
        return {mock_answer(profile->second, question, config_.mock_seed, config_.weight_table), 1,
                0.0};
    }

    const std::string& id() const override { return config_.label; }

  private:
    BackendConfig config_;
    const QuestionRegistry* registry_;
    std::map<std::string, Profile> profiles_;
};

// ---------------------------------------------------------------------------
// Replay respondent
// ---------------------------------------------------------------------------

class ReplayRespondent final : public Respondent {
  public:
    explicit ReplayRespondent(BackendConfig config) : config_(std::move(config)) {
        TranscriptLoadResult loaded = load_transcripts(config_.transcript_path);
        errors_ = std::move(loaded.errors);
        for (auto& entry : loaded.entries) {
            replies_.emplace(entry.profile_id + '\x1f' + entry.question_id,
                             std::move(entry.raw_reply)); // first entry wins
        }
    }

    AskOutcome ask(const PromptPair& pair) override {
        auto hit = replies_.find(pair.profile_id + '\x1f' + pair.question_id);
        if (hit == replies_.end()) {
            throw BackendError("replay miss for (" + pair.profile_id + ", " + pair.question_id +
                                   ") in " + config_.transcript_path.string(),
                               config_.label + "#replay");
        }
        return {hit->second, 1, 0.0};
    }

    const std::string& id() const override { return config_.label; }

    const std::vector<TranscriptStoreError>& errors() const { return errors_; }

  private:
    BackendConfig config_;
    std::map<std::string, std::string> replies_;
    std::vector<TranscriptStoreError> errors_;
};

// ---------------------------------------------------------------------------
// HTTP respondent
// ---------------------------------------------------------------------------

/// Counting gate bounding concurrent requests.
class Gate {
  public:
    explicit Gate(int limit) : available_(limit) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return available_ > 0; });
        --available_;
    }

    void release() {
        {
            std::lock_guard lock(mutex_);
            ++available_;
        }
        cv_.notify_one();
    }

  private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int available_;
};

class GateGuard {
  public:
    explicit GateGuard(Gate& gate) : gate_(gate) { gate_.acquire(); }
    ~GateGuard() { gate_.release(); }
    GateGuard(const GateGuard&) = delete;
    GateGuard& operator=(const GateGuard&) = delete;

  private:
    Gate& gate_;
};

/// Paces requests to at most `per_minute`, FIFO over contending threads.
class RateLimiter {
  public:
    explicit RateLimiter(int per_minute) : enabled_(per_minute > 0) {
        if (enabled_) {
            interval_ = std::chrono::nanoseconds(60'000'000'000LL / per_minute);
            next_ = std::chrono::steady_clock::now();
        }
    }

    void acquire() {
        if (!enabled_) return;
        std::chrono::steady_clock::time_point slot;
        {
            std::lock_guard lock(mutex_);
            const auto now = std::chrono::steady_clock::now();
            if (next_ < now) next_ = now;
            slot = next_;
            next_ += interval_;
        }
        std::this_thread::sleep_until(slot);
    }

  private:
    bool enabled_;
    std::chrono::nanoseconds interval_{};
    std::chrono::steady_clock::time_point next_{};
    std::mutex mutex_;
};

struct EndpointParts {
    std::string base; // scheme://host[:port]
    std::string path;
};

EndpointParts split_endpoint(const std::string& endpoint) {
    const std::size_t scheme = endpoint.find("://");
    if (scheme == std::string::npos) {
        throw ValidationError("endpoint must be a full URL: " + endpoint);
    }
    const std::size_t path_start = endpoint.find('/', scheme + 3);
    if (path_start == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

bool retryable_status(int status) {
    return status == 408 || status == 429 || (status >= 500 && status < 600);
}

class HttpRespondent final : public Respondent {
  public:
    explicit HttpRespondent(BackendConfig config)
        : config_(std::move(config)),
          parts_(split_endpoint(config_.endpoint)),
          gate_(config_.max_in_flight),
          limiter_(config_.requests_per_minute) {
        if (!config_.auth_env.empty()) {
            if (const char* token = std::getenv(config_.auth_env.c_str())) token_ = token;
        }
    }

    AskOutcome ask(const PromptPair& pair) override {
        const std::string correlation_id =
            config_.label + "#" + std::to_string(next_request_.fetch_add(1) + 1);
        GateGuard guard(gate_);

        const nlohmann::json body{
            {"model", config_.model},
            {"temperature", config_.temperature},
            {"messages",
             {{{"role", "system"}, {"content", pair.system_text}},
              {{"role", "user"}, {"content", pair.user_text}}}}};
        const std::string payload = body.dump();

        const auto started = std::chrono::steady_clock::now();
        std::string last_error;
        for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
            if (attempt > 0) {
                auto backoff = std::chrono::milliseconds(250) * (1 << (attempt - 1));
                std::this_thread::sleep_for(std::min(backoff, std::chrono::milliseconds(8000)));
            }
            limiter_.acquire();

            httplib::Client client(parts_.base);
            const auto timeout = std::chrono::milliseconds(
                static_cast<long long>(config_.timeout_seconds * 1000.0));
            client.set_connection_timeout(timeout);
            client.set_read_timeout(timeout);
            client.set_write_timeout(timeout);
            httplib::Headers headers;
            if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

            auto response = client.Post(parts_.path, headers, payload, "application/json");
            if (!response) {
                last_error = "transport error: " + httplib::to_string(response.error());
                continue;
            }
            if (response->status >= 200 && response->status < 300) {
                const auto elapsed = std::chrono::duration<double, std::milli>(
                                         std::chrono::steady_clock::now() - started)
                                         .count();
                return {extract_reply(response->body, correlation_id), attempt + 1, elapsed};
            }
            if (retryable_status(response->status)) {
                last_error = "http status " + std::to_string(response->status);
                continue;
            }
            throw BackendError("non-retryable http status " + std::to_string(response->status) +
                                   ": " + response->body.substr(0, 200),
                               correlation_id);
        }
        throw BackendError("retries exhausted after " + std::to_string(config_.max_retries + 1) +
                               " attempts; last error: " + last_error,
                           correlation_id);
    }

    const std::string& id() const override { return config_.label; }

    std::optional<double> temperature() const override { return config_.temperature; }

  private:
    static std::string extract_reply(const std::string& body, const std::string& correlation_id) {
        try {
            const nlohmann::json doc = nlohmann::json::parse(body);
            return doc.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& ex) {
            throw BackendError(std::string("malformed completion payload: ") + ex.what(),
                               correlation_id);
        }
    }

    BackendConfig config_;
    EndpointParts parts_;
    Gate gate_;
    RateLimiter limiter_;
    std::string token_;
    std::atomic<long long> next_request_{0};
};

// ---------------------------------------------------------------------------
// Recording wrapper
// ---------------------------------------------------------------------------

class RecordingRespondent final : public Respondent {
  public:
    RecordingRespondent(std::unique_ptr<Respondent> inner, std::filesystem::path store,
                        const QuestionRegistry* registry)
        : inner_(std::move(inner)), store_(std::move(store)), registry_(registry) {}

    AskOutcome ask(const PromptPair& pair) override {
        AskOutcome outcome = inner_->ask(pair);
        Transcript transcript;
        transcript.profile_id = pair.profile_id;
        transcript.question_id = pair.question_id;
        transcript.system_text = pair.system_text;
        transcript.user_text = pair.user_text;
        transcript.raw_reply = outcome.raw_reply;
        transcript.attempts = outcome.attempts;
        transcript.latency_ms = outcome.latency_ms;
        transcript.backend_id = inner_->id();
        transcript.temperature = inner_->temperature();
        if (registry_) {
            if (const QuestionSpec* question = registry_->find(pair.question_id)) {
                ParseResult parsed = parse_response(outcome.raw_reply, *question);
                if (parsed.status == ParseStatus::ok) {
                    transcript.parsed_option = parsed.option_index;
                } else {
                    transcript.failure_reason = std::string(to_string(parsed.status)) +
                                                (parsed.detail.empty() ? "" : ": " + parsed.detail);
                }
            }
        }
        std::lock_guard lock(writer_mutex_);
        append_transcripts(store_, {transcript});
        return outcome;
    }

    const std::string& id() const override { return inner_->id(); }

  private:
    std::unique_ptr<Respondent> inner_;
    std::filesystem::path store_;
    const QuestionRegistry* registry_;
    std::mutex writer_mutex_;
};

} // namespace

std::unique_ptr<Respondent> make_respondent(const BackendConfig& config,
                                            const QuestionRegistry* registry,
                                            const std::vector<Profile>* panel) {
    config.validate();
    switch (config.kind) {
    case BackendKind::mock:
        if (!registry || !panel) {
            throw ValidationError(config.label +
                                  ": mock backend needs a question registry and a panel");
        }
        return std::make_unique<MockRespondent>(config, *registry, *panel);
    case BackendKind::replay: return std::make_unique<ReplayRespondent>(config);
    case BackendKind::http: return std::make_unique<HttpRespondent>(config);
    }
    throw ValidationError("unsupported backend kind");
}

std::unique_ptr<Respondent> make_recording_respondent(std::unique_ptr<Respondent> inner,
                                                      const std::filesystem::path& store,
                                                      const QuestionRegistry* registry) {
    if (!inner) throw ValidationError("recording backend needs an inner backend");
    return std::make_unique<RecordingRespondent>(std::move(inner), store, registry);
}

} // namespace opsim
