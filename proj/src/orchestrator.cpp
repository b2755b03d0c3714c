#include "opsim/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "opsim/rng.hpp"
#include "opsim/text.hpp"

namespace opsim {

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (models.empty()) throw ValidationError("experiment config declares no models");
    std::set<std::string> labels;
    for (const auto& model : models) {
        model.validate();
        if (!labels.insert(model.label).second) {
            throw ValidationError("duplicate model label: " + model.label);
        }
    }
    if (panel.kind == PanelSource::Kind::file && panel.path.empty()) {
        throw ValidationError("panel source 'file' needs a path");
    }
    if (panel.kind == PanelSource::Kind::generated && panel.size < 1) {
        throw ValidationError("generated panel size must be >= 1");
    }
    std::set<std::string> question_set(question_ids.begin(), question_ids.end());
    if (question_set.size() != question_ids.size()) {
        throw ValidationError("experiment question list contains duplicates");
    }
    if (workers < 1) throw ValidationError("workers must be >= 1");
    if (!(abort_parse_failure_ratio > 0.0 && abort_parse_failure_ratio <= 1.0)) {
        throw ValidationError("abort_parse_failure_ratio must be in (0, 1]");
    }
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
    ExperimentConfig config;
    if (doc.contains("panel")) {
        const auto& panel = doc.at("panel");
        const std::string source = panel.value("source", std::string("generated"));
        if (source == "file") {
            config.panel.kind = PanelSource::Kind::file;
            config.panel.path = panel.value("path", std::string{});
        } else if (source == "generated") {
            config.panel.kind = PanelSource::Kind::generated;
            config.panel.size = panel.value("size", 100);
        } else {
            throw ValidationError("unknown panel source: " + source);
        }
    }
    if (doc.contains("questions")) {
        for (const auto& id : doc.at("questions")) {
            config.question_ids.push_back(id.get<std::string>());
        }
    }
    if (doc.contains("models")) {
        for (const auto& model : doc.at("models")) {
            config.models.push_back(BackendConfig::from_json(model));
        }
    }
    config.experiment_seed = doc.value("seed", std::uint64_t{0});
    config.output_dir = doc.value("output_dir", std::string("out"));
    config.reference_path = doc.value("reference", std::string{});
    config.data_dir = doc.value("data_dir", std::string{});
    config.workers = doc.value("workers", 8);
    config.abort_parse_failure_ratio = doc.value("abort_parse_failure_ratio", 0.5);
    config.write_transcripts = doc.value("write_transcripts", true);
    config.validate();
    return config;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json doc;
    if (panel.kind == PanelSource::Kind::file) {
        doc["panel"] = {{"source", "file"}, {"path", panel.path.string()}};
    } else {
        doc["panel"] = {{"source", "generated"}, {"size", panel.size}};
    }
    doc["questions"] = question_ids;
    doc["models"] = nlohmann::json::array();
    for (const auto& model : models) doc["models"].push_back(model.to_json());
    doc["seed"] = experiment_seed;
    doc["output_dir"] = output_dir.string();
    if (!reference_path.empty()) doc["reference"] = reference_path.string();
    if (!data_dir.empty()) doc["data_dir"] = data_dir.string();
    doc["workers"] = workers;
    doc["abort_parse_failure_ratio"] = abort_parse_failure_ratio;
    doc["write_transcripts"] = write_transcripts;
    return doc;
}

// ---------------------------------------------------------------------------
// ExperimentResult
// ---------------------------------------------------------------------------

nlohmann::json ExperimentResult::to_json() const {
    nlohmann::json doc;
    doc["config"] = config_snapshot;
    doc["template_version"] = template_version;
    doc["seed"] = seed;
    doc["panel_size"] = panel_size;
    doc["models"] = nlohmann::json::object();
    for (const auto& [label, questions] : distributions) {
        nlohmann::json entry = nlohmann::json::object();
        for (const auto& [question_id, result] : questions) {
            nlohmann::json cell;
            if (result.aborted) {
                cell["aborted"] = true;
                cell["abort_reason"] = result.abort_reason;
            } else {
                cell["proportions"] = result.distribution.proportions;
                cell["n_samples"] = result.distribution.n_samples;
                cell["excluded"] = result.distribution.excluded_count;
            }
            entry[question_id] = std::move(cell);
        }
        doc["models"][label] = std::move(entry);
    }
    doc["transcript_files"] = nlohmann::json::object();
    for (const auto& [label, path] : transcript_files) {
        doc["transcript_files"][label] = path.string();
    }
    return doc;
}

void ExperimentResult::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write result file: " + path.string());
    out << to_json().dump(2) << '\n';
}

ExperimentResult ExperimentResult::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open result file: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError("invalid result file " + path.string() + ": " + ex.what());
    }
    ExperimentResult result;
    result.config_snapshot = doc.value("config", nlohmann::json::object());
    result.template_version = doc.value("template_version", std::string{});
    result.seed = doc.value("seed", std::uint64_t{0});
    result.panel_size = doc.value("panel_size", 0LL);
    for (const auto& [label, questions] : doc.at("models").items()) {
        for (const auto& [question_id, cell] : questions.items()) {
            QuestionResult qr;
            if (cell.value("aborted", false)) {
                qr.aborted = true;
                qr.abort_reason = cell.value("abort_reason", std::string{});
            } else {
                qr.distribution.question_id = question_id;
                qr.distribution.proportions = cell.at("proportions").get<std::vector<double>>();
                qr.distribution.n_samples = cell.value("n_samples", 0LL);
                qr.distribution.excluded_count = cell.value("excluded", 0LL);
            }
            result.distributions[label][question_id] = std::move(qr);
        }
    }
    if (doc.contains("transcript_files")) {
        for (const auto& [label, path_text] : doc.at("transcript_files").items()) {
            result.transcript_files[label] = path_text.get<std::string>();
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Panel generation
// ---------------------------------------------------------------------------

std::vector<Profile> generate_panel(int size, std::uint64_t seed, const Vocabulary& vocab,
                                    const QuestionRegistry& registry) {
    if (size < 1) throw ValidationError("generated panel size must be >= 1");
    static const std::vector<std::string> kAgeBands = {"18 - 29", "30 - 39", "40 - 49",
                                                       "50 - 59", "60 - 69", "70 - 79"};
    Rng rng(fnv1a64(fnv1a64(kFnvOffsetBasis, &seed, sizeof seed), "panel"));
    auto pick = [&](const std::vector<std::string>& values) {
        return values[static_cast<std::size_t>(rng.below(values.size()))];
    };

    std::vector<Profile> panel;
    panel.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
        Profile profile;
        char id[16];
        std::snprintf(id, sizeof id, "p%05d", i + 1);
        profile.profile_id = id;
        profile.voting_intention = pick(vocab.categories("voting_intention"));
        profile.ethnic_group = pick(vocab.categories("ethnic_group"));
        profile.gender = pick(vocab.categories("gender"));
        profile.marital_status = pick(vocab.categories("marital_status"));
        profile.highest_qualification = pick(vocab.categories("highest_qualification"));
        profile.num_children = static_cast<int>(rng.below(4));
        profile.region = pick(vocab.categories("region"));
        profile.living_area = pick(vocab.categories("living_area"));
        profile.age_group = pick(kAgeBands);
        profile.profession = pick(vocab.categories("profession"));
        profile.monthly_income_gbp = static_cast<double>(500 + rng.below(9501));
        panel.push_back(make_profile(std::move(profile), vocab, registry));
    }
    return panel;
}

// ---------------------------------------------------------------------------
// tally / run_experiment
// ---------------------------------------------------------------------------

ResponseDistribution tally_distribution(const std::vector<ParseResult>& answers,
                                        const QuestionSpec& question) {
    ResponseDistribution dist;
    dist.question_id = question.question_id();
    std::vector<long long> counts(static_cast<std::size_t>(question.option_count()), 0);
    for (const auto& answer : answers) {
        if (answer.status == ParseStatus::ok) {
            counts[static_cast<std::size_t>(answer.option_index - 1)] += 1;
            dist.n_samples += 1;
        } else {
            dist.excluded_count += 1;
        }
    }
    if (dist.n_samples == 0) {
        throw ValidationError(question.question_id() + ": no successful answers to tally");
    }
    dist.proportions.resize(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        dist.proportions[i] =
            static_cast<double>(counts[i]) / static_cast<double>(dist.n_samples);
    }
    return dist;
}

namespace {

struct CellOutcome {
    ParseResult parsed;
    Transcript transcript;
    bool backend_failure = false;
};

std::string sanitize_label(std::string_view label) {
    std::string out;
    for (char c : label) {
        out.push_back((std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_');
    }
    return out;
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const Vocabulary& vocab,
                                const QuestionRegistry& registry) {
    config.validate();

    std::vector<Profile> panel;
    if (config.panel.kind == PanelSource::Kind::file) {
        panel = load_panel(config.panel.path, vocab, registry);
        if (panel.empty()) throw ValidationError("panel file is empty: " + config.panel.path.string());
    } else {
        panel = generate_panel(config.panel.size, config.experiment_seed, vocab, registry);
    }

    std::vector<const QuestionSpec*> questions;
    if (config.question_ids.empty()) {
        for (const auto& question : registry.all()) questions.push_back(&question);
    } else {
        for (const auto& id : config.question_ids) questions.push_back(&registry.require(id));
    }
    if (questions.empty()) throw ValidationError("experiment has no questions");

    std::filesystem::create_directories(config.output_dir);

    ExperimentResult result;
    result.config_snapshot = config.to_json();
    result.template_version = std::string(prompt_template_version());
    result.seed = config.experiment_seed;
    result.panel_size = static_cast<long long>(panel.size());

    for (const auto& backend_config : config.models) {
        std::unique_ptr<Respondent> backend = make_respondent(backend_config, &registry, &panel);

        // One slot per (question, profile): workers fill slots, nothing is
        // order-dependent. All file writes happen after the join barrier.
        const std::size_t n_questions = questions.size();
        const std::size_t n_profiles = panel.size();
        std::vector<CellOutcome> cells(n_questions * n_profiles);

        std::atomic<std::size_t> next{0};
        std::atomic<bool> poisoned{false};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto worker = [&] {
            for (;;) {
                if (poisoned.load()) return;
                const std::size_t item = next.fetch_add(1);
                if (item >= cells.size()) return;
                const std::size_t qi = item / n_profiles;
                const std::size_t pi = item % n_profiles;
                const QuestionSpec& question = *questions[qi];
                const Profile& profile = panel[pi];
                CellOutcome& cell = cells[item];

                PromptPair pair = make_prompt_pair(profile, question, registry);
                cell.transcript.profile_id = profile.profile_id;
                cell.transcript.question_id = question.question_id();
                cell.transcript.system_text = pair.system_text;
                cell.transcript.user_text = pair.user_text;
                cell.transcript.backend_id = backend->id();
                cell.transcript.temperature = backend->temperature();
                try {
                    AskOutcome outcome = backend->ask(pair);
                    cell.parsed = parse_response(outcome.raw_reply, question);
                    if (cell.parsed.status != ParseStatus::ok &&
                        backend_config.reask_on_parse_failure) {
                        PromptPair retry = pair;
                        retry.user_text += "\n\nReply with only the option label.";
                        AskOutcome second = backend->ask(retry);
                        outcome.raw_reply = second.raw_reply;
                        outcome.attempts += second.attempts;
                        outcome.latency_ms += second.latency_ms;
                        cell.parsed = parse_response(outcome.raw_reply, question);
                    }
                    cell.transcript.raw_reply = outcome.raw_reply;
                    cell.transcript.attempts = outcome.attempts;
                    cell.transcript.latency_ms = outcome.latency_ms;
                    if (cell.parsed.status == ParseStatus::ok) {
                        cell.transcript.parsed_option = cell.parsed.option_index;
                    } else {
                        cell.transcript.failure_reason =
                            std::string(to_string(cell.parsed.status)) +
                            (cell.parsed.detail.empty() ? "" : ": " + cell.parsed.detail);
                    }
                } catch (const BackendError& ex) {
                    cell.backend_failure = true;
                    cell.parsed = {ParseStatus::no_match, 0, ex.what()};
                    cell.transcript.failure_reason = std::string("backend error: ") + ex.what();
                } catch (...) {
                    // configuration-level problems abort the run, not the cell
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    poisoned.store(true);
                    return;
                }
            }
        };

        const std::size_t thread_count =
            std::min<std::size_t>(static_cast<std::size_t>(config.workers), cells.size());
        std::vector<std::thread> pool;
        pool.reserve(thread_count);
        for (std::size_t t = 0; t < thread_count; ++t) pool.emplace_back(worker);
        for (auto& thread : pool) thread.join();
        if (first_error) std::rethrow_exception(first_error);

        // Tally per question; abort loudly when parsing failed too often.
        auto& model_results = result.distributions[backend_config.label];
        for (std::size_t qi = 0; qi < n_questions; ++qi) {
            const QuestionSpec& question = *questions[qi];
            std::vector<ParseResult> answers;
            answers.reserve(n_profiles);
            long long failures = 0;
            for (std::size_t pi = 0; pi < n_profiles; ++pi) {
                const CellOutcome& cell = cells[qi * n_profiles + pi];
                answers.push_back(cell.parsed);
                if (cell.parsed.status != ParseStatus::ok) ++failures;
            }
            QuestionResult qr;
            const double failure_ratio =
                static_cast<double>(failures) / static_cast<double>(n_profiles);
            if (failure_ratio > config.abort_parse_failure_ratio) {
                qr.aborted = true;
                qr.abort_reason = "parse failure ratio " + std::to_string(failure_ratio) +
                                  " exceeds threshold " +
                                  std::to_string(config.abort_parse_failure_ratio) + " (" +
                                  std::to_string(failures) + "/" + std::to_string(n_profiles) +
                                  " failures)";
            } else {
                qr.distribution = tally_distribution(answers, question);
            }
            model_results[question.question_id()] = std::move(qr);
        }

        if (config.write_transcripts) {
            const std::filesystem::path store =
                config.output_dir / ("transcripts_" + sanitize_label(backend_config.label) +
                                     ".jsonl");
            std::error_code ec;
            std::filesystem::remove(store, ec);
            std::vector<Transcript> ordered;
            ordered.reserve(cells.size());
            for (const auto& cell : cells) ordered.push_back(cell.transcript);
            append_transcripts(store, ordered);
            result.transcript_files[backend_config.label] = store;
        }
    }

    result.save(config.output_dir / "result.json");

    // Compact per-model distribution table, convenient to diff.
    nlohmann::json distributions = nlohmann::json::object();
    for (const auto& [label, questions_map] : result.distributions) {
        for (const auto& [question_id, qr] : questions_map) {
            if (qr.aborted) {
                distributions[label][question_id] = {{"aborted", true}};
            } else {
                distributions[label][question_id] = {
                    {"proportions", qr.distribution.proportions},
                    {"n_samples", qr.distribution.n_samples},
                    {"excluded", qr.distribution.excluded_count}};
            }
        }
    }
    std::ofstream dist_out(config.output_dir / "distributions.json", std::ios::binary);
    if (!dist_out) throw IoError("cannot write distributions.json");
    dist_out << distributions.dump(2) << '\n';

    return result;
}

// ---------------------------------------------------------------------------
// compare_to_reference
// ---------------------------------------------------------------------------

MetricReport compare_to_reference(const ExperimentResult& result, const ReferenceDataset& reference,
                                  const QuestionRegistry& registry, const MetricModes& modes) {
    MetricReport report;
    report.modes = modes;
    for (const auto& [label, questions_map] : result.distributions) {
        std::vector<MetricRow> model_rows;
        // registry order keeps the rows in the bundled table layout
        for (const auto& question : registry.all()) {
            auto cell = questions_map.find(question.question_id());
            if (cell == questions_map.end()) continue;
            if (cell->second.aborted) continue;
            const ReferenceEntry* entry = reference.find(question.question_id());
            if (!entry) {
                throw ValidationError("reference dataset lacks question: " +
                                      question.question_id());
            }
            if (entry->distribution.proportions.size() !=
                cell->second.distribution.proportions.size()) {
                throw ValidationError("option-order mismatch for question " +
                                      question.question_id());
            }
            MetricRow row =
                evaluate_question(cell->second.distribution, entry->distribution, modes);
            row.model_label = label;
            model_rows.push_back(std::move(row));
        }
        if (model_rows.empty()) {
            throw ValidationError("model " + label + " produced no comparable distributions");
        }
        report.aggregates.push_back(aggregate_model_scores(model_rows));
        for (auto& row : model_rows) report.rows.push_back(std::move(row));
    }
    return report;
}

} // namespace opsim
