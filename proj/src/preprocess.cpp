#include "opsim/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

#include "opsim/rng.hpp"
#include "opsim/text.hpp"

namespace opsim {

namespace {

std::optional<long long> parse_children(std::string_view raw) {
    std::string trimmed = collapse_whitespace(raw);
    if (trimmed.empty()) return std::nullopt;
    for (char c : trimmed) {
        if (c < '0' || c > '9') return std::nullopt;
    }
    errno = 0;
    char* end = nullptr;
    long long value = std::strtoll(trimmed.c_str(), &end, 10);
    if (errno != 0 || end != trimmed.c_str() + trimmed.size()) return std::nullopt;
    return value;
}

std::optional<double> parse_income(std::string_view raw) {
    std::string trimmed = collapse_whitespace(raw);
    if (trimmed.empty()) return std::nullopt;
    // tolerate a leading UTF-8 pound sign
    if (trimmed.size() >= 2 && static_cast<unsigned char>(trimmed[0]) == 0xc2 &&
        static_cast<unsigned char>(trimmed[1]) == 0xa3) {
        trimmed.erase(0, 2);
    }
    char* end = nullptr;
    errno = 0;
    double value = std::strtod(trimmed.c_str(), &end);
    if (errno != 0 || end != trimmed.c_str() + trimmed.size()) return std::nullopt;
    if (!std::isfinite(value) || value < 0.0) return std::nullopt;
    return value;
}

bool is_numeric_attribute(std::string_view field) {
    return field == "num_children" || field == "monthly_income_gbp";
}

// Canonical grouping key for one attribute cell; falls back to the raw text
// when the vocabulary cannot map it (cleaning guarantees it can).
std::string canonical_value(const Vocabulary& vocab, std::string_view field,
                            const FieldValue& value) {
    if (field == "num_children") {
        if (auto n = parse_children(value.raw)) return std::to_string(*n);
        return value.raw;
    }
    if (field == "monthly_income_gbp") {
        if (auto v = parse_income(value.raw)) {
            char buffer[48];
            std::snprintf(buffer, sizeof buffer, "%.10g", *v);
            return buffer;
        }
        return value.raw;
    }
    if (auto canonical = vocab.canonicalize(field, value.raw)) return *canonical;
    return value.raw;
}

std::vector<std::string> attribute_fields_in_schema(const SurveySchema& schema) {
    std::vector<std::string> present;
    for (const auto& field : profile_attribute_names()) {
        if (schema.field_index(field)) present.push_back(field);
    }
    return present;
}

void record_histograms(const std::vector<SurveyRecord>& records, const Vocabulary& vocab,
                       std::map<std::string, std::map<std::string, long long>>& out) {
    out.clear();
    if (records.empty()) return;
    for (const auto& field : categorical_attribute_names()) {
        if (!records.front().schema->field_index(field)) continue;
        auto& histogram = out[field];
        for (const auto& record : records) {
            histogram[canonical_value(vocab, field, record.at(field))] += 1;
        }
    }
}

} // namespace

std::string_view to_string(ImputeStrategy strategy) {
    return strategy == ImputeStrategy::sample_from_valid ? "sample-from-valid" : "mode";
}

ImputeStrategy impute_strategy_from_string(std::string_view text) {
    if (text == "sample-from-valid" || text == "sample_from_valid") {
        return ImputeStrategy::sample_from_valid;
    }
    if (text == "mode") return ImputeStrategy::mode;
    throw ValidationError("unknown imputation strategy: " + std::string(text));
}

void PanelBuildReport::check_identity() const {
    const long long expected =
        final_panel_size - oversampled_added + dropped_invalid + duplicates_removed;
    if (loaded != expected) {
        throw ValidationError("panel report identity violated: loaded=" + std::to_string(loaded) +
                              " but final-oversampled+dropped+duplicates=" +
                              std::to_string(expected));
    }
    for (const auto& [field, histogram] : histograms_before) {
        long long total = 0;
        for (const auto& [_, count] : histogram) total += count;
        if (total != histogram_before_total) {
            throw ValidationError("pre-balance histogram total mismatch for " + field);
        }
    }
    for (const auto& [field, histogram] : histograms_after) {
        long long total = 0;
        for (const auto& [_, count] : histogram) total += count;
        if (total != histogram_after_total) {
            throw ValidationError("post-balance histogram total mismatch for " + field);
        }
    }
}

nlohmann::json PanelBuildReport::to_json() const {
    nlohmann::json doc;
    doc["counts"] = {{"loaded", loaded},
                     {"dropped_invalid", dropped_invalid},
                     {"imputed_fields", imputed_fields},
                     {"duplicates_removed", duplicates_removed},
                     {"oversampled_added", oversampled_added},
                     {"final_panel_size", final_panel_size}};
    doc["seed"] = seed;
    doc["histograms"] = {{"before_balancing", histograms_before},
                         {"after_balancing", histograms_after},
                         {"before_total", histogram_before_total},
                         {"after_total", histogram_after_total}};
    return doc;
}

CleanResult clean_records(const std::vector<SurveyRecord>& records, const Vocabulary& vocab) {
    CleanResult result;
    for (const auto& record : records) {
        std::string reason;
        for (std::size_t i = 0; i < record.values.size() && reason.empty(); ++i) {
            if (contains_control_chars(record.values[i].raw)) {
                reason = "control characters in " + record.schema->fields[i];
            }
        }
        if (reason.empty()) {
            for (const auto& field : attribute_fields_in_schema(*record.schema)) {
                const FieldValue& value = record.at(field);
                if (value.sentinel) continue;
                if (field == "num_children") {
                    if (!parse_children(value.raw)) {
                        reason = "unparseable num_children: '" + value.raw + "'";
                        break;
                    }
                } else if (field == "monthly_income_gbp") {
                    if (!parse_income(value.raw)) {
                        reason = "unparseable monthly_income_gbp: '" + value.raw + "'";
                        break;
                    }
                } else if (!vocab.canonicalize(field, value.raw)) {
                    reason = "unparseable category: " + field + " = '" + value.raw + "'";
                    break;
                }
            }
        }
        if (reason.empty()) {
            result.kept.push_back(record);
        } else {
            result.dropped.push_back({record, std::move(reason)});
        }
    }
    return result;
}

std::vector<SurveyRecord> impute_invalid(std::vector<SurveyRecord> records,
                                         ImputeStrategy strategy, std::uint64_t seed,
                                         PanelBuildReport* report) {
    if (records.empty()) return records;
    for (const auto& field : attribute_fields_in_schema(*records.front().schema)) {
        const std::size_t index = *records.front().schema->field_index(field);
        std::vector<const std::string*> valid;
        bool any_sentinel = false;
        for (const auto& record : records) {
            if (record.values[index].sentinel) {
                any_sentinel = true;
            } else {
                valid.push_back(&record.values[index].raw);
            }
        }
        if (!any_sentinel) continue;
        if (valid.empty()) {
            throw ValidationError("cannot impute field '" + field +
                                  "': no valid values in the panel");
        }

        std::string mode_value;
        if (strategy == ImputeStrategy::mode) {
            std::map<std::string, long long> counts;
            for (const auto* v : valid) counts[*v] += 1;
            long long best = -1;
            for (const auto& [value, count] : counts) {
                if (count > best) {
                    best = count;
                    mode_value = value;
                }
            }
        }

        Rng rng(fnv1a64(fnv1a64(kFnvOffsetBasis, &seed, sizeof seed), field));
        for (auto& record : records) {
            FieldValue& cell = record.values[index];
            if (!cell.sentinel) continue;
            cell.raw = strategy == ImputeStrategy::mode
                           ? mode_value
                           : *valid[static_cast<std::size_t>(rng.below(valid.size()))];
            cell.sentinel.reset();
            if (report) report->imputed_fields += 1;
        }
    }
    return records;
}

std::vector<SurveyRecord> dedupe_profiles(const std::vector<SurveyRecord>& records,
                                          const Vocabulary& vocab, PanelBuildReport* report) {
    std::vector<SurveyRecord> out;
    out.reserve(records.size());
    std::set<std::string> seen;
    for (const auto& record : records) {
        std::string key;
        for (const auto& field : attribute_fields_in_schema(*record.schema)) {
            key += canonical_value(vocab, field, record.at(field));
            key += '\x1f';
        }
        if (seen.insert(key).second) {
            out.push_back(record);
        } else if (report) {
            report->duplicates_removed += 1;
        }
    }
    return out;
}

std::vector<SurveyRecord> balance_panel(std::vector<SurveyRecord> records,
                                        const BalanceConfig& config, const Vocabulary& vocab,
                                        std::uint64_t seed, PanelBuildReport* report) {
    if (report) {
        record_histograms(records, vocab, report->histograms_before);
        report->histogram_before_total = static_cast<long long>(records.size());
    }
    if (config.attributes.empty() || records.empty()) {
        if (report) {
            record_histograms(records, vocab, report->histograms_after);
            report->histogram_after_total = static_cast<long long>(records.size());
        }
        return records;
    }

    const auto& categorical = categorical_attribute_names();
    for (const auto& attribute : config.attributes) {
        if (std::find(categorical.begin(), categorical.end(), attribute) == categorical.end()) {
            throw ValidationError("unknown balancing attribute: " + attribute);
        }
        if (!records.front().schema->field_index(attribute)) {
            throw ValidationError("balancing attribute not in survey schema: " + attribute);
        }
    }
    if (!(config.floor > 0.0 && config.floor < 1.0)) {
        throw ValidationError("balance floor must be in (0, 1)");
    }

    auto group_by = [&](const std::string& attribute) {
        std::map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < records.size(); ++i) {
            groups[canonical_value(vocab, attribute, records[i].at(attribute))].push_back(i);
        }
        return groups;
    };

    for (const auto& attribute : config.attributes) {
        const std::size_t k = group_by(attribute).size();
        if (k > 0 && config.floor > 1.0 / static_cast<double>(k) + 1e-12) {
            throw ValidationError("balance floor " + std::to_string(config.floor) +
                                  " infeasible for attribute '" + attribute + "' with " +
                                  std::to_string(k) + " categories");
        }
    }

    Rng rng(fnv1a64(fnv1a64(kFnvOffsetBasis, &seed, sizeof seed), "balance"));
    const std::vector<std::string> other_fields = attribute_fields_in_schema(*records.front().schema);

    constexpr int kMaxPasses = 200;
    for (int pass = 0; pass < kMaxPasses; ++pass) {
        bool changed = false;
        for (const auto& attribute : config.attributes) {
            auto groups = group_by(attribute);
            for (const auto& [category, members] : groups) {
                const double n = static_cast<double>(records.size());
                const double count = static_cast<double>(members.size());
                if (count / n >= config.floor - 1e-12) continue;
                // smallest a with (count + a) / (n + a) >= floor
                const long long needed = static_cast<long long>(
                    std::ceil((config.floor * n - count) / (1.0 - config.floor) - 1e-12));
                for (long long added = 0; added < needed; ++added) {
                    const SurveyRecord& donor =
                        records[members[static_cast<std::size_t>(rng.below(members.size()))]];
                    SurveyRecord synthetic = donor;
                    synthetic.synthetic_oversample = true;
                    for (const auto& field : other_fields) {
                        if (field == attribute) continue;
                        const std::size_t fi = *synthetic.schema->field_index(field);
                        const SurveyRecord& source =
                            records[members[static_cast<std::size_t>(rng.below(members.size()))]];
                        synthetic.values[fi] = source.values[fi];
                    }
                    records.push_back(std::move(synthetic));
                    if (report) report->oversampled_added += 1;
                }
                if (needed > 0) changed = true;
            }
            if (changed) break; // re-group from scratch after growth
        }
        if (!changed) break;
        if (pass == kMaxPasses - 1) {
            throw ValidationError("balance_panel did not converge; floor too aggressive");
        }
    }

    if (report) {
        record_histograms(records, vocab, report->histograms_after);
        report->histogram_after_total = static_cast<long long>(records.size());
    }
    return records;
}

std::vector<SurveyRecord> shuffle_panel(std::vector<SurveyRecord> records, std::uint64_t seed) {
    Rng rng(fnv1a64(fnv1a64(kFnvOffsetBasis, &seed, sizeof seed), "shuffle"));
    seeded_shuffle(records, rng);
    return records;
}

std::vector<Profile> derive_profiles(const std::vector<SurveyRecord>& records,
                                     const Vocabulary& vocab, const QuestionRegistry& registry,
                                     PanelBuildReport* report) {
    std::vector<Profile> panel;
    panel.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const SurveyRecord& record = records[i];
        const std::string row = "row " + std::to_string(record.row_number);

        for (const auto& field : profile_attribute_names()) {
            if (!record.schema->field_index(field)) {
                throw ValidationError("survey schema lacks attribute column '" + field + "'");
            }
            if (record.at(field).sentinel) {
                throw ValidationError(row + ": field " + field +
                                      " still carries a sentinel value after imputation");
            }
        }

        Profile profile;
        auto canonical = [&](const char* field) {
            auto value = vocab.canonicalize(field, record.at(field).raw);
            if (!value) {
                throw ValidationError(row + ": field " + field + " has unmappable value '" +
                                      record.at(field).raw + "'");
            }
            return *value;
        };
        profile.voting_intention = canonical("voting_intention");
        profile.ethnic_group = canonical("ethnic_group");
        profile.gender = canonical("gender");
        profile.marital_status = canonical("marital_status");
        profile.highest_qualification = canonical("highest_qualification");
        profile.region = canonical("region");
        profile.living_area = canonical("living_area");
        profile.age_group = canonical("age_group");
        profile.profession = canonical("profession");

        auto children = parse_children(record.at("num_children").raw);
        if (!children) {
            throw ValidationError(row + ": unparseable num_children '" +
                                  record.at("num_children").raw + "'");
        }
        profile.num_children = static_cast<int>(*children);

        auto income = parse_income(record.at("monthly_income_gbp").raw);
        if (!income) {
            throw ValidationError(row + ": unparseable monthly_income_gbp '" +
                                  record.at("monthly_income_gbp").raw + "'");
        }
        profile.monthly_income_gbp = *income;

        if (const FieldValue* id = record.find("profile_id"); id && !id->raw.empty()) {
            profile.profile_id = id->raw;
        } else {
            profile.profile_id = "row" + std::to_string(record.row_number == 0
                                                            ? i + 1
                                                            : record.row_number) +
                                 (record.synthetic_oversample ? "s" + std::to_string(i) : "");
        }

        const FieldValue* seed_question = record.find("seed_question_id");
        const FieldValue* seed_option = record.find("seed_option");
        if (seed_question && seed_option && !seed_question->raw.empty() &&
            !seed_option->raw.empty() && !seed_question->sentinel && !seed_option->sentinel) {
            profile.seed_attitude = SeedAttitude{seed_question->raw, seed_option->raw};
        }

        panel.push_back(make_profile(std::move(profile), vocab, registry));
    }
    if (report) {
        report->final_panel_size = static_cast<long long>(panel.size());
        report->check_identity();
    }
    return panel;
}

PipelineOutput run_pipeline(const std::vector<SurveyRecord>& records,
                            const PreprocessConfig& config, const Vocabulary& vocab,
                            const QuestionRegistry& registry) {
    PipelineOutput output;
    output.report.seed = config.seed;
    output.report.loaded = static_cast<long long>(records.size());

    CleanResult cleaned = clean_records(records, vocab);
    output.dropped = std::move(cleaned.dropped);
    output.report.dropped_invalid = static_cast<long long>(output.dropped.size());

    std::vector<SurveyRecord> stage =
        impute_invalid(std::move(cleaned.kept), config.strategy, config.seed, &output.report);
    stage = dedupe_profiles(stage, vocab, &output.report);
    stage = balance_panel(std::move(stage), config.balance, vocab, config.seed, &output.report);
    stage = shuffle_panel(std::move(stage), config.seed);
    output.panel = derive_profiles(stage, vocab, registry, &output.report);
    return output;
}

} // namespace opsim
