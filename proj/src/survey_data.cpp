#include "opsim/survey_data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "opsim/text.hpp"

namespace opsim {

namespace {

std::string read_file_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

nlohmann::json parse_json_file(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_file_text(path));
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError("invalid JSON in " + path.string() + ": " + ex.what());
    }
}

std::optional<long long> parse_integer_exact(std::string_view text) {
    std::string trimmed = collapse_whitespace(text);
    if (trimmed.empty()) return std::nullopt;
    std::size_t pos = 0;
    bool negative = false;
    if (trimmed[pos] == '-' || trimmed[pos] == '+') {
        negative = trimmed[pos] == '-';
        ++pos;
    }
    if (pos >= trimmed.size()) return std::nullopt;
    long long value = 0;
    for (; pos < trimmed.size(); ++pos) {
        char c = trimmed[pos];
        if (c < '0' || c > '9') return std::nullopt;
        value = value * 10 + (c - '0');
        if (value > 1'000'000'000LL) return std::nullopt;
    }
    return negative ? -value : value;
}

// Quote-aware split of one delimited line. Doubled quotes inside a quoted
// field decode to a literal quote.
std::vector<std::string> split_delimited(const std::string& line, char delimiter) {
    std::vector<std::string> out;
    std::string current;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    current.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                current.push_back(c);
            }
        } else if (c == '"' && current.empty()) {
            in_quotes = true;
        } else if (c == delimiter) {
            out.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    out.push_back(std::move(current));
    return out;
}

} // namespace

const std::vector<std::string>& profile_attribute_names() {
    static const std::vector<std::string> names = {
        "voting_intention", "ethnic_group",  "gender",     "marital_status",
        "highest_qualification", "num_children", "region", "living_area",
        "age_group",         "profession",   "monthly_income_gbp"};
    return names;
}

const std::vector<std::string>& categorical_attribute_names() {
    static const std::vector<std::string> names = {
        "voting_intention", "ethnic_group", "gender",    "marital_status",
        "highest_qualification", "region",  "living_area", "age_group", "profession"};
    return names;
}

// ---------------------------------------------------------------------------
// load_survey_records
// ---------------------------------------------------------------------------

std::vector<SurveyRecord> load_survey_records(const std::filesystem::path& path,
                                              const SurveySchema& schema) {
    if (schema.fields.empty()) throw ValidationError("survey schema declares no fields");

    std::string text = read_file_text(path);
    if (text.size() >= 3 && text.compare(0, 3, "\xef\xbb\xbf") == 0) text.erase(0, 3); // BOM

    std::vector<std::string> lines;
    {
        std::size_t start = 0;
        while (start <= text.size()) {
            std::size_t end = text.find('\n', start);
            if (end == std::string::npos) end = text.size();
            std::string line = text.substr(start, end - start);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            lines.push_back(std::move(line));
            if (end == text.size()) break;
            start = end + 1;
        }
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) throw ValidationError("survey file has no header row: " + path.string());

    const char delimiter = lines[0].find('\t') != std::string::npos ? '\t' : ',';

    // Header -> schema field mapping, after alias substitution. Column order
    // is free; missing/extra/duplicate columns are schema mismatches.
    std::vector<std::string> header = split_delimited(lines[0], delimiter);
    std::vector<std::size_t> column_to_field(header.size());
    std::vector<bool> seen(schema.fields.size(), false);
    for (std::size_t col = 0; col < header.size(); ++col) {
        std::string name = collapse_whitespace(header[col]);
        if (auto alias = schema.aliases.find(name); alias != schema.aliases.end()) {
            name = alias->second;
        }
        auto idx = schema.field_index(name);
        if (!idx) {
            throw ValidationError("header/schema mismatch: unexpected column '" + name + "' in " +
                                  path.string());
        }
        if (seen[*idx]) {
            throw ValidationError("header/schema mismatch: duplicate column '" + name + "' in " +
                                  path.string());
        }
        seen[*idx] = true;
        column_to_field[col] = *idx;
    }
    for (std::size_t i = 0; i < schema.fields.size(); ++i) {
        if (!seen[i]) {
            throw ValidationError("header/schema mismatch: missing column '" + schema.fields[i] +
                                  "' in " + path.string());
        }
    }

    auto shared_schema = std::make_shared<const SurveySchema>(schema);
    std::vector<SurveyRecord> records;
    records.reserve(lines.size() > 0 ? lines.size() - 1 : 0);

    for (std::size_t row = 1; row < lines.size(); ++row) {
        if (lines[row].empty()) continue;
        std::vector<std::string> cells = split_delimited(lines[row], delimiter);
        if (cells.size() != header.size()) {
            throw ValidationError("row " + std::to_string(row) + " has " +
                                  std::to_string(cells.size()) + " columns, expected " +
                                  std::to_string(header.size()) + " (" + path.string() + ")");
        }
        SurveyRecord record;
        record.schema = shared_schema;
        record.values.resize(schema.fields.size());
        record.row_number = row;
        for (std::size_t col = 0; col < cells.size(); ++col) {
            FieldValue value;
            value.raw = std::move(cells[col]);
            if (auto code = parse_integer_exact(value.raw)) {
                if (schema.sentinel_codes.count(*code)) value.sentinel = *code;
            }
            record.values[column_to_field[col]] = std::move(value);
        }
        records.push_back(std::move(record));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocabulary Vocabulary::from_json(const nlohmann::json& doc) {
    Vocabulary vocab;
    if (!doc.contains("categories") || !doc.at("categories").is_object()) {
        throw ValidationError("vocabulary document lacks a categories object");
    }
    for (const auto& [field, list] : doc.at("categories").items()) {
        std::vector<std::string> categories;
        std::map<std::string, std::string> lookup;
        for (const auto& item : list) {
            std::string label = item.get<std::string>();
            if (label.empty()) throw ValidationError("empty category label for field " + field);
            lookup[canon_key(label)] = label;
            categories.push_back(std::move(label));
        }
        vocab.categories_[field] = std::move(categories);
        vocab.lookup_[field] = std::move(lookup);
    }
    vocab.age_pattern_ = doc.value("age_group_pattern",
                                   std::string("^[0-9]{1,2}\\s*-\\s*[0-9]{1,3}( years old)?$"));
    if (doc.contains("synonyms")) {
        for (const auto& [field, table] : doc.at("synonyms").items()) {
            auto lookup = vocab.lookup_.find(field);
            if (lookup == vocab.lookup_.end()) {
                throw ValidationError("synonyms declared for unknown field " + field);
            }
            for (const auto& [raw, canonical] : table.items()) {
                std::string target = canonical.get<std::string>();
                const auto& cats = vocab.categories_.at(field);
                if (std::find(cats.begin(), cats.end(), target) == cats.end()) {
                    throw ValidationError("synonym target '" + target +
                                          "' is not a declared category of " + field);
                }
                lookup->second[canon_key(raw)] = target;
            }
        }
    }
    return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    return from_json(parse_json_file(path));
}

bool Vocabulary::is_categorical(std::string_view field) const {
    return categories_.find(field) != categories_.end();
}

bool Vocabulary::age_group_matches(std::string_view value) const {
    static thread_local std::map<std::string, std::regex> cache;
    auto it = cache.find(age_pattern_);
    if (it == cache.end()) {
        it = cache.emplace(age_pattern_, std::regex(age_pattern_)).first;
    }
    return std::regex_match(value.begin(), value.end(), it->second);
}

bool Vocabulary::is_valid(std::string_view field, std::string_view value) const {
    if (field == "age_group") return age_group_matches(value);
    auto it = categories_.find(field);
    if (it == categories_.end()) return false;
    return std::find(it->second.begin(), it->second.end(), value) != it->second.end();
}

std::optional<std::string> Vocabulary::canonicalize(std::string_view field,
                                                    std::string_view raw) const {
    if (field == "age_group") {
        std::string collapsed = collapse_whitespace(raw);
        if (age_group_matches(collapsed)) return collapsed;
        return std::nullopt;
    }
    auto it = lookup_.find(field);
    if (it == lookup_.end()) return std::nullopt;
    auto hit = it->second.find(canon_key(raw));
    if (hit == it->second.end()) return std::nullopt;
    return hit->second;
}

const std::vector<std::string>& Vocabulary::categories(std::string_view field) const {
    auto it = categories_.find(field);
    if (it == categories_.end()) {
        throw ValidationError("no declared categories for field " + std::string(field));
    }
    return it->second;
}

// ---------------------------------------------------------------------------
// Profile
// ---------------------------------------------------------------------------

std::string_view Profile::attribute(std::string_view name) const {
    if (name == "voting_intention") return voting_intention;
    if (name == "ethnic_group") return ethnic_group;
    if (name == "gender") return gender;
    if (name == "marital_status") return marital_status;
    if (name == "highest_qualification") return highest_qualification;
    if (name == "region") return region;
    if (name == "living_area") return living_area;
    if (name == "age_group") return age_group;
    if (name == "profession") return profession;
    throw ValidationError("unknown categorical profile attribute: " + std::string(name));
}

Profile make_profile(Profile candidate, const Vocabulary& vocab, const QuestionRegistry& registry) {
    if (candidate.profile_id.empty()) throw ValidationError("profile_id must be non-empty");
    for (const auto& field : categorical_attribute_names()) {
        std::string_view value = candidate.attribute(field);
        if (!vocab.is_valid(field, value)) {
            throw ValidationError("profile " + candidate.profile_id + ": field " + field +
                                  " has unknown value '" + std::string(value) + "'");
        }
    }
    if (candidate.num_children < 0) {
        throw ValidationError("profile " + candidate.profile_id + ": num_children must be >= 0");
    }
    if (candidate.monthly_income_gbp) {
        double income = *candidate.monthly_income_gbp;
        if (!(income >= 0.0) || !std::isfinite(income)) {
            throw ValidationError("profile " + candidate.profile_id +
                                  ": monthly_income_gbp must be a non-negative number");
        }
    }
    if (candidate.seed_attitude) {
        const QuestionSpec& question = registry.require(candidate.seed_attitude->question_id);
        if (!question.index_of_label(candidate.seed_attitude->option_label)) {
            throw ValidationError("profile " + candidate.profile_id + ": seed attitude option '" +
                                  candidate.seed_attitude->option_label +
                                  "' is not an option of question " + question.question_id());
        }
    }
    return candidate;
}

nlohmann::json profile_to_json(const Profile& p) {
    nlohmann::json doc{{"profile_id", p.profile_id},
                       {"voting_intention", p.voting_intention},
                       {"ethnic_group", p.ethnic_group},
                       {"gender", p.gender},
                       {"marital_status", p.marital_status},
                       {"highest_qualification", p.highest_qualification},
                       {"num_children", p.num_children},
                       {"region", p.region},
                       {"living_area", p.living_area},
                       {"age_group", p.age_group},
                       {"profession", p.profession}};
    if (p.monthly_income_gbp) doc["monthly_income_gbp"] = *p.monthly_income_gbp;
    if (p.seed_attitude) {
        doc["seed_attitude"] = {{"question_id", p.seed_attitude->question_id},
                                {"option_label", p.seed_attitude->option_label}};
    }
    return doc;
}

Profile profile_from_json(const nlohmann::json& doc, const Vocabulary& vocab,
                          const QuestionRegistry& registry) {
    Profile p;
    try {
        p.profile_id = doc.at("profile_id").get<std::string>();
        p.voting_intention = doc.at("voting_intention").get<std::string>();
        p.ethnic_group = doc.at("ethnic_group").get<std::string>();
        p.gender = doc.at("gender").get<std::string>();
        p.marital_status = doc.at("marital_status").get<std::string>();
        p.highest_qualification = doc.at("highest_qualification").get<std::string>();
        p.num_children = doc.at("num_children").get<int>();
        p.region = doc.at("region").get<std::string>();
        p.living_area = doc.at("living_area").get<std::string>();
        p.age_group = doc.at("age_group").get<std::string>();
        p.profession = doc.at("profession").get<std::string>();
        if (doc.contains("monthly_income_gbp")) {
            p.monthly_income_gbp = doc.at("monthly_income_gbp").get<double>();
        }
        if (doc.contains("seed_attitude")) {
            SeedAttitude seed;
            seed.question_id = doc.at("seed_attitude").at("question_id").get<std::string>();
            seed.option_label = doc.at("seed_attitude").at("option_label").get<std::string>();
            p.seed_attitude = std::move(seed);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("malformed profile record: ") + ex.what());
    }
    return make_profile(std::move(p), vocab, registry);
}

void save_panel(const std::vector<Profile>& panel, const std::filesystem::path& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& profile : panel) doc.push_back(profile_to_json(profile));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write panel file: " + path.string());
    out << doc.dump(2) << '\n';
}

std::vector<Profile> load_panel(const std::filesystem::path& path, const Vocabulary& vocab,
                                const QuestionRegistry& registry) {
    nlohmann::json doc = parse_json_file(path);
    if (!doc.is_array()) throw ValidationError("panel file must be a JSON array: " + path.string());
    std::vector<Profile> panel;
    panel.reserve(doc.size());
    for (const auto& item : doc) panel.push_back(profile_from_json(item, vocab, registry));
    return panel;
}

// ---------------------------------------------------------------------------
// QuestionSpec / QuestionRegistry
// ---------------------------------------------------------------------------

std::string_view to_string(QuestionKind kind) {
    switch (kind) {
    case QuestionKind::likert5: return "likert5";
    case QuestionKind::categorical: return "categorical";
    case QuestionKind::binary: return "binary";
    }
    return "unknown";
}

QuestionKind question_kind_from_string(std::string_view text) {
    if (text == "likert5") return QuestionKind::likert5;
    if (text == "categorical") return QuestionKind::categorical;
    if (text == "binary") return QuestionKind::binary;
    throw ValidationError("unknown question kind: " + std::string(text));
}

QuestionSpec::QuestionSpec(std::string question_id, std::string ukhls_code,
                           std::string prompt_text, std::vector<QuestionOption> options,
                           QuestionKind kind)
    : question_id_(std::move(question_id)),
      ukhls_code_(std::move(ukhls_code)),
      prompt_text_(std::move(prompt_text)),
      options_(std::move(options)),
      kind_(kind) {
    if (question_id_.empty()) throw ValidationError("question_id must be non-empty");
    if (prompt_text_.empty()) throw ValidationError(question_id_ + ": prompt text is empty");
    if (options_.size() < 2) {
        throw ValidationError(question_id_ + ": a question needs at least 2 options");
    }
    std::set<std::string> labels;
    for (auto& option : options_) {
        if (option.label.empty()) throw ValidationError(question_id_ + ": empty option label");
        if (!labels.insert(option.label).second) {
            throw ValidationError(question_id_ + ": duplicate option label '" + option.label + "'");
        }
        if (option.short_label.empty()) option.short_label = option.label;
    }
    if (kind_ == QuestionKind::binary && options_.size() != 2) {
        throw ValidationError(question_id_ + ": binary questions take exactly 2 options");
    }
    if (kind_ != QuestionKind::binary && options_.size() == 2) {
        throw ValidationError(question_id_ + ": 2-option questions must be kind binary");
    }
    if (kind_ == QuestionKind::likert5 && options_.size() != 5) {
        throw ValidationError(question_id_ + ": likert5 questions take exactly 5 options");
    }
}

const QuestionOption& QuestionSpec::option(int index) const {
    if (index < 1 || index > option_count()) {
        throw ValidationError(question_id_ + ": option index " + std::to_string(index) +
                              " out of range 1.." + std::to_string(option_count()));
    }
    return options_[static_cast<std::size_t>(index - 1)];
}

std::optional<int> QuestionSpec::index_of_label(std::string_view label) const {
    for (std::size_t i = 0; i < options_.size(); ++i) {
        if (options_[i].label == label) return static_cast<int>(i + 1);
    }
    return std::nullopt;
}

void QuestionRegistry::add(QuestionSpec question) {
    if (find(question.question_id())) {
        throw ValidationError("duplicate question id: " + question.question_id());
    }
    questions_.push_back(std::move(question));
}

const QuestionSpec* QuestionRegistry::find(std::string_view question_id) const {
    for (const auto& question : questions_) {
        if (question.question_id() == question_id) return &question;
    }
    return nullptr;
}

const QuestionSpec& QuestionRegistry::require(std::string_view question_id) const {
    const QuestionSpec* question = find(question_id);
    if (!question) throw ValidationError("question not registered: " + std::string(question_id));
    return *question;
}

std::vector<std::string> QuestionRegistry::ids() const {
    std::vector<std::string> out;
    out.reserve(questions_.size());
    for (const auto& question : questions_) out.push_back(question.question_id());
    return out;
}

QuestionRegistry QuestionRegistry::from_json(const nlohmann::json& doc) {
    QuestionRegistry registry;
    if (!doc.contains("questions") || !doc.at("questions").is_array()) {
        throw ValidationError("question document lacks a questions array");
    }
    for (const auto& item : doc.at("questions")) {
        std::vector<QuestionOption> options;
        for (const auto& opt : item.at("options")) {
            QuestionOption option;
            option.label = opt.at("label").get<std::string>();
            option.short_label = opt.value("short_label", option.label);
            options.push_back(std::move(option));
        }
        registry.add(QuestionSpec(item.at("question_id").get<std::string>(),
                                  item.value("ukhls_code", std::string{}),
                                  item.at("prompt_text").get<std::string>(), std::move(options),
                                  question_kind_from_string(item.at("kind").get<std::string>())));
    }
    return registry;
}

QuestionRegistry QuestionRegistry::load(const std::filesystem::path& path) {
    return from_json(parse_json_file(path));
}

// ---------------------------------------------------------------------------
// Distributions / reference data
// ---------------------------------------------------------------------------

std::vector<double> normalize_distribution(std::span<const double> raw) {
    if (raw.empty()) throw ValidationError("cannot normalize an empty vector");
    double sum = 0.0;
    for (double v : raw) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ValidationError("distribution entries must be finite and non-negative");
        }
        sum += v;
    }
    if (sum <= 0.0) throw ValidationError("cannot normalize an all-zero vector");
    std::vector<double> out(raw.begin(), raw.end());
    for (double& v : out) v /= sum;
    return out;
}

void validate_distribution(const ResponseDistribution& dist, const QuestionSpec& question) {
    if (static_cast<int>(dist.proportions.size()) != question.option_count()) {
        throw ValidationError(dist.question_id + ": distribution length " +
                              std::to_string(dist.proportions.size()) + " != option count " +
                              std::to_string(question.option_count()));
    }
    double sum = 0.0;
    for (double p : dist.proportions) {
        if (!(p >= 0.0) || p > 1.0 + 1e-12) {
            throw ValidationError(dist.question_id + ": proportion out of [0,1]");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError(dist.question_id + ": proportions sum to " + std::to_string(sum));
    }
    if (dist.n_samples < 0 || dist.excluded_count < 0) {
        throw ValidationError(dist.question_id + ": negative sample counts");
    }
}

const ReferenceEntry* ReferenceDataset::find(std::string_view question_id) const {
    auto it = entries.find(std::string(question_id));
    return it == entries.end() ? nullptr : &it->second;
}

ReferenceDataset build_reference_dataset(const std::vector<ReferenceSourceRow>& source,
                                         const QuestionRegistry& registry,
                                         std::string provenance) {
    ReferenceDataset dataset;
    dataset.provenance = std::move(provenance);
    for (const auto& row : source) {
        const QuestionSpec& question = registry.require(row.question_id);
        if (static_cast<int>(row.percent.size()) != question.option_count()) {
            throw ValidationError("reference row " + row.question_id + " has " +
                                  std::to_string(row.percent.size()) + " values, question has " +
                                  std::to_string(question.option_count()) + " options");
        }
        if (!row.labels.empty()) {
            if (row.labels.size() != row.percent.size()) {
                throw ValidationError("reference row " + row.question_id +
                                      ": label/value count mismatch");
            }
            for (std::size_t i = 0; i < row.labels.size(); ++i) {
                const QuestionOption& option = question.options()[i];
                if (row.labels[i] != option.label && row.labels[i] != option.short_label) {
                    throw ValidationError("reference row " + row.question_id + " option " +
                                          std::to_string(i + 1) + ": label '" + row.labels[i] +
                                          "' does not match question option '" + option.label +
                                          "'");
                }
            }
        }

        ReferenceEntry entry;
        entry.labels = row.labels;
        if (entry.labels.empty()) {
            for (const auto& option : question.options()) entry.labels.push_back(option.short_label);
        }
        entry.raw_percent = row.percent;
        for (double v : row.percent) {
            if (v < 0.0) {
                throw ValidationError("reference row " + row.question_id +
                                      " contains a negative percentage");
            }
            entry.raw_sum += v;
        }
        entry.distribution.question_id = row.question_id;
        entry.distribution.proportions = normalize_distribution(row.percent);
        entry.distribution.n_samples = 0;
        entry.renormalized = std::abs(entry.raw_sum - 100.0) > 0.5;
        if (entry.renormalized) {
            dataset.warnings.push_back("reference row " + row.question_id +
                                       ": raw percentages sum to " + std::to_string(entry.raw_sum) +
                                       "; renormalized to 1");
        }
        validate_distribution(entry.distribution, question);
        dataset.entries[row.question_id] = std::move(entry);
    }
    return dataset;
}

ReferenceDataset load_reference_dataset(const std::filesystem::path& path,
                                        const QuestionRegistry& registry) {
    nlohmann::json doc = parse_json_file(path);
    if (!doc.contains("entries") || !doc.at("entries").is_object()) {
        throw ValidationError("reference file lacks an entries object: " + path.string());
    }
    std::vector<ReferenceSourceRow> rows;
    for (const auto& [question_id, entry] : doc.at("entries").items()) {
        ReferenceSourceRow row;
        row.question_id = question_id;
        if (entry.contains("labels")) {
            for (const auto& label : entry.at("labels")) {
                row.labels.push_back(label.get<std::string>());
            }
        }
        for (const auto& value : entry.at("percent")) row.percent.push_back(value.get<double>());
        rows.push_back(std::move(row));
    }
    return build_reference_dataset(rows, registry, doc.value("provenance", std::string{}));
}

} // namespace opsim
