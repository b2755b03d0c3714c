#include "opsim/promptgen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "opsim/rng.hpp"
#include "opsim/text.hpp"

namespace opsim {

namespace {

// Regions that read as proper nouns and take no article.
bool region_takes_article(std::string_view region) {
    return region != "London" && region != "Scotland" && region != "Wales" &&
           region != "Northern Ireland";
}

bool starts_with_vowel(std::string_view text) {
    if (text.empty()) return false;
    char c = text.front();
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'A' || c == 'E' ||
           c == 'I' || c == 'O' || c == 'U';
}

std::string format_pounds(double amount) {
    double integral = 0.0;
    if (std::modf(amount, &integral) == 0.0) {
        char buffer[32];
        std::snprintf(buffer, sizeof buffer, "%.0f", amount);
        return buffer;
    }
    char buffer[48];
    std::snprintf(buffer, sizeof buffer, "%.2f", amount);
    std::string out = buffer;
    while (!out.empty() && out.back() == '0') out.pop_back();
    if (!out.empty() && out.back() == '.') out.pop_back();
    return out;
}

} // namespace

std::string_view prompt_template_version() { return "uk-profiles-v1"; }

std::string render_system_prompt(const Profile& profile, const QuestionRegistry& registry) {
    std::string out;
    out.reserve(600);

    out += "Ideologically, I describe myself as a " + profile.voting_intention + " supporter.";
    out += " Racially, I am " + profile.ethnic_group + ".";
    out += " I am " + to_lower_ascii(profile.gender) + ".";
    out += " My marital status is " + profile.marital_status + ".";
    if (profile.highest_qualification == "no qualifications") {
        out += " In terms of my qualifications, I do not have any qualifications.";
    } else {
        out += " In terms of my qualifications, My highest qualification is " +
               profile.highest_qualification + ".";
    }
    if (profile.monthly_income_gbp) {
        out += " Financially, my monthly income is £" +
               format_pounds(*profile.monthly_income_gbp) + ".";
    }
    if (profile.num_children == 0) {
        out += " I do not have any children.";
    } else if (profile.num_children == 1) {
        out += " I have 1 child.";
    } else {
        out += " I have " + std::to_string(profile.num_children) + " children.";
    }
    if (region_takes_article(profile.region)) {
        out += " I live in the " + profile.region + ".";
    } else {
        out += " I live in " + profile.region + ".";
    }
    out += starts_with_vowel(profile.living_area) ? " I live in an " : " I live in a ";
    out += profile.living_area + " area.";
    out += " In terms of my age, my age group is " + profile.age_group + ".";
    out += " My profession is " + profile.profession + ".";
    if (profile.seed_attitude) {
        const QuestionSpec& question = registry.require(profile.seed_attitude->question_id);
        out += " When I asked to write my response to the question, \"" +
               question.prompt_text() + "\", I respond with " +
               profile.seed_attitude->option_label + ".";
    }
    return out;
}

std::string render_user_prompt(const QuestionSpec& question) {
    std::string out = "Please answer this question \"" + question.prompt_text() +
                      "\" with one of the options without any additional explanation. Options:";
    for (int i = 1; i <= question.option_count(); ++i) {
        out += "\n" + std::to_string(i) + ". " + question.option(i).label;
    }
    return out;
}

PromptPair make_prompt_pair(const Profile& profile, const QuestionSpec& question,
                            const QuestionRegistry& registry) {
    PromptPair pair;
    pair.system_text = render_system_prompt(profile, registry);
    pair.user_text = render_user_prompt(question);
    pair.profile_id = profile.profile_id;
    pair.question_id = question.question_id();
    return pair;
}

ExportSummary export_finetune_dataset(const std::vector<Profile>& panel,
                                      const std::vector<AnswerKey>& answers,
                                      const QuestionRegistry& registry, double split,
                                      std::uint64_t seed,
                                      const std::filesystem::path& train_path,
                                      const std::filesystem::path& validation_path) {
    if (panel.empty()) throw ValidationError("export_finetune_dataset: empty panel");
    if (!(split > 0.0 && split < 1.0)) {
        throw ValidationError("export_finetune_dataset: split must be in (0, 1)");
    }

    std::map<std::string, const Profile*> by_id;
    for (const auto& profile : panel) by_id[profile.profile_id] = &profile;

    std::vector<std::string> lines;
    lines.reserve(answers.size());
    for (const auto& answer : answers) {
        auto profile = by_id.find(answer.profile_id);
        if (profile == by_id.end()) {
            throw ValidationError("answer references unknown profile: " + answer.profile_id);
        }
        const QuestionSpec& question = registry.require(answer.question_id);
        if (!question.index_of_label(answer.option_label)) {
            throw ValidationError("answer for question " + answer.question_id +
                                  " is not one of its option labels: '" + answer.option_label +
                                  "'");
        }
        PromptPair pair = make_prompt_pair(*profile->second, question, registry);
        nlohmann::json record{
            {"messages",
             {{{"role", "system"}, {"content", pair.system_text}},
              {{"role", "user"}, {"content", pair.user_text}},
              {{"role", "assistant"}, {"content", answer.option_label}}}}};
        lines.push_back(record.dump());
    }
    if (lines.empty()) throw ValidationError("export_finetune_dataset: no answers to export");

    std::vector<std::size_t> order(lines.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(fnv1a64(fnv1a64(kFnvOffsetBasis, &seed, sizeof seed), "finetune-split"));
    seeded_shuffle(order, rng);

    const auto train_count = static_cast<std::size_t>(
        std::llround(split * static_cast<double>(lines.size())));

    std::ofstream train(train_path, std::ios::binary);
    if (!train) throw IoError("cannot write " + train_path.string());
    std::ofstream validation(validation_path, std::ios::binary);
    if (!validation) throw IoError("cannot write " + validation_path.string());

    ExportSummary summary;
    summary.total = static_cast<long long>(lines.size());
    summary.split = split;
    summary.seed = seed;
    summary.train_path = train_path;
    summary.validation_path = validation_path;
    summary.template_version = std::string(prompt_template_version());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (rank < train_count) {
            train << lines[order[rank]] << '\n';
            ++summary.train;
        } else {
            validation << lines[order[rank]] << '\n';
            ++summary.validation;
        }
    }
    return summary;
}

nlohmann::json ExportSummary::to_json() const {
    return {{"total_records", total},
            {"train_records", train},
            {"validation_records", validation},
            {"train_fraction", split},
            {"split_seed", seed},
            {"train_file", train_path.string()},
            {"validation_file", validation_path.string()},
            {"template_version", template_version},
            {"assistant_format", "option-label"},
            {"message_roles", {"system", "user", "assistant"}}};
}

std::vector<FinetuneRecord> load_finetune_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset file: " + path.string());
    std::vector<FinetuneRecord> records;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
            const auto& messages = doc.at("messages");
            if (messages.size() != 3) throw ValidationError("expected 3 messages");
            FinetuneRecord record;
            for (const auto& message : messages) {
                const std::string role = message.at("role").get<std::string>();
                const std::string content = message.at("content").get<std::string>();
                if (role == "system") record.system_text = content;
                else if (role == "user") record.user_text = content;
                else if (role == "assistant") record.assistant_text = content;
                else throw ValidationError("unexpected role " + role);
            }
            records.push_back(std::move(record));
        } catch (const std::exception& ex) {
            throw ValidationError(path.string() + " line " + std::to_string(line_number) + ": " +
                                  ex.what());
        }
    }
    return records;
}

CostEstimate estimate_finetune_cost(const std::vector<std::filesystem::path>& dataset_files,
                                    double price_per_1k_tokens, TokenCounter counter) {
    if (!(price_per_1k_tokens > 0.0)) {
        throw ValidationError("estimate_finetune_cost: price per 1k tokens must be positive");
    }
    CostEstimate estimate;
    estimate.price_per_1k_tokens = price_per_1k_tokens;
    estimate.method = counter ? "user-supplied tokenizer" : "chars/4 approximation";
    if (!counter) {
        counter = [](std::string_view text) {
            return static_cast<long long>((text.size() + 3) / 4);
        };
    }
    long long records = 0;
    for (const auto& path : dataset_files) {
        for (const auto& record : load_finetune_dataset(path)) {
            estimate.tokens += counter(record.system_text) + counter(record.user_text) +
                               counter(record.assistant_text);
            ++records;
        }
    }
    if (records == 0) throw ValidationError("estimate_finetune_cost: dataset is empty");
    estimate.estimate = static_cast<double>(estimate.tokens) / 1000.0 * price_per_1k_tokens;
    return estimate;
}

} // namespace opsim
