#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "opsim/orchestrator.hpp"
#include "opsim/toml_lite.hpp"

namespace {

using namespace opsim;

SurveySchema schema_from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open schema file: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError("invalid schema file " + path.string() + ": " + ex.what());
    }
    SurveySchema schema;
    schema.fields = doc.at("fields").get<std::vector<std::string>>();
    if (doc.contains("aliases")) {
        for (const auto& [from, to] : doc.at("aliases").items()) {
            schema.aliases[from] = to.get<std::string>();
        }
    }
    if (doc.contains("sentinel_codes")) {
        schema.sentinel_codes.clear();
        for (const auto& [code, label] : doc.at("sentinel_codes").items()) {
            schema.sentinel_codes[std::stoll(code)] = label.get<std::string>();
        }
    }
    return schema;
}

// Without an explicit schema: accept the canonical attribute columns plus
// the optional id/seed columns, in whatever order the header uses.
SurveySchema sniff_schema(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open survey file: " + path.string());
    std::string header;
    if (!std::getline(in, header)) throw ValidationError("survey file has no header row");
    if (!header.empty() && header.back() == '\r') header.pop_back();
    const char delimiter = header.find('\t') != std::string::npos ? '\t' : ',';

    static const std::vector<std::string> optional = {"profile_id", "seed_question_id",
                                                      "seed_option"};
    static const std::map<std::string, std::string> ukhls_aliases = {
        {"qfhigh", "highest_qualification"}};
    SurveySchema schema;
    std::stringstream stream(header);
    std::string column;
    while (std::getline(stream, column, delimiter)) {
        std::string name = column;
        if (auto alias = ukhls_aliases.find(name); alias != ukhls_aliases.end()) {
            schema.aliases[name] = alias->second;
            name = alias->second;
        }
        const auto& known = profile_attribute_names();
        if (std::find(known.begin(), known.end(), name) != known.end() ||
            std::find(optional.begin(), optional.end(), name) != optional.end()) {
            schema.fields.push_back(name);
        } else {
            throw ValidationError("unknown survey column '" + name +
                                  "'; pass --schema to declare custom columns");
        }
    }
    return schema;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
}

std::set<std::string> parse_formats(const std::string& csv) {
    std::set<std::string> formats;
    std::stringstream stream(csv);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (!item.empty()) formats.insert(item);
    }
    return formats;
}

nlohmann::json records_to_json(const std::vector<SurveyRecord>& records) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& record : records) {
        nlohmann::json row;
        row["row"] = record.row_number;
        for (std::size_t i = 0; i < record.values.size(); ++i) {
            const auto& value = record.values[i];
            if (value.sentinel) {
                row["fields"][record.schema->fields[i]] = {
                    {"value", value.raw},
                    {"sentinel", *value.sentinel},
                    {"sentinel_label", record.schema->sentinel_codes.at(*value.sentinel)}};
            } else {
                row["fields"][record.schema->fields[i]] = {{"value", value.raw}};
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Survey-response simulation harness: synthetic profiles, prompt generation, "
                 "pluggable chat backends, and distribution alignment metrics"};
    app.require_subcommand(1);

    std::string data_dir;
    app.add_option("--data-dir", data_dir, "Directory with bundled data files");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Load a delimited survey file into tagged records");
    std::string ingest_input, ingest_schema, ingest_out = "out";
    ingest->add_option("--input", ingest_input, "Survey file (CSV/TSV)")->required();
    ingest->add_option("--schema", ingest_schema, "Schema JSON (fields/aliases/sentinels)");
    ingest->add_option("--out", ingest_out, "Output directory");

    // preprocess
    auto* preprocess = app.add_subcommand("preprocess", "Clean, impute, dedupe, balance, shuffle "
                                                        "and derive a profile panel");
    std::string pre_input, pre_schema, pre_out = "out", pre_strategy = "sample-from-valid";
    std::uint64_t pre_seed = 0;
    std::vector<std::string> pre_balance_attrs;
    double pre_balance_floor = 0.0;
    preprocess->add_option("--input", pre_input, "Survey file (CSV/TSV)")->required();
    preprocess->add_option("--schema", pre_schema, "Schema JSON");
    preprocess->add_option("--seed", pre_seed, "Pipeline seed");
    preprocess->add_option("--strategy", pre_strategy, "Imputation strategy "
                                                       "(sample-from-valid|mode)");
    preprocess->add_option("--balance-attribute", pre_balance_attrs,
                           "Attribute to balance (repeatable)");
    preprocess->add_option("--balance-floor", pre_balance_floor,
                           "Minimum category share per balanced attribute");
    preprocess->add_option("--out", pre_out, "Output directory");

    // export-finetune
    auto* exportft = app.add_subcommand("export-finetune",
                                        "Export (system,user,assistant) JSONL train/validation "
                                        "files from a panel and an answer table");
    std::string ft_panel, ft_answers, ft_out = "out";
    double ft_split = 0.8, ft_price = kDefaultFinetunePricePer1k;
    std::uint64_t ft_seed = 0;
    exportft->add_option("--panel", ft_panel, "Panel JSON (from preprocess)")->required();
    exportft->add_option("--answers", ft_answers,
                         "Answers JSON: [{profile_id, question_id, option}]")
        ->required();
    exportft->add_option("--split", ft_split, "Train fraction in (0,1)");
    exportft->add_option("--seed", ft_seed, "Split seed");
    exportft->add_option("--price", ft_price, "Price per 1k tokens for the cost estimate");
    exportft->add_option("--out", ft_out, "Output directory");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Run an experiment from a config file");
    std::string sim_config, sim_out;
    std::uint64_t sim_seed = 0;
    bool sim_seed_set = false;
    simulate->add_option("--config", sim_config, "Experiment config (JSON or TOML)")->required();
    simulate->add_option("--seed", sim_seed, "Override the experiment seed")
        ->each([&](const std::string&) { sim_seed_set = true; });
    simulate->add_option("--out", sim_out, "Override the output directory");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Compare an experiment result against a "
                                                    "reference dataset");
    std::string eval_result, eval_reference, eval_out = "out";
    evaluate->add_option("--result", eval_result, "result.json from simulate")->required();
    evaluate->add_option("--reference", eval_reference, "Reference JSON (default: bundled)");
    evaluate->add_option("--out", eval_out, "Output directory");

    // report
    auto* report_cmd = app.add_subcommand("report", "Emit CSV/JSON tables and SVG charts");
    std::string rep_result, rep_reference, rep_out = "out", rep_formats = "csv,json,svg";
    report_cmd->add_option("--result", rep_result, "result.json from simulate")->required();
    report_cmd->add_option("--reference", rep_reference, "Reference JSON (default: bundled)");
    report_cmd->add_option("--format", rep_formats, "Comma-separated subset of csv,json,svg");
    report_cmd->add_option("--out", rep_out, "Output directory");

    // consistency-check
    auto* consistency = app.add_subcommand("consistency-check",
                                           "Recompute bundled per-question table means against "
                                           "the bundled summary table");

    CLI11_PARSE(app, argc, argv);

    try {
        const std::filesystem::path bundle_dir = data_dir;

        if (*ingest) {
            SurveySchema schema = ingest_schema.empty() ? sniff_schema(ingest_input)
                                                        : schema_from_json_file(ingest_schema);
            auto records = load_survey_records(ingest_input, schema);
            std::filesystem::create_directories(ingest_out);
            write_file(std::filesystem::path(ingest_out) / "records.json",
                       records_to_json(records).dump(2) + "\n");
            std::cout << "loaded " << records.size() << " records from " << ingest_input << "\n";
        }

        if (*preprocess) {
            SurveySchema schema = pre_schema.empty() ? sniff_schema(pre_input)
                                                     : schema_from_json_file(pre_schema);
            auto records = load_survey_records(pre_input, schema);
            auto vocab = load_bundled_vocabulary(bundle_dir);
            auto registry = load_bundled_registry(bundle_dir);
            PreprocessConfig config;
            config.seed = pre_seed;
            config.strategy = impute_strategy_from_string(pre_strategy);
            config.balance.attributes = pre_balance_attrs;
            config.balance.floor = pre_balance_floor;
            PipelineOutput output = run_pipeline(records, config, vocab, registry);

            std::filesystem::create_directories(pre_out);
            save_panel(output.panel, std::filesystem::path(pre_out) / "panel.json");
            write_file(std::filesystem::path(pre_out) / "panel_report.json",
                       output.report.to_json().dump(2) + "\n");
            nlohmann::json dropped = nlohmann::json::array();
            for (const auto& drop : output.dropped) {
                dropped.push_back({{"row", drop.record.row_number}, {"reason", drop.reason}});
            }
            write_file(std::filesystem::path(pre_out) / "dropped.json", dropped.dump(2) + "\n");
            std::cout << "panel of " << output.panel.size() << " profiles ("
                      << output.report.dropped_invalid << " dropped, "
                      << output.report.duplicates_removed << " duplicates, "
                      << output.report.oversampled_added << " oversampled)\n";
        }

        if (*exportft) {
            auto vocab = load_bundled_vocabulary(bundle_dir);
            auto registry = load_bundled_registry(bundle_dir);
            auto panel = load_panel(ft_panel, vocab, registry);
            std::ifstream answers_in(ft_answers, std::ios::binary);
            if (!answers_in) throw IoError("cannot open answers file: " + ft_answers);
            nlohmann::json answers_doc;
            answers_in >> answers_doc;
            std::vector<AnswerKey> answers;
            for (const auto& item : answers_doc) {
                answers.push_back({item.at("profile_id").get<std::string>(),
                                   item.at("question_id").get<std::string>(),
                                   item.at("option").get<std::string>()});
            }
            std::filesystem::create_directories(ft_out);
            const auto train = std::filesystem::path(ft_out) / "train.jsonl";
            const auto validation = std::filesystem::path(ft_out) / "validation.jsonl";
            ExportSummary summary = export_finetune_dataset(panel, answers, registry, ft_split,
                                                            ft_seed, train, validation);
            write_file(std::filesystem::path(ft_out) / "export_summary.json",
                       summary.to_json().dump(2) + "\n");
            CostEstimate cost = estimate_finetune_cost({train, validation}, ft_price);
            std::cout << summary.total << " records -> " << summary.train << " train + "
                      << summary.validation << " validation (templates " << summary.template_version
                      << ")\n"
                      << "estimated fine-tuning cost: $" << cost.estimate << " (" << cost.tokens
                      << " tokens, " << cost.method << ")\n";
        }

        if (*simulate) {
            ExperimentConfig config = ExperimentConfig::from_json(load_config_file(sim_config));
            if (sim_seed_set) config.experiment_seed = sim_seed;
            if (!sim_out.empty()) config.output_dir = sim_out;
            if (!data_dir.empty() && config.data_dir.empty()) config.data_dir = data_dir;
            auto vocab = load_bundled_vocabulary(config.data_dir);
            auto registry = load_bundled_registry(config.data_dir);
            ExperimentResult result = run_experiment(config, vocab, registry);
            std::cout << "simulated " << result.distributions.size() << " model(s) x "
                      << (result.distributions.empty() ? 0
                                                       : result.distributions.begin()->second.size())
                      << " question(s) over " << result.panel_size << " profiles -> "
                      << (config.output_dir / "result.json").string() << "\n";
        }

        if (*evaluate || *report_cmd) {
            const std::string result_path = *evaluate ? eval_result : rep_result;
            const std::string reference_path = *evaluate ? eval_reference : rep_reference;
            const std::string out_dir = *evaluate ? eval_out : rep_out;
            auto registry = load_bundled_registry(bundle_dir);
            ExperimentResult result = ExperimentResult::load(result_path);
            ReferenceDataset reference =
                reference_path.empty()
                    ? load_bundled_reference(registry, bundle_dir)
                    : load_reference_dataset(reference_path, registry);
            for (const auto& warning : reference.warnings) {
                std::cerr << "warning: " << warning << "\n";
            }
            MetricReport metric_report = compare_to_reference(result, reference, registry);
            const std::set<std::string> formats =
                *evaluate ? std::set<std::string>{"csv", "json"} : parse_formats(rep_formats);
            auto files = emit_report(metric_report, result, reference, registry, formats, out_dir);
            for (const auto& file : files) std::cout << "wrote " << file.string() << "\n";
        }

        if (*consistency) {
            ConsistencyReport report =
                consistency_check(data_dir.empty() ? std::filesystem::path{}
                                                   : bundled_reported_metrics_path(data_dir));
            std::cout << report.to_text();
            if (report.hard_failure()) {
                std::cerr << "consistency check failed\n";
                return 3;
            }
        }
    } catch (const BackendError& ex) {
        std::cerr << "backend error: " << ex.what() << "\n";
        return 2;
    } catch (const ValidationError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    } catch (const IoError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
