// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exit code 0 only if all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "opsim/orchestrator.hpp"
#include "opsim/rng.hpp"
#include "opsim/toml_lite.hpp"
#include "oracles.hpp"

using namespace opsim;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& summary, double seconds) {
    std::printf("criterion %d: %s - %s (%.2fs)\n", criterion, pass ? "PASS" : "FAIL",
                summary.c_str(), seconds);
    if (!pass) ++failures;
}

double elapsed_s(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing file: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::vector<double> random_distribution(Rng& rng, std::size_t k) {
    std::vector<double> v(k);
    double sum = 0.0;
    for (auto& x : v) {
        x = rng.unit_double() + 1e-9;
        sum += x;
    }
    for (auto& x : v) x /= sum;
    return v;
}

// --------------------------------------------------------------------------
// 1. metric oracle equivalence
// --------------------------------------------------------------------------
void criterion_1() {
    const auto start = Clock::now();
    Rng rng(20250809);
    double worst = 0.0;
    bool pass = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 2 + rng.below(9); // 2..10
        const auto p = random_distribution(rng, k);
        const auto q = random_distribution(rng, k);

        const double diffs[4] = {
            std::abs(chi_square_statistic(p, q) -
                     static_cast<double>(oracle::chi_square_percent(p, q))),
            std::abs(cosine_similarity(p, q) - static_cast<double>(oracle::cosine(p, q))),
            std::abs(jaccard_index(p, q) - static_cast<double>(oracle::weighted_jaccard(p, q))),
            std::abs(kl_divergence(p, q) - static_cast<double>(oracle::kl(p, q)))};
        for (double d : diffs) {
            worst = std::max(worst, d);
            if (d > 1e-9) pass = false;
        }
    }
    const double seconds = elapsed_s(start);
    if (seconds >= 5.0) pass = false;
    char buffer[160];
    std::snprintf(buffer, sizeof buffer,
                  "chi2/cosine/jaccard/KL vs brute-force oracle on 1000 pairs, max |diff| = "
                  "%.3g (tol 1e-9)",
                  worst);
    report(1, pass, buffer, seconds);
}

// --------------------------------------------------------------------------
// 2. bundled-table internal consistency
// --------------------------------------------------------------------------
void criterion_2() {
    const auto start = Clock::now();
    bool pass = true;
    std::string note;

    // The summary values the bundled data must carry.
    const std::map<std::string, std::map<std::string, std::vector<double>>> pinned = {
        {"cosine",
         {{"fine_tuned", {0.9322, 0.9422, 0.9389}}, {"pre_trained", {0.9000, 0.9056, 0.9044}}}},
        {"jaccard",
         {{"fine_tuned", {0.7200, 0.7256, 0.7144}}, {"pre_trained", {0.6778, 0.6811, 0.6789}}}},
        {"kl",
         {{"fine_tuned", {0.1211, 0.1022, 0.1178}}, {"pre_trained", {0.1700, 0.1622, 0.1567}}}}};
    static const std::vector<std::string> kModels = {"GPT-4o", "GPT-4o mini", "GPT-4o1-preview"};

    try {
        std::ifstream in(bundled_reported_metrics_path());
        nlohmann::json doc;
        in >> doc;
        for (const auto& [metric, regimes] : pinned) {
            for (const auto& [regime, values] : regimes) {
                for (std::size_t m = 0; m < kModels.size(); ++m) {
                    const double reported =
                        doc.at("summary_means").at(regime).at(kModels[m]).at(metric).get<double>();
                    if (std::abs(reported - values[m]) > 1e-9) pass = false;
                    const auto column = doc.at("per_question")
                                            .at(regime)
                                            .at(kModels[m])
                                            .at(metric)
                                            .get<std::vector<double>>();
                    double mean = 0.0;
                    for (double v : column) mean += v;
                    mean /= static_cast<double>(column.size());
                    if (std::abs(mean - reported) > 0.005) pass = false;
                }
            }
        }

        ConsistencyReport consistency = consistency_check();
        if (consistency.hard_failure()) pass = false;
        int chi_flags = 0;
        bool binary_ok = true;
        for (const auto& check : consistency.checks) {
            if (check.name.find("chi_square") != std::string::npos) {
                if (check.residual > 0.02) pass = false;
                if (check.status == CheckStatus::flag) ++chi_flags;
            }
            if (check.name.rfind("binary_jaccard/", 0) == 0) {
                if (check.residual > 0.005) binary_ok = false;
            }
        }
        // the known residual (0.873 vs 0.8678) must surface as a flag
        if (chi_flags == 0) pass = false;
        if (!binary_ok) pass = false;
        note = "summary means reproduced within 0.005 (chi-square 0.02, " +
               std::to_string(chi_flags) + " flagged residuals); reported binary-question Jaccard "
               "means within 0.005";
    } catch (const std::exception& ex) {
        pass = false;
        note = std::string("exception: ") + ex.what();
    }
    const double seconds = elapsed_s(start);
    if (seconds >= 1.0) pass = false;
    report(2, pass, note, seconds);
}

// --------------------------------------------------------------------------
// 3. out-of-desk-scope statement
// --------------------------------------------------------------------------
void criterion_3() {
    report(3, true,
           "per-question table values and model response distributions require paid "
           "fine-tuned-model inference and are not reproducible here; covered by criteria 1-2 "
           "and 4-7",
           0.0);
}

// --------------------------------------------------------------------------
// 4. end-to-end determinism with the mock backend
// --------------------------------------------------------------------------
ExperimentConfig determinism_config(const std::filesystem::path& out, int workers) {
    ExperimentConfig config;
    config.panel.kind = PanelSource::Kind::generated;
    config.panel.size = 100;
    config.experiment_seed = 424242;
    config.output_dir = out;
    config.workers = workers;
    for (const char* label : {"mock-a", "mock-b"}) {
        BackendConfig mock;
        mock.kind = BackendKind::mock;
        mock.label = label;
        mock.mock_seed = label[5] == 'a' ? 1111 : 2222;
        config.models.push_back(mock);
    }
    return config;
}

void criterion_4() {
    const auto start = Clock::now();
    bool pass = true;
    std::string note;
    try {
        auto vocab = load_bundled_vocabulary();
        auto registry = load_bundled_registry();
        auto reference = load_bundled_reference(registry);
        const auto base = std::filesystem::temp_directory_path() / "opsim_acceptance_c4";
        std::filesystem::remove_all(base);

        auto run_all = [&](const std::filesystem::path& dir, int workers) {
            ExperimentResult result =
                run_experiment(determinism_config(dir, workers), vocab, registry);
            MetricReport report = compare_to_reference(result, reference, registry);
            emit_report(report, result, reference, registry, {"csv", "json", "svg"}, dir);
            return result;
        };

        // identical config (including output dir) run twice: every
        // distribution and report file must come back byte-identical
        const std::vector<std::string> files = {"distributions.json",
                                                "result.json",
                                                "metrics_per_question.csv",
                                                "metrics_summary.csv",
                                                "metrics.json",
                                                "chart_lifestyle.svg",
                                                "chart_pollution.svg"};
        run_all(base / "run", 8);
        std::map<std::string, std::string> first_bytes;
        for (const auto& file : files) first_bytes[file] = slurp(base / "run" / file);
        std::filesystem::remove_all(base / "run");
        run_all(base / "run", 8);
        for (const auto& file : files) {
            if (first_bytes.at(file) != slurp(base / "run" / file)) {
                pass = false;
                note = "rerun differs in " + file;
            }
        }

        ExperimentResult serial = run_all(base / "serial", 1);
        ExperimentResult wide = run_all(base / "wide", 16);
        // serial vs 16-way parallel distributions identical
        if (slurp(base / "serial" / "distributions.json") !=
            slurp(base / "wide" / "distributions.json")) {
            pass = false;
            note = "serial vs parallel distributions differ";
        }
        // sanity: 2 models x 10 questions over 100 profiles
        if (serial.panel_size != 100 || wide.distributions.at("mock-b").size() != 10) {
            pass = false;
            note = "unexpected experiment shape";
        }
        if (pass) {
            note = "100 profiles x 10 questions x 2 mock models: reruns byte-identical, "
                   "serial == 16-way parallel";
        }
    } catch (const std::exception& ex) {
        pass = false;
        note = std::string("exception: ") + ex.what();
    }
    const double seconds = elapsed_s(start);
    if (seconds >= 10.0) pass = false;
    report(4, pass, note, seconds);
}

// --------------------------------------------------------------------------
// 5. chi-square p-value correctness
// --------------------------------------------------------------------------
void criterion_5() {
    const auto start = Clock::now();
    bool pass = true;
    double worst = 0.0;

    if (std::abs(chi_square_pvalue(9.488, 4) - 0.05) > 1e-4) pass = false;
    if (std::abs(chi_square_pvalue(3.841, 1) - 0.05) > 1e-4) pass = false;
    for (int df : {1, 2, 4, 7, 12}) {
        if (chi_square_pvalue(0.0, df) != 1.0) pass = false;
    }

    Rng rng(555);
    for (int i = 0; i < 200; ++i) {
        const int df = 1 + static_cast<int>(rng.below(12));
        const double stat = rng.unit_double() * 60.0;
        const double reference = static_cast<double>(
            oracle::regularized_gamma_q_quadrature(df / 2.0L, stat / 2.0L));
        const double diff = std::abs(chi_square_pvalue(stat, df) - reference);
        worst = std::max(worst, diff);
        if (diff > 1e-10) pass = false;
    }
    char buffer[160];
    std::snprintf(buffer, sizeof buffer,
                  "reference points within 1e-4; 200 random (stat, df) pairs vs quadrature "
                  "oracle, max |diff| = %.3g (tol 1e-10)",
                  worst);
    report(5, pass, buffer, elapsed_s(start));
}

// --------------------------------------------------------------------------
// 6. parser corpus + exhaustive label round-trip
// --------------------------------------------------------------------------
void criterion_6() {
    const auto start = Clock::now();
    bool pass = true;
    std::string note;
    try {
        auto registry = load_bundled_registry();
        std::ifstream in(std::filesystem::path(OPSIM_FIXTURE_DIR) / "parse_corpus.json");
        nlohmann::json corpus;
        in >> corpus;
        if (corpus.size() < 50) pass = false;

        std::size_t correct = 0;
        for (const auto& entry : corpus) {
            const QuestionSpec& question =
                registry.require(entry.at("question_id").get<std::string>());
            const ParseResult parsed =
                parse_response(entry.at("raw").get<std::string>(), question);
            const std::string expect = entry.at("expect").get<std::string>();
            bool ok = false;
            if (expect == "ok") {
                ok = parsed.status == ParseStatus::ok &&
                     parsed.option_index == entry.at("index").get<int>();
            } else if (expect == "no_match") {
                ok = parsed.status == ParseStatus::no_match;
            } else if (expect == "ambiguous") {
                ok = parsed.status == ParseStatus::ambiguous;
            }
            if (ok) {
                ++correct;
            } else {
                pass = false;
            }
        }

        std::size_t round_trip = 0;
        for (const auto& question : registry.all()) {
            for (int i = 1; i <= question.option_count(); ++i) {
                const ParseResult parsed = parse_response(question.option(i).label, question);
                if (parsed.status == ParseStatus::ok && parsed.option_index == i) {
                    ++round_trip;
                } else {
                    pass = false;
                }
            }
        }
        note = std::to_string(correct) + "/" + std::to_string(corpus.size()) +
               " corpus replies mapped per the cascade; exhaustive label round-trip over " +
               std::to_string(round_trip) + " bundled options";
    } catch (const std::exception& ex) {
        pass = false;
        note = std::string("exception: ") + ex.what();
    }
    report(6, pass, note, elapsed_s(start));
}

// --------------------------------------------------------------------------
// 7. prompt fidelity
// --------------------------------------------------------------------------
void criterion_7() {
    const auto start = Clock::now();
    bool pass = true;
    std::string note;
    try {
        auto vocab = load_bundled_vocabulary();
        auto registry = load_bundled_registry();

        Profile profile;
        profile.profile_id = "ref-profile";
        profile.voting_intention = "Liberal Democrat";
        profile.ethnic_group = "British";
        profile.gender = "Male";
        profile.marital_status = "Single";
        profile.highest_qualification = "Secondary education";
        profile.num_children = 5;
        profile.region = "Southeast";
        profile.living_area = "rural";
        profile.age_group = "60-69 years old";
        profile.profession = "Semi-Routine Occupations";
        profile.seed_attitude = SeedAttitude{
            "lifestyle", "I do quite a few things that are environmentally friendly"};
        profile = make_profile(profile, vocab, registry);

        const std::string system_text = render_system_prompt(profile, registry);
        const std::string system_fixture =
            slurp(std::filesystem::path(OPSIM_FIXTURE_DIR) / "reference_system_prompt.txt");
        const std::string user_text = render_user_prompt(registry.require("willing_to_pay"));
        const std::string user_fixture =
            slurp(std::filesystem::path(OPSIM_FIXTURE_DIR) / "reference_user_prompt.txt");

        if (system_text != system_fixture) pass = false;
        if (user_text != user_fixture) pass = false;
        note = pass ? "system and user prompts byte-identical to the transcribed fixtures"
                    : "rendered prompt bytes differ from the fixtures";
    } catch (const std::exception& ex) {
        pass = false;
        note = std::string("exception: ") + ex.what();
    }
    report(7, pass, note, elapsed_s(start));
}

// --------------------------------------------------------------------------
// 8. preprocessing pipeline property suite
// --------------------------------------------------------------------------
void criterion_8() {
    const auto start = Clock::now();
    bool pass = true;
    std::string note;
    try {
        auto vocab = load_bundled_vocabulary();
        auto registry = load_bundled_registry();

        auto schema = std::make_shared<const SurveySchema>([] {
            SurveySchema s;
            s.fields = profile_attribute_names();
            return s;
        }());
        static const std::vector<std::string> kAges = {"18 - 29", "30 - 39", "40 - 49",
                                                       "50 - 59", "60 - 69"};

        for (int panel_index = 0; panel_index < 20 && pass; ++panel_index) {
            Rng rng(9000 + static_cast<std::uint64_t>(panel_index));
            const std::size_t rows = 50 + rng.below(150);
            std::vector<SurveyRecord> records;
            auto pick = [&](const std::vector<std::string>& values) {
                return values[static_cast<std::size_t>(rng.below(values.size()))];
            };
            for (std::size_t i = 0; i < rows; ++i) {
                SurveyRecord record;
                record.schema = schema;
                record.row_number = i + 1;
                // skew living_area to make balancing meaningful
                const std::string area = rng.below(10) == 0 ? "rural" : "urban";
                std::vector<std::string> values = {
                    pick(vocab.categories("voting_intention")),
                    pick(vocab.categories("ethnic_group")),
                    pick(vocab.categories("gender")),
                    pick(vocab.categories("marital_status")),
                    pick(vocab.categories("highest_qualification")),
                    std::to_string(rng.below(4)),
                    pick(vocab.categories("region")),
                    area,
                    kAges[static_cast<std::size_t>(rng.below(kAges.size()))],
                    pick(vocab.categories("profession")),
                    std::to_string(500 + rng.below(5000))};
                for (auto& value : values) {
                    record.values.push_back({std::move(value), std::nullopt});
                }
                // inject sentinels
                if (rng.below(4) == 0) {
                    record.values[4] = {"-8", -8};
                }
                records.push_back(std::move(record));
                // inject occasional exact duplicates
                if (rng.below(6) == 0) {
                    auto duplicate = records.back();
                    duplicate.row_number = i + 1000;
                    records.push_back(std::move(duplicate));
                }
            }

            // impute leaves zero sentinels
            auto imputed =
                impute_invalid(records, ImputeStrategy::sample_from_valid, 3, nullptr);
            for (const auto& record : imputed) {
                for (const auto& value : record.values) {
                    if (value.sentinel) pass = false;
                }
            }

            // dedupe idempotent
            auto deduped = dedupe_profiles(imputed, vocab, nullptr);
            if (dedupe_profiles(deduped, vocab, nullptr).size() != deduped.size()) pass = false;

            // balance reaches the floor without dropping originals
            BalanceConfig balance;
            balance.attributes = {"living_area"};
            balance.floor = 0.2;
            auto balanced = balance_panel(deduped, balance, vocab, 4, nullptr);
            if (balanced.size() < deduped.size()) pass = false;
            for (std::size_t i = 0; i < deduped.size(); ++i) {
                if (balanced[i].at("monthly_income_gbp").raw !=
                    deduped[i].at("monthly_income_gbp").raw) {
                    pass = false;
                }
            }
            std::map<std::string, long long> areas;
            for (const auto& record : balanced) areas[record.at("living_area").raw] += 1;
            for (const auto& [area, count] : areas) {
                if (static_cast<double>(count) / static_cast<double>(balanced.size()) <
                    balance.floor - 1e-12) {
                    pass = false;
                }
            }

            // shuffle is a permutation
            auto shuffled = shuffle_panel(balanced, 12);
            std::multiset<std::string> before, after;
            auto key = [](const SurveyRecord& record) {
                std::string k;
                for (const auto& value : record.values) {
                    k += value.raw;
                    k += '\x1f';
                }
                return k;
            };
            for (const auto& record : balanced) before.insert(key(record));
            for (const auto& record : shuffled) after.insert(key(record));
            if (before != after) pass = false;

            // full pipeline keeps the report identity
            PreprocessConfig config;
            config.seed = 17;
            config.balance = balance;
            PipelineOutput output = run_pipeline(records, config, vocab, registry);
            output.report.check_identity();
            if (output.report.final_panel_size !=
                static_cast<long long>(output.panel.size())) {
                pass = false;
            }
        }
        note = pass ? "20 seeded panels: impute clears sentinels, dedupe idempotent, balance "
                      "keeps originals and reaches the floor, shuffle permutes, report "
                      "identity holds"
                    : "a pipeline property failed";
    } catch (const std::exception& ex) {
        pass = false;
        note = std::string("exception: ") + ex.what();
    }
    const double seconds = elapsed_s(start);
    if (seconds >= 10.0) pass = false;
    report(8, pass, note, seconds);
}

// --------------------------------------------------------------------------
// 9. mock respondent statistics
// --------------------------------------------------------------------------
void criterion_9() {
    const auto start = Clock::now();
    bool pass = true;
    std::string note;
    try {
        auto vocab = load_bundled_vocabulary();
        auto registry = load_bundled_registry();
        const QuestionSpec& pollution = registry.require("pollution");
        const QuestionSpec& wtp = registry.require("willing_to_pay");
        auto panel = generate_panel(10000, 31337, vocab, registry);

        // uniform table: every option within 1.5 percentage points of uniform
        WeightTable uniform;
        std::map<std::string, long long> counts2;
        for (const auto& profile : panel) {
            counts2[mock_answer(profile, pollution, 7, uniform)] += 1;
        }
        for (const auto& option : pollution.options()) {
            const double share =
                static_cast<double>(counts2[option.label]) / static_cast<double>(panel.size());
            if (std::abs(share - 0.5) > 0.015) pass = false;
        }
        std::map<std::string, long long> counts5;
        for (const auto& profile : panel) {
            counts5[mock_answer(profile, wtp, 7, uniform)] += 1;
        }
        for (const auto& option : wtp.options()) {
            const double share =
                static_cast<double>(counts5[option.label]) / static_cast<double>(panel.size());
            if (std::abs(share - 0.2) > 0.015) pass = false;
        }

        // +2 logit on Strongly Agree for Green Party supporters
        WeightTable biased;
        QuestionWeights weights;
        for (const auto& option : wtp.options()) weights.base[option.label] = 0.0;
        weights.offsets["voting_intention=Green Party"]["Strongly Agree"] = 2.0;
        biased.per_question["willing_to_pay"] = weights;

        long long treated_hits = 0, treated_n = 0, control_hits = 0, control_n = 0;
        for (const auto& profile : panel) {
            const bool hit = mock_answer(profile, wtp, 8, biased) == "Strongly Agree";
            if (profile.voting_intention == "Green Party") {
                ++treated_n;
                treated_hits += hit ? 1 : 0;
            } else {
                ++control_n;
                control_hits += hit ? 1 : 0;
            }
        }
        const double treated = static_cast<double>(treated_hits) / treated_n;
        const double control = static_cast<double>(control_hits) / control_n;
        if (!(treated > control)) pass = false;

        char buffer[200];
        std::snprintf(buffer, sizeof buffer,
                      "uniform table within 1.5%% of uniform over 10000 draws; +2-logit "
                      "subgroup share %.3f > baseline %.3f",
                      treated, control);
        note = buffer;
    } catch (const std::exception& ex) {
        pass = false;
        note = std::string("exception: ") + ex.what();
    }
    report(9, pass, note, elapsed_s(start));
}

} // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all acceptance criteria passed\n");
    return 0;
}
