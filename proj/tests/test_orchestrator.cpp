#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "opsim/orchestrator.hpp"
#include "opsim/toml_lite.hpp"

using namespace opsim;

namespace {

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

ParseResult ok(int index) { return {ParseStatus::ok, index, {}}; }
ParseResult failed() { return {ParseStatus::no_match, 0, "nope"}; }

ExperimentConfig mock_experiment(const std::filesystem::path& out, std::uint64_t seed,
                                 int workers) {
    ExperimentConfig config;
    config.panel.kind = PanelSource::Kind::generated;
    config.panel.size = 40;
    config.experiment_seed = seed;
    config.output_dir = out;
    config.workers = workers;
    BackendConfig mock;
    mock.kind = BackendKind::mock;
    mock.label = "mock-a";
    mock.mock_seed = seed;
    config.models.push_back(mock);
    return config;
}

} // namespace

TEST_CASE("tally_distribution counts and excludes") {
    auto registry = load_bundled_registry();
    const QuestionSpec& pollution = registry.require("pollution");

    ResponseDistribution dist = tally_distribution({ok(1), ok(2), ok(2), ok(2)}, pollution);
    CHECK(dist.proportions == std::vector<double>{0.25, 0.75});
    CHECK(dist.n_samples == 4);
    CHECK(dist.excluded_count == 0);

    dist = tally_distribution({ok(1), failed(), ok(1)}, pollution);
    CHECK(dist.proportions == std::vector<double>{1.0, 0.0});
    CHECK(dist.n_samples == 2);
    CHECK(dist.excluded_count == 1);

    CHECK_THROWS_AS(tally_distribution({failed(), failed()}, pollution), ValidationError);
}

TEST_CASE("generate_panel is deterministic and valid") {
    auto vocab = load_bundled_vocabulary();
    auto registry = load_bundled_registry();
    auto a = generate_panel(25, 7, vocab, registry);
    auto b = generate_panel(25, 7, vocab, registry);
    REQUIRE(a.size() == 25);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(profile_to_json(a[i]) == profile_to_json(b[i]));
    }
    auto c = generate_panel(25, 8, vocab, registry);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (profile_to_json(a[i]) != profile_to_json(c[i])) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("run_experiment with a replay backend matches the hand tally") {
    auto vocab = load_bundled_vocabulary();
    auto registry = load_bundled_registry();
    auto panel = generate_panel(3, 99, vocab, registry);

    const auto dir = std::filesystem::temp_directory_path() / "opsim_replay_exp";
    std::filesystem::create_directories(dir);
    const auto store = dir / "fixed.jsonl";
    {
        std::vector<Transcript> entries;
        const std::vector<std::string> replies = {"Yes", "No", "No"};
        for (std::size_t i = 0; i < panel.size(); ++i) {
            Transcript t;
            t.profile_id = panel[i].profile_id;
            t.question_id = "pollution";
            t.raw_reply = replies[i];
            t.backend_id = "fixture";
            entries.push_back(std::move(t));
        }
        std::error_code ec;
        std::filesystem::remove(store, ec);
        append_transcripts(store, entries);
    }

    ExperimentConfig config;
    config.panel.kind = PanelSource::Kind::generated;
    config.panel.size = 3;
    config.experiment_seed = 99; // same panel as above
    config.question_ids = {"pollution"};
    config.output_dir = dir / "out";
    BackendConfig replay;
    replay.kind = BackendKind::replay;
    replay.label = "replayed";
    replay.transcript_path = store;
    config.models.push_back(replay);

    ExperimentResult result = run_experiment(config, vocab, registry);
    const QuestionResult& qr = result.distributions.at("replayed").at("pollution");
    REQUIRE(!qr.aborted);
    CHECK(qr.distribution.proportions ==
          std::vector<double>{1.0 / 3.0, 2.0 / 3.0});
    CHECK(qr.distribution.n_samples == 3);
    CHECK(qr.distribution.excluded_count == 0);
    CHECK(result.panel_size == 3);

    // audit completeness: one transcript per tallied answer
    auto transcripts = load_transcripts(result.transcript_files.at("replayed"));
    CHECK(transcripts.entries.size() == 3);
}

TEST_CASE("run_experiment aborts a question drowning in parse failures") {
    auto vocab = load_bundled_vocabulary();
    auto registry = load_bundled_registry();
    auto panel = generate_panel(4, 5, vocab, registry);

    const auto dir = std::filesystem::temp_directory_path() / "opsim_abort_exp";
    std::filesystem::create_directories(dir);
    const auto store = dir / "garbage.jsonl";
    {
        std::vector<Transcript> entries;
        const std::vector<std::string> replies = {"blah", "???", "No", "unintelligible"};
        for (std::size_t i = 0; i < panel.size(); ++i) {
            Transcript t;
            t.profile_id = panel[i].profile_id;
            t.question_id = "pollution";
            t.raw_reply = replies[i];
            entries.push_back(std::move(t));
        }
        std::error_code ec;
        std::filesystem::remove(store, ec);
        append_transcripts(store, entries);
    }

    ExperimentConfig config;
    config.panel.kind = PanelSource::Kind::generated;
    config.panel.size = 4;
    config.experiment_seed = 5;
    config.question_ids = {"pollution"};
    config.output_dir = dir / "out";
    BackendConfig replay;
    replay.kind = BackendKind::replay;
    replay.label = "broken";
    replay.transcript_path = store;
    config.models.push_back(replay);

    ExperimentResult result = run_experiment(config, vocab, registry);
    const QuestionResult& qr = result.distributions.at("broken").at("pollution");
    CHECK(qr.aborted);
    CHECK(qr.abort_reason.find("parse failure ratio") != std::string::npos);
}

TEST_CASE("run_experiment propagates configuration errors from workers") {
    auto vocab = load_bundled_vocabulary();
    auto registry = load_bundled_registry();

    ExperimentConfig config = mock_experiment(
        std::filesystem::temp_directory_path() / "opsim_poison", 1, 8);
    QuestionWeights broken;
    broken.base["Yes"] = 1.0; // "No" missing
    config.models[0].weight_table.per_question["pollution"] = broken;
    config.question_ids = {"pollution"};
    CHECK_THROWS_WITH_AS(run_experiment(config, vocab, registry), doctest::Contains("missing"),
                         ValidationError);
}

TEST_CASE("run_experiment determinism: reruns and parallel schedules") {
    auto vocab = load_bundled_vocabulary();
    auto registry = load_bundled_registry();

    const auto base = std::filesystem::temp_directory_path() / "opsim_det";
    std::filesystem::remove_all(base);

    ExperimentResult first = run_experiment(mock_experiment(base / "a", 77, 8), vocab, registry);
    ExperimentResult second = run_experiment(mock_experiment(base / "b", 77, 8), vocab, registry);
    CHECK(slurp(base / "a" / "distributions.json") == slurp(base / "b" / "distributions.json"));

    ExperimentResult serial = run_experiment(mock_experiment(base / "s", 77, 1), vocab, registry);
    ExperimentResult wide = run_experiment(mock_experiment(base / "w", 77, 16), vocab, registry);
    CHECK(slurp(base / "s" / "distributions.json") == slurp(base / "w" / "distributions.json"));

    // conservation: n_samples + excluded = panel size
    for (const auto& [label, questions] : first.distributions) {
        for (const auto& [qid, qr] : questions) {
            REQUIRE(!qr.aborted);
            CHECK(qr.distribution.n_samples + qr.distribution.excluded_count ==
                  first.panel_size);
        }
    }

    // result file round-trips
    ExperimentResult reloaded = ExperimentResult::load(base / "a" / "result.json");
    CHECK(reloaded.panel_size == first.panel_size);
    CHECK(reloaded.distributions.at("mock-a").at("lifestyle").distribution.proportions ==
          first.distributions.at("mock-a").at("lifestyle").distribution.proportions);

    // audit completeness: one transcript per (profile, question) cell
    long long tallied = 0;
    for (const auto& [qid, qr] : first.distributions.at("mock-a")) {
        tallied += qr.distribution.n_samples + qr.distribution.excluded_count;
    }
    auto transcripts = load_transcripts(first.transcript_files.at("mock-a"));
    CHECK(static_cast<long long>(transcripts.entries.size()) == tallied);

    // the config snapshot alone suffices to re-run identically
    ExperimentConfig from_snapshot = ExperimentConfig::from_json(reloaded.config_snapshot);
    from_snapshot.output_dir = base / "resnap";
    ExperimentResult rerun = run_experiment(from_snapshot, vocab, registry);
    for (const auto& [label, questions] : first.distributions) {
        for (const auto& [qid, qr] : questions) {
            CHECK(rerun.distributions.at(label).at(qid).distribution.proportions ==
                  qr.distribution.proportions);
        }
    }
}

TEST_CASE("compare_to_reference produces rows in registry order") {
    auto vocab = load_bundled_vocabulary();
    auto registry = load_bundled_registry();
    auto reference = load_bundled_reference(registry);

    SUBCASE("identity when distributions equal the reference") {
        ExperimentResult result;
        result.panel_size = 100;
        for (const auto& [qid, entry] : reference.entries) {
            QuestionResult qr;
            qr.distribution = entry.distribution;
            qr.distribution.n_samples = 100;
            result.distributions["perfect"][qid] = qr;
        }
        MetricReport report = compare_to_reference(result, reference, registry);
        REQUIRE(report.rows.size() == 10);
        for (const auto& row : report.rows) {
            CHECK(row.chi_square == doctest::Approx(0.0).epsilon(1e-12));
            CHECK(row.p_value == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(row.cosine == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(row.jaccard == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(row.kl_divergence == doctest::Approx(0.0).epsilon(1e-12));
        }
        REQUIRE(report.aggregates.size() == 1);
        CHECK(report.aggregates[0].question_count == 10);
        // registry order preserved
        CHECK(report.rows[0].question_id == "lifestyle");
        CHECK(report.rows[9].question_id == "climate_change_control");
    }
    SUBCASE("bundled model columns give a full 3x10 report with valid ranges") {
        std::ifstream in(bundled_model_distributions_path());
        REQUIRE(in);
        nlohmann::json doc;
        in >> doc;

        ExperimentResult result;
        for (const auto& [model, questions] : doc.at("regimes").at("fine_tuned").items()) {
            for (const auto& [qid, percents] : questions.items()) {
                QuestionResult qr;
                qr.distribution.question_id = qid;
                qr.distribution.proportions =
                    normalize_distribution(percents.get<std::vector<double>>());
                qr.distribution.n_samples = 100;
                result.distributions[model][qid] = qr;
            }
        }
        MetricReport report = compare_to_reference(result, reference, registry);
        CHECK(report.rows.size() == 30);
        CHECK(report.aggregates.size() == 3);
        for (const auto& row : report.rows) {
            CHECK(row.chi_square >= 0.0);
            CHECK(row.p_value >= 0.0);
            CHECK(row.p_value <= 1.0);
            CHECK(row.cosine >= 0.0);
            CHECK(row.cosine <= 1.0 + 1e-12);
            CHECK(row.jaccard >= 0.0);
            CHECK(row.jaccard <= 1.0 + 1e-12);
            CHECK(row.kl_divergence >= 0.0);
        }
    }
    SUBCASE("missing reference entry errors naming the question") {
        ReferenceDataset partial = reference;
        partial.entries.erase("pollution");
        ExperimentResult result;
        QuestionResult qr;
        qr.distribution = reference.entries.at("pollution").distribution;
        result.distributions["m"]["pollution"] = qr;
        CHECK_THROWS_WITH_AS(compare_to_reference(result, partial, registry),
                             doctest::Contains("pollution"), ValidationError);
    }
}

TEST_CASE("emit_report writes deterministic files") {
    auto vocab = load_bundled_vocabulary();
    auto registry = load_bundled_registry();
    auto reference = load_bundled_reference(registry);

    const auto base = std::filesystem::temp_directory_path() / "opsim_report";
    std::filesystem::remove_all(base);
    ExperimentResult result =
        run_experiment(mock_experiment(base / "run", 3, 4), vocab, registry);
    MetricReport report = compare_to_reference(result, reference, registry);

    SUBCASE("empty format set writes nothing") {
        auto files = emit_report(report, result, reference, registry, {}, base / "empty");
        CHECK(files.empty());
    }
    SUBCASE("unknown format rejected") {
        CHECK_THROWS_AS(emit_report(report, result, reference, registry, {"pdf"}, base / "bad"),
                        ValidationError);
    }
    SUBCASE("csv + json + svg, byte-stable") {
        auto files1 =
            emit_report(report, result, reference, registry, {"csv", "json", "svg"}, base / "r1");
        auto files2 =
            emit_report(report, result, reference, registry, {"csv", "json", "svg"}, base / "r2");
        REQUIRE(files1.size() == files2.size());
        // 2 csv + 1 json + 10 svg
        CHECK(files1.size() == 13);
        for (std::size_t i = 0; i < files1.size(); ++i) {
            CHECK(slurp(files1[i]) == slurp(files2[i]));
        }

        const std::string lifestyle_svg = slurp(base / "r1" / "chart_lifestyle.svg");
        // 5 option groups x (1 model + expected) bars + background + 2 legend swatches
        int rects = 0;
        for (std::size_t at = lifestyle_svg.find("<rect"); at != std::string::npos;
             at = lifestyle_svg.find("<rect", at + 1)) {
            ++rects;
        }
        CHECK(rects == 1 + 5 * 2 + 2);
        CHECK(lifestyle_svg.find("Expected") != std::string::npos);

        const std::string csv = slurp(base / "r1" / "metrics_per_question.csv");
        CHECK(csv.find("mock-a,lifestyle,5,") != std::string::npos);
    }
}

TEST_CASE("consistency_check reproduces the summary means") {
    ConsistencyReport report = consistency_check();
    CHECK(!report.hard_failure());
    REQUIRE(report.checks.size() == 28); // 24 column means + 4 binary jaccard means

    int passes = 0, flags = 0;
    const ConsistencyCheck* chi_4o = nullptr;
    for (const auto& check : report.checks) {
        if (check.status == CheckStatus::pass) ++passes;
        if (check.status == CheckStatus::flag) ++flags;
        if (check.name == "fine_tuned/GPT-4o/chi_square") chi_4o = &check;
    }
    REQUIRE(chi_4o);
    CHECK(chi_4o->status == CheckStatus::flag);
    CHECK(chi_4o->computed == doctest::Approx(0.873).epsilon(1e-9));
    CHECK(chi_4o->reported == doctest::Approx(0.8678).epsilon(1e-9));
    CHECK(chi_4o->residual == doctest::Approx(0.0052).epsilon(1e-6));
    CHECK(flags == 2); // GPT-4o and GPT-4o mini fine-tuned chi-square residuals
    CHECK(passes == static_cast<int>(report.checks.size()) - flags);

    // every cosine/jaccard/kl column mean matches within 0.005
    for (const auto& check : report.checks) {
        if (check.name.find("chi_square") == std::string::npos) {
            CHECK(check.status == CheckStatus::pass);
            CHECK(check.residual <= 0.005);
        }
    }

    const std::string text = report.to_text();
    CHECK(text.find("binary_jaccard/pollution/fine_tuned") != std::string::npos);
    CHECK(text.find("flag") != std::string::npos);
}

TEST_CASE("toml config parses into an experiment config") {
    const std::string toml = R"(
# experiment
seed = 42
output_dir = "out/exp1"
workers = 4
abort_parse_failure_ratio = 0.5
questions = ["pollution", "lifestyle"]

[panel]
source = "generated"
size = 50

[[models]]
label = "mock-uniform"
kind = "mock"
mock_seed = 42

[[models]]
label = "wired"
kind = "http"
endpoint = "http://localhost:9999/v1/chat/completions"
model = "gpt-test"
temperature = 0.7
max_in_flight = 8
requests_per_minute = 120
)";
    nlohmann::json doc = parse_toml_lite(toml);
    ExperimentConfig config = ExperimentConfig::from_json(doc);
    CHECK(config.experiment_seed == 42);
    CHECK(config.output_dir == "out/exp1");
    CHECK(config.workers == 4);
    CHECK(config.question_ids == std::vector<std::string>{"pollution", "lifestyle"});
    CHECK(config.panel.kind == PanelSource::Kind::generated);
    CHECK(config.panel.size == 50);
    REQUIRE(config.models.size() == 2);
    CHECK(config.models[0].kind == BackendKind::mock);
    CHECK(config.models[1].kind == BackendKind::http);
    CHECK(config.models[1].temperature == doctest::Approx(0.7));
    CHECK(config.models[1].requests_per_minute == 120);

    SUBCASE("json config path accepts the same shape") {
        ExperimentConfig json_config = ExperimentConfig::from_json(
            nlohmann::json::parse(doc.dump()));
        CHECK(json_config.models.size() == 2);
    }
    SUBCASE("validation failures") {
        nlohmann::json bad = doc;
        bad["models"][1].erase("endpoint");
        CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ValidationError);
        bad = doc;
        bad["models"][0]["label"] = "wired"; // duplicate
        CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ValidationError);
        bad = doc;
        bad["abort_parse_failure_ratio"] = 0.0;
        CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ValidationError);
        bad = doc;
        bad["questions"] = {"pollution", "pollution"};
        CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ValidationError);
    }
}

TEST_CASE("toml_lite scalar coverage") {
    nlohmann::json doc = parse_toml_lite(R"(
name = "quoted # not a comment"
ratio = 0.25
count = 1_000
flag = true
items = [1, 2, 3]
labels = ["a", "b"]
[nested.block]
inner = 'literal'
)");
    CHECK(doc.at("name") == "quoted # not a comment");
    CHECK(doc.at("ratio") == 0.25);
    CHECK(doc.at("count") == 1000);
    CHECK(doc.at("flag") == true);
    CHECK(doc.at("items") == nlohmann::json({1, 2, 3}));
    CHECK(doc.at("labels") == nlohmann::json({"a", "b"}));
    CHECK(doc.at("nested").at("block").at("inner") == "literal");

    CHECK_THROWS_AS(parse_toml_lite("key notequal value"), ValidationError);
}
