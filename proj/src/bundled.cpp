#include "opsim/bundled.hpp"

#include <cstdlib>

namespace opsim {

namespace {

std::filesystem::path resolve(const std::filesystem::path& data_dir, const char* file) {
    return (data_dir.empty() ? default_data_dir() : data_dir) / file;
}

} // namespace

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("OPSIM_DATA_DIR"); env && *env) return env;
#ifdef OPSIM_DATA_DIR
    return OPSIM_DATA_DIR;
#else
    return "data";
#endif
}

std::filesystem::path bundled_questions_path(const std::filesystem::path& data_dir) {
    return resolve(data_dir, "questions.json");
}

std::filesystem::path bundled_vocabulary_path(const std::filesystem::path& data_dir) {
    return resolve(data_dir, "profile_vocabulary.json");
}

std::filesystem::path bundled_reference_path(const std::filesystem::path& data_dir) {
    return resolve(data_dir, "reference_expected.json");
}

std::filesystem::path bundled_model_distributions_path(const std::filesystem::path& data_dir) {
    return resolve(data_dir, "model_distributions.json");
}

std::filesystem::path bundled_reported_metrics_path(const std::filesystem::path& data_dir) {
    return resolve(data_dir, "reported_metrics.json");
}

QuestionRegistry load_bundled_registry(const std::filesystem::path& data_dir) {
    return QuestionRegistry::load(bundled_questions_path(data_dir));
}

Vocabulary load_bundled_vocabulary(const std::filesystem::path& data_dir) {
    return Vocabulary::load(bundled_vocabulary_path(data_dir));
}

ReferenceDataset load_bundled_reference(const QuestionRegistry& registry,
                                        const std::filesystem::path& data_dir) {
    return load_reference_dataset(bundled_reference_path(data_dir), registry);
}

} // namespace opsim
