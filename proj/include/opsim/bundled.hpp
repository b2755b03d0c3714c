#pragma once

#include <filesystem>

#include "opsim/survey_data.hpp"

namespace opsim {

/// Directory holding the bundled data files. Resolution order: explicit
/// override, OPSIM_DATA_DIR environment variable, compiled-in default.
std::filesystem::path default_data_dir();

std::filesystem::path bundled_questions_path(const std::filesystem::path& data_dir = {});
std::filesystem::path bundled_vocabulary_path(const std::filesystem::path& data_dir = {});
std::filesystem::path bundled_reference_path(const std::filesystem::path& data_dir = {});
std::filesystem::path bundled_model_distributions_path(const std::filesystem::path& data_dir = {});
std::filesystem::path bundled_reported_metrics_path(const std::filesystem::path& data_dir = {});

QuestionRegistry load_bundled_registry(const std::filesystem::path& data_dir = {});
Vocabulary load_bundled_vocabulary(const std::filesystem::path& data_dir = {});
ReferenceDataset load_bundled_reference(const QuestionRegistry& registry,
                                        const std::filesystem::path& data_dir = {});

} // namespace opsim
