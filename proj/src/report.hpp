#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace qualsynth::detail {

/// Writes the report/ directory of a run from its stage artifacts and returns
/// the files written, relative to `run_dir`.
std::vector<std::string> build_report(const std::filesystem::path& run_dir);

}  // namespace qualsynth::detail
