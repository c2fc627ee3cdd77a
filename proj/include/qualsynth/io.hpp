#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qualsynth/panel.hpp"
#include "qualsynth/synth.hpp"

namespace qualsynth {

/// Long-form panel text in the default ColumnSchema layout. Numbers use the
/// shortest round-trip decimal form, so parse_panel() restores the panel
/// exactly.
std::string panel_to_csv(const PanelDataset& ds);
void save_panel(const PanelDataset& ds, const std::filesystem::path& path);

/// Rows `region,outcome,year,gap`.
std::string gaps_to_csv(std::span<const GapSeries> gaps);
/// Inverse of gaps_to_csv(); region names, countries and treated flags are not
/// stored and come back empty. RMSEs are recomputed at `t0`.
std::vector<GapSeries> gaps_from_csv(std::string_view text, int t0, bool treated);

std::string solutions_to_json(std::span<const SynthSolution> solutions);
std::vector<SynthSolution> solutions_from_json(std::string_view text);

/// Hex SHA-256 of a byte string and of a file's contents.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace qualsynth
