#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "optweights/core.hpp"

namespace optw {

/// Shortest decimal string that parses back to the same double.
std::string format_double(double x);

/// Strict parse of a whole field; nullopt if anything is left over.
std::optional<double> parse_double(std::string_view field);

/// Header `y,g,x0,...,x{d-1}`, one row per observation, LF line endings.
std::string dataset_to_csv(const GroupedDataset& data);
void write_dataset_csv(const std::filesystem::path& path, const GroupedDataset& data);

/// G defaults to the largest label present.
GroupedDataset parse_dataset_csv(std::string_view text, std::optional<int> num_groups = std::nullopt);
GroupedDataset load_csv(const std::filesystem::path& path,
                        std::optional<int> num_groups = std::nullopt);

/// `{"p_train":[...],"p_test":[...]}`
std::string shift_to_json(const ShiftSpec& shift);
ShiftSpec shift_from_json(std::string_view text);
ShiftSpec load_shift(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace optw
