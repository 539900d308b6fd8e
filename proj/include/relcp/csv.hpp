#pragma once

#include <string>
#include <vector>

namespace relcp {

// Minimal RFC-4180-style CSV: quoted fields may contain commas, doubled
// quotes, and newlines; CRLF and LF line endings are accepted.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

std::string csv_escape(const std::string& field);
void write_csv(const std::string& path, const std::vector<std::vector<std::string>>& records);

}  // namespace relcp
