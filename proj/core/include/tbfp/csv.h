#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace tbfp {

using CsvMeta = std::vector<std::pair<std::string, std::string>>;

/// `# key=value` lines, then the header row, then the rows.
void write_csv(std::ostream& out, const CsvMeta& meta, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

/// Shortest round-trip text.
std::string cell(double value);
std::string cell(std::int64_t value);
std::string cell(std::uint64_t value);
inline std::string cell(int value) { return cell(static_cast<std::int64_t>(value)); }

}  // namespace tbfp
