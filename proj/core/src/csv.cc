#include "tbfp/csv.h"

#include <ostream>

#include "tbfp/config_io.h"

namespace tbfp {

void write_csv(std::ostream& out, const CsvMeta& meta, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  for (const auto& [key, value] : meta) out << "# " << key << '=' << value << '\n';
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
}

std::string cell(double value) { return format_double(value); }
std::string cell(std::int64_t value) { return std::to_string(value); }
std::string cell(std::uint64_t value) { return std::to_string(value); }

}  // namespace tbfp
