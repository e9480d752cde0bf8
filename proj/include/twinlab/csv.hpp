#pragma once
#include <string>
#include <vector>

namespace twinlab::csv {

/* Minimal CSV: comma-separated, no quoting (fields must not contain commas
 * or newlines — enforced on write). Numbers render via std::to_chars
 * shortest-round-trip so reruns are byte-identical and values survive
 * read-back exactly. */

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    size_t column(const std::string& name) const; // throws if absent
    std::vector<double> numeric_column(const std::string& name) const;
};

std::string format_double(double v);

void write(const std::string& path, const std::vector<std::string>& header,
           const std::vector<std::vector<std::string>>& rows);

Table read(const std::string& path);

double parse_double(const std::string& cell); // throws with the cell content

} // namespace twinlab::csv
