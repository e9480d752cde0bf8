#include "twinlab/csv.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "twinlab/common.hpp"

namespace twinlab::csv {

std::string format_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& cell) {
    double v = 0.0;
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    const auto res = std::from_chars(begin, end, v);
    check(res.ec == std::errc() && res.ptr == end, "not a number in CSV: '" + cell + "'");
    return v;
}

size_t Table::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw std::invalid_argument("CSV is missing column '" + name + "'");
}

std::vector<double> Table::numeric_column(const std::string& name) const {
    const size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
        check(c < row.size(), "short CSV row while reading column '" + name + "'");
        out.push_back(parse_double(row[c]));
    }
    return out;
}

void write(const std::string& path, const std::vector<std::string>& header,
           const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary); // binary: no \r\n translation
    check_runtime(bool(out), "cannot open for writing: " + path);
    auto emit_row = [&](const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) {
            check(cells[i].find_first_of(",\n\r") == std::string::npos,
                  "CSV field may not contain a comma or newline: '" + cells[i] + "'");
            if (i) out << ',';
            out << cells[i];
        }
        out << '\n';
    };
    emit_row(header);
    for (const auto& row : rows) emit_row(row);
    check_runtime(bool(out), "write failed: " + path);
}

Table read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_runtime(bool(in), "cannot open for reading: " + path);
    Table t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            t.rows.push_back(std::move(cells));
        }
    }
    check(!t.header.empty(), "empty CSV: " + path);
    return t;
}

} // namespace twinlab::csv
