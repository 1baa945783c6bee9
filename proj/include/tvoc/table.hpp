#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tvoc {

/// String-valued table written as RFC-4180 CSV. Column order is the header order.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
    std::size_t column(std::string_view name) const;
};

std::string to_csv(const Table& t);
Table parse_csv(std::string_view text);

void write_table(const Table& t, const std::filesystem::path& path);
Table read_table(const std::filesystem::path& path);

/// Shortest round-trip decimal form ('.' separator, locale independent).
std::string format_number(double v);
double parse_number(std::string_view s);

}  // namespace tvoc
