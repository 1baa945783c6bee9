#include "tvoc/table.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "tvoc/error.hpp"
#include "tvoc/volume.hpp"

namespace tvoc {
namespace {

bool needs_quotes(std::string_view s) {
    return s.find_first_of(",\"\r\n") != std::string_view::npos;
}

void append_field(std::string& out, std::string_view field) {
    if (!needs_quotes(field)) {
        out.append(field);
        return;
    }
    out.push_back('"');
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
}

void append_record(std::string& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        append_field(out, fields[i]);
    }
    out.append("\r\n");
}

}  // namespace

void Table::add_row(std::vector<std::string> row) {
    if (row.size() != header.size()) fail(Errc::InvalidArgument, "row width does not match header");
    rows.push_back(std::move(row));
}

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    fail(Errc::InvalidArgument, "no column named " + std::string(name));
}

std::string to_csv(const Table& t) {
    std::string out;
    append_record(out, t.header);
    for (const auto& row : t.rows) append_record(out, row);
    return out;
}

Table parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    while (i < text.size()) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    i += 2;
                    continue;
                }
                in_quotes = false;
            } else {
                field.push_back(c);
            }
            ++i;
            continue;
        }
        if (c == '"' && !field_started && field.empty()) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\r' || c == '\n') {
            end_field();
            records.push_back(std::move(record));
            record.clear();
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
        } else {
            field.push_back(c);
            field_started = true;
        }
        ++i;
    }
    if (in_quotes) fail(Errc::ParseError, "unterminated quoted field");
    if (field_started || !field.empty() || !record.empty()) {
        end_field();
        records.push_back(std::move(record));
    }
    if (records.empty()) fail(Errc::ParseError, "missing header row");

    Table t;
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size()) fail(Errc::ParseError, "ragged CSV row " + std::to_string(r));
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

void write_table(const Table& t, const std::filesystem::path& path) {
    const std::string text = to_csv(t);
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

Table read_table(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return parse_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

double parse_number(std::string_view s) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        fail(Errc::ParseError, "not a number: " + std::string(s));
    return v;
}

}  // namespace tvoc
