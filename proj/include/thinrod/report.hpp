#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "thinrod/errors.hpp"

namespace thinrod {

// 17 significant digits: round-trips every double
inline std::string fmt17(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline void write_json(std::ostream& os, const nlohmann::json& j, int indent) {
    const std::string pad(static_cast<std::size_t>(indent + 2), ' '), close(static_cast<std::size_t>(indent), ' ');
    switch (j.type()) {
    case nlohmann::json::value_t::object: {
        if (j.empty()) {
            os << "{}";
            return;
        }
        os << "{\n";
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) os << ",\n";
            first = false;
            os << pad << nlohmann::json(it.key()).dump() << ": ";
            write_json(os, it.value(), indent + 2);
        }
        os << '\n' << close << '}';
        return;
    }
    case nlohmann::json::value_t::array: {
        if (j.empty()) {
            os << "[]";
            return;
        }
        os << "[\n";
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (i) os << ",\n";
            os << pad;
            write_json(os, j[i], indent + 2);
        }
        os << '\n' << close << ']';
        return;
    }
    case nlohmann::json::value_t::number_float: {
        const double v = j.get<double>();
        // JSON has no inf/nan
        if (std::isfinite(v)) os << fmt17(v);
        else os << "null";
        return;
    }
    default: os << j.dump();
    }
}

} // namespace detail

inline std::string json_text(const nlohmann::json& j) {
    std::ostringstream os;
    detail::write_json(os, j, 0);
    os << '\n';
    return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::ConfigError, "cannot write " + path);
    out << text;
}

// plain CSV: header then rows of already formatted cells
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    void row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }

    std::string text() const {
        std::string s;
        auto line = [&](const std::vector<std::string>& c) {
            for (std::size_t i = 0; i < c.size(); ++i) s += (i ? "," : "") + c[i];
            s += '\n';
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return s;
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

} // namespace thinrod
