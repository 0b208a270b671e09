#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "errors.hpp"

namespace cyclelab {

/* Shortest decimal string that parses back to exactly the same double, so
 * rewritten files stay byte-identical run to run. */
inline std::string format_number(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionViolated("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionViolated("cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw PreconditionViolated("short write on " + path);
}

inline std::string render_csv(const std::vector<std::string>& header,
                              const std::vector<std::vector<double>>& rows) {
    std::string s;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) s += ',';
        s += header[i];
    }
    s += '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw PreconditionViolated("csv row width does not match the header");
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) s += ',';
            s += format_number(row[i]);
        }
        s += '\n';
    }
    return s;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
    write_text(path, render_csv(header, rows));
}

/* FNV-1a, 64-bit; used for the artifact checksums in run manifests. */
inline std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string fnv1a_hex(const std::string& data) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(data)));
    return buf;
}

}  // namespace cyclelab
