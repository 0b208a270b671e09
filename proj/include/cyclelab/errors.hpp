#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cyclelab {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct NonPositiveSize : Error { using Error::Error; };
struct NegativeAge : Error { using Error::Error; };
struct OutOfRange : Error { using Error::Error; };
struct DivergentIntegral : Error { using Error::Error; };
struct SurvivalExhausted : Error { using Error::Error; };
struct GridMismatch : Error { using Error::Error; };
struct PreconditionViolated : Error { using Error::Error; };
struct NoConvergence : Error { using Error::Error; };
struct NotInvertible : Error { using Error::Error; };

/* Schema problems carry the full list of offending field paths. */
struct SchemaViolation : Error {
    std::vector<std::string> items;
    explicit SchemaViolation(std::vector<std::string> v)
        : Error(join(v)), items(std::move(v)) {}
    explicit SchemaViolation(const std::string& one)
        : SchemaViolation(std::vector<std::string>{one}) {}
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "config schema violation:";
        for (const auto& it : v) { s += "\n  "; s += it; }
        return s;
    }
};

}  // namespace cyclelab
