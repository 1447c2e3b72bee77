#pragma once

// Shared basics: error types, angle helpers, deterministic RNG, and the
// text/binary primitives used by the dataset and model file formats.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace coopguide {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

// ----------------------------------------------------------------
// Errors
// ----------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CoincidentTarget : Error { using Error::Error; };
struct InvalidKappa : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct StepFailure : Error { using Error::Error; };
struct NoPositiveRoot : Error { using Error::Error; };
struct BadArchitecture : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };

// ----------------------------------------------------------------
// Angles
// ----------------------------------------------------------------

/// Wraps an angle to [-pi, pi].
inline double wrap_angle(double a) {
    return std::remainder(a, kTwoPi);
}

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

// ----------------------------------------------------------------
// Deterministic RNG
// ----------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// mt19937_64 is fully specified by the standard; the distributions are not,
// so uniforms are derived from raw 64-bit draws to keep every platform and
// toolchain on identical streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Independent stream for work item `index` under a master seed.
    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        return Rng(splitmix64(splitmix64(seed) ^ (index + 1)));
    }

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Log-uniform over [lo, hi], lo > 0.
    double log_uniform(double lo, double hi) {
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

    double angle() { return uniform(-kPi, kPi); }

    /// Fisher-Yates shuffle, consuming one draw per swap.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(gen_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// ----------------------------------------------------------------
// Text / binary primitives
// ----------------------------------------------------------------

/// Shortest decimal form that round-trips a double exactly.
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) {
        // try trimming to the shortest exact representation
        for (int prec = 1; prec < 17; ++prec) {
            char tmp[64];
            std::snprintf(tmp, sizeof tmp, "%.*g", prec, v);
            std::sscanf(tmp, "%lf", &back);
            if (back == v) return tmp;
        }
    }
    return buf;
}

inline double parse_double(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw FormatError("not a number: '" + s + "'");
    // surrounding whitespace is fine (comma-split tokens), trailing garbage is not
    while (*end == ' ' || *end == '\t' || *end == '\r' || *end == '\n') ++end;
    if (*end != '\0') throw FormatError("not a number: '" + s + "'");
    return v;
}

inline void write_f64_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw FormatError("truncated float payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

/// key=value header block, terminated by a blank line.
using HeaderMap = std::vector<std::pair<std::string, std::string>>;

inline void write_header(std::ostream& os, const HeaderMap& h) {
    for (const auto& [k, v] : h) os << k << '=' << v << '\n';
    os << '\n';
}

inline HeaderMap read_header(std::istream& is) {
    HeaderMap h;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) return h;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("bad header line: '" + line + "'");
        h.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    throw FormatError("unterminated header");
}

inline const std::string& header_get(const HeaderMap& h, const std::string& key) {
    for (const auto& [k, v] : h)
        if (k == key) return v;
    throw FormatError("missing header key: " + key);
}

}  // namespace coopguide
