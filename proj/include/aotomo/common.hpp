#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace aotomo {

// Error categories used across the library. All inherit from std::runtime_error
// so callers that do not care about the category can catch a single type.

struct invalid_geometry_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct grid_coverage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ill_conditioned_covariance_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct invalid_profile_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct constraint_violation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct undefined_metric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double arcmin_to_rad(double arcmin) {
    return arcmin * 3.14159265358979323846 / (180.0 * 60.0);
}

inline constexpr double rad_to_arcmin(double rad) {
    return rad * (180.0 * 60.0) / 3.14159265358979323846;
}

/// 64-bit FNV-1a, used to stamp output tables with a config fingerprint.
inline std::uint64_t fnv1a_hash(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace aotomo
