#pragma once

#include <stdexcept>
#include <string>

namespace genadapt {

// Storage precision of a Matrix. Arithmetic is carried out in double;
// f32 results are rounded to the nearest float after every kernel, so a
// single-precision run is deterministic and reproducible bit-for-bit.
enum class Precision { f32, f64 };

inline const char* to_string(Precision p) {
    return p == Precision::f32 ? "f32" : "f64";
}

// f64 wins: mixed-precision expressions promote to the wider type.
inline Precision promote(Precision a, Precision b) {
    return (a == Precision::f64 || b == Precision::f64) ? Precision::f64
                                                        : Precision::f32;
}

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RankError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CompatibilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LengthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PlanError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(long rows, long cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace genadapt
