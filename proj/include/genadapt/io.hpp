#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "genadapt/common.hpp"
#include "genadapt/matrix.hpp"

namespace genadapt::io {

// All archive scalars are little-endian on disk.

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v),
                         static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16),
                         static_cast<std::uint8_t>(v >> 24)};
    write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, static_cast<std::uint32_t>(v));
    write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f32(std::ostream& os, float v) {
    write_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline void write_f64(std::ostream& os, double v) {
    write_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n,
                       const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw FormatError(std::string("truncated file while reading ") + what);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
    std::uint8_t b[4];
    read_bytes(is, b, 4, what);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
    const std::uint64_t lo = read_u32(is, what);
    const std::uint64_t hi = read_u32(is, what);
    return lo | (hi << 32);
}

inline float read_f32(std::istream& is, const char* what) {
    return std::bit_cast<float>(read_u32(is, what));
}

inline double read_f64(std::istream& is, const char* what) {
    return std::bit_cast<double>(read_u64(is, what));
}

// Tensors are stored row-major as 32-bit floats.
inline void write_tensor_f32(std::ostream& os, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            write_f32(os, static_cast<float>(m(i, j)));
}

inline Matrix read_tensor_f32(std::istream& is, Eigen::Index rows,
                              Eigen::Index cols, Precision prec,
                              const char* what) {
    Matrix m(rows, cols, prec);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = static_cast<double>(read_f32(is, what));
    m.check_finite(what);
    return m;
}

// State accumulators are stored at full double width.
inline void write_tensor_f64(std::ostream& os, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) write_f64(os, m(i, j));
}

inline Matrix read_tensor_f64(std::istream& is, Eigen::Index rows,
                              Eigen::Index cols, const char* what) {
    Matrix m(rows, cols, Precision::f64);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = read_f64(is, what);
    m.check_finite(what);
    return m;
}

inline void expect_magic(std::istream& is, const char magic[4],
                         const char* what) {
    char buf[4];
    read_bytes(is, buf, 4, what);
    if (std::memcmp(buf, magic, 4) != 0)
        throw FormatError(std::string("bad magic for ") + what);
}

}  // namespace genadapt::io
