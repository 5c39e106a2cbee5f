#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <utility>

#include "genadapt/common.hpp"
#include "genadapt/rng.hpp"

namespace genadapt {

using EMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense real matrix, row-major, double storage with an f32/f64 precision tag.
// Entries of an f32 matrix are always exactly representable floats.
class Matrix {
  public:
    Matrix() : m_(0, 0), prec_(Precision::f64) {}

    Matrix(Eigen::Index rows, Eigen::Index cols,
           Precision prec = Precision::f64)
        : m_(EMat::Zero(rows, cols)), prec_(prec) {}

    Matrix(EMat m, Precision prec = Precision::f64)
        : m_(std::move(m)), prec_(prec) {
        round_to_precision();
        check_finite("construct");
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows,
           Precision prec = Precision::f64)
        : prec_(prec) {
        const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
        const Eigen::Index c =
            r > 0 ? static_cast<Eigen::Index>(rows.begin()->size()) : 0;
        m_.resize(r, c);
        Eigen::Index i = 0;
        for (const auto& row : rows) {
            if (static_cast<Eigen::Index>(row.size()) != c)
                throw DimensionError("matrix literal has ragged rows");
            Eigen::Index j = 0;
            for (double v : row) m_(i, j++) = v;
            ++i;
        }
        round_to_precision();
        check_finite("construct");
    }

    static Matrix zeros(Eigen::Index rows, Eigen::Index cols,
                        Precision prec = Precision::f64) {
        return Matrix(rows, cols, prec);
    }

    static Matrix identity(Eigen::Index n, Precision prec = Precision::f64) {
        return Matrix(EMat(EMat::Identity(n, n)), prec);
    }

    static Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                           double stddev = 1.0,
                           Precision prec = Precision::f64) {
        EMat m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.gauss(stddev);
        return Matrix(std::move(m), prec);
    }

    Eigen::Index rows() const { return m_.rows(); }
    Eigen::Index cols() const { return m_.cols(); }
    Eigen::Index size() const { return m_.size(); }

    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
    double& operator()(Eigen::Index i, Eigen::Index j) { return m_(i, j); }

    const EMat& em() const { return m_; }
    EMat& em() { return m_; }

    Precision precision() const { return prec_; }

    // Returns a copy in the requested precision (rounding through float
    // when narrowing).
    Matrix to(Precision p) const {
        Matrix out = *this;
        out.prec_ = p;
        out.round_to_precision();
        return out;
    }

    bool same_shape(const Matrix& o) const {
        return rows() == o.rows() && cols() == o.cols();
    }

    double frobenius_norm() const { return m_.norm(); }
    double max_abs() const {
        return m_.size() == 0 ? 0.0 : m_.cwiseAbs().maxCoeff();
    }

    bool all_finite() const { return m_.allFinite(); }

    void check_finite(const char* op) const {
        if (!all_finite())
            throw NumericError(std::string(op) +
                               ": non-finite entries in result " +
                               shape_str(rows(), cols()));
    }

    // Kernels call this on their result: narrows f32 results through float
    // so stored entries always honour the precision tag.
    void round_to_precision() {
        if (prec_ == Precision::f32)
            m_ = m_.unaryExpr([](double v) {
                return static_cast<double>(static_cast<float>(v));
            });
    }

    bool operator==(const Matrix& o) const {
        return same_shape(o) && m_ == o.m_;
    }

  private:
    EMat m_;
    Precision prec_;
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw DimensionError("max_abs_diff: " + shape_str(a.rows(), a.cols()) +
                             " vs " + shape_str(b.rows(), b.cols()));
    if (a.size() == 0) return 0.0;
    return (a.em() - b.em()).cwiseAbs().maxCoeff();
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
    const double scale = std::max({a.max_abs(), b.max_abs(), 1e-300});
    return max_abs_diff(a, b) / scale;
}

}  // namespace genadapt
