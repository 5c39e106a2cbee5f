#pragma once

#include "genadapt/matrix.hpp"

namespace genadapt {

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: " + shape_str(a.rows(), a.cols()) +
                             " * " + shape_str(b.rows(), b.cols()));
    Matrix out(EMat(a.em() * b.em()), promote(a.precision(), b.precision()));
    out.check_finite("matmul");
    return out;
}

inline Matrix transpose(const Matrix& a) {
    return Matrix(EMat(a.em().transpose()), a.precision());
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw DimensionError("add: " + shape_str(a.rows(), a.cols()) + " vs " +
                             shape_str(b.rows(), b.cols()));
    Matrix out(EMat(a.em() + b.em()), promote(a.precision(), b.precision()));
    out.check_finite("add");
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw DimensionError("sub: " + shape_str(a.rows(), a.cols()) + " vs " +
                             shape_str(b.rows(), b.cols()));
    Matrix out(EMat(a.em() - b.em()), promote(a.precision(), b.precision()));
    out.check_finite("sub");
    return out;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix out(EMat(a.em() * s), a.precision());
    out.check_finite("scale");
    return out;
}

// Chunk summary used by the streaming state update: A2 * (H^T H) * B1,
// i.e. the projection of the accumulated outer products of the rows of H.
// An empty chunk (0 rows) contributes the zero matrix.
inline Matrix projected_gram(const Matrix& h, const Matrix& a2,
                             const Matrix& b1) {
    if (a2.cols() != h.cols() || h.cols() != b1.rows())
        throw DimensionError(
            "projected_gram: h " + shape_str(h.rows(), h.cols()) + ", a2 " +
            shape_str(a2.rows(), a2.cols()) + ", b1 " +
            shape_str(b1.rows(), b1.cols()));
    const Precision prec =
        promote(h.precision(), promote(a2.precision(), b1.precision()));
    if (h.rows() == 0)
        return Matrix::zeros(a2.rows(), b1.cols(), prec);
    // (A2 H^T)(H B1): two skinny products instead of the d_h x d_h Gram.
    EMat left = a2.em() * h.em().transpose();
    EMat right = h.em() * b1.em();
    Matrix out(EMat(left * right), prec);
    out.check_finite("projected_gram");
    return out;
}

// norm(M) = M / ||M||_F, with a hard zero for (near-)zero inputs.
inline Matrix frobenius_normalize(const Matrix& m) {
    const double n = m.frobenius_norm();
    if (n < 1e-12) return Matrix::zeros(m.rows(), m.cols(), m.precision());
    return scale(m, 1.0 / n);
}

}  // namespace genadapt
