#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "genadapt/matrix.hpp"

namespace genadapt {

// Central-difference validation of reverse-mode gradients: perturbs every
// coordinate of every parameter matrix and compares against the supplied
// analytic gradients. Returns the worst per-coordinate relative error,
// where small coordinates are measured against a floor of 1e-3 times the
// largest gradient magnitude (finite-difference noise on near-zero entries
// would otherwise dominate).
inline double finite_difference_check(
    const std::function<double(const std::vector<Matrix>&)>& f,
    std::vector<Matrix> params, const std::vector<Matrix>& analytic,
    double step) {
    if (params.size() != analytic.size())
        throw DimensionError("finite_difference_check: " +
                             std::to_string(params.size()) + " params vs " +
                             std::to_string(analytic.size()) + " gradients");

    double grad_scale = 0.0;
    for (const Matrix& g : analytic) grad_scale = std::max(grad_scale, g.max_abs());

    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Matrix& mat = params[p];
        if (!mat.same_shape(analytic[p]))
            throw DimensionError(
                "finite_difference_check: parameter " + std::to_string(p) +
                " shape " + shape_str(mat.rows(), mat.cols()) +
                " vs gradient " +
                shape_str(analytic[p].rows(), analytic[p].cols()));
        for (Eigen::Index i = 0; i < mat.rows(); ++i) {
            for (Eigen::Index j = 0; j < mat.cols(); ++j) {
                const double saved = mat(i, j);
                mat(i, j) = saved + step;
                const double fp = f(params);
                mat(i, j) = saved - step;
                const double fm = f(params);
                mat(i, j) = saved;
                if (!std::isfinite(fp) || !std::isfinite(fm))
                    throw NumericError(
                        "finite_difference_check: non-finite function value");
                const double fd = (fp - fm) / (2.0 * step);
                const double an = analytic[p](i, j);
                const double denom = std::max(
                    {std::abs(fd), std::abs(an), 1e-3 * grad_scale, 1e-12});
                worst = std::max(worst, std::abs(fd - an) / denom);
            }
        }
    }
    return worst;
}

}  // namespace genadapt
