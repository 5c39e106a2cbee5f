// Independent reference implementations used only to produce expected test
// values. Nothing here may call into the library paths under test.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "genadapt/matrix.hpp"

namespace oracles {

using genadapt::EMat;
using genadapt::Matrix;

// Naive triple-loop product.
inline Matrix matmul_naive(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < a.cols(); ++k)
                acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    return out;
}

// Sum over rows of (A2 h_m)(h_m^T B1), one rank-one term per row of h.
inline Matrix projected_gram_rowsum(const Matrix& h, const Matrix& a2,
                                    const Matrix& b1) {
    Matrix out(a2.rows(), b1.cols());
    for (Eigen::Index m = 0; m < h.rows(); ++m) {
        std::vector<double> left(static_cast<std::size_t>(a2.rows()), 0.0);
        std::vector<double> right(static_cast<std::size_t>(b1.cols()), 0.0);
        for (Eigen::Index i = 0; i < a2.rows(); ++i)
            for (Eigen::Index k = 0; k < a2.cols(); ++k)
                left[static_cast<std::size_t>(i)] += a2(i, k) * h(m, k);
        for (Eigen::Index j = 0; j < b1.cols(); ++j)
            for (Eigen::Index k = 0; k < b1.rows(); ++k)
                right[static_cast<std::size_t>(j)] += h(m, k) * b1(k, j);
        for (Eigen::Index i = 0; i < a2.rows(); ++i)
            for (Eigen::Index j = 0; j < b1.cols(); ++j)
                out(i, j) += left[static_cast<std::size_t>(i)] *
                             right[static_cast<std::size_t>(j)];
    }
    return out;
}

struct FullSvd {
    Matrix u;
    std::vector<double> s;
    Matrix v;
};

// One-sided Jacobi SVD, hand-rolled. Rotates column pairs of a working copy
// until all pairs are orthogonal; singular values are the column norms.
inline FullSvd jacobi_svd(const Matrix& input) {
    const bool transposed = input.rows() < input.cols();
    EMat w = transposed ? EMat(input.em().transpose()) : input.em();
    const Eigen::Index n = w.rows();
    const Eigen::Index m = w.cols();
    EMat v = EMat::Identity(m, m);

    const double tol = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (Eigen::Index p = 0; p + 1 < m; ++p) {
            for (Eigen::Index q = p + 1; q < m; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    alpha += w(i, p) * w(i, p);
                    beta += w(i, q) * w(i, q);
                    gamma += w(i, p) * w(i, q);
                }
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta) ||
                    gamma == 0.0)
                    continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t =
                    (zeta >= 0.0 ? 1.0 : -1.0) /
                    (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double wp = w(i, p);
                    const double wq = w(i, q);
                    w(i, p) = c * wp - s * wq;
                    w(i, q) = s * wp + c * wq;
                }
                for (Eigen::Index i = 0; i < m; ++i) {
                    const double vp = v(i, p);
                    const double vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sigma(static_cast<std::size_t>(m), 0.0);
    EMat u = EMat::Zero(n, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const double nrm = w.col(j).norm();
        sigma[static_cast<std::size_t>(j)] = nrm;
        if (nrm > 0.0) u.col(j) = w.col(j) / nrm;
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) {
                         return sigma[static_cast<std::size_t>(a)] >
                                sigma[static_cast<std::size_t>(b)];
                     });
    EMat us(n, m), vs(m, m);
    std::vector<double> ss(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) {
        us.col(j) = u.col(order[static_cast<std::size_t>(j)]);
        vs.col(j) = v.col(order[static_cast<std::size_t>(j)]);
        ss[static_cast<std::size_t>(j)] =
            sigma[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
    }

    FullSvd out;
    if (transposed) {
        out.u = Matrix(std::move(vs));
        out.v = Matrix(std::move(us));
    } else {
        out.u = Matrix(std::move(us));
        out.v = Matrix(std::move(vs));
    }
    out.s = std::move(ss);
    return out;
}

// Builds a matrix with the given singular values via random orthogonal
// factors (QR of Gaussian matrices).
inline Matrix plant_spectrum(Eigen::Index n, Eigen::Index m,
                             const std::vector<double>& sigma,
                             genadapt::Rng& rng) {
    EMat gu(n, n), gv(m, m);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) gu(i, j) = rng.gauss();
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) gv(i, j) = rng.gauss();
    Eigen::HouseholderQR<EMat> qu(gu), qv(gv);
    EMat u = qu.householderQ() * EMat::Identity(n, n);
    EMat v = qv.householderQ() * EMat::Identity(m, m);
    EMat d = EMat::Zero(n, m);
    for (std::size_t i = 0; i < sigma.size(); ++i)
        d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) =
            sigma[i];
    return Matrix(EMat(u * d * v.transpose()));
}

}  // namespace oracles
