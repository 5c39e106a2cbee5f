#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "genadapt/kernels.hpp"
#include "genadapt/matrix.hpp"
#include "genadapt/rng.hpp"

namespace genadapt {

// Singular directions with s_i below kSvTruncation * s_max are dropped
// (their factor columns zeroed), which also defines norm(0) = 0.
inline constexpr double kSvTruncation = 1e-6;

// Backward-pass denominators 1/(s_i^2 - s_j^2) are clamped in magnitude to
// kGapClamp * s_max^2. Gradients are biased near singular-value ties.
inline constexpr double kGapClamp = 1e-8;

// Default seed for the Gaussian sketch of the randomized range finder. The
// sketch depends only on the input shape and requested rank, never on the
// matrix content, so the factorization is a continuous function of the input.
inline constexpr std::uint64_t kSketchSeed = 0x67656e6164617074ull;

inline constexpr int kDefaultPowerIterations = 1;

struct SvdResult {
    Matrix left_vectors;                 // n x k, orthonormal columns
    std::vector<double> singular_values; // k, non-negative, non-increasing
    Matrix right_vectors;                // m x k, orthonormal columns

    Eigen::Index rank() const {
        return static_cast<Eigen::Index>(singular_values.size());
    }

    Matrix reconstruct() const {
        EMat s = EMat::Zero(rank(), rank());
        for (Eigen::Index i = 0; i < rank(); ++i)
            s(i, i) = singular_values[static_cast<std::size_t>(i)];
        return Matrix(EMat(left_vectors.em() * s *
                           right_vectors.em().transpose()),
                      left_vectors.precision());
    }
};

namespace detail {

inline EMat thin_q(const EMat& y) {
    Eigen::HouseholderQR<EMat> qr(y);
    return qr.householderQ() * EMat::Identity(y.rows(), y.cols());
}

// Halko-style randomized SVD: Gaussian sketch of `width` columns, QR range
// finder, `power_iterations` rounds of (A^T A) with re-orthonormalization,
// then an exact small SVD of the projected matrix. Returns `width` triplets.
inline SvdResult range_finder_svd(const Matrix& m, Eigen::Index width,
                                  int power_iterations, std::uint64_t seed) {
    const Eigen::Index n = m.rows();
    const Eigen::Index c = m.cols();
    width = std::min({width, n, c});
    Rng rng(split_seed(seed, static_cast<std::uint64_t>(n) * 1000003ull +
                                 static_cast<std::uint64_t>(c) * 1009ull +
                                 static_cast<std::uint64_t>(width)));
    EMat omega(c, width);
    for (Eigen::Index i = 0; i < c; ++i)
        for (Eigen::Index j = 0; j < width; ++j) omega(i, j) = rng.gauss();

    EMat q = thin_q(m.em() * omega);
    for (int it = 0; it < power_iterations; ++it) {
        q = thin_q(m.em().transpose() * q);
        q = thin_q(m.em() * q);
    }

    const EMat b = q.transpose() * m.em();  // width x c
    Eigen::JacobiSVD<EMat> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);

    SvdResult out;
    out.left_vectors = Matrix(EMat(q * svd.matrixU()), m.precision());
    out.right_vectors = Matrix(EMat(svd.matrixV()), m.precision());
    out.singular_values.assign(svd.singularValues().data(),
                               svd.singularValues().data() +
                                   svd.singularValues().size());
    return out;
}

inline SvdResult truncate_svd(const SvdResult& svd, Eigen::Index rank) {
    if (svd.rank() <= rank) return svd;
    SvdResult out;
    out.left_vectors =
        Matrix(EMat(svd.left_vectors.em().leftCols(rank)),
               svd.left_vectors.precision());
    out.right_vectors =
        Matrix(EMat(svd.right_vectors.em().leftCols(rank)),
               svd.right_vectors.precision());
    out.singular_values.assign(svd.singular_values.begin(),
                               svd.singular_values.begin() + rank);
    return out;
}

inline Eigen::Index sketch_width(Eigen::Index rank) {
    return rank + std::min<Eigen::Index>(rank, 8);
}

}  // namespace detail

// Rank-truncated approximate SVD. Deterministic for a fixed seed; exact (up
// to roundoff) whenever the sketch width reaches min(rows, cols).
inline SvdResult low_rank_svd(const Matrix& m, Eigen::Index rank,
                              int power_iterations = kDefaultPowerIterations,
                              std::uint64_t seed = kSketchSeed) {
    if (rank < 1 || rank > std::min(m.rows(), m.cols()))
        throw RankError("low_rank_svd: rank " + std::to_string(rank) +
                        " out of range for " + shape_str(m.rows(), m.cols()));
    return detail::truncate_svd(
        detail::range_finder_svd(m, detail::sketch_width(rank),
                                 power_iterations, seed),
        rank);
}

// Zeroes the factor columns of directions below the truncation threshold.
// Returns the indices kept among the first `retain` columns.
inline std::vector<Eigen::Index> retained_directions(const SvdResult& svd,
                                                     Eigen::Index retain) {
    std::vector<Eigen::Index> kept;
    if (svd.rank() == 0) return kept;
    const double smax = svd.singular_values[0];
    if (smax <= 0.0) return kept;
    const double cutoff = kSvTruncation * smax;
    const Eigen::Index limit = std::min(retain, svd.rank());
    for (Eigen::Index i = 0; i < limit; ++i)
        if (svd.singular_values[static_cast<std::size_t>(i)] >= cutoff)
            kept.push_back(i);
    return kept;
}

// SVD normalization norm(M) = U V^T: keeps the top-`rank` singular
// directions and resets their singular values to one. Factor columns of
// dropped directions are zero, so norm(0) = 0.
inline std::pair<Matrix, Matrix> svd_normalize(
    const Matrix& m, Eigen::Index rank,
    int power_iterations = kDefaultPowerIterations,
    std::uint64_t seed = kSketchSeed) {
    SvdResult svd = low_rank_svd(m, rank, power_iterations, seed);
    const std::vector<Eigen::Index> kept = retained_directions(svd, rank);
    EMat u = EMat::Zero(m.rows(), rank);
    EMat v = EMat::Zero(m.cols(), rank);
    for (Eigen::Index i : kept) {
        u.col(i) = svd.left_vectors.em().col(i);
        v.col(i) = svd.right_vectors.em().col(i);
    }
    return {Matrix(std::move(u), m.precision()),
            Matrix(std::move(v), m.precision())};
}

// Reverse-mode gradient of M -> U V^T given the factorization of M and the
// upstream gradient on U V^T. All triplets present in `svd` act as the
// spectral basis; only the first `retained_count` of them (those above the
// truncation threshold) contribute factor columns to the output. Couplings
// to directions outside the provided basis use the orthogonal-complement
// projectors, which is exact when `svd` carries all min(n, m) triplets.
inline Matrix svd_backward(const SvdResult& svd, const Matrix& grad_uvt,
                           Eigen::Index retained_count = -1) {
    const Eigen::Index n = svd.left_vectors.rows();
    const Eigen::Index m = svd.right_vectors.rows();
    const Eigen::Index k = svd.rank();
    if (grad_uvt.rows() != n || grad_uvt.cols() != m)
        throw DimensionError("svd_backward: gradient " +
                             shape_str(grad_uvt.rows(), grad_uvt.cols()) +
                             " vs factorization " + shape_str(n, m));
    if (retained_count < 0) retained_count = k;
    const std::vector<Eigen::Index> kept =
        retained_directions(svd, retained_count);
    if (kept.empty())
        return Matrix::zeros(n, m, grad_uvt.precision());

    const EMat& u = svd.left_vectors.em();
    const EMat& v = svd.right_vectors.em();
    const auto& s = svd.singular_values;
    const double smax = s[0];
    const double gap_floor = kGapClamp * smax * smax;

    const EMat pbar = u.transpose() * grad_uvt.em() * v;  // k x k

    EMat coeff = EMat::Zero(k, k);
    std::vector<char> is_kept(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i : kept) is_kept[static_cast<std::size_t>(i)] = 1;
    for (Eigen::Index i : kept) {
        const double si = s[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < k; ++j) {
            if (j == i) continue;
            const double sj = s[static_cast<std::size_t>(j)];
            double denom = si * si - sj * sj;
            const double mag = std::max(std::abs(denom), gap_floor);
            denom = (denom < 0.0) ? -mag : mag;
            coeff(j, i) += (pbar(j, i) * si + pbar(i, j) * sj) / denom;
            coeff(i, j) += (pbar(j, i) * sj + pbar(i, j) * si) / denom;
        }
    }

    EMat grad = u * coeff * v.transpose();

    // Couplings with the orthogonal complement of the provided basis.
    EMat gv_scaled = EMat::Zero(n, static_cast<Eigen::Index>(kept.size()));
    EMat vr = EMat::Zero(m, static_cast<Eigen::Index>(kept.size()));
    EMat ur = EMat::Zero(n, static_cast<Eigen::Index>(kept.size()));
    EMat gtu_scaled = EMat::Zero(m, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t idx = 0; idx < kept.size(); ++idx) {
        const Eigen::Index i = kept[idx];
        const double inv_s = 1.0 / s[static_cast<std::size_t>(i)];
        gv_scaled.col(static_cast<Eigen::Index>(idx)) =
            grad_uvt.em() * v.col(i) * inv_s;
        gtu_scaled.col(static_cast<Eigen::Index>(idx)) =
            grad_uvt.em().transpose() * u.col(i) * inv_s;
        vr.col(static_cast<Eigen::Index>(idx)) = v.col(i);
        ur.col(static_cast<Eigen::Index>(idx)) = u.col(i);
    }
    const EMat proj_u = gv_scaled - u * (u.transpose() * gv_scaled);
    const EMat proj_v = gtu_scaled - v * (v.transpose() * gtu_scaled);
    grad += proj_u * vr.transpose() + ur * proj_v.transpose();

    Matrix out(std::move(grad), grad_uvt.precision());
    out.check_finite("svd_backward");
    return out;
}

}  // namespace genadapt
