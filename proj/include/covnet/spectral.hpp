#pragma once

// Eigendecomposition of a fitted CovNet operator.
//
// Eigenfunctions live in span{g_1..g_R}: psi = sum_r a_r g_r. With the
// constituent Gram matrix G (G_rs = integral of g_r g_s over the unit cube),
// the eigenpairs solve the generalized problem (G Lambda G) a = eta G a. G is
// estimated by Monte Carlo and is often rank deficient after training, so the
// problem is solved by whitening on the numerically nonzero part of G.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace covnet {

inline constexpr std::size_t kDefaultGramSamples = 100000;

struct ConstituentGram {
    Matrix gram;  // R x R
    std::size_t samples = 0;
    std::uint64_t seed = 0;
};

struct EigenSystem {
    Vector eta;      // descending, >= 0
    Matrix coeffs;   // row i: coefficients a_i of psi_i
    int rank = 0;    // number of retained directions of G
};

/// M uniform points on [0,1]^d, row per point.
inline Matrix uniform_points(std::size_t m, int d, std::uint64_t seed) {
    Rng rng(seed);
    Matrix pts(static_cast<Eigen::Index>(m), d);
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
        for (Eigen::Index a = 0; a < d; ++a) pts(i, a) = rng.uniform();
    return pts;
}

/// G = M^{-1} Z^T Z with Z the constituents at M uniform points.
inline ConstituentGram constituent_gram(const FittedCovariance& model, std::size_t m = kDefaultGramSamples,
                                        std::uint64_t seed = 0) {
    if (m < 1) throw invalid_argument("constituent_gram: M must be >= 1");
    const Matrix pts = uniform_points(m, model.arch.dim, seed);
    const Matrix z = eval_constituents(model.params, model.arch, pts);
    Matrix g = z.transpose() * z / static_cast<double>(m);
    g = 0.5 * (g + g.transpose()).eval();
    return {std::move(g), m, seed};
}

inline EigenSystem eigendecompose(const Matrix& lambda, const Matrix& gram, double tol_g = 1e-10) {
    const auto r = gram.rows();
    if (gram.cols() != r || lambda.rows() != r || lambda.cols() != r)
        throw invalid_argument("eigendecompose: Lambda and G must both be R x R");
    Eigen::SelfAdjointEigenSolver<Matrix> ge(gram);
    const Vector& s = ge.eigenvalues();  // ascending
    const double smax = s.maxCoeff();
    if (!(smax > 0.0)) throw degenerate_error("eigendecompose: constituent Gram matrix is numerically zero");

    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = r - 1; k >= 0; --k)
        if (s(k) >= tol_g * smax) keep.push_back(k);
    const auto k = static_cast<Eigen::Index>(keep.size());

    // whitening W = V_k diag(s_k^{-1/2}), so W^T G W = I
    Matrix w(r, k);
    for (Eigen::Index j = 0; j < k; ++j) w.col(j) = ge.eigenvectors().col(keep[static_cast<std::size_t>(j)]) / std::sqrt(s(keep[static_cast<std::size_t>(j)]));
    const Matrix glg = gram * lambda * gram;
    Matrix t = w.transpose() * glg * w;
    t = 0.5 * (t + t.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> te(t);

    EigenSystem out;
    out.rank = static_cast<int>(k);
    out.eta.resize(k);
    out.coeffs.resize(k, r);
    for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index src = k - 1 - i;  // descending
        out.eta(i) = te.eigenvalues()(src);
        out.coeffs.row(i) = (w * te.eigenvectors().col(src)).transpose();
    }
    const double emax = k > 0 ? std::max(out.eta.maxCoeff(), 0.0) : 0.0;
    for (Eigen::Index i = 0; i < k; ++i)
        if (out.eta(i) < 1e-14 * emax || out.eta(i) < 0.0) out.eta(i) = 0.0;
    return out;
}

inline EigenSystem eigendecompose(const FittedCovariance& model, const ConstituentGram& g) {
    return eigendecompose(model.lambda, g.gram);
}

/// psi_i at each row of points.
inline Vector eval_eigenfunction(const FittedCovariance& model, const EigenSystem& es, int i, const Matrix& points) {
    if (i < 0 || i >= es.rank) throw invalid_argument("eval_eigenfunction: index " + std::to_string(i) + " out of range");
    const Matrix z = eval_constituents(model.params, model.arch, points);
    return z * es.coeffs.row(i).transpose();
}

/// Lambda with its eigenvalues replaced by min(eta_i, cap).
inline Matrix threshold_lambda(const Matrix& lambda, double cap) {
    if (!(cap > 0.0)) throw invalid_argument("threshold_lambda: threshold must be > 0");
    Eigen::SelfAdjointEigenSolver<Matrix> es(lambda);
    const Vector eta = es.eigenvalues().cwiseMin(cap);
    Matrix out = es.eigenvectors() * eta.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

inline FittedCovariance threshold_lambda(const FittedCovariance& model, double cap) {
    FittedCovariance out = model;
    out.lambda = threshold_lambda(model.lambda, cap);
    return out;
}

}  // namespace covnet
