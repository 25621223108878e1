#pragma once

// Analytic covariance kernels on [0,1]^d and Gaussian random field sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "errors.hpp"
#include "field_data.hpp"
#include "rng.hpp"

namespace covnet {

enum class KernelKind { brownian, rotated_brownian, integrated_brownian, rotated_integrated_brownian, matern };

struct KernelSpec {
    KernelKind kind = KernelKind::brownian;
    int dim = 1;
    Matrix rotation;  // d x d, used by the rotated variants only
    double nu = 0.5;  // Matern smoothness
};

struct NoiseSpec {
    double sigma = 0.0;
    std::uint64_t seed = 0;
};

inline std::string kernel_name(KernelKind k) {
    switch (k) {
        case KernelKind::brownian: return "brownian";
        case KernelKind::rotated_brownian: return "rotated_brownian";
        case KernelKind::integrated_brownian: return "integrated_brownian";
        case KernelKind::rotated_integrated_brownian: return "rotated_integrated_brownian";
        case KernelKind::matern: return "matern";
    }
    return "unknown";
}

inline KernelKind parse_kernel_kind(const std::string& s) {
    for (auto k : {KernelKind::brownian, KernelKind::rotated_brownian, KernelKind::integrated_brownian,
                   KernelKind::rotated_integrated_brownian, KernelKind::matern})
        if (kernel_name(k) == s) return k;
    throw invalid_argument("unknown kernel '" + s + "'");
}

/// 45 degree rotation of the plane.
inline Matrix rotation_2d_45() {
    const double h = 1.0 / std::numbers::sqrt2;
    Matrix o(2, 2);
    o << h, -h,
         h, h;
    return o;
}

/// O_z O_y O_x with 45 degree basic rotations about each axis.
inline Matrix rotation_3d_composed() {
    const double h = 1.0 / std::numbers::sqrt2;
    Matrix ox(3, 3), oy(3, 3), oz(3, 3);
    ox << 1, 0, 0,
          0, h, -h,
          0, h, h;
    oy << h, 0, h,
          0, 1, 0,
          -h, 0, h;
    oz << h, -h, 0,
          h, h, 0,
          0, 0, 1;
    return oz * oy * ox;
}

inline void validate(const KernelSpec& spec) {
    if (spec.dim < 1) throw invalid_argument("kernel: dimension must be >= 1");
    if (spec.kind == KernelKind::matern && !(spec.nu > 0.0))
        throw invalid_argument("kernel: Matern smoothness nu must be > 0");
    if (spec.kind == KernelKind::rotated_brownian || spec.kind == KernelKind::rotated_integrated_brownian) {
        const Matrix& o = spec.rotation;
        if (o.rows() != spec.dim || o.cols() != spec.dim) throw invalid_argument("kernel: rotation must be d x d");
        const double dev = (o.transpose() * o - Matrix::Identity(spec.dim, spec.dim)).cwiseAbs().maxCoeff();
        if (dev > 1e-12) throw invalid_argument("kernel: rotation is not orthogonal");
    }
}

/// Spec with the default rotation for d = 2 or 3 when a rotated variant is requested.
inline KernelSpec make_kernel_spec(KernelKind kind, int dim, double nu = 0.5) {
    KernelSpec spec{kind, dim, {}, nu};
    if (kind == KernelKind::rotated_brownian || kind == KernelKind::rotated_integrated_brownian) {
        if (dim == 2) spec.rotation = rotation_2d_45();
        else if (dim == 3) spec.rotation = rotation_3d_composed();
        else throw invalid_argument("kernel: no default rotation for d = " + std::to_string(dim));
    }
    validate(spec);
    return spec;
}

namespace detail {

// Two-sided extensions: on [0,1] these are the usual Brownian and integrated
// Brownian covariances; for negative arguments the two half-lines are
// independent copies, which keeps the kernel non-negative definite after a
// rotation moves points out of the positive orthant.
inline double brownian_1d(double s, double t) {
    if (s * t <= 0.0) return 0.0;
    return std::min(std::abs(s), std::abs(t));
}

inline double integrated_brownian_1d(double s, double t) {
    if (s * t <= 0.0) return 0.0;
    const double u = std::abs(s), v = std::abs(t);
    if (u <= v) return 0.5 * u * u * (v - u / 3.0);
    return 0.5 * v * v * (u - v / 3.0);
}

inline double matern(double nu, double r) {
    if (r == 0.0) return 1.0;
    const double x = std::sqrt(2.0 * nu) * r;
    double k;
    try {
        k = std::cyl_bessel_k(nu, x);
    } catch (const std::exception& e) {
        throw numeric_error(std::string("Bessel K evaluation failed: ") + e.what());
    }
    if (std::isnan(k)) throw numeric_error("Bessel K evaluation did not converge");
    if (k == 0.0) return 0.0;
    const double log_c = (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu) + nu * std::log(x) + std::log(k);
    return std::exp(log_c);
}

}  // namespace detail

inline double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) {
    if (u.size() != spec.dim || v.size() != spec.dim) throw invalid_argument("kernel_eval: point dimension mismatch");
    switch (spec.kind) {
        case KernelKind::brownian:
        case KernelKind::integrated_brownian: {
            const bool ibm = spec.kind == KernelKind::integrated_brownian;
            double c = 1.0;
            for (int a = 0; a < spec.dim; ++a)
                c *= ibm ? detail::integrated_brownian_1d(u(a), v(a)) : detail::brownian_1d(u(a), v(a));
            return c;
        }
        case KernelKind::rotated_brownian:
        case KernelKind::rotated_integrated_brownian: {
            const bool ibm = spec.kind == KernelKind::rotated_integrated_brownian;
            const Vector ou = spec.rotation * u;
            const Vector ov = spec.rotation * v;
            double c = 1.0;
            for (int a = 0; a < spec.dim; ++a)
                c *= ibm ? detail::integrated_brownian_1d(ou(a), ov(a)) : detail::brownian_1d(ou(a), ov(a));
            return c;
        }
        case KernelKind::matern: {
            if (!(spec.nu > 0.0)) throw invalid_argument("kernel: Matern smoothness nu must be > 0");
            return detail::matern(spec.nu, (u - v).norm());
        }
    }
    throw invalid_argument("kernel_eval: unknown kernel");
}

inline constexpr std::size_t kDefaultKernelMatrixCap = 20000;

/// Kernel evaluated at all pairs of grid midpoints.
inline Matrix kernel_matrix(const KernelSpec& spec, const Grid& grid, std::size_t cap = kDefaultKernelMatrixCap) {
    if (grid.size() > cap)
        throw resource_limit("kernel_matrix: grid size " + std::to_string(grid.size()) + " exceeds cap " +
                             std::to_string(cap));
    if (grid.dim() != spec.dim) throw invalid_argument("kernel_matrix: grid dimension does not match kernel");
    validate(spec);
    const Matrix pts = grid.coordinates();
    const auto n = pts.rows();
    Matrix k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) {
            const double c = kernel_eval(spec, pts.row(i).transpose(), pts.row(j).transpose());
            k(i, j) = c;
            k(j, i) = c;
        }
    }
    return k;
}

/// Lower Cholesky factor of k + jitter * I. Jitter starts at 1e-12 * trace / D and
/// grows by 10x up to six times.
inline Matrix jittered_cholesky(const Matrix& k, double* jitter_used = nullptr) {
    const auto n = k.rows();
    const double base = n > 0 ? 1e-12 * k.trace() / static_cast<double>(n) : 0.0;
    double jitter = base;
    for (int attempt = 0; attempt <= 6; ++attempt, jitter *= 10.0) {
        Matrix shifted = k;
        shifted.diagonal().array() += jitter;
        Eigen::LLT<Matrix> llt(shifted);
        if (llt.info() == Eigen::Success) {
            Matrix l = llt.matrixL();
            if (l.allFinite()) {
                if (jitter_used) *jitter_used = jitter;
                return l;
            }
        }
    }
    throw numeric_error("Cholesky failed after jitter escalation; final jitter " + std::to_string(jitter / 10.0));
}

/// N i.i.d. zero-mean Gaussian fields with covariance given by the kernel at
/// the grid midpoints, plus optional i.i.d. N(0, sigma^2) measurement noise.
inline FieldMatrix sample_gaussian_fields(const KernelSpec& spec, const Grid& grid, Eigen::Index n, std::uint64_t seed,
                                          const std::optional<NoiseSpec>& noise = std::nullopt) {
    if (n < 0) throw invalid_argument("sample_gaussian_fields: negative sample count");
    if (noise && !(noise->sigma >= 0.0)) throw invalid_argument("noise: sigma must be >= 0");
    const Matrix l = jittered_cholesky(kernel_matrix(spec, grid));
    const auto dsz = static_cast<Eigen::Index>(grid.size());

    Rng rng(seed);
    Matrix z(n, dsz);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index i = 0; i < dsz; ++i) z(r, i) = rng.normal();
    Matrix x = z * l.transpose();

    if (noise && noise->sigma > 0.0) {
        Rng nrng(noise->seed);
        for (Eigen::Index r = 0; r < n; ++r)
            for (Eigen::Index i = 0; i < dsz; ++i) x(r, i) += noise->sigma * nrng.normal();
    }
    return FieldMatrix(grid, std::move(x));
}

}  // namespace covnet
