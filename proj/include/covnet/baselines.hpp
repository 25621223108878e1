#pragma once

// Reference estimators, Monte-Carlo relative Hilbert-Schmidt error and
// V-fold cross-validation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "field_data.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "simulators.hpp"
#include "training.hpp"

namespace covnet {

inline constexpr std::size_t kDefaultDenseCap = 4096;

/// Covariance values at grid nodes, D x D.
struct DenseCovariance {
    Grid grid;
    Matrix matrix;
};

namespace detail {
inline Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return k;
}
}  // namespace detail

/// A (x) B on a 2-D grid, A over the first axis, B over the second.
struct SeparableCovariance {
    Grid grid;
    Matrix a;
    Matrix b;

    Matrix dense() const { return detail::kron(a, b); }
};

/// N^{-1} X^T X of the (already centered) fields.
inline DenseCovariance empirical_covariance(const FieldMatrix& f, std::size_t cap = kDefaultDenseCap) {
    if (f.grid().size() > cap)
        throw resource_limit("empirical_covariance: grid size " + std::to_string(f.grid().size()) + " exceeds cap " +
                             std::to_string(cap));
    if (f.count() < 1) throw invalid_argument("empirical_covariance: no fields");
    Matrix c = f.values().transpose() * f.values() / static_cast<double>(f.count());
    c = 0.5 * (c + c.transpose()).eval();
    return {f.grid(), std::move(c)};
}

/// Nearest Kronecker product in Frobenius norm (Van Loan-Pitsianis):
/// the leading singular pair of the rearranged matrix, split so that
/// ||A||_F = ||B||_F. This is a stand-in for the best separable estimator.
inline SeparableCovariance best_separable_2d(const DenseCovariance& c) {
    if (c.grid.dim() != 2) throw unsupported_dimension("best_separable_2d: only d = 2 is supported");
    const int k1 = c.grid.sizes()[0], k2 = c.grid.sizes()[1];
    // R[(i1,j1), (i2,j2)] = C[(i1,i2), (j1,j2)]
    Matrix r(static_cast<Eigen::Index>(k1) * k1, static_cast<Eigen::Index>(k2) * k2);
    for (int i1 = 0; i1 < k1; ++i1)
        for (int j1 = 0; j1 < k1; ++j1)
            for (int i2 = 0; i2 < k2; ++i2)
                for (int j2 = 0; j2 < k2; ++j2)
                    r(i1 * k1 + j1, i2 * k2 + j2) = c.matrix(i1 * k2 + i2, j1 * k2 + j2);
    Eigen::BDCSVD<Matrix> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double s = svd.singularValues()(0);
    Vector u = svd.matrixU().col(0) * std::sqrt(s);
    Vector v = svd.matrixV().col(0) * std::sqrt(s);
    SeparableCovariance out{c.grid, Matrix(k1, k1), Matrix(k2, k2)};
    for (int i = 0; i < k1; ++i)
        for (int j = 0; j < k1; ++j) out.a(i, j) = u(i * k1 + j);
    for (int i = 0; i < k2; ++i)
        for (int j = 0; j < k2; ++j) out.b(i, j) = v(i * k2 + j);
    if (out.a.trace() < 0.0) {
        out.a = -out.a;
        out.b = -out.b;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Point-evaluable estimators. An estimator maps paired point sets (rows of us
// and vs) to the kernel values at each pair.

using PairKernel = std::function<Vector(const Matrix& us, const Matrix& vs)>;

inline PairKernel as_pair_kernel(const FittedCovariance& model) {
    return [model](const Matrix& us, const Matrix& vs) {
        const Matrix gu = eval_constituents(model.params, model.arch, us);
        const Matrix gv = eval_constituents(model.params, model.arch, vs);
        return Vector(((gu * model.lambda).array() * gv.array()).rowwise().sum());
    };
}

/// Piecewise-constant continuation: value at the voxels containing u and v.
inline PairKernel as_pair_kernel(const DenseCovariance& c) {
    return [c](const Matrix& us, const Matrix& vs) {
        Vector out(us.rows());
        for (Eigen::Index i = 0; i < us.rows(); ++i)
            out(i) = c.matrix(static_cast<Eigen::Index>(c.grid.voxel_of(us.row(i).transpose())),
                              static_cast<Eigen::Index>(c.grid.voxel_of(vs.row(i).transpose())));
        return out;
    };
}

inline PairKernel as_pair_kernel(const SeparableCovariance& c) {
    return [c](const Matrix& us, const Matrix& vs) {
        const int k2 = c.grid.sizes()[1];
        Vector out(us.rows());
        for (Eigen::Index i = 0; i < us.rows(); ++i) {
            const auto iu = static_cast<int>(c.grid.voxel_of(us.row(i).transpose()));
            const auto iv = static_cast<int>(c.grid.voxel_of(vs.row(i).transpose()));
            out(i) = c.a(iu / k2, iv / k2) * c.b(iu % k2, iv % k2);
        }
        return out;
    };
}

inline PairKernel as_pair_kernel(const KernelSpec& spec) {
    return [spec](const Matrix& us, const Matrix& vs) {
        Vector out(us.rows());
        for (Eigen::Index i = 0; i < us.rows(); ++i) out(i) = kernel_eval(spec, us.row(i).transpose(), vs.row(i).transpose());
        return out;
    };
}

inline PairKernel zero_pair_kernel() {
    return [](const Matrix& us, const Matrix&) { return Vector(Vector::Zero(us.rows())); };
}

struct HsMonteCarlo {
    double diff_sq = 0.0;   // M^{-1} sum (c_hat - c)^2
    double truth_sq = 0.0;  // M^{-1} sum c^2
    double relative_error() const { return std::sqrt(diff_sq / truth_sq); }
};

/// Draws M uniform pairs (u_i, v_i) on [0,1]^d x [0,1]^d; u then v per pair.
inline std::pair<Matrix, Matrix> uniform_pairs(std::size_t m, int d, std::uint64_t seed) {
    Rng rng(seed);
    Matrix us(static_cast<Eigen::Index>(m), d), vs(static_cast<Eigen::Index>(m), d);
    for (Eigen::Index i = 0; i < us.rows(); ++i) {
        for (Eigen::Index a = 0; a < d; ++a) us(i, a) = rng.uniform();
        for (Eigen::Index a = 0; a < d; ++a) vs(i, a) = rng.uniform();
    }
    return {std::move(us), std::move(vs)};
}

inline HsMonteCarlo hs_monte_carlo(const PairKernel& estimate, const PairKernel& truth, int d, std::size_t m,
                                   std::uint64_t seed) {
    if (m < 1) throw invalid_argument("relative_error_mc: M must be >= 1");
    const auto [us, vs] = uniform_pairs(m, d, seed);
    const Vector c = truth(us, vs);
    const Vector e = estimate(us, vs);
    HsMonteCarlo out;
    out.diff_sq = (e - c).squaredNorm() / static_cast<double>(m);
    out.truth_sq = c.squaredNorm() / static_cast<double>(m);
    return out;
}

inline HsMonteCarlo hs_monte_carlo(const PairKernel& estimate, const KernelSpec& truth, std::size_t m, std::uint64_t seed) {
    return hs_monte_carlo(estimate, as_pair_kernel(truth), truth.dim, m, seed);
}

/// sqrt( sum (c_hat - c)^2 / sum c^2 ) over M uniform pairs.
inline double relative_error_mc(const PairKernel& estimate, const PairKernel& truth, int d, std::size_t m,
                                std::uint64_t seed) {
    const auto hs = hs_monte_carlo(estimate, truth, d, m, seed);
    if (!(hs.truth_sq > 0.0)) throw degenerate_error("relative_error_mc: truth has zero Hilbert-Schmidt norm on the sample");
    return hs.relative_error();
}

inline double relative_error_mc(const PairKernel& estimate, const KernelSpec& truth, std::size_t m, std::uint64_t seed) {
    return relative_error_mc(estimate, as_pair_kernel(truth), truth.dim, m, seed);
}

// ---------------------------------------------------------------------------

/// Hilbert-Schmidt distance between the model and the empirical covariance of
/// the (centered) validation fields, from grid inner products only.
inline double cv_loss(const FittedCovariance& model, const FieldMatrix& va) {
    if (va.grid().dim() != model.arch.dim) throw invalid_argument("cv_loss: grid dimension does not match model");
    const double dsz = static_cast<double>(va.grid().size());
    const double n2 = static_cast<double>(va.count());
    const Matrix z = eval_constituents(model.params, model.arch, va.grid().coordinates());
    const Matrix g = z.transpose() * z / dsz;
    const Matrix lg = model.lambda * g;
    const double model_sq = (lg * lg).trace();
    const Matrix a = cross_gram(va, va);
    const double data_sq = a.squaredNorm() / (n2 * n2);
    const Matrix p = va.values() * z / dsz;
    const double cross = (p * model.lambda * p.transpose()).trace() / n2;
    return model_sq + data_sq - 2.0 * cross;
}

struct CvCandidate {
    Architecture arch;
    TrainConfig config;
};

struct CvRow {
    CvCandidate candidate;
    std::vector<double> fold_losses;
    double mean_loss = std::numeric_limits<double>::quiet_NaN();
    bool failed = false;
    std::string failure;
};

struct CvReport {
    std::vector<CvRow> rows;
    std::size_t selected = 0;
    std::vector<std::vector<Eigen::Index>> folds;
};

/// Seeded shuffle, then V contiguous parts whose sizes differ by at most one.
inline std::vector<std::vector<Eigen::Index>> make_folds(Eigen::Index n, int v, std::uint64_t seed) {
    if (v < 2) throw invalid_argument("cross_validate: V must be >= 2");
    if (n < v) throw invalid_argument("cross_validate: need N >= V");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Rng rng(seed);
    for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    std::vector<std::vector<Eigen::Index>> folds(static_cast<std::size_t>(v));
    std::size_t start = 0;
    for (int f = 0; f < v; ++f) {
        const std::size_t len = static_cast<std::size_t>(n) / v + (f < n % v ? 1 : 0);
        folds[static_cast<std::size_t>(f)].assign(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                                  idx.begin() + static_cast<std::ptrdiff_t>(start + len));
        start += len;
    }
    return folds;
}

/// Candidate index with the smallest mean CV loss; ties go to fewer parameters,
/// then to the earlier candidate.
inline std::size_t select_candidate(const std::vector<CvRow>& rows) {
    std::size_t best = rows.size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].failed) continue;
        if (best == rows.size()) {
            best = i;
            continue;
        }
        const auto& b = rows[best];
        const auto& c = rows[i];
        if (c.mean_loss < b.mean_loss ||
            (c.mean_loss == b.mean_loss && census(c.candidate.arch) < census(b.candidate.arch)))
            best = i;
    }
    if (best == rows.size()) throw numeric_error("cross_validate: every candidate failed to train");
    return best;
}

inline CvReport cross_validate(const FieldMatrix& f, const std::vector<CvCandidate>& candidates, int v, std::uint64_t seed) {
    if (candidates.empty()) throw invalid_argument("cross_validate: no candidates");
    CvReport report;
    report.folds = make_folds(f.count(), v, seed);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        CvRow row{candidates[c], {}, std::numeric_limits<double>::quiet_NaN(), false, {}};
        for (std::size_t k = 0; k < report.folds.size(); ++k) {
            std::vector<Eigen::Index> train;
            for (std::size_t j = 0; j < report.folds.size(); ++j)
                if (j != k) train.insert(train.end(), report.folds[j].begin(), report.folds[j].end());
            TrainConfig cfg = candidates[c].config;
            cfg.seed = Rng::derived(seed ^ cfg.seed, c, k).next_u64();
            try {
                const auto fitted = fit(f.rows(train), candidates[c].arch, cfg);
                row.fold_losses.push_back(cv_loss(fitted.model, f.rows(report.folds[k]).centered()));
            } catch (const training_diverged& e) {
                row.failed = true;
                row.failure = e.what();
                break;
            }
        }
        if (!row.failed)
            row.mean_loss = std::accumulate(row.fold_losses.begin(), row.fold_losses.end(), 0.0) /
                            static_cast<double>(row.fold_losses.size());
        report.rows.push_back(std::move(row));
    }
    report.selected = select_candidate(report.rows);
    return report;
}

}  // namespace covnet
