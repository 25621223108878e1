#pragma once

#include <filesystem>
#include <string>

#include <covnet/covnet.hpp>

namespace covnet::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    return m;
}

inline double rel_diff(double a, double b) {
    const double s = std::max(std::abs(a), std::abs(b));
    return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("covnet_" + tag + "_" + std::to_string(Rng(std::random_device{}()).next_u64()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace covnet::testing

namespace covnet::testing {

/// Random parameters with nonzero biases and a random PSD Lambda.
inline FittedCovariance random_model(const Architecture& arch, std::uint64_t seed, double weight_scale = 1.0) {
    auto [params, xi] = init_params(arch, arch.rank + 3, seed);
    Rng rng = Rng::derived(seed, 1);
    for (auto& tower : params.towers)
        for (auto& ly : tower) {
            ly.weight *= weight_scale;
            for (Eigen::Index i = 0; i < ly.bias.size(); ++i) ly.bias(i) = rng.uniform(-1.0, 1.0);
        }
    FittedCovariance m;
    m.arch = arch;
    m.params = std::move(params);
    m.lambda = lambda_from_coefficients(xi, true);
    return m;
}

inline std::vector<Architecture> small_architectures(int d, int r) {
    return {Architecture::shallow(d, r), Architecture::deep(d, r, 2), Architecture::deepshared(d, r, 2)};
}

}  // namespace covnet::testing

namespace covnet::testing {

/// D^{-2} ||X^T X / N - Y^T Y / N||_F^2 on dense D x D matrices, plus the
/// mean outer-product mismatch when with_mean is set.
inline double dense_loss_oracle(const Matrix& x, const Matrix& y, bool with_mean) {
    const double n = static_cast<double>(x.rows());
    const double d = static_cast<double>(x.cols());
    const Matrix cx = x.transpose() * x / n;
    const Matrix cy = y.transpose() * y / n;
    double v = (cx - cy).squaredNorm() / (d * d);
    if (with_mean) {
        const Vector mx = x.colwise().mean().transpose();
        const Vector my = y.colwise().mean().transpose();
        v += (mx * mx.transpose() - my * my.transpose()).squaredNorm() / (d * d);
    }
    return v;
}

/// Fitted fields the loss compares against: Xi is centered in pre_center mode.
inline Matrix model_fields(const ModelParams& params, const Architecture& arch, const Matrix& xi, const Grid& grid,
                           CenterMode mode) {
    Matrix xt = xi;
    if (mode == CenterMode::pre_center) xt.rowwise() -= xi.colwise().mean();
    return fitted_fields(params, arch, xt, grid).values();
}

struct GradientCheck {
    double max_rel = 0.0;        // over coordinates with magnitude >= 1e-6
    double max_abs_small = 0.0;  // over coordinates with magnitude < 1e-6
    std::size_t coordinates = 0;
    bool pass() const { return max_rel < 1e-5 && max_abs_small < 1e-8; }
};

/// Central differences with h = 1e-5 (1 + |theta|) against the reverse pass,
/// over every network parameter and every coefficient.
inline GradientCheck gradient_check(const FieldMatrix& f, const ModelParams& params, const Architecture& arch,
                                    const Matrix& xi, CenterMode mode) {
    const Gradients g = gradients(f, params, arch, xi, mode);
    const Vector theta = flatten(params);
    const Vector gtheta = flatten(g.params);
    const auto np = theta.size();
    Vector all(np + xi.size()), gall(np + xi.size());
    all << theta, xi.reshaped();
    gall << gtheta, g.xi.reshaped();

    auto eval = [&](const Vector& v) {
        ModelParams p = params;
        unflatten(p, v.head(np));
        Matrix x = xi;
        x.reshaped() = v.tail(xi.size());
        return loss(f, p, arch, x, mode).total();
    };

    GradientCheck out;
    Vector probe = all;
    for (Eigen::Index k = 0; k < all.size(); ++k) {
        const double h = 1e-5 * (1.0 + std::abs(all(k)));
        probe(k) = all(k) + h;
        const double up = eval(probe);
        probe(k) = all(k) - h;
        const double down = eval(probe);
        probe(k) = all(k);
        const double fd = (up - down) / (2.0 * h);
        const double mag = std::max(std::abs(fd), std::abs(gall(k)));
        const double diff = std::abs(fd - gall(k));
        if (mag < 1e-6) out.max_abs_small = std::max(out.max_abs_small, diff);
        else out.max_rel = std::max(out.max_rel, diff / mag);
        ++out.coordinates;
    }
    return out;
}

}  // namespace covnet::testing

namespace covnet::testing {

/// Constituent Gram matrix by midpoint quadrature on a k^d tensor grid.
inline Matrix quadrature_gram(const FittedCovariance& model, int k) {
    const Grid g(std::vector<int>(static_cast<std::size_t>(model.arch.dim), k));
    const Matrix z = eval_constituents(model.params, model.arch, g.coordinates());
    return z.transpose() * z / static_cast<double>(g.size());
}

/// Random model whose operator has the prescribed eigenvalues with respect to
/// the quadrature Gram matrix on a fine grid.
inline FittedCovariance model_with_spectrum(const Architecture& arch, const Vector& eta, std::uint64_t seed,
                                            double weight_scale = 3.0) {
    FittedCovariance m = random_model(arch, seed, weight_scale);
    const Matrix g = quadrature_gram(m, arch.dim == 2 ? 200 : 40);
    Eigen::SelfAdjointEigenSolver<Matrix> es(g);
    const Matrix inv_sqrt = es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                            es.eigenvectors().transpose();
    Eigen::HouseholderQR<Matrix> qr(random_matrix(arch.rank, arch.rank, seed ^ 0x5eed));
    const Matrix q = qr.householderQ();
    Vector full = Vector::Zero(arch.rank);
    full.head(eta.size()) = eta;
    m.lambda = inv_sqrt * q * full.asDiagonal() * q.transpose() * inv_sqrt;
    m.lambda = (0.5 * (m.lambda + m.lambda.transpose())).eval();
    return m;
}

/// Top eigenpairs of the D^{-1}-scaled kernel matrix on a k^2 midpoint grid,
/// eigenvalues descending.
inline std::pair<Vector, Matrix> dense_eigen(const FittedCovariance& model, int k, int top) {
    const Grid g({k, k});
    const Matrix pts = g.coordinates();
    const Matrix kmat = kernel_block(model, pts, pts) / static_cast<double>(g.size());
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (kmat + kmat.transpose()));
    const auto n = kmat.rows();
    Vector eta(top);
    Matrix vecs(n, top);
    for (int i = 0; i < top; ++i) {
        eta(i) = es.eigenvalues()(n - 1 - i);
        vecs.col(i) = es.eigenvectors().col(n - 1 - i);
    }
    return {eta, vecs};
}

struct EigenOracleResult {
    Vector dense;      // 12 x 12 dense eigenvalues
    Vector spectral;   // eigendecompose with the Monte-Carlo Gram matrix
    Vector tolerance;  // max(2 %, discretization bound)
    Vector cosine;     // |cos| between eigenfunction grid vectors
    bool pass() const {
        return ((dense - spectral).cwiseAbs().array() <= tolerance.array()).all() && (cosine.array() > 0.99).all();
    }
};

/// Compares the top eigenpairs of eigendecompose (Gram from M uniform points)
/// with a dense 12 x 12 discretization. The discretization bound per
/// eigenvalue is 2 |eta_12 - eta_24| (midpoint error is O(h^2), so this
/// over-covers the 12-grid error) plus three Monte-Carlo standard deviations of
/// the spectral estimate over `replicas` further Gram seeds.
inline EigenOracleResult eigen_oracle(const FittedCovariance& model, int top, std::size_t m, std::uint64_t seed,
                                      int replicas = 5) {
    const auto [d12, v12] = dense_eigen(model, 12, top);
    const auto d24 = dense_eigen(model, 24, top).first;
    const EigenSystem es = eigendecompose(model, constituent_gram(model, m, seed));

    Matrix reps(replicas, top);
    for (int k = 0; k < replicas; ++k)
        reps.row(k) = eigendecompose(model, constituent_gram(model, m, seed + 1 + static_cast<std::uint64_t>(k)))
                          .eta.head(top)
                          .transpose();
    const Vector mean = reps.colwise().mean().transpose();
    Vector sd(top);
    for (int i = 0; i < top; ++i)
        sd(i) = std::sqrt((reps.col(i).array() - mean(i)).square().sum() / std::max(replicas - 1, 1));

    EigenOracleResult out;
    out.dense = d12;
    out.spectral = es.eta.head(top);
    out.tolerance.resize(top);
    out.cosine.resize(top);
    const Grid g({12, 12});
    const Matrix pts = g.coordinates();
    for (int i = 0; i < top; ++i) {
        const double bound = 2.0 * std::abs(d12(i) - d24(i)) + 3.0 * sd(i);
        out.tolerance(i) = std::max(0.02 * std::abs(d12(i)), bound);
        const Vector psi = eval_eigenfunction(model, es, i, pts);
        out.cosine(i) = std::abs(psi.dot(v12.col(i))) / (psi.norm() * v12.col(i).norm());
    }
    return out;
}

}  // namespace covnet::testing
