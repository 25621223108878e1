#pragma once

// Fitting a CovNet model at the level of the data.
//
// The Hilbert-Schmidt distance between the empirical covariance of the
// observed fields X and that of the fitted fields Y = Xi Z^T expands into
// three double sums of squared inner products:
//
//   l = N^-2 sum <X_n,X_m>^2 + N^-2 sum <Y_n,Y_m>^2 - 2 N^-2 sum <X_n,Y_m>^2
//
// With S = Z^T Z / D (R x R) and P = X Z / D (N x R) the two model-dependent
// Gram matrices are Xi S Xi^T and P Xi^T, so one loss evaluation costs
// O(N D R + N^2 R) and never forms a D x D object. Gradients are propagated
// by hand through this fixed graph and then through the constituent networks.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "field_data.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace covnet {

enum class CenterMode { pre_center, joint_mean };

inline std::string center_mode_name(CenterMode m) { return m == CenterMode::pre_center ? "pre_center" : "joint_mean"; }

inline CenterMode parse_center_mode(const std::string& s) {
    if (s == "pre_center") return CenterMode::pre_center;
    if (s == "joint_mean") return CenterMode::joint_mean;
    throw invalid_argument("unknown center mode '" + s + "'");
}

struct LossBreakdown {
    double term_xx = 0.0;
    double term_gg = 0.0;
    double term_xg = 0.0;
    double total() const { return term_xx + term_gg - 2.0 * term_xg; }
};

struct TrainConfig {
    std::size_t epochs = 5000;
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double rel_tol = 1e-7;        // early stop on relative change over `window` epochs
    std::size_t window = 50;
    std::uint64_t seed = 0;
    CenterMode center_mode = CenterMode::pre_center;
    std::size_t batch = 0;        // 0 = full batch; otherwise rows per minibatch
};

inline void validate(const TrainConfig& c) {
    if (!(c.lr > 0.0)) throw invalid_argument("train config: lr must be > 0");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
        throw invalid_argument("train config: beta1, beta2 must lie in [0, 1)");
    if (!(c.eps > 0.0)) throw invalid_argument("train config: eps must be > 0");
    if (!(c.rel_tol >= 0.0)) throw invalid_argument("train config: rel_tol must be >= 0");
}

struct Gradients {
    ModelParams params;
    Matrix xi;
};

namespace detail {

/// Precomputed data side of the loss: X (possibly centered), its Gram matrix
/// and the grid points.
struct DataTerms {
    Matrix x;       // N x D
    Matrix points;  // D x d
    Matrix gram;    // X X^T / D
    double sq_sum = 0.0;   // sum of squared Gram entries
    double mean = 0.0;     // N^-2 sum of Gram entries
};

inline DataTerms make_data_terms(const Matrix& x, const Grid& grid) {
    DataTerms t;
    t.x = x;
    t.points = grid.coordinates();
    t.gram = cross_gram(x, x);
    t.sq_sum = t.gram.squaredNorm();
    const double n = static_cast<double>(x.rows());
    t.mean = t.gram.sum() / (n * n);
    return t;
}

struct Evaluation {
    LossBreakdown loss;
    std::optional<Gradients> grad;
};

/// Loss (and optionally gradients) for one parameter setting.
/// joint_mean == false: Xi is column-centered inside the graph.
/// joint_mean == true:  no centering, plus the mean-mismatch terms.
inline Evaluation evaluate(const DataTerms& data, const ModelParams& params, const Architecture& arch, const Matrix& xi,
                           bool joint_mean, bool want_grad) {
    const auto n = data.x.rows();
    const double nn = static_cast<double>(n);
    const double dsz = static_cast<double>(data.x.cols());
    if (xi.rows() != n || xi.cols() != arch.rank) throw invalid_argument("loss: Xi must be N x R");

    ForwardCache cache;
    const Matrix z = eval_constituents(params, arch, data.points, want_grad ? &cache : nullptr);  // D x R

    Matrix xt = xi;
    if (!joint_mean) xt.rowwise() -= xi.colwise().mean();

    const Matrix s = z.transpose() * z / dsz;      // R x R
    const Matrix p = data.x * z / dsz;             // N x R
    const Matrix xs = xt * s;                      // N x R
    const Matrix b = xs * xt.transpose();          // <Y_n, Y_m>
    const Matrix c = p * xt.transpose();           // <X_n, Y_m>

    Evaluation out;
    const double n2 = nn * nn;
    out.loss.term_xx = data.sq_sum / n2;
    out.loss.term_gg = b.squaredNorm() / n2;
    out.loss.term_xg = c.squaredNorm() / n2;
    double mean_b = 0.0, mean_c = 0.0;
    if (joint_mean) {
        mean_b = b.sum() / n2;
        mean_c = c.sum() / n2;
        out.loss.term_xx += data.mean * data.mean;
        out.loss.term_gg += mean_b * mean_b;
        out.loss.term_xg += mean_c * mean_c;
    }
    if (!want_grad) return out;

    // dl/dB and dl/dC
    Matrix gb = (2.0 / n2) * b;
    Matrix gc = (-4.0 / n2) * c;
    if (joint_mean) {
        gb.array() += 2.0 * mean_b / n2;
        gc.array() -= 4.0 * mean_c / n2;
    }
    // B = Xt S Xt^T (gb symmetric), C = P Xt^T
    Matrix gxt = 2.0 * gb * xs + gc.transpose() * p;   // N x R
    const Matrix gs = xt.transpose() * gb * xt;          // R x R
    const Matrix gp = gc * xt;                           // N x R
    // S = Z^T Z / D, P = X Z / D
    const Matrix gz = (2.0 / dsz) * (z * gs) + data.x.transpose() * gp / dsz;  // D x R

    Gradients g;
    g.params = backprop_constituents(params, cache, gz);
    if (!joint_mean) gxt.rowwise() -= gxt.colwise().mean();
    g.xi = std::move(gxt);
    out.grad = std::move(g);
    return out;
}

inline Matrix prepare_fields(const FieldMatrix& f, const Architecture& arch) {
    if (f.grid().dim() != arch.dim)
        throw invalid_argument("loss: grid dimension " + std::to_string(f.grid().dim()) +
                               " does not match architecture dimension " + std::to_string(arch.dim));
    return f.values();
}

}  // namespace detail

/// Gram-form loss against the fitted fields (Xi centered). The fields are used
/// as given; center them first for the covariance criterion.
inline LossBreakdown loss(const FieldMatrix& f, const ModelParams& params, const Architecture& arch, const Matrix& xi) {
    const auto data = detail::make_data_terms(detail::prepare_fields(f, arch), f.grid());
    return detail::evaluate(data, params, arch, xi, false, false).loss;
}

/// Uncentered Gram-form loss plus the mean-mismatch term
/// (avg<X,X>)^2 + (avg<Y,Y>)^2 - 2 (avg<X,Y>)^2, folded into the three terms.
inline LossBreakdown loss_with_mean(const FieldMatrix& f, const ModelParams& params, const Architecture& arch,
                                    const Matrix& xi) {
    const auto data = detail::make_data_terms(detail::prepare_fields(f, arch), f.grid());
    return detail::evaluate(data, params, arch, xi, true, false).loss;
}

inline LossBreakdown loss(const FieldMatrix& f, const ModelParams& params, const Architecture& arch, const Matrix& xi,
                          CenterMode mode) {
    return mode == CenterMode::pre_center ? loss(f, params, arch, xi) : loss_with_mean(f, params, arch, xi);
}

inline Gradients gradients(const FieldMatrix& f, const ModelParams& params, const Architecture& arch, const Matrix& xi,
                           CenterMode mode = CenterMode::pre_center) {
    const auto data = detail::make_data_terms(detail::prepare_fields(f, arch), f.grid());
    return std::move(*detail::evaluate(data, params, arch, xi, mode == CenterMode::joint_mean, true).grad);
}

// ---------------------------------------------------------------------------

struct AdamState {
    Vector m;
    Vector v;
    std::size_t t = 0;

    explicit AdamState(Eigen::Index n = 0) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

/// One bias-corrected ADAM update of theta in place; t is the 1-based step.
inline void adam_step(Vector& theta, AdamState& state, const Vector& grad, double lr, double beta1, double beta2,
                      double eps, std::size_t t) {
    if (t < 1) throw invalid_argument("adam_step: t must be >= 1");
    state.m = beta1 * state.m + (1.0 - beta1) * grad;
    state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
    state.t = t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    theta.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

struct LossRecord {
    std::size_t epoch;
    LossBreakdown loss;
};

struct FitResult {
    FittedCovariance model;
    std::vector<LossRecord> trace;
    Matrix xi;  // coefficients at the returned parameters
};

/// Minimize the Gram-form criterion with ADAM from init_params(arch, N, cfg.seed).
/// Returns the parameters with the lowest recorded loss.
inline FitResult fit(const FieldMatrix& f, const Architecture& arch, const TrainConfig& cfg) {
    validate(cfg);
    const auto n = f.count();
    if (n < 2) throw invalid_argument("fit: need N >= 2 fields");
    const bool joint = cfg.center_mode == CenterMode::joint_mean;
    const Matrix x = joint ? detail::prepare_fields(f, arch) : detail::prepare_fields(f.centered(), arch);
    const auto full = detail::make_data_terms(x, f.grid());

    auto [params, xi] = init_params(arch, n, cfg.seed);
    const auto net_size = static_cast<Eigen::Index>(network_param_count(params));
    Vector theta(net_size + xi.size());
    theta.head(net_size) = flatten(params);
    theta.tail(xi.size()) = xi.reshaped();

    auto unpack = [&](const Vector& th) {
        unflatten(params, th.head(net_size));
        xi.reshaped() = th.tail(xi.size());
    };

    const bool minibatch = cfg.batch > 0 && static_cast<Eigen::Index>(cfg.batch) < n;
    Rng batch_rng = Rng::derived(cfg.seed, 0xba7c4);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    AdamState adam(theta.size());
    FitResult result;
    double initial = std::numeric_limits<double>::quiet_NaN();
    double best = std::numeric_limits<double>::infinity();
    Vector best_theta = theta;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        unpack(theta);
        Vector grad(theta.size());
        LossBreakdown lb;
        if (!minibatch) {
            auto ev = detail::evaluate(full, params, arch, xi, joint, true);
            lb = ev.loss;
            grad.head(net_size) = flatten(ev.grad->params);
            grad.tail(xi.size()) = ev.grad->xi.reshaped();
        } else {
            // partial Fisher-Yates draw of a row subset
            const auto bsz = static_cast<Eigen::Index>(cfg.batch);
            for (Eigen::Index k = 0; k < bsz; ++k) {
                const auto j = k + static_cast<Eigen::Index>(batch_rng.below(static_cast<std::uint64_t>(n - k)));
                std::swap(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(j)]);
            }
            std::vector<Eigen::Index> rows(order.begin(), order.begin() + bsz);
            Matrix xb(bsz, x.cols()), xib(bsz, xi.cols());
            for (Eigen::Index k = 0; k < bsz; ++k) {
                xb.row(k) = x.row(rows[static_cast<std::size_t>(k)]);
                xib.row(k) = xi.row(rows[static_cast<std::size_t>(k)]);
            }
            const auto part = detail::make_data_terms(xb, f.grid());
            auto ev = detail::evaluate(part, params, arch, xib, joint, true);
            lb = ev.loss;
            grad.setZero();
            grad.head(net_size) = flatten(ev.grad->params);
            Matrix gxi = Matrix::Zero(n, xi.cols());
            for (Eigen::Index k = 0; k < bsz; ++k) gxi.row(rows[static_cast<std::size_t>(k)]) = ev.grad->xi.row(k);
            grad.tail(xi.size()) = gxi.reshaped();
        }

        const double total = lb.total();
        if (epoch == 0) initial = total;
        if (!std::isfinite(total) || !grad.allFinite()) throw training_diverged(epoch, "non-finite loss or gradient");
        if (total > 1e6 * std::max(std::abs(initial), std::numeric_limits<double>::min()))
            throw training_diverged(epoch, "loss exceeded 1e6 x initial loss");
        result.trace.push_back({epoch, lb});
        if (total < best) {
            best = total;
            best_theta = theta;
        }

        if (cfg.rel_tol > 0.0 && cfg.window > 0 && epoch >= cfg.window) {
            const double prev = result.trace[epoch - cfg.window].loss.total();
            if (std::abs(prev - total) <= cfg.rel_tol * std::max(std::abs(prev), std::numeric_limits<double>::min())) break;
        }
        adam_step(theta, adam, grad, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, epoch + 1);
    }

    unpack(best_theta);
    result.model.arch = arch;
    result.model.params = params;
    result.model.lambda = lambda_from_coefficients(xi, true);
    if (joint) result.model.mean_coeffs = xi.colwise().mean().transpose();
    result.xi = xi;
    return result;
}

}  // namespace covnet
