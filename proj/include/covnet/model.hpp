#pragma once

// CovNet constituents and fitted covariance models.
//
// Every architecture is stored as a list of sigmoid MLP "towers" whose output
// columns, concatenated, are the constituents g_1..g_R:
//
//   shallow     one tower, a single R x d layer:         g = sigma(W u + b)
//   deepshared  one tower, L hidden layers + R x p_L head (shared trunk)
//   deep        R towers, each L hidden layers + 1 x p_L head
//
// so shallow is the zero-hidden-layer case of deepshared, and the forward and
// reverse passes below are written once for all three.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "field_data.hpp"
#include "rng.hpp"

namespace covnet {

enum class ArchKind { shallow, deep, deepshared };

inline std::string arch_name(ArchKind k) {
    switch (k) {
        case ArchKind::shallow: return "shallow";
        case ArchKind::deep: return "deep";
        case ArchKind::deepshared: return "deepshared";
    }
    return "unknown";
}

inline ArchKind parse_arch_kind(const std::string& s) {
    if (s == "shallow") return ArchKind::shallow;
    if (s == "deep") return ArchKind::deep;
    if (s == "deepshared") return ArchKind::deepshared;
    throw invalid_argument("unknown architecture '" + s + "'");
}

struct Architecture {
    ArchKind kind = ArchKind::shallow;
    int rank = 1;             // R, number of constituents
    int dim = 1;              // d, input dimension
    std::vector<int> widths;  // p_1..p_L; empty for shallow

    int depth() const { return static_cast<int>(widths.size()); }

    static Architecture shallow(int d, int r) { return checked({ArchKind::shallow, r, d, {}}); }

    /// Hidden widths default to R.
    static Architecture deep(int d, int r, int layers, int width = 0) {
        return checked({ArchKind::deep, r, d, std::vector<int>(static_cast<std::size_t>(std::max(layers, 0)), width > 0 ? width : r)});
    }
    static Architecture deepshared(int d, int r, int layers, int width = 0) {
        return checked({ArchKind::deepshared, r, d, std::vector<int>(static_cast<std::size_t>(std::max(layers, 0)), width > 0 ? width : r)});
    }

    static Architecture checked(Architecture a) {
        if (a.rank < 1) throw invalid_argument("architecture: R must be >= 1");
        if (a.dim < 1) throw invalid_argument("architecture: d must be >= 1");
        if (a.kind == ArchKind::shallow && !a.widths.empty())
            throw invalid_argument("architecture: shallow model has no hidden layers");
        if (a.kind != ArchKind::shallow) {
            if (a.widths.empty()) throw invalid_argument("architecture: deep models need L >= 1");
            if (a.widths.size() < 2)
                std::cerr << "warning: " << arch_name(a.kind) << " model with L = 1 hidden layer (L >= 2 is typical)\n";
        }
        for (int p : a.widths)
            if (p < 1) throw invalid_argument("architecture: every hidden width must be >= 1");
        return a;
    }

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct Layer {
    Matrix weight;  // out x in
    Vector bias;    // out
};

struct ModelParams {
    std::vector<std::vector<Layer>> towers;
};

/// Layer shapes (out, in) per tower implied by the architecture.
inline std::vector<std::vector<std::pair<int, int>>> layer_shapes(const Architecture& arch) {
    std::vector<std::pair<int, int>> trunk;
    int in = arch.dim;
    for (int p : arch.widths) {
        trunk.emplace_back(p, in);
        in = p;
    }
    if (arch.kind == ArchKind::deep) {
        trunk.emplace_back(1, in);
        return std::vector<std::vector<std::pair<int, int>>>(static_cast<std::size_t>(arch.rank), trunk);
    }
    trunk.emplace_back(arch.rank, in);
    return {trunk};
}

inline void check_shapes(const ModelParams& params, const Architecture& arch) {
    const auto shapes = layer_shapes(arch);
    if (params.towers.size() != shapes.size()) throw invalid_argument("params: tower count does not match architecture");
    for (std::size_t t = 0; t < shapes.size(); ++t) {
        if (params.towers[t].size() != shapes[t].size()) throw invalid_argument("params: layer count does not match architecture");
        for (std::size_t l = 0; l < shapes[t].size(); ++l) {
            const auto& ly = params.towers[t][l];
            if (ly.weight.rows() != shapes[t][l].first || ly.weight.cols() != shapes[t][l].second ||
                ly.bias.size() != shapes[t][l].first)
                throw invalid_argument("params: layer shape does not match architecture");
        }
    }
}

/// Number of network parameters (weights and biases), excluding Lambda.
inline std::size_t network_param_count(const ModelParams& params) {
    std::size_t n = 0;
    for (const auto& tower : params.towers)
        for (const auto& ly : tower) n += static_cast<std::size_t>(ly.weight.size() + ly.bias.size());
    return n;
}

/// Closed-form parameter census of the CovNet kernel class, including the
/// R(R+1)/2 free entries of Lambda.
inline std::size_t census(const Architecture& arch) {
    const auto r = static_cast<std::size_t>(arch.rank);
    const std::size_t lambda = r * (r + 1) / 2;
    if (arch.kind == ArchKind::shallow) return r * (static_cast<std::size_t>(arch.dim) + 1) + lambda;
    std::vector<std::size_t> p{static_cast<std::size_t>(arch.dim)};
    for (int w : arch.widths) p.push_back(static_cast<std::size_t>(w));
    const std::size_t depth = p.size() - 1;
    std::size_t trunk = 0;
    for (std::size_t l = 0; l < depth; ++l) trunk += (p[l] + 1) * p[l + 1];
    if (arch.kind == ArchKind::deepshared) return trunk + r * (p[depth] + 1) + lambda;
    return r * (trunk + (p[depth] + 1)) + lambda;
}

inline Vector flatten(const ModelParams& params) {
    Vector v(static_cast<Eigen::Index>(network_param_count(params)));
    Eigen::Index k = 0;
    for (const auto& tower : params.towers)
        for (const auto& ly : tower) {
            v.segment(k, ly.weight.size()) = ly.weight.reshaped();
            k += ly.weight.size();
            v.segment(k, ly.bias.size()) = ly.bias;
            k += ly.bias.size();
        }
    return v;
}

inline void unflatten(ModelParams& params, const Vector& v) {
    if (static_cast<std::size_t>(v.size()) != network_param_count(params)) throw invalid_argument("unflatten: size mismatch");
    Eigen::Index k = 0;
    for (auto& tower : params.towers)
        for (auto& ly : tower) {
            ly.weight.reshaped() = v.segment(k, ly.weight.size());
            k += ly.weight.size();
            ly.bias = v.segment(k, ly.bias.size());
            k += ly.bias.size();
        }
}

/// Glorot-uniform weights, zero biases, coefficients xi ~ N(0, 1/R).
inline std::pair<ModelParams, Matrix> init_params(const Architecture& arch, Eigen::Index n, std::uint64_t seed) {
    if (n < 1) throw invalid_argument("init_params: N must be >= 1");
    Rng rng(seed);
    ModelParams params;
    for (const auto& tower_shape : layer_shapes(arch)) {
        std::vector<Layer> tower;
        for (auto [out, in] : tower_shape) {
            const double a = std::sqrt(6.0 / static_cast<double>(in + out));
            Layer ly{Matrix(out, in), Vector::Zero(out)};
            for (Eigen::Index j = 0; j < in; ++j)
                for (Eigen::Index i = 0; i < out; ++i) ly.weight(i, j) = rng.uniform(-a, a);
            tower.push_back(std::move(ly));
        }
        params.towers.push_back(std::move(tower));
    }
    const double sd = 1.0 / std::sqrt(static_cast<double>(arch.rank));
    Matrix xi(n, arch.rank);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index r = 0; r < arch.rank; ++r) xi(i, r) = rng.normal(0.0, sd);
    return {std::move(params), std::move(xi)};
}

// ---------------------------------------------------------------------------
// Forward and reverse passes.

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

/// Per-tower activations kept for the reverse pass: acts[t][0] is the input,
/// acts[t][l + 1] the output of layer l.
struct ForwardCache {
    std::vector<std::vector<Matrix>> acts;
};

inline Matrix eval_constituents(const ModelParams& params, const Architecture& arch, const Matrix& points,
                                ForwardCache* cache = nullptr) {
    if (points.cols() != arch.dim) throw invalid_argument("eval_constituents: points must have d columns");
    check_shapes(params, arch);
    const auto m = points.rows();
    Matrix z(m, arch.rank);
    if (cache) cache->acts.assign(params.towers.size(), {});
    Eigen::Index col = 0;
    for (std::size_t t = 0; t < params.towers.size(); ++t) {
        Matrix a = points;
        if (cache) cache->acts[t].push_back(a);
        for (const auto& ly : params.towers[t]) {
            Matrix h = a * ly.weight.transpose();
            h.rowwise() += ly.bias.transpose();
            a = h.unaryExpr([](double x) { return sigmoid(x); });
            if (cache) cache->acts[t].push_back(a);
        }
        z.middleCols(col, a.cols()) = a;
        col += a.cols();
    }
    return z;
}

/// Reverse pass: given dL/dZ, returns dL/dparams in the same layout as params.
inline ModelParams backprop_constituents(const ModelParams& params, const ForwardCache& cache, const Matrix& dz) {
    ModelParams grad;
    grad.towers.resize(params.towers.size());
    Eigen::Index col = 0;
    for (std::size_t t = 0; t < params.towers.size(); ++t) {
        const auto& tower = params.towers[t];
        const auto& acts = cache.acts[t];
        grad.towers[t].resize(tower.size());
        const auto width = tower.back().weight.rows();
        Matrix da = dz.middleCols(col, width);
        col += width;
        for (std::size_t l = tower.size(); l-- > 0;) {
            const Matrix& out = acts[l + 1];
            Matrix dh = da.array() * out.array() * (1.0 - out.array());
            grad.towers[t][l].weight = dh.transpose() * acts[l];
            grad.towers[t][l].bias = dh.colwise().sum().transpose();
            if (l > 0) da = dh * tower[l].weight;
        }
    }
    return grad;
}

/// X^NN = Xi Z^T on the grid.
inline FieldMatrix fitted_fields(const ModelParams& params, const Architecture& arch, const Matrix& xi, const Grid& grid) {
    if (xi.cols() != arch.rank) throw invalid_argument("fitted_fields: Xi must have R columns");
    if (grid.dim() != arch.dim) throw invalid_argument("fitted_fields: grid dimension does not match architecture");
    const Matrix z = eval_constituents(params, arch, grid.coordinates());
    return FieldMatrix(grid, xi * z.transpose());
}

/// Lambda = N^{-1} (Xi - 1 xibar^T)^T (Xi - 1 xibar^T), or N^{-1} Xi^T Xi uncentered.
inline Matrix lambda_from_coefficients(const Matrix& xi, bool center) {
    const auto n = xi.rows();
    if (n < 1) throw invalid_argument("lambda_from_coefficients: N must be >= 1");
    Matrix c = xi;
    if (center) c.rowwise() -= xi.colwise().mean();
    Matrix lambda = c.transpose() * c / static_cast<double>(n);
    lambda = 0.5 * (lambda + lambda.transpose()).eval();
    return lambda;
}

// ---------------------------------------------------------------------------

/// Frozen CovNet covariance: kernel(u, v) = g(u)^T Lambda g(v).
struct FittedCovariance {
    Architecture arch;
    ModelParams params;
    Matrix lambda;                     // R x R symmetric PSD
    std::optional<Vector> mean_coeffs;  // xi-bar when the mean was fitted jointly

    Vector constituents_at(const Eigen::Ref<const Vector>& u) const {
        Matrix pt = u.transpose();
        return eval_constituents(params, arch, pt).row(0).transpose();
    }

    double kernel_from_constituents(const Vector& gu, const Vector& gv) const {
        // symmetric summation order so that swapping u and v is bit-exact
        const auto r = lambda.rows();
        double s = 0.0;
        for (Eigen::Index i = 0; i < r; ++i) {
            s += lambda(i, i) * (gu(i) * gv(i));
            for (Eigen::Index j = i + 1; j < r; ++j) s += lambda(j, i) * (gu(i) * gv(j) + gu(j) * gv(i));
        }
        return s;
    }

    /// Estimated mean field; zero when the model was fitted on pre-centered data.
    double mean_at(const Eigen::Ref<const Vector>& u) const {
        if (!mean_coeffs) return 0.0;
        return mean_coeffs->dot(constituents_at(u));
    }
};

inline double kernel_at(const FittedCovariance& model, const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) {
    return model.kernel_from_constituents(model.constituents_at(u), model.constituents_at(v));
}

/// Kernel matrix between two point sets (rows are points).
inline Matrix kernel_block(const FittedCovariance& model, const Matrix& us, const Matrix& vs) {
    const Matrix gu = eval_constituents(model.params, model.arch, us);
    const Matrix gv = eval_constituents(model.params, model.arch, vs);
    return gu * model.lambda * gv.transpose();
}

inline double min_eigenvalue(const Matrix& sym) {
    if (sym.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

/// True when the smallest eigenvalue is >= -tol * trace-scale.
inline bool is_psd(const Matrix& sym, double tol = 1e-10) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    const double scale = es.eigenvalues().cwiseAbs().sum();
    return es.eigenvalues().minCoeff() >= -tol * scale;
}

inline void validate(const FittedCovariance& m) {
    check_shapes(m.params, m.arch);
    if (m.lambda.rows() != m.arch.rank || m.lambda.cols() != m.arch.rank) throw invalid_argument("model: Lambda must be R x R");
    if (m.mean_coeffs && m.mean_coeffs->size() != m.arch.rank) throw invalid_argument("model: mean coefficients must have R entries");
}

// ---------------------------------------------------------------------------
// Text model files.
//
//   covnet-model v1
//   architecture <kind> R <R> d <d> L <L> widths <p_1 .. p_L>
//   towers <T>
//   layer <t> <l> <rows> <cols>
//   W <rows*cols values, row-major>
//   b <rows values>
//   ...
//   lambda <R>
//   <row i: i+1 values of the lower triangle>
//   mean none | mean <R values>
//   end

namespace detail {

inline std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

class TokenReader {
public:
    explicit TokenReader(std::istream& in) {
        std::string line;
        std::uint64_t offset = 0;
        while (std::getline(in, line)) {
            std::istringstream ls(line);
            std::string tok;
            std::size_t col = 0;
            while (ls >> tok) {
                col = line.find(tok, col);
                toks_.push_back({tok, offset + col});
                col += tok.size();
            }
            offset += line.size() + 1;
        }
        end_ = offset;
    }

    std::string word(const char* what) {
        if (pos_ >= toks_.size()) throw format_error(std::string("unexpected end of model file, expected ") + what, end_);
        return toks_[pos_++].text;
    }
    void expect(const std::string& w) {
        const auto at = here();
        if (word(w.c_str()) != w) throw format_error("expected '" + w + "'", at);
    }
    long integer(const char* what) {
        const auto at = here();
        const std::string w = word(what);
        try {
            std::size_t used = 0;
            const long v = std::stol(w, &used);
            if (used != w.size()) throw std::invalid_argument(w);
            return v;
        } catch (const std::exception&) {
            throw format_error(std::string("bad integer for ") + what, at);
        }
    }
    double real(const char* what) {
        const auto at = here();
        const std::string w = word(what);
        double v;
        try {
            std::size_t used = 0;
            v = std::stod(w, &used);
            if (used != w.size()) throw std::invalid_argument(w);
        } catch (const std::exception&) {
            throw format_error(std::string("bad number for ") + what, at);
        }
        if (!std::isfinite(v)) throw format_error(std::string("non-finite value for ") + what, at);
        return v;
    }
    std::string peek() const { return pos_ < toks_.size() ? toks_[pos_].text : std::string(); }
    std::uint64_t here() const { return pos_ < toks_.size() ? toks_[pos_].offset : end_; }
    bool done() const { return pos_ >= toks_.size(); }

private:
    struct Tok {
        std::string text;
        std::uint64_t offset;
    };
    std::vector<Tok> toks_;
    std::size_t pos_ = 0;
    std::uint64_t end_ = 0;
};

}  // namespace detail

inline void write_model(std::ostream& os, const FittedCovariance& m) {
    validate(m);
    os << "covnet-model v1\n";
    os << "architecture " << arch_name(m.arch.kind) << " R " << m.arch.rank << " d " << m.arch.dim << " L "
       << m.arch.depth() << " widths";
    for (int p : m.arch.widths) os << ' ' << p;
    os << '\n';
    os << "towers " << m.params.towers.size() << '\n';
    for (std::size_t t = 0; t < m.params.towers.size(); ++t)
        for (std::size_t l = 0; l < m.params.towers[t].size(); ++l) {
            const auto& ly = m.params.towers[t][l];
            os << "layer " << t << ' ' << l << ' ' << ly.weight.rows() << ' ' << ly.weight.cols() << '\n';
            os << 'W';
            for (Eigen::Index i = 0; i < ly.weight.rows(); ++i)
                for (Eigen::Index j = 0; j < ly.weight.cols(); ++j) os << ' ' << detail::fmt17(ly.weight(i, j));
            os << "\nb";
            for (Eigen::Index i = 0; i < ly.bias.size(); ++i) os << ' ' << detail::fmt17(ly.bias(i));
            os << '\n';
        }
    os << "lambda " << m.lambda.rows() << '\n';
    for (Eigen::Index i = 0; i < m.lambda.rows(); ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) os << (j ? " " : "") << detail::fmt17(m.lambda(i, j));
        os << '\n';
    }
    if (m.mean_coeffs) {
        os << "mean";
        for (Eigen::Index i = 0; i < m.mean_coeffs->size(); ++i) os << ' ' << detail::fmt17((*m.mean_coeffs)(i));
        os << '\n';
    } else {
        os << "mean none\n";
    }
    os << "end\n";
}

inline FittedCovariance read_model(std::istream& in) {
    detail::TokenReader rd(in);
    rd.expect("covnet-model");
    {
        const auto at = rd.here();
        const std::string v = rd.word("version");
        if (v != "v1") throw format_error("unsupported model version '" + v + "'", at);
    }
    FittedCovariance m;
    rd.expect("architecture");
    {
        const auto at = rd.here();
        try {
            m.arch.kind = parse_arch_kind(rd.word("architecture kind"));
        } catch (const invalid_argument&) {
            throw format_error("unknown architecture kind", at);
        }
    }
    rd.expect("R");
    m.arch.rank = static_cast<int>(rd.integer("R"));
    rd.expect("d");
    m.arch.dim = static_cast<int>(rd.integer("d"));
    rd.expect("L");
    const long depth = rd.integer("L");
    rd.expect("widths");
    if (depth < 0 || depth > 1024) throw format_error("invalid depth", rd.here());
    for (long l = 0; l < depth; ++l) m.arch.widths.push_back(static_cast<int>(rd.integer("width")));
    if (m.arch.rank < 1 || m.arch.dim < 1) throw format_error("invalid architecture", rd.here());

    const auto shapes = layer_shapes(m.arch);
    rd.expect("towers");
    {
        const auto at = rd.here();
        if (rd.integer("tower count") != static_cast<long>(shapes.size())) throw format_error("tower count inconsistent with architecture", at);
    }
    for (std::size_t t = 0; t < shapes.size(); ++t) {
        std::vector<Layer> tower;
        for (std::size_t l = 0; l < shapes[t].size(); ++l) {
            const auto at = rd.here();
            rd.expect("layer");
            const long ti = rd.integer("tower index"), li = rd.integer("layer index");
            const long rows = rd.integer("rows"), cols = rd.integer("cols");
            if (ti != static_cast<long>(t) || li != static_cast<long>(l) || rows != shapes[t][l].first ||
                cols != shapes[t][l].second)
                throw format_error("layer shape inconsistent with architecture", at);
            Layer ly{Matrix(rows, cols), Vector(rows)};
            rd.expect("W");
            for (long i = 0; i < rows; ++i)
                for (long j = 0; j < cols; ++j) ly.weight(i, j) = rd.real("weight");
            rd.expect("b");
            for (long i = 0; i < rows; ++i) ly.bias(i) = rd.real("bias");
            tower.push_back(std::move(ly));
        }
        m.params.towers.push_back(std::move(tower));
    }
    {
        const auto at = rd.here();
        rd.expect("lambda");
        if (rd.integer("lambda size") != m.arch.rank) throw format_error("Lambda size inconsistent with R", at);
    }
    const auto lambda_at = rd.here();
    m.lambda.resize(m.arch.rank, m.arch.rank);
    for (Eigen::Index i = 0; i < m.arch.rank; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double x = rd.real("lambda entry");
            m.lambda(i, j) = x;
            m.lambda(j, i) = x;
        }
    if (!is_psd(m.lambda)) throw format_error("Lambda is not positive semi-definite", lambda_at);
    rd.expect("mean");
    if (rd.peek() == "none") {
        rd.word("none");
    } else {
        Vector mean(m.arch.rank);
        for (Eigen::Index i = 0; i < m.arch.rank; ++i) mean(i) = rd.real("mean coefficient");
        m.mean_coeffs = std::move(mean);
    }
    rd.expect("end");
    if (!rd.done()) throw format_error("trailing content after 'end'", rd.here());
    return m;
}

inline void save_model(const std::string& path, const FittedCovariance& m) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error(path, "cannot open for writing");
    write_model(os, m);
    if (!os) throw io_error(path, "write failed");
}

inline FittedCovariance load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error(path);
    return read_model(in);
}

}  // namespace covnet
