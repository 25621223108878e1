#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace covnet;
using covnet::testing::random_matrix;
using covnet::testing::random_model;
using covnet::testing::rel_diff;
using covnet::testing::small_architectures;
using covnet::testing::TempDir;

namespace {

bool params_equal(const ModelParams& a, const ModelParams& b) {
    if (a.towers.size() != b.towers.size()) return false;
    for (std::size_t t = 0; t < a.towers.size(); ++t) {
        if (a.towers[t].size() != b.towers[t].size()) return false;
        for (std::size_t l = 0; l < a.towers[t].size(); ++l)
            if (a.towers[t][l].weight != b.towers[t][l].weight || a.towers[t][l].bias != b.towers[t][l].bias) return false;
    }
    return true;
}

FittedCovariance constant_model(double lambda) {
    FittedCovariance m;
    m.arch = Architecture::shallow(2, 1);
    m.params = init_params(m.arch, 1, 0).first;
    m.params.towers[0][0].weight.setZero();
    m.params.towers[0][0].bias.setZero();
    m.lambda = Matrix::Constant(1, 1, lambda);
    return m;
}

}  // namespace

TEST(Architecture, Validation) {
    EXPECT_THROW(Architecture::shallow(2, 0), invalid_argument);
    EXPECT_THROW(Architecture::deep(2, 3, 0), invalid_argument);
    EXPECT_THROW(Architecture::deepshared(0, 3, 2), invalid_argument);
    EXPECT_NO_THROW(Architecture::deep(2, 3, 1));
    const auto a = Architecture::deepshared(3, 4, 3);
    EXPECT_EQ(a.widths, (std::vector<int>{4, 4, 4}));
}

TEST(InitParams, DeterministicPerSeed) {
    for (const auto& arch : small_architectures(2, 3)) {
        const auto [p1, x1] = init_params(arch, 5, 9);
        const auto [p2, x2] = init_params(arch, 5, 9);
        EXPECT_TRUE(params_equal(p1, p2));
        EXPECT_EQ(x1, x2);
        const auto [p3, x3] = init_params(arch, 5, 10);
        EXPECT_FALSE(params_equal(p1, p3));
    }
}

TEST(InitParams, ShallowShapes) {
    const auto [p, xi] = init_params(Architecture::shallow(2, 3), 4, 1);
    ASSERT_EQ(p.towers.size(), 1u);
    ASSERT_EQ(p.towers[0].size(), 1u);
    EXPECT_EQ(p.towers[0][0].weight.rows(), 3);
    EXPECT_EQ(p.towers[0][0].weight.cols(), 2);
    EXPECT_EQ(p.towers[0][0].bias.size(), 3);
    EXPECT_EQ(xi.rows(), 4);
    EXPECT_EQ(xi.cols(), 3);
}

TEST(InitParams, GlorotBoundsAndZeroBias) {
    const auto arch = Architecture::deep(3, 2, 2, 5);
    const auto [p, xi] = init_params(arch, 2, 4);
    ASSERT_EQ(p.towers.size(), 2u);
    for (const auto& tower : p.towers) {
        ASSERT_EQ(tower.size(), 3u);
        for (const auto& ly : tower) {
            const double a = std::sqrt(6.0 / static_cast<double>(ly.weight.rows() + ly.weight.cols()));
            EXPECT_LE(ly.weight.cwiseAbs().maxCoeff(), a);
            EXPECT_EQ(ly.bias.cwiseAbs().maxCoeff(), 0.0);
        }
        EXPECT_EQ(tower[0].weight.cols(), 3);
        EXPECT_EQ(tower[2].weight.rows(), 1);
    }
}

TEST(InitParams, CoefficientVariance) {
    const int r = 4;
    const auto [p, xi] = init_params(Architecture::shallow(2, r), 10000, 3);
    for (int c = 0; c < r; ++c) {
        const double mean = xi.col(c).mean();
        const double var = (xi.col(c).array() - mean).square().sum() / 9999.0;
        EXPECT_LT(rel_diff(var, 1.0 / r), 0.2);
    }
}

TEST(Constituents, ZeroShallowIsHalf) {
    const auto m = constant_model(1.0);
    const Matrix z = eval_constituents(m.params, m.arch, random_matrix(7, 2, 1));
    EXPECT_EQ(z.cwiseAbs().maxCoeff(), 0.5);
    EXPECT_EQ(z.minCoeff(), 0.5);
}

TEST(Constituents, DeepSharedZeroMatchesScalarRecursion) {
    const int layers = 3;
    const auto arch = Architecture::deepshared(2, 4, layers);
    auto [p, xi] = init_params(arch, 1, 2);
    for (auto& ly : p.towers[0]) {
        ly.weight.setZero();
        ly.bias.setZero();
    }
    double s = 0.0;
    for (int l = 0; l <= layers; ++l) s = 1.0 / (1.0 + std::exp(-0.0 * s));
    const Matrix z = eval_constituents(p, arch, random_matrix(5, 2, 3));
    EXPECT_EQ(z.maxCoeff(), s);
    EXPECT_EQ(z.minCoeff(), s);
}

TEST(Constituents, DeepSharedScalarRecursionWithUnitWiring) {
    // width-1 trunk with weight w and bias b at every layer
    const int layers = 3;
    const double w = 0.7, b = -0.3;
    const auto arch = Architecture::deepshared(1, 1, layers, 1);
    auto [p, xi] = init_params(arch, 1, 2);
    for (auto& ly : p.towers[0]) {
        ly.weight.setConstant(w);
        ly.bias.setConstant(b);
    }
    Matrix pts(3, 1);
    pts << 0.1, 0.5, 0.9;
    const Matrix z = eval_constituents(p, arch, pts);
    for (int i = 0; i < 3; ++i) {
        double s = pts(i, 0);
        for (int l = 0; l <= layers; ++l) s = 1.0 / (1.0 + std::exp(-(w * s + b)));
        EXPECT_NEAR(z(i, 0), s, 1e-15);
    }
}

TEST(Constituents, SigmoidRange) {
    for (const auto& arch : small_architectures(3, 4)) {
        const auto m = random_model(arch, 5, 30.0);
        const Matrix z = eval_constituents(m.params, arch, random_matrix(100, 3, 6, 5.0));
        EXPECT_EQ(z.cols(), 4);
        EXPECT_GE(z.minCoeff(), 1e-300);
        EXPECT_LE(z.maxCoeff(), 1.0);
    }
}

TEST(Constituents, ShapeMismatch) {
    const auto m = random_model(Architecture::shallow(2, 3), 1);
    EXPECT_THROW(eval_constituents(m.params, m.arch, Matrix::Zero(4, 3)), invalid_argument);
    EXPECT_THROW(eval_constituents(m.params, Architecture::shallow(2, 4), Matrix::Zero(4, 2)), invalid_argument);
}

TEST(FittedFields, IdentityAndZeroCoefficients) {
    const auto arch = Architecture::deep(2, 3, 2);
    const auto m = random_model(arch, 2);
    const Grid g = make_grid(2, {3, 4});
    const Matrix z = eval_constituents(m.params, arch, g.coordinates());
    const FieldMatrix id = fitted_fields(m.params, arch, Matrix::Identity(3, 3), g);
    EXPECT_EQ(id.values(), z.transpose());
    const FieldMatrix zero = fitted_fields(m.params, arch, Matrix::Zero(2, 3), g);
    EXPECT_EQ(zero.values().cwiseAbs().maxCoeff(), 0.0);
    EXPECT_THROW(fitted_fields(m.params, arch, Matrix::Zero(2, 2), g), invalid_argument);
}

TEST(FittedFields, MatchesDoubleLoop) {
    const auto arch = Architecture::shallow(1, 2);
    const auto m = random_model(arch, 3);
    const Grid g = make_grid(1, {4});
    const Matrix xi = random_matrix(3, 2, 4);
    const FieldMatrix f = fitted_fields(m.params, arch, xi, g);
    const auto& ly = m.params.towers[0][0];
    for (int n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 4; ++i) {
            const double u = g.coordinate(i)(0);
            double s = 0.0;
            for (int r = 0; r < 2; ++r) s += xi(n, r) / (1.0 + std::exp(-(ly.weight(r, 0) * u + ly.bias(r))));
            EXPECT_NEAR(f.values()(n, static_cast<Eigen::Index>(i)), s, 1e-14);
        }
}

TEST(Lambda, Examples) {
    Matrix xi(2, 1);
    xi << 1, -1;
    EXPECT_DOUBLE_EQ(lambda_from_coefficients(xi, true)(0, 0), 1.0);
    EXPECT_EQ(lambda_from_coefficients(Matrix::Zero(4, 3), true).cwiseAbs().maxCoeff(), 0.0);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Matrix l = lambda_from_coefficients(random_matrix(6, 3, seed), seed % 2 == 0);
        EXPECT_EQ(l, l.transpose());
        EXPECT_GE(min_eigenvalue(l), -1e-12);
    }
}

TEST(KernelAt, ConstantModel) {
    const auto m = constant_model(4.0);
    Rng rng(1);
    for (int k = 0; k < 10; ++k) {
        Vector u(2), v(2);
        u << rng.uniform(), rng.uniform();
        v << rng.uniform(), rng.uniform();
        EXPECT_DOUBLE_EQ(kernel_at(m, u, v), 1.0);
    }
}

TEST(KernelAt, DoubleSumOracleAndSymmetry) {
    Rng rng(8);
    for (const auto& arch : small_architectures(2, 4)) {
        const auto m = random_model(arch, 11);
        for (int k = 0; k < 10; ++k) {
            Vector u(2), v(2);
            u << rng.uniform(), rng.uniform();
            v << rng.uniform(), rng.uniform();
            const Vector gu = m.constituents_at(u), gv = m.constituents_at(v);
            double s = 0.0;
            for (int r = 0; r < 4; ++r)
                for (int q = 0; q < 4; ++q) s += m.lambda(r, q) * gu(r) * gv(q);
            EXPECT_LE(std::abs(kernel_at(m, u, v) - s), 1e-13 * std::max(1.0, std::abs(s)));
            EXPECT_EQ(kernel_at(m, u, v), kernel_at(m, v, u));
            EXPECT_GE(kernel_at(m, u, u), 0.0);
        }
    }
}

TEST(KernelAt, NonNegativeDefiniteOnPoints) {
    for (const auto& arch : small_architectures(2, 5)) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto m = random_model(arch, seed);
            const Matrix pts = random_matrix(50, 2, seed + 100).cwiseAbs().cwiseMin(1.0);
            const Matrix k = kernel_block(m, pts, pts);
            for (int trial = 0; trial < 10; ++trial) {
                const Vector alpha = random_matrix(50, 1, seed * 31 + static_cast<std::uint64_t>(trial));
                EXPECT_GE(alpha.dot(k * alpha), -1e-10 * alpha.squaredNorm());
            }
        }
    }
}

TEST(Census, MatchesParameterCounts) {
    for (int r : {1, 3, 7}) {
        for (int d : {1, 2, 3}) {
            for (int layers : {1, 2, 4}) {
                for (const auto& arch : {Architecture::shallow(d, r), Architecture::deep(d, r, layers, 5),
                                         Architecture::deepshared(d, r, layers, 5)}) {
                    const auto p = init_params(arch, 2, 1).first;
                    const auto tri = static_cast<std::size_t>(r * (r + 1) / 2);
                    EXPECT_EQ(census(arch), network_param_count(p) + tri);
                }
            }
        }
    }
    // closed forms written out for one case each
    EXPECT_EQ(census(Architecture::shallow(3, 40)), 40u * 3 + 40 + 820);
    // deepshared d=2, p=(4,4), R=4: (2+1)4 + (4+1)4 + 4(4+1) + 10
    EXPECT_EQ(census(Architecture::deepshared(2, 4, 2)), 12u + 20 + 20 + 10);
    // deep d=2, p=(4,4), R=4: 4[(2+1)4 + (4+1)4 + (4+1)1] + 10
    EXPECT_EQ(census(Architecture::deep(2, 4, 2)), 4u * (12 + 20 + 5) + 10);
}

TEST(FlattenUnflatten, RoundTrip) {
    const auto arch = Architecture::deep(2, 3, 2);
    const auto m = random_model(arch, 3);
    const Vector v = flatten(m.params);
    ModelParams p = init_params(arch, 1, 99).first;
    unflatten(p, v);
    EXPECT_TRUE(params_equal(p, m.params));
    EXPECT_THROW(unflatten(p, Vector::Zero(3)), invalid_argument);
}

TEST(ModelFile, RoundTripBitExact) {
    TempDir dir("model");
    Rng rng(3);
    for (const auto& arch : small_architectures(3, 4)) {
        auto m = random_model(arch, 21);
        m.mean_coeffs = random_matrix(4, 1, 5);
        save_model(dir.file("m.txt"), m);
        const auto r = load_model(dir.file("m.txt"));
        EXPECT_EQ(r.arch, m.arch);
        EXPECT_TRUE(params_equal(r.params, m.params));
        EXPECT_EQ(r.lambda, m.lambda);
        ASSERT_TRUE(r.mean_coeffs.has_value());
        EXPECT_EQ(*r.mean_coeffs, *m.mean_coeffs);
        for (int k = 0; k < 100; ++k) {
            Vector u(3), v(3);
            for (int a = 0; a < 3; ++a) {
                u(a) = rng.uniform();
                v(a) = rng.uniform();
            }
            EXPECT_EQ(std::bit_cast<std::uint64_t>(kernel_at(r, u, v)), std::bit_cast<std::uint64_t>(kernel_at(m, u, v)));
        }
    }
}

TEST(ModelFile, RejectsTamperedLambda) {
    auto m = random_model(Architecture::shallow(2, 2), 4);
    m.lambda << 1.0, 0.0, 0.0, -0.1;
    std::stringstream ss;
    write_model(ss, m);
    EXPECT_THROW(read_model(ss), format_error);
}

TEST(ModelFile, RejectsBadHeaderAndShapes) {
    const auto m = random_model(Architecture::deepshared(2, 3, 2), 4);
    std::stringstream ss;
    write_model(ss, m);
    const std::string text = ss.str();

    std::string v2 = text;
    v2.replace(v2.find("v1"), 2, "v2");
    std::stringstream s2(v2);
    EXPECT_THROW(read_model(s2), format_error);

    std::string shape = text;
    shape.replace(shape.find("layer 0 0 3 2"), 13, "layer 0 0 3 3");
    std::stringstream s3(shape);
    EXPECT_THROW(read_model(s3), format_error);

    std::stringstream s4(text.substr(0, text.size() / 2));
    EXPECT_THROW(read_model(s4), format_error);

    EXPECT_THROW(load_model("/nonexistent/model.txt"), io_error);
}

TEST(ModelFile, SizeIsSmallAndGridIndependent) {
    TempDir dir("model");
    const auto m = random_model(Architecture::shallow(3, 40), 7);
    save_model(dir.file("m.txt"), m);
    EXPECT_LT(std::filesystem::file_size(dir.file("m.txt")), 100u * 1024);
}
