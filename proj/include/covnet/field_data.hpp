#pragma once

// Grid geometry, sampled fields and their L2 inner products on [0,1]^d.
//
// A field sampled on a regular grid is stored as one row of an N x D matrix.
// Points are voxel midpoints, so the grid average D^{-1} sum_i a_i b_i is the
// midpoint-rule approximation of the L2 inner product on the unit cube.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace covnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Grid {
public:
    Grid() = default;

    explicit Grid(std::vector<int> sizes) : sizes_(std::move(sizes)) {
        if (sizes_.empty()) throw invalid_argument("grid: dimension must be >= 1");
        total_ = 1;
        for (int k : sizes_) {
            if (k < 1) throw invalid_argument("grid: every axis size must be >= 1, got " + std::to_string(k));
            total_ *= static_cast<std::size_t>(k);
        }
    }

    int dim() const { return static_cast<int>(sizes_.size()); }
    const std::vector<int>& sizes() const { return sizes_; }
    std::size_t size() const { return total_; }

    /// Voxel midpoint of flat index i (row-major, last axis fastest).
    Vector coordinate(std::size_t i) const {
        if (i >= total_) throw invalid_argument("grid: index out of range");
        Vector u(dim());
        for (int a = dim() - 1; a >= 0; --a) {
            const auto k = static_cast<std::size_t>(sizes_[a]);
            u(a) = (static_cast<double>(i % k) + 0.5) / static_cast<double>(k);
            i /= k;
        }
        return u;
    }

    /// All midpoints as a D x d matrix.
    Matrix coordinates() const {
        Matrix pts(static_cast<Eigen::Index>(total_), dim());
        for (std::size_t i = 0; i < total_; ++i) pts.row(static_cast<Eigen::Index>(i)) = coordinate(i).transpose();
        return pts;
    }

    /// Flat index of the voxel containing u (points on the upper boundary map to the last voxel).
    std::size_t voxel_of(const Eigen::Ref<const Vector>& u) const {
        std::size_t idx = 0;
        for (int a = 0; a < dim(); ++a) {
            const int k = sizes_[a];
            int j = static_cast<int>(std::floor(u(a) * k));
            j = std::clamp(j, 0, k - 1);
            idx = idx * static_cast<std::size_t>(k) + static_cast<std::size_t>(j);
        }
        return idx;
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::vector<int> sizes_;
    std::size_t total_ = 0;
};

inline Grid make_grid(int d, const std::vector<int>& sizes) {
    if (d < 1) throw invalid_argument("grid: dimension must be >= 1");
    if (static_cast<int>(sizes.size()) != d)
        throw invalid_argument("grid: expected " + std::to_string(d) + " axis sizes, got " +
                               std::to_string(sizes.size()));
    return Grid(sizes);
}

/// N sampled fields on a common grid; row n is field n.
class FieldMatrix {
public:
    FieldMatrix() = default;

    FieldMatrix(Grid grid, Matrix values) : grid_(std::move(grid)), values_(std::move(values)) {
        if (static_cast<std::size_t>(values_.cols()) != grid_.size())
            throw invalid_argument("fields: row length " + std::to_string(values_.cols()) +
                                   " does not match grid size " + std::to_string(grid_.size()));
        if (!values_.allFinite()) throw invalid_argument("fields: non-finite entry");
    }

    const Grid& grid() const { return grid_; }
    const Matrix& values() const { return values_; }
    Eigen::Index count() const { return values_.rows(); }

    /// Rows selected by index, in the given order.
    FieldMatrix rows(const std::vector<Eigen::Index>& idx) const {
        Matrix out(static_cast<Eigen::Index>(idx.size()), values_.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = values_.row(idx[k]);
        return FieldMatrix(grid_, std::move(out));
    }

    Vector mean() const { return values_.colwise().mean().transpose(); }

    FieldMatrix centered() const {
        Matrix c = values_.rowwise() - values_.colwise().mean();
        return FieldMatrix(grid_, std::move(c));
    }

private:
    Grid grid_;
    Matrix values_;
};

inline double inner_product(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b, const Grid& grid) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    if (a.size() != n || b.size() != n) throw invalid_argument("inner_product: row length does not match grid");
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += a(i) * b(i);
    return s / static_cast<double>(n);
}

/// Entry (n, m) = <A_n, B_m> with the grid-average inner product.
inline Matrix cross_gram(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw invalid_argument("cross_gram: row lengths differ");
    Matrix g = a * b.transpose();
    g /= static_cast<double>(a.cols());
    return g;
}

inline Matrix cross_gram(const FieldMatrix& a, const FieldMatrix& b) {
    if (!(a.grid() == b.grid())) throw invalid_argument("cross_gram: grid mismatch");
    return cross_gram(a.values(), b.values());
}

// ---------------------------------------------------------------------------
// CVNF binary field files: "CVNF", u32 version, u32 d, d x u32 sizes, u64 N,
// then N*D little-endian f64 values, row-major, no padding.

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    U bits = std::bit_cast<U>(v);
    unsigned char buf[sizeof(U)];
    for (std::size_t k = 0; k < sizeof(U); ++k) buf[k] = static_cast<unsigned char>(bits >> (8 * k));
    os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

class ByteReader {
public:
    explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

    template <class T>
    T get(const char* what) {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
        if (pos_ + sizeof(U) > bytes_.size()) throw format_error(std::string("truncated file reading ") + what, pos_);
        U bits = 0;
        for (std::size_t k = 0; k < sizeof(U); ++k) bits |= static_cast<U>(bytes_[pos_ + k]) << (8 * k);
        pos_ += sizeof(U);
        return std::bit_cast<T>(bits);
    }

    std::uint64_t offset() const { return pos_; }
    std::uint64_t remaining() const { return bytes_.size() - pos_; }
    const unsigned char* data() const { return bytes_.data(); }

private:
    std::vector<unsigned char> bytes_;
    std::uint64_t pos_ = 0;
};

inline std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error(path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline constexpr std::uint32_t kFieldFileVersion = 1;

inline void write_fields(const std::string& path, const FieldMatrix& f) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error(path, "cannot open for writing");
    os.write("CVNF", 4);
    detail::put_le<std::uint32_t>(os, kFieldFileVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.grid().dim()));
    for (int k : f.grid().sizes()) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(k));
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(f.count()));
    const Matrix& v = f.values();
    for (Eigen::Index n = 0; n < v.rows(); ++n)
        for (Eigen::Index i = 0; i < v.cols(); ++i) detail::put_le<double>(os, v(n, i));
    if (!os) throw io_error(path, "write failed");
}

inline FieldMatrix read_fields(const std::string& path) {
    detail::ByteReader rd(detail::slurp(path));
    if (rd.remaining() < 4 || std::memcmp(rd.data(), "CVNF", 4) != 0) throw format_error("bad magic, expected CVNF", 0);
    rd.get<std::uint32_t>("magic");
    const auto version_at = rd.offset();
    const auto version = rd.get<std::uint32_t>("version");
    if (version != kFieldFileVersion)
        throw format_error("unsupported field file version " + std::to_string(version), version_at);
    const auto d_at = rd.offset();
    const auto d = rd.get<std::uint32_t>("dimension");
    if (d == 0 || d > 64) throw format_error("invalid dimension " + std::to_string(d), d_at);
    std::vector<int> sizes;
    std::uint64_t total = 1;
    for (std::uint32_t a = 0; a < d; ++a) {
        const auto at = rd.offset();
        const auto k = rd.get<std::uint32_t>("axis size");
        if (k == 0 || k > static_cast<std::uint32_t>(INT32_MAX)) throw format_error("invalid axis size", at);
        sizes.push_back(static_cast<int>(k));
        total *= k;
    }
    const auto n = rd.get<std::uint64_t>("sample count");
    if (total != 0 && n > rd.remaining() / 8 / total)
        throw format_error("truncated payload: header promises " + std::to_string(n * total) + " values, file holds " +
                               std::to_string(rd.remaining() / 8),
                           rd.offset());
    Matrix v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(total));
    for (std::uint64_t r = 0; r < n; ++r) {
        for (std::uint64_t i = 0; i < total; ++i) {
            const auto at = rd.offset();
            const double x = rd.get<double>("value");
            if (!std::isfinite(x)) throw format_error("non-finite value", at);
            v(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = x;
        }
    }
    if (rd.remaining() != 0) throw format_error("trailing bytes after payload", rd.offset());
    return FieldMatrix(Grid(std::move(sizes)), std::move(v));
}

}  // namespace covnet
