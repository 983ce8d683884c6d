#pragma once

// Dense real linear algebra used by the analysis stack: a row-major matrix,
// thin SVD by one-sided Jacobi, and the handful of vector kernels the
// concept and analysis modules need. Everything is 64-bit.

#include <ctree/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace ctree::linalg {

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw InvalidInput("matrix data length " + std::to_string(data_.size()) + " does not match shape " +
                               std::to_string(rows_) + "x" + std::to_string(cols_));
        }
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw InvalidInput("ragged row in matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Matrix(r, c, std::move(data));
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix diagonal(std::span<const double> diag) {
        Matrix m(diag.size(), diag.size());
        for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
        return m;
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
        return std::span<const double>(data_).subspan(r * cols_, cols_);
    }
    [[nodiscard]] std::span<double> row(std::size_t r) noexcept {
        return std::span<double>(data_).subspan(r * cols_, cols_);
    }

    [[nodiscard]] Vector column(std::size_t c) const {
        Vector out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    [[nodiscard]] Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline bool all_finite(std::span<const double> v) noexcept {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidInput("dot: length mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) noexcept {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

inline double frobenius_norm(const Matrix& m) noexcept { return norm(m.data()); }

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw InvalidInput("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                           std::to_string(b.rows()) + ")");
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

// Row vector times matrix: x (length m.rows()) -> x * m (length m.cols()).
inline Vector vecmat(std::span<const double> x, const Matrix& m) {
    if (x.size() != m.rows()) {
        throw InvalidInput("vecmat: vector length " + std::to_string(x.size()) + " does not match matrix rows " +
                           std::to_string(m.rows()));
    }
    Vector out(m.cols(), 0.0);
    for (std::size_t k = 0; k < m.rows(); ++k) {
        const double xk = x[k];
        const auto r = m.row(k);
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += xk * r[j];
    }
    return out;
}

/// Thin SVD, m = u * diag(sigma) * vt with p = min(rows, cols).
struct SvdResult {
    Matrix u;      ///< rows x p, left singular vectors as columns
    Vector sigma;  ///< length p, descending, non-negative
    Matrix vt;     ///< p x cols, right singular vectors as rows

    [[nodiscard]] std::size_t rank_bound() const noexcept { return sigma.size(); }

    [[nodiscard]] Matrix reconstruct() const {
        Matrix us = u;
        for (std::size_t r = 0; r < us.rows(); ++r)
            for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= sigma[c];
        return matmul(us, vt);
    }
};

namespace svd_detail {

inline constexpr int max_sweeps = 30;
inline constexpr double off_diagonal_tolerance = 1e-12;

struct TallSvd {
    std::vector<double> cols;  // column-major m x n, becomes U * Sigma
    std::vector<double> v;     // column-major n x n
    std::size_t m = 0;
    std::size_t n = 0;
    double noise_norm = 0.0;  // columns at or below this norm were never rotated
};

// One-sided Jacobi on a tall (m >= n) matrix: rotates column pairs until
// every pair is orthogonal to the tolerance, accumulating the rotations in v.
inline TallSvd jacobi_tall(const Matrix& a) {
    TallSvd s;
    s.m = a.rows();
    s.n = a.cols();
    const std::size_t m = s.m;
    const std::size_t n = s.n;
    s.cols.resize(m * n);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) s.cols[c * m + r] = a(r, c);
    s.v.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) s.v[i * n + i] = 1.0;

    const double fro = frobenius_norm(a);
    if (fro == 0.0 || n < 2) return s;
    // columns below this energy are numerical noise and never rotated
    s.noise_norm = 1e-13 * fro;
    const double noise_floor = s.noise_norm * s.noise_norm;

    for (int sweep = 0;; ++sweep) {
        bool converged = true;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double* ci = &s.cols[i * m];
                double* cj = &s.cols[j * m];
                double dii = 0.0, djj = 0.0, dij = 0.0;
                for (std::size_t k = 0; k < m; ++k) {
                    dii += ci[k] * ci[k];
                    djj += cj[k] * cj[k];
                    dij += ci[k] * cj[k];
                }
                if (dii <= noise_floor || djj <= noise_floor) continue;
                const double scale = std::sqrt(dii * djj);
                if (std::abs(dij) <= off_diagonal_tolerance * scale) continue;
                converged = false;

                const double zeta = (djj - dii) / (2.0 * dij);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = c * t;
                for (std::size_t k = 0; k < m; ++k) {
                    const double x = ci[k];
                    const double y = cj[k];
                    ci[k] = c * x - sn * y;
                    cj[k] = sn * x + c * y;
                }
                double* vi = &s.v[i * n];
                double* vj = &s.v[j * n];
                for (std::size_t k = 0; k < n; ++k) {
                    const double x = vi[k];
                    const double y = vj[k];
                    vi[k] = c * x - sn * y;
                    vj[k] = sn * x + c * y;
                }
            }
        }
        if (converged) break;
        if (sweep + 1 >= max_sweeps) {
            throw NumericalFailure("svd: one-sided Jacobi did not converge within " + std::to_string(max_sweeps) +
                                   " sweeps");
        }
    }
    return s;
}

// Extends a set of orthonormal columns with the standard-basis candidate
// that keeps the largest residual after projection (first one on ties).
inline Vector complete_basis(const std::vector<Vector>& basis, std::size_t m) {
    Vector best;
    double best_norm = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        Vector w(m, 0.0);
        w[r] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : basis) {
                if (b.empty()) continue;
                const double proj = dot(w, b);
                for (std::size_t k = 0; k < m; ++k) w[k] -= proj * b[k];
            }
        }
        const double nw = norm(w);
        if (nw > best_norm) {
            best_norm = nw;
            best = std::move(w);
        }
    }
    // some candidate keeps at least sqrt(1/m) of its length while the basis is incomplete
    if (best_norm < 0.5 / std::sqrt(static_cast<double>(m))) {
        throw NumericalFailure("svd: could not complete orthonormal basis");
    }
    for (double& x : best) x /= best_norm;
    return best;
}

// Tall-case decomposition with u columns and vt rows, sorted by sigma.
inline SvdResult finish_tall(const TallSvd& s) {
    const std::size_t m = s.m;
    const std::size_t n = s.n;
    Vector norms(n);
    for (std::size_t j = 0; j < n; ++j) norms[j] = norm(std::span<const double>(&s.cols[j * m], m));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

    const double sigma_max = n == 0 ? 0.0 : norms[order[0]];
    // unrotated noise columns are not trustworthy directions, so the cutoff
    // keeps a margin above the Jacobi noise floor
    const double rank_tol = std::max(
        static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon() * sigma_max, 2.0 * s.noise_norm);

    SvdResult out;
    out.sigma.resize(n);
    std::vector<Vector> ucols(n);
    for (std::size_t p = 0; p < n; ++p) {
        const std::size_t j = order[p];
        out.sigma[p] = norms[j];
        if (norms[j] > rank_tol && norms[j] > 0.0) {
            Vector col(s.cols.begin() + static_cast<std::ptrdiff_t>(j * m),
                       s.cols.begin() + static_cast<std::ptrdiff_t>((j + 1) * m));
            for (double& x : col) x /= norms[j];
            ucols[p] = std::move(col);
        }
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (ucols[p].empty()) ucols[p] = complete_basis(ucols, m);
    }

    out.u = Matrix(m, n);
    out.vt = Matrix(n, n);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t r = 0; r < m; ++r) out.u(r, p) = ucols[p][r];
        const std::size_t j = order[p];
        for (std::size_t c = 0; c < n; ++c) out.vt(p, c) = s.v[j * n + c];
    }
    return out;
}

// Largest-magnitude entry of each u column made positive (ties to the lower row).
inline void canonicalize_signs(SvdResult& r) {
    for (std::size_t c = 0; c < r.u.cols(); ++c) {
        std::size_t best = 0;
        double best_abs = -1.0;
        for (std::size_t row = 0; row < r.u.rows(); ++row) {
            const double a = std::abs(r.u(row, c));
            if (a > best_abs) {
                best_abs = a;
                best = row;
            }
        }
        if (r.u(best, c) < 0.0) {
            for (std::size_t row = 0; row < r.u.rows(); ++row) r.u(row, c) = -r.u(row, c);
            for (std::size_t k = 0; k < r.vt.cols(); ++k) r.vt(c, k) = -r.vt(c, k);
        }
    }
}

} // namespace svd_detail

/// Thin singular value decomposition by one-sided Jacobi (at most 30 sweeps).
///
/// Output is deterministic: singular values are sorted descending with ties
/// kept in column order, and each left singular vector is sign-normalized so
/// that its largest-magnitude entry is positive. Null-space columns of u are
/// completed from the standard basis, so u always has orthonormal columns.
inline SvdResult svd(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) throw InvalidInput("svd: matrix must have at least one row and column");
    if (!m.all_finite()) throw InvalidInput("svd: matrix contains non-finite entries");

    SvdResult out;
    if (m.rows() >= m.cols()) {
        out = svd_detail::finish_tall(svd_detail::jacobi_tall(m));
    } else {
        // m^T = U' S V'^T  =>  m = V' S U'^T
        SvdResult t = svd_detail::finish_tall(svd_detail::jacobi_tall(m.transposed()));
        out.u = t.vt.transposed();
        out.sigma = std::move(t.sigma);
        out.vt = t.u.transposed();
    }
    svd_detail::canonicalize_signs(out);
    return out;
}

/// Cosine similarity clamped to [-1, 1]. Throws DegenerateVector when either
/// norm is at or below 1e-12.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidInput("cosine: length mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                           ")");
    }
    const double aa = dot(a, a);
    const double bb = dot(b, b);
    const double na = std::sqrt(aa);
    const double nb = std::sqrt(bb);
    if (na <= 1e-12 || nb <= 1e-12) throw DegenerateVector("cosine: vector norm at or below 1e-12");
    // sqrt(aa * aa) == aa exactly, so identical inputs give exactly 1
    const double prod = aa * bb;
    const double denom = std::isfinite(prod) ? std::sqrt(prod) : na * nb;
    return std::clamp(dot(a, b) / denom, -1.0, 1.0);
}

/// Keeps the k largest-magnitude entries and zeroes the rest. Magnitude ties
/// go to the lower index.
inline Vector topk_mask(std::span<const double> c, std::size_t k) {
    if (k == 0) throw InvalidInput("topk_mask: k must be at least 1");
    Vector out(c.begin(), c.end());
    if (k >= c.size()) return out;
    std::vector<std::size_t> idx(c.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(c[a]) > std::abs(c[b]); });
    for (std::size_t i = k; i < idx.size(); ++i) out[idx[i]] = 0.0;
    return out;
}

inline double l2(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidInput("l2: length mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace ctree::linalg
