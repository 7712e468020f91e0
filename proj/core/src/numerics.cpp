#include "hq/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

#include "hq/error.hpp"

namespace hq {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) { return ConstMap(m.values().data(), m.rows(), m.cols()); }
MutMap view(Matrix& m) { return MutMap(m.values().data(), m.rows(), m.cols()); }

std::string shape(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        fail(ErrorCode::DimensionMismatch,
             std::string(what) + ": " + shape(a) + " vs " + shape(b));
    }
}

double mean_diag(const Matrix& a) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) sum += a(i, i);
    return a.rows() == 0 ? 0.0 : sum / static_cast<double>(a.rows());
}

// Cholesky that reports failure instead of throwing.
bool try_cholesky(const Matrix& a, Matrix& l) {
    const std::size_t n = a.rows();
    l = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0) || !std::isfinite(diag)) return false;
        const double ljj = std::sqrt(diag);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return true;
}

// Solves L L^T x = b given the lower factor.
Matrix cholesky_solve(const Matrix& l, const Matrix& b) {
    const std::size_t n = l.rows();
    Matrix x = b;
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = x(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
            x(i, c) = s / l(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = x(ii, c);
            for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
            x(ii, c) = s / l(ii, ii);
        }
    }
    return x;
}

Matrix damped(const Matrix& a, double relative) {
    Matrix out = a;
    double base = mean_diag(a);
    if (!(base > 0.0)) base = 1.0;
    for (std::size_t i = 0; i < a.rows(); ++i) out(i, i) += relative * base;
    return out;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) fail(ErrorCode::NonFinite, "matrix fill value");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        fail(ErrorCode::DimensionMismatch, "data length " + std::to_string(data_.size()) +
                                               " != " + std::to_string(rows) + "x" +
                                               std::to_string(cols));
    }
    if (!all_finite()) fail(ErrorCode::NonFinite, "matrix data contains NaN or Inf");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) fail(ErrorCode::DimensionMismatch, "ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
    if (!all_finite()) fail(ErrorCode::NonFinite, "matrix data contains NaN or Inf");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        fail(ErrorCode::DimensionMismatch, "matmul " + shape(a) + " * " + shape(b));
    }
    Matrix out(a.rows(), b.cols());
    if (a.cols() == 0) return out;
    view(out).noalias() = view(a) * view(b);
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        fail(ErrorCode::DimensionMismatch, "matmul_tn " + shape(a) + "^T * " + shape(b));
    }
    Matrix out(a.cols(), b.cols());
    if (a.rows() == 0) return out;
    view(out).noalias() = view(a).transpose() * view(b);
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    auto o = out.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "subtract");
    Matrix out = a;
    auto o = out.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return out;
}

Matrix scaled(const Matrix& a, double factor) {
    Matrix out = a;
    for (double& v : out.values()) v *= factor;
    return out;
}

double frobenius_norm(const Matrix& a) {
    double sum = 0.0;
    for (double v : a.values()) sum += v * v;
    return std::sqrt(sum);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double worst = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) worst = std::max(worst, std::abs(av[i] - bv[i]));
    return worst;
}

double relative_error(const Matrix& a, const Matrix& b) {
    const double denom = std::max(frobenius_norm(b), std::numeric_limits<double>::min());
    return frobenius_norm(subtract(a, b)) / denom;
}

Matrix center_rows(const Matrix& x) {
    if (x.rows() < 2) fail(ErrorCode::TooFewRows, "center_rows needs >= 2 rows, got " + shape(x));
    std::vector<double> mean(x.cols(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        for (std::size_t c = 0; c < x.cols(); ++c) mean[c] += row[c];
    }
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    for (double& m : mean) m *= inv_n;
    Matrix out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < x.cols(); ++c) row[c] -= mean[c];
    }
    return out;
}

Matrix cholesky(const Matrix& a) {
    if (a.rows() != a.cols()) fail(ErrorCode::DimensionMismatch, "cholesky of " + shape(a));
    Matrix l;
    if (!try_cholesky(a, l)) fail(ErrorCode::NotPositiveDefinite, "cholesky failed");
    return l;
}

SpdSolution solve_spd_detailed(const Matrix& a, const Matrix& b, double damping) {
    if (a.rows() != a.cols()) fail(ErrorCode::DimensionMismatch, "solve_spd matrix " + shape(a));
    if (b.rows() != a.rows()) {
        fail(ErrorCode::DimensionMismatch, "solve_spd rhs " + shape(b) + " for " + shape(a));
    }
    if (damping < 0.0) fail(ErrorCode::InvalidConfig, "negative damping");

    constexpr int kMaxRetries = 3;
    double lambda = damping;
    for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
        Matrix l;
        if (try_cholesky(lambda > 0.0 ? damped(a, lambda) : a, l)) {
            return {cholesky_solve(l, b), lambda, attempt};
        }
        lambda = lambda > 0.0 ? lambda * 10.0 : 0.01;
    }
    fail(ErrorCode::NotPositiveDefinite,
         "Cholesky failed after " + std::to_string(kMaxRetries) + " damping retries");
}

Matrix solve_spd(const Matrix& a, const Matrix& b, double damping) {
    return solve_spd_detailed(a, b, damping).x;
}

LeastSquaresResult least_squares(const Matrix& x_q, const Matrix& x_fp) {
    if (x_q.rows() != x_fp.rows()) {
        fail(ErrorCode::DimensionMismatch,
             "least_squares rows " + shape(x_q) + " vs " + shape(x_fp));
    }
    const Matrix gram = matmul_tn(x_q, x_q);
    const Matrix rhs = matmul_tn(x_q, x_fp);

    LeastSquaresResult result;
    double max_diag = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) max_diag = std::max(max_diag, gram(i, i));

    // Undamped first; a pivot collapsing below 1e-12 of the largest diagonal
    // entry counts as numerical rank deficiency.
    Matrix l;
    bool ok = x_q.rows() >= x_q.cols() && max_diag > 0.0 && try_cholesky(gram, l);
    if (ok) {
        for (std::size_t i = 0; i < l.rows(); ++i) {
            if (l(i, i) * l(i, i) < 1e-12 * max_diag) {
                ok = false;
                break;
            }
        }
    }
    if (ok) {
        result.m = cholesky_solve(l, rhs);
    } else {
        result.rank_deficient = true;
        auto solved = solve_spd_detailed(gram, rhs, 1e-8);
        result.m = std::move(solved.x);
        result.damping = solved.damping;
    }

    if (x_q.cols() == x_fp.cols()) {
        const double solved = frobenius_norm(subtract(x_fp, matmul(x_q, result.m)));
        const double ident = frobenius_norm(subtract(x_fp, x_q));
        if (solved > ident) {
            result.m = Matrix::identity(x_q.cols());
            result.fell_back_to_identity = true;
        }
    }
    return result;
}

Matrix take_rows(const Matrix& x, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), x.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= x.rows()) fail(ErrorCode::DimensionMismatch, "row index out of range");
        auto src = x.row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Matrix vstack(std::span<const Matrix> parts) {
    if (parts.empty()) return {};
    std::size_t rows = 0;
    const std::size_t cols = parts.front().cols();
    for (const auto& p : parts) {
        if (p.cols() != cols) fail(ErrorCode::DimensionMismatch, "vstack column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::size_t at = 0;
    for (const auto& p : parts) {
        std::copy(p.values().begin(), p.values().end(), out.values().begin() + at * cols);
        at += p.rows();
    }
    return out;
}

}  // namespace hq
