#pragma once

// Dense real64 linear algebra shared by every other module.
//
// Matrix is row-major and value-semantic. Rows are samples (token positions)
// or weight input channels; columns are features or weight output channels,
// so a projection is always written y = x * W.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace hq {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    /// Takes ownership of row-major data; throws NonFinite on NaN/Inf.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const double& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& a, double factor);

double frobenius_norm(const Matrix& a);
/// Largest |a_ij - b_ij|.
double max_abs_diff(const Matrix& a, const Matrix& b);
/// ||a - b||_F / max(||b||_F, tiny).
double relative_error(const Matrix& a, const Matrix& b);

/// Returns H x with H = I - (1/n) 1 1^T, i.e. column means removed.
Matrix center_rows(const Matrix& x);

/// Lower-triangular L with a = L L^T; throws NotPositiveDefinite.
Matrix cholesky(const Matrix& a);

struct SpdSolution {
    Matrix x;
    double damping = 0.0;  ///< relative damping finally used
    int retries = 0;
};

/// Solves (a + damping * mean(diag(a)) * I) x = b by Cholesky. On failure the
/// damping is raised (0 -> 0.01, otherwise x10) up to three times.
SpdSolution solve_spd_detailed(const Matrix& a, const Matrix& b, double damping);
Matrix solve_spd(const Matrix& a, const Matrix& b, double damping);

struct LeastSquaresResult {
    Matrix m;
    bool rank_deficient = false;
    double damping = 0.0;
    /// Set when the identity beat the solved map and was returned instead.
    bool fell_back_to_identity = false;
};

/// M minimizing ||x_fp - x_q M||_F via normal equations. Rank-deficient
/// systems are solved with damping and flagged, not thrown.
LeastSquaresResult least_squares(const Matrix& x_q, const Matrix& x_fp);

/// Rows selected by index, in the given order.
Matrix take_rows(const Matrix& x, std::span<const std::size_t> indices);
/// Vertical concatenation; all parts share cols.
Matrix vstack(std::span<const Matrix> parts);

}  // namespace hq
