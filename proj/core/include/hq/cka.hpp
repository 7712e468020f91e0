#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hq/numerics.hpp"

namespace hq {

struct CkaScore {
    double value = 0.0;
    std::size_t n_rows = 0;
    /// Either input had (numerically) constant columns only; value reported as 0.
    bool degenerate = false;
};

/// Linear CKA through d x d cross-covariances:
///   ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F), clamped to [0, 1].
/// Feature widths of x and y may differ.
CkaScore linear_cka(const Matrix& x, const Matrix& y);

/// Sorted, seeded subset of max_rows row indices out of n (all rows when
/// max_rows >= n). Apply the same indices to both sides of a pair.
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t max_rows, std::uint64_t seed);
Matrix subsample_rows(const Matrix& x, std::size_t max_rows, std::uint64_t seed);

}  // namespace hq
