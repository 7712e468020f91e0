#include "hq/cka.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "hq/error.hpp"

namespace hq {

CkaScore linear_cka(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows()) {
        fail(ErrorCode::RowCountMismatch,
             std::to_string(x.rows()) + " vs " + std::to_string(y.rows()) + " rows");
    }
    if (x.rows() < 2) fail(ErrorCode::TooFewRows, "linear_cka needs >= 2 rows");

    // The score is scale-free; dividing by max|.| keeps the d x d second
    // moments finite for activations near the top of the double range.
    auto normalized = [](const Matrix& m, const char* which) {
        double peak = 0.0;
        for (double v : m.values()) {
            if (!std::isfinite(v)) fail(ErrorCode::NonFinite, std::string("linear_cka: non-finite entry in ") + which);
            peak = std::max(peak, std::abs(v));
        }
        Matrix c = center_rows(m);
        if (peak > 0.0)
            for (double& v : c.values()) v /= peak;
        return c;
    };
    const Matrix xc = normalized(x, "X");
    const Matrix yc = normalized(y, "Y");
    const double xx = frobenius_norm(matmul_tn(xc, xc));
    const double yy = frobenius_norm(matmul_tn(yc, yc));

    CkaScore score;
    score.n_rows = x.rows();
    if (xx < 1e-12 || yy < 1e-12) {
        score.degenerate = true;
        return score;
    }
    const double yx = frobenius_norm(matmul_tn(yc, xc));
    const double ratio = yx * yx / (xx * yy);
    if (!std::isfinite(ratio)) fail(ErrorCode::NonFinite, "linear_cka: non-finite score");
    score.value = std::clamp(ratio, 0.0, 1.0);
    return score;
}

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t max_rows, std::uint64_t seed) {
    if (max_rows < 2) fail(ErrorCode::InvalidConfig, "max_rows must be >= 2");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (max_rows >= n) return idx;
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: the first max_rows slots become the sample.
    for (std::size_t i = 0; i < max_rows; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(max_rows);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Matrix subsample_rows(const Matrix& x, std::size_t max_rows, std::uint64_t seed) {
    if (max_rows >= x.rows()) {
        if (max_rows < 2) fail(ErrorCode::InvalidConfig, "max_rows must be >= 2");
        return x;
    }
    const auto idx = subsample_indices(x.rows(), max_rows, seed);
    return take_rows(x, idx);
}

}  // namespace hq
