#pragma once

#include "splicefuse/core.hpp"

#include <cmath>
#include <vector>

namespace splicefuse {

/// Detail subbands of one decomposition level. `horizontal` is high-pass along
/// rows (x) and low-pass along columns, `vertical` the reverse, `diagonal` high-pass in both.
struct HaarDetail {
    RealMatrix horizontal;  // HL
    RealMatrix vertical;    // LH
    RealMatrix diagonal;    // HH
};

/// Multi-level 2-D Haar decomposition. approximations[j] is LL_{j+1}; the last one
/// is the coarsest and is the only approximation needed for reconstruction.
struct HaarPyramid {
    std::vector<RealMatrix> approximations;
    std::vector<HaarDetail> details;

    int levels() const noexcept { return static_cast<int>(details.size()); }

    std::size_t coefficient_count() const noexcept {
        std::size_t n = approximations.empty() ? 0 : static_cast<std::size_t>(approximations.back().size());
        for (const auto& d : details)
            n += static_cast<std::size_t>(d.horizontal.size() + d.vertical.size() + d.diagonal.size());
        return n;
    }
};

namespace detail {


inline void haar_step(const RealMatrix& in, RealMatrix& ll, HaarDetail& d) {
    const Eigen::Index h = in.rows() / 2, w = in.cols() / 2;
    ll.resize(h, w);
    d.horizontal.resize(h, w);
    d.vertical.resize(h, w);
    d.diagonal.resize(h, w);
    for (Eigen::Index i = 0; i < h; ++i) {
        for (Eigen::Index j = 0; j < w; ++j) {
            const double a = in(2 * i, 2 * j), b = in(2 * i, 2 * j + 1);
            const double c = in(2 * i + 1, 2 * j), e = in(2 * i + 1, 2 * j + 1);
            ll(i, j) = 0.5 * (a + b + c + e);
            d.horizontal(i, j) = 0.5 * (a - b + c - e);
            d.vertical(i, j) = 0.5 * (a + b - c - e);
            d.diagonal(i, j) = 0.5 * (a - b - c + e);
        }
    }
}

}  // namespace detail

/// Orthonormal 2-D Haar analysis. Requires both dimensions divisible by 2^levels.
inline HaarPyramid haar_dwt2(const RealMatrix& pixels, int levels) {
    if (levels < 1) throw ShapeError("haar_dwt2: levels must be >= 1");
    const Eigen::Index factor = Eigen::Index{1} << levels;
    if (pixels.rows() == 0 || pixels.rows() % factor != 0 || pixels.cols() % factor != 0)
        throw ShapeError("haar_dwt2: " + std::to_string(pixels.rows()) + "x" + std::to_string(pixels.cols()) +
                         " not divisible by 2^" + std::to_string(levels));
    HaarPyramid pyr;
    pyr.approximations.resize(levels);
    pyr.details.resize(levels);
    const RealMatrix* current = &pixels;
    for (int l = 0; l < levels; ++l) {
        detail::haar_step(*current, pyr.approximations[l], pyr.details[l]);
        current = &pyr.approximations[l];
    }
    return pyr;
}

inline HaarPyramid haar_dwt2(const IntMatrix& pixels, int levels) { return haar_dwt2(RealMatrix(pixels.cast<double>()), levels); }

/// Inverse of haar_dwt2 from the coarsest approximation and all detail bands.
inline RealMatrix haar_idwt2(const HaarPyramid& pyr) {
    if (pyr.details.empty() || pyr.approximations.empty()) throw ShapeError("haar_idwt2: empty pyramid");
    RealMatrix current = pyr.approximations.back();
    for (int l = pyr.levels() - 1; l >= 0; --l) {
        const auto& d = pyr.details[l];
        if (d.horizontal.rows() != current.rows() || d.horizontal.cols() != current.cols())
            throw ShapeError("haar_idwt2: subband shape mismatch");
        RealMatrix out(current.rows() * 2, current.cols() * 2);
        for (Eigen::Index i = 0; i < current.rows(); ++i) {
            for (Eigen::Index j = 0; j < current.cols(); ++j) {
                const double ll = current(i, j), hl = d.horizontal(i, j), lh = d.vertical(i, j), hh = d.diagonal(i, j);
                out(2 * i, 2 * j) = 0.5 * (ll + hl + lh + hh);
                out(2 * i, 2 * j + 1) = 0.5 * (ll - hl + lh - hh);
                out(2 * i + 1, 2 * j) = 0.5 * (ll + hl - lh - hh);
                out(2 * i + 1, 2 * j + 1) = 0.5 * (ll - hl - lh + hh);
            }
        }
        current = std::move(out);
    }
    return current;
}

}  // namespace splicefuse
