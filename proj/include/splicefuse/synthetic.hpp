#pragma once

// Synthetic grayscale blocks for desk-scale runs without the real corpus.
// Authentic blocks are one smooth textured scene; spliced blocks paste a
// rectangle cut from an unrelated scene with its own noise level and tone.

#include "splicefuse/core.hpp"
#include "splicefuse/dataset.hpp"
#include "splicefuse/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

namespace splicefuse {

struct SyntheticSpec {
    std::size_t authentic = 50;
    std::size_t spliced = 50;
    int size = kBlockSize;
    std::uint64_t seed = 1;
};

namespace detail {

struct Rect {
    int top, left, h, w;
};

inline Rect random_rect(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int h = std::max(2, static_cast<int>(size * (0.2 + 0.4 * u(rng))));
    const int w = std::max(2, static_cast<int>(size * (0.2 + 0.4 * u(rng))));
    return {static_cast<int>(rng() % static_cast<std::uint64_t>(size - h + 1)),
            static_cast<int>(rng() % static_cast<std::uint64_t>(size - w + 1)), h, w};
}

/// Smooth shading plus, half of the time, an object edge; sensor noise and a
/// light 3-tap blur are applied to the whole scene, edges included.
inline RealMatrix synthetic_scene(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double base = 60.0 + 120.0 * u(rng);
    const int waves = 2 + static_cast<int>(rng() % 4);
    std::vector<std::array<double, 4>> w(waves);
    for (auto& x : w) {
        const double angle = 2.0 * std::numbers::pi * u(rng);
        const double freq = 0.01 + 0.08 * u(rng);
        x = {freq * std::cos(angle), freq * std::sin(angle), 2.0 * std::numbers::pi * u(rng), 8.0 + 30.0 * u(rng)};
    }
    const bool object = u(rng) < 0.5;
    const Rect obj = random_rect(size, rng);
    const double obj_offset = (u(rng) < 0.5 ? -1.0 : 1.0) * (15.0 + 40.0 * u(rng));
    const double sigma = 2.0 + 5.0 * u(rng);
    RealMatrix img(size, size);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            double v = base;
            for (const auto& x : w) v += x[3] * std::sin(2.0 * std::numbers::pi * (x[0] * i + x[1] * j) + x[2]);
            if (object && i >= obj.top && i < obj.top + obj.h && j >= obj.left && j < obj.left + obj.w) v += obj_offset;
            img(i, j) = v + sigma * noise(rng);
        }
    RealMatrix out = img;
    for (int i = 1; i + 1 < size; ++i)
        for (int j = 1; j + 1 < size; ++j)
            out(i, j) = 0.5 * img(i, j) + 0.125 * (img(i - 1, j) + img(i + 1, j) + img(i, j - 1) + img(i, j + 1));
    return out;
}

inline IntMatrix to_pixels(const RealMatrix& m) {
    IntMatrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            out(i, j) = static_cast<int>(std::clamp(std::lround(m(i, j)), 0L, 255L));
    return out;
}

}  // namespace detail

/// Spliced blocks paste a rectangle of a second, already processed scene
/// after the blur, so the seam is sharper than any edge the scene owns.
inline IntMatrix synthetic_block(bool spliced, int size, std::mt19937_64& rng) {
    RealMatrix img = detail::synthetic_scene(size, rng);
    if (spliced) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const RealMatrix donor = detail::synthetic_scene(size, rng);
        const auto r = detail::random_rect(size, rng);
        const double gain = 0.9 + 0.2 * u(rng);
        for (int i = r.top; i < r.top + r.h; ++i)
            for (int j = r.left; j < r.left + r.w; ++j) img(i, j) = gain * donor(i, j);
    }
    return detail::to_pixels(img);
}

/// Writes `<root>/authentic/aNNNNN.pgm` and `<root>/spliced/sNNNNN.pgm`.
inline void write_synthetic_corpus(const std::filesystem::path& root, const SyntheticSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "authentic");
    fs::create_directories(root / "spliced");
    char name[32];
    for (std::size_t i = 0; i < spec.authentic; ++i) {
        std::mt19937_64 rng(derive_seed(spec.seed, 2 * i));
        std::snprintf(name, sizeof name, "a%05zu.pgm", i);
        write_pgm(root / "authentic" / name, synthetic_block(false, spec.size, rng));
    }
    for (std::size_t i = 0; i < spec.spliced; ++i) {
        std::mt19937_64 rng(derive_seed(spec.seed, 2 * i + 1));
        std::snprintf(name, sizeof name, "s%05zu.pgm", i);
        write_pgm(root / "spliced" / name, synthetic_block(true, spec.size, rng));
    }
}

}  // namespace splicefuse
