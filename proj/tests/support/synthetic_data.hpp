#pragma once

#include <filesystem>
#include <string>

#include "colonformer/data.hpp"
#include "colonformer/image_io.hpp"
#include "test_utils.hpp"

namespace cftest {

/// Writes n image/mask PNG pairs under root/{images,masks}: smooth-noise
/// images and one filled circle per mask (radius and position seeded).
inline void make_dataset(const std::filesystem::path& root, int n, std::int64_t size,
                         std::uint64_t seed, const std::string& prefix = "case") {
    namespace fs = std::filesystem;
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        const Scalar cy = rng.uniform(0.3, 0.7) * static_cast<Scalar>(size);
        const Scalar cx = rng.uniform(0.3, 0.7) * static_cast<Scalar>(size);
        const Scalar radius = rng.uniform(0.15, 0.3) * static_cast<Scalar>(size);
        Tensor img(Shape{1, 1, size, size});
        Tensor mask(Shape{1, 1, size, size});
        for (std::int64_t y = 0; y < size; ++y) {
            for (std::int64_t x = 0; x < size; ++x) {
                const Scalar d = std::hypot(static_cast<Scalar>(y) - cy,
                                            static_cast<Scalar>(x) - cx);
                const bool inside = d <= radius;
                mask.at({0, 0, y, x}) = inside ? 1.0 : 0.0;
                // bright disc on a dim background plus mild noise
                img.at({0, 0, y, x}) =
                    (inside ? 0.75 : 0.25) + 0.1 * rng.uniform(-1.0, 1.0);
            }
        }
        const std::string stem =
            prefix + (i < 10 ? "0" : "") + std::to_string(i);
        colonformer::save_gray_png(root / "images" / (stem + ".png"), img);
        colonformer::save_mask_png(root / "masks" / (stem + ".png"), mask);
    }
}

}  // namespace cftest
