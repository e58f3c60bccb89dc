#pragma once

#include <filesystem>

#include "colonformer/tensor.hpp"

namespace colonformer {

/// (1,3,H,W) RGB in [0,1]; throws on unreadable/corrupt files
Tensor load_image_rgb(const std::filesystem::path& path);
/// (1,1,H,W) grayscale in [0,1]
Tensor load_mask_gray(const std::filesystem::path& path);
/// (height, width) without keeping the pixels
std::pair<std::int64_t, std::int64_t> image_size(const std::filesystem::path& path);

/// mask (1,1,H,W) in {0,1} -> 8-bit 0/255 PNG
void save_mask_png(const std::filesystem::path& path, const Tensor& mask);
/// values clamped to [0,1] -> 8-bit grayscale PNG
void save_gray_png(const std::filesystem::path& path, const Tensor& gray);
/// input image with the mask boundary drawn in green
void save_overlay_png(const std::filesystem::path& path, const Tensor& image_rgb,
                      const Tensor& mask);

}  // namespace colonformer
