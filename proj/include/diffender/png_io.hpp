#pragma once

#include "diffender/image.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace diffender {

/// 8-bit RGB or gray PNG → Image in [0,1]. Alpha is dropped. Throws IoError.
Image read_png(const std::filesystem::path& path);

/// Values are quantized with round(255·v). Throws IoError.
void write_png(const std::filesystem::path& path, const Image& img);

Image mask_to_image(const BinaryMask& m);
/// Min-max scaled heat map (black → red → yellow → white).
Image heatmap(const SoftMask& m);

/// Images of equal height placed side by side with a `gap`-pixel white gutter;
/// gray images are expanded to RGB.
Image hstack(const std::vector<Image>& images, int gap = 2);

/// Nearest-neighbour upscaling by an integer factor.
Image upscale(const Image& img, int factor);

}  // namespace diffender
