#pragma once

#include "diffender/image.hpp"
#include "diffender/rng.hpp"

#include <string>
#include <vector>

namespace diffender {

/// Synthetic labeled images: one anti-aliased shape (the class) over a
/// smooth two-color gradient background.
struct ToyDataset {
    std::vector<Image> images;
    std::vector<int> labels;
    std::vector<std::string> class_names;

    std::size_t size() const { return images.size(); }
};

const std::vector<std::string>& toy_class_names();

/// Image i depends only on (seed, i), so datasets of different sizes share prefixes.
ToyDataset make_toy_dataset(int count, std::uint64_t seed, int size = 32, int channels = 3);

Image render_toy_image(int label, RngStream& rng, int size, int channels);

/// Pastes a random high-frequency square sticker (side in [min_side, max_side])
/// and returns its footprint.
BinaryMask paste_random_sticker(Image& img, RngStream& rng, int min_side, int max_side);

/// Random axis-aligned rectangle covering roughly [min_frac, max_frac] of the image.
BinaryMask random_rect_mask(int height, int width, RngStream& rng, double min_frac, double max_frac);

}  // namespace diffender
