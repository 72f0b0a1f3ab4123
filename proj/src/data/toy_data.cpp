#include "diffender/toy_data.hpp"

#include "diffender/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace diffender {

namespace {

bool inside_shape(int label, double u, double v, double r) {
    switch (label) {
        case 0:  // disk
            return u * u + v * v <= r * r;
        case 1: {  // square
            const double h = 0.82 * r;
            return std::abs(u) <= h && std::abs(v) <= h;
        }
        case 2: {  // triangle, apex up, circumradius r
            const double top = -r, bottom = 0.5 * r;
            if (v < top || v > bottom) return false;
            const double half = (v - top) / (bottom - top) * (r * std::sqrt(3.0) / 2.0);
            return std::abs(u) <= half;
        }
        case 3: {  // cross
            const double arm = 0.32 * r;
            return (std::abs(u) <= r && std::abs(v) <= arm) || (std::abs(v) <= r && std::abs(u) <= arm);
        }
        default:
            throw ParamError("unknown toy class");
    }
}

}  // namespace

const std::vector<std::string>& toy_class_names() {
    static const std::vector<std::string> names{"disk", "square", "triangle", "cross"};
    return names;
}

Image render_toy_image(int label, RngStream& rng, int size, int channels) {
    if (channels != 1 && channels != 3) throw ShapeError("toy images need 1 or 3 channels");
    std::array<double, 3> c1{}, c2{}, fg{};
    for (int c = 0; c < 3; ++c) {
        c1[c] = rng.uniform(0.15, 0.85);
        c2[c] = rng.uniform(0.15, 0.85);
    }
    for (int attempt = 0;; ++attempt) {
        double contrast = 0.0;
        for (int c = 0; c < 3; ++c) {
            fg[c] = rng.uniform(0.05, 0.95);
            contrast = std::max(contrast, std::abs(fg[c] - 0.5 * (c1[c] + c2[c])));
        }
        if (contrast >= 0.3 || attempt > 64) break;
    }
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double r = rng.uniform(0.22, 0.32) * size;
    const double cx = rng.uniform(r + 1.0, size - r - 1.0);
    const double cy = rng.uniform(r + 1.0, size - r - 1.0);
    const double rot = rng.uniform(-0.35, 0.35);
    const double cr = std::cos(rot), sr = std::sin(rot);
    const double dx = std::cos(phi), dy = std::sin(phi);

    Image img(size, size, channels);
    constexpr int kSub = 4;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSub; ++sy)
                for (int sx = 0; sx < kSub; ++sx) {
                    const double px = x + (sx + 0.5) / kSub - cx;
                    const double py = y + (sy + 0.5) / kSub - cy;
                    const double u = cr * px + sr * py;
                    const double v = -sr * px + cr * py;
                    hits += inside_shape(label, u, v, r) ? 1 : 0;
                }
            const double cover = static_cast<double>(hits) / (kSub * kSub);
            const double g = std::clamp(0.5 + ((x - size / 2.0) * dx + (y - size / 2.0) * dy) / size, 0.0, 1.0);
            for (int c = 0; c < channels; ++c) {
                const int src = channels == 1 ? 0 : c;
                const double bg = (1.0 - g) * c1[src] + g * c2[src];
                img(c, y, x) = std::clamp((1.0 - cover) * bg + cover * fg[src], 0.0, 1.0);
            }
        }
    return img;
}

ToyDataset make_toy_dataset(int count, std::uint64_t seed, int size, int channels) {
    if (count < 0) throw ParamError("dataset size must be non-negative");
    ToyDataset ds;
    ds.class_names = toy_class_names();
    const int k = static_cast<int>(ds.class_names.size());
    RngStream root(seed, 0xda7a);
    for (int i = 0; i < count; ++i) {
        RngStream rng = root.substream(static_cast<std::uint64_t>(i));
        const int label = rng.uniform_int(0, k - 1);
        ds.images.push_back(render_toy_image(label, rng, size, channels));
        ds.labels.push_back(label);
    }
    return ds;
}

BinaryMask paste_random_sticker(Image& img, RngStream& rng, int min_side, int max_side) {
    const int H = img.height(), W = img.width();
    max_side = std::min({max_side, H, W});
    min_side = std::clamp(min_side, 1, max_side);
    const int side = rng.uniform_int(min_side, max_side);
    const int top = rng.uniform_int(0, H - side);
    const int left = rng.uniform_int(0, W - side);
    const int mode = rng.uniform_int(0, 2);
    const int block = mode == 2 ? 2 : 1;
    BinaryMask m(H, W);
    std::vector<double> cells(static_cast<std::size_t>(img.channels()) * side * side);
    for (double& v : cells) {
        v = rng.uniform();
        if (mode == 1) v = v < 0.5 ? rng.uniform(0.0, 0.15) : rng.uniform(0.85, 1.0);
    }
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            m(top + y, left + x) = 1;
            const int by = (y / block) * block, bx = (x / block) * block;
            for (int c = 0; c < img.channels(); ++c) {
                img(c, top + y, left + x) = cells[(static_cast<std::size_t>(c) * side + by) * side + bx];
            }
        }
    return m;
}

BinaryMask random_rect_mask(int height, int width, RngStream& rng, double min_frac, double max_frac) {
    const double frac = rng.uniform(min_frac, max_frac);
    const double aspect = std::exp(rng.uniform(-0.5, 0.5));
    const double area = frac * height * width;
    const int h = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, height);
    const int w = std::clamp(static_cast<int>(std::lround(area / h)), 1, width);
    const int top = rng.uniform_int(0, height - h);
    const int left = rng.uniform_int(0, width - w);
    BinaryMask m(height, width);
    for (int y = top; y < top + h; ++y)
        for (int x = left; x < left + w; ++x) m(y, x) = 1;
    return m;
}

}  // namespace diffender
