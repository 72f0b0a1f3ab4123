#include "diffender/image.hpp"

#include "diffender/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace diffender {

Tensor::Tensor(int channels, int height, int width, double fill)
    : channels_(channels),
      height_(height),
      width_(width),
      data_(static_cast<std::size_t>(channels) * height * width, fill) {
    if (channels < 0 || height < 0 || width < 0) throw ShapeError("negative tensor dimension");
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
    if (!same_shape(other)) throw ShapeError("tensor += shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(v_.begin(), v_.end(), std::uint8_t{1}));
}

SoftMask BinaryMask::as_soft() const {
    SoftMask s(height_, width_);
    for (std::size_t i = 0; i < v_.size(); ++i) s[i] = v_[i];
    return s;
}

Image validate_image(const Image& img) {
    if (img.channels() != 1 && img.channels() != 3) {
        throw ShapeError("image must have 1 or 3 channels, got " + std::to_string(img.channels()));
    }
    if (img.height() <= 0 || img.width() <= 0) throw ShapeError("image has empty spatial extent");
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = img[i];
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw RangeError("pixel value " + std::to_string(v) + " outside [0,1]");
        }
    }
    return img;
}

void validate_soft_mask(const SoftMask& m) {
    for (double v : m.values()) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw RangeError("soft mask value outside [0,1]");
    }
}

void check_mask_shape(const Image& img, const BinaryMask& mask) {
    if (img.height() != mask.height() || img.width() != mask.width()) {
        throw ShapeError("mask dims do not match image dims");
    }
}

void check_mask_shape(const Image& img, const SoftMask& mask) {
    if (img.height() != mask.height() || img.width() != mask.width()) {
        throw ShapeError("mask dims do not match image dims");
    }
}

Tensor to_diffusion_space(const Image& img) {
    Tensor t = img.tensor();
    for (double& v : t.values()) v = 2.0 * v - 1.0;
    return t;
}

Image from_diffusion_space(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.values()) v = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
    return Image(std::move(out));
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    if (a.height() != b.height() || a.width() != b.width()) throw ShapeError("iou: mask dims differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace diffender
