#pragma once

#include "diffender/tensor.hpp"

#include <cstdint>
#include <vector>

namespace diffender {

/// Pixel-space image with values in [0,1], stored channel-planar.
///
/// Construction does not validate; call validate_image() at trust
/// boundaries (file loads, user input).
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0) : t_(channels, height, width, fill) {}
    explicit Image(Tensor t) : t_(std::move(t)) {}

    int height() const { return t_.height(); }
    int width() const { return t_.width(); }
    int channels() const { return t_.channels(); }
    std::size_t size() const { return t_.size(); }

    double& operator()(int c, int y, int x) { return t_(c, y, x); }
    double operator()(int c, int y, int x) const { return t_(c, y, x); }
    double& operator[](std::size_t i) { return t_[i]; }
    double operator[](std::size_t i) const { return t_[i]; }

    const Tensor& tensor() const { return t_; }
    Tensor& tensor() { return t_; }

    bool same_shape(const Image& o) const { return t_.same_shape(o.t_); }
    bool operator==(const Image& o) const { return same_shape(o) && t_.values() == o.t_.values(); }

private:
    Tensor t_;
};

/// Real-valued H×W map in [0,1].
class SoftMask {
public:
    SoftMask() = default;
    SoftMask(int height, int width, double fill = 0.0)
        : height_(height), width_(width), v_(static_cast<std::size_t>(height) * width, fill) {}

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return v_.size(); }
    double& operator()(int y, int x) { return v_[static_cast<std::size_t>(y) * width_ + x]; }
    double operator()(int y, int x) const { return v_[static_cast<std::size_t>(y) * width_ + x]; }
    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }
    const std::vector<double>& values() const { return v_; }
    std::vector<double>& values() { return v_; }
    bool operator==(const SoftMask& o) const {
        return height_ == o.height_ && width_ == o.width_ && v_ == o.v_;
    }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> v_;
};

/// H×W {0,1} map. size() is the element count d = H·W.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0)
        : height_(height), width_(width), v_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return v_.size(); }
    std::uint8_t& operator()(int y, int x) { return v_[static_cast<std::size_t>(y) * width_ + x]; }
    std::uint8_t operator()(int y, int x) const { return v_[static_cast<std::size_t>(y) * width_ + x]; }
    std::uint8_t& operator[](std::size_t i) { return v_[i]; }
    std::uint8_t operator[](std::size_t i) const { return v_[i]; }
    const std::vector<std::uint8_t>& values() const { return v_; }

    std::size_t count() const;
    bool any() const { return count() > 0; }
    bool operator==(const BinaryMask& o) const {
        return height_ == o.height_ && width_ == o.width_ && v_ == o.v_;
    }

    SoftMask as_soft() const;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> v_;
};

/// Returns img unchanged when C ∈ {1,3} and all values are finite in [0,1].
/// Throws ShapeError / RangeError otherwise.
Image validate_image(const Image& img);

/// Throws RangeError on non-finite or out-of-range entries.
void validate_soft_mask(const SoftMask& m);

/// Throws ShapeError unless the mask matches the image's spatial size.
void check_mask_shape(const Image& img, const BinaryMask& mask);
void check_mask_shape(const Image& img, const SoftMask& mask);

/// [0,1] pixel space → [-1,1] diffusion space.
Tensor to_diffusion_space(const Image& img);
/// [-1,1] diffusion space → [0,1] pixel space, clamped.
Image from_diffusion_space(const Tensor& t);

/// Intersection-over-union of two masks (1 when both are empty).
double mask_iou(const BinaryMask& a, const BinaryMask& b);

}  // namespace diffender
