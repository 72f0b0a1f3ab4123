#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace diffender {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
/// Over-aligned storage: Eigen picks its vectorized reduction path from the
/// pointer alignment, so fixed alignment keeps results bit-reproducible.
using DoubleVec = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense C×H×W array of doubles, channel-planar.
class Tensor {
public:
    Tensor() = default;
    Tensor(int channels, int height, int width, double fill = 0.0);

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t plane() const { return static_cast<std::size_t>(height_) * width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int c, int y, int x) { return data_[(c * plane()) + y * width_ + x]; }
    double operator()(int c, int y, int x) const { return data_[(c * plane()) + y * width_ + x]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    DoubleVec& values() { return data_; }
    const DoubleVec& values() const { return data_; }

    /// channels × (height·width) view.
    Eigen::Map<RowMatrix> matrix() { return {data_.data(), channels_, static_cast<Eigen::Index>(plane())}; }
    Eigen::Map<const RowMatrix> matrix() const {
        return {data_.data(), channels_, static_cast<Eigen::Index>(plane())};
    }

    bool same_shape(const Tensor& other) const {
        return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
    }

    void fill(double v);
    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double s);

private:
    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    DoubleVec data_;
};

}  // namespace diffender
