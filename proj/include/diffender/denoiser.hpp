#pragma once

#include "diffender/conditioning.hpp"
#include "diffender/image.hpp"
#include "diffender/nn.hpp"
#include "diffender/tensor.hpp"

#include <memory>

namespace diffender {

/// Extra inpainting inputs stacked after the noisy image: a 1-channel mask
/// (1 = region to generate) and the known image with the masked region zeroed,
/// both in diffusion space. Plain denoising is the all-ones mask with nothing known.
struct MaskChannels {
    Tensor mask;
    Tensor known;

    static MaskChannels plain(int channels, int height, int width);
    static MaskChannels from(const BinaryMask& m, const Image& known_image);
};

/// Opaque forward record kept for a later backward pass.
class DenoiserTape {
public:
    virtual ~DenoiserTape() = default;
};

struct DenoiserGrads {
    Tensor d_xt;
    Tensor d_known;
    Vector d_cond;  // w.r.t. Conditioning::pooled(); empty for the unconditional branch
};

/// ε-predicting denoiser. Implementations are immutable at inference.
class DenoiserModel {
public:
    virtual ~DenoiserModel() = default;

    virtual int channels() const = 0;
    virtual int cond_dim() const = 0;
    virtual bool supports_inpaint_channels() const = 0;

    /// Predicts the noise in x_t (diffusion space). `mc == nullptr` means plain
    /// denoising. When `tape` is non-null and the model is differentiable the
    /// forward record is stored there.
    virtual Tensor predict_eps(const Tensor& x_t, int t, const Conditioning& cond, const MaskChannels* mc,
                               std::unique_ptr<DenoiserTape>* tape = nullptr) const = 0;

    virtual bool differentiable() const { return false; }

    /// Backpropagates dL/dε̂. Parameter grads accumulate into `grads` when given.
    virtual DenoiserGrads backward(const DenoiserTape& tape, const Tensor& g_eps, nn::GradMap* grads) const;
};

}  // namespace diffender
